from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from repulsive_transport.exceptions import TransportError
from repulsive_transport.management.commands._common import command_error, service_from_options
from repulsive_transport.services.transport_service import SHARPNESS_COLUMNS, rows_to_csv


class Command(BaseCommand):
    help = ("Truncated cost lower bounds for the marginal with an atom of mass exactly 1/N; "
            "the values grow without bound as eps shrinks")

    def add_arguments(self, parser):
        parser.add_argument("omega", nargs="?", help="Omega JSON document (identity when omitted)")
        parser.add_argument("--n", type=int, required=True, dest="N")
        parser.add_argument("--eps", type=float, nargs="+", required=True, help="Truncation radii in (0, 1)")
        parser.add_argument("--d", type=int, default=1, help="Ambient dimension of the sampled marginal")
        parser.add_argument("--samples", type=int, default=100000)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out", help="CSV file to write (standard output when omitted)")

    def handle(self, *args, **options):
        bad = [eps for eps in options["eps"] if not 0 < eps <= 1]
        if bad:
            raise CommandError(f"eps values must lie in (0, 1): {bad}", returncode=1)
        if options["N"] < 2 or options["samples"] < 1 or options["d"] < 1:
            raise CommandError("--n must be at least 2; --samples and --d at least 1", returncode=1)

        service = service_from_options({"seed": options.get("seed")})
        try:
            w = service.load_omega(options.get("omega"))
        except TransportError as e:
            raise command_error(e)
        rows = service.sharpness_rows(w, options["N"], options["eps"], options["d"], options["samples"])
        table = rows_to_csv(rows, SHARPNESS_COLUMNS)
        if options.get("out"):
            path = Path(options["out"])
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(table)
            self.stdout.write(f"sharpness table: {path}")
        else:
            self.stdout.write(table, ending="")
