from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from repulsive_transport.exceptions import TransportError
from repulsive_transport.management.commands._common import (
    add_config_arguments,
    command_error,
    service_from_options,
)
from repulsive_transport.services.transport_service import BATCH_COLUMNS, rows_to_csv


class Command(BaseCommand):
    help = "Construct and certify every case of a batch spec (JSON or YAML) and write a CSV report"

    def add_arguments(self, parser):
        parser.add_argument("spec", help="Batch spec listing marginal files and/or generated families")
        add_config_arguments(parser)

    def handle(self, *args, **options):
        service = service_from_options(options)
        try:
            spec = service.load_batch_spec(options["spec"])
            rows, failures = service.run_batch(spec)
        except TransportError as e:
            raise command_error(e)

        path = Path(service.output_dir) / f"{Path(options['spec']).stem}.batch.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rows_to_csv(rows, BATCH_COLUMNS))
        self.stdout.write(f"batch report: {path} ({len(rows)} cases)")
        if failures:
            raise CommandError(f"{failures} of {len(rows)} cases did not match their expectation", returncode=3)
        self.stdout.write(self.style.SUCCESS("All cases matched their expectation"))
