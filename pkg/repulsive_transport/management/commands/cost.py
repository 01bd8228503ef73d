import json

from django.core.management.base import BaseCommand

from repulsive_transport.exceptions import TransportError
from repulsive_transport.management.commands._common import command_error, service_from_options
from repulsive_transport.services.utils import format_value, sanitize_for_json


class Command(BaseCommand):
    help = "Print the repulsive cost of a plan (inf when some block touches the diagonal)"

    def add_arguments(self, parser):
        parser.add_argument("plan", help="Plan JSON document")
        parser.add_argument("omega", nargs="?", help="Omega JSON document (identity when omitted)")
        parser.add_argument("--json", action="store_true", help="Print a JSON object instead of the bare value")
        parser.add_argument("--seed", type=int)

    def handle(self, *args, **options):
        service = service_from_options(options)
        try:
            p = service.load_plan(options["plan"])
            w = service.load_omega(options.get("omega"))
        except TransportError as e:
            raise command_error(e)
        value, error = service.cost(p, w)
        if options["json"]:
            self.stdout.write(json.dumps(sanitize_for_json({
                "cost": value, "error": error, "omega": w.as_dict(), "N": p.N, "d": p.d,
            })))
        else:
            self.stdout.write(format_value(value))
