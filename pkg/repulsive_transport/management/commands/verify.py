import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from repulsive_transport.exceptions import TransportError
from repulsive_transport.management.commands._common import (
    add_config_arguments,
    command_error,
    service_from_options,
)
from repulsive_transport.services.cost import OmegaSpec
from repulsive_transport.services.utils import sanitize_for_json, write_json


class Command(BaseCommand):
    help = "Certify an existing plan against a marginal"

    def add_arguments(self, parser):
        parser.add_argument("plan", help="Plan JSON document")
        parser.add_argument("marginal", help="Marginal JSON document")
        parser.add_argument("--omega", help="Omega JSON document used for the certificate cost")
        add_config_arguments(parser)

    def handle(self, *args, **options):
        service = service_from_options(options)
        try:
            p = service.load_plan(options["plan"])
            m = service.load_marginal(options["marginal"])
            omegas = {"identity": OmegaSpec.identity()}
            if options.get("omega"):
                omegas["omega"] = service.load_omega(options["omega"])
            certificate = service.certify(p, m, omegas)
        except TransportError as e:
            raise command_error(e)

        if options.get("out"):
            path = write_json(Path(options["out"]) / f"{Path(options['plan']).stem}.certificate.json",
                              certificate.as_dict())
            self.stdout.write(f"certificate: {path}")
        else:
            self.stdout.write(json.dumps(sanitize_for_json(certificate.as_dict()), indent=2))
        if not certificate.passed:
            raise CommandError(f"Certificate failed: {', '.join(certificate.failures())}", returncode=3)
