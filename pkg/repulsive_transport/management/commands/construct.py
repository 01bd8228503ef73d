from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from repulsive_transport.exceptions import TransportError
from repulsive_transport.management.commands._common import (
    add_config_arguments,
    command_error,
    service_from_options,
)
from repulsive_transport.services.cost import OmegaSpec


class Command(BaseCommand):
    help = "Construct a symmetric N-plan of finite repulsive cost for a marginal and certify it"

    def add_arguments(self, parser):
        parser.add_argument("marginal", help="Marginal JSON document")
        parser.add_argument("--n", type=int, required=True, dest="N", help="Number of marginals")
        parser.add_argument("--omega", help="Omega JSON document used for the certificate cost")
        add_config_arguments(parser)

    def handle(self, *args, **options):
        service = service_from_options(options)
        N = options["N"]
        try:
            m = service.load_marginal(options["marginal"])
            omegas = {"identity": OmegaSpec.identity()}
            if options.get("omega"):
                omegas["omega"] = service.load_omega(options["omega"])
            p, certificate = service.construct_and_certify(m, N, omegas)
        except TransportError as e:
            raise command_error(e)

        stem = Path(options["marginal"]).stem
        plan_path, certificate_path = service.write_artifacts(stem, p, certificate)
        self.stdout.write(f"plan: {plan_path}")
        self.stdout.write(f"certificate: {certificate_path}")
        if not certificate.passed:
            raise CommandError(f"Certificate failed: {', '.join(certificate.failures())}", returncode=3)
        self.stdout.write(self.style.SUCCESS(
            f"Certificate passed (separation {certificate.separation:.6g}, costs {certificate.costs})"
        ))
