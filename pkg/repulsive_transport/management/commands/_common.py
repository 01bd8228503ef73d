from django.core.management.base import CommandError

from repulsive_transport.exceptions import ValidationFailed
from repulsive_transport.services.transport_service import TransportService


def add_config_arguments(parser):
    parser.add_argument("--seed", type=int, help="Master seed (defaults to TRANSPORT_SEED)")
    parser.add_argument("--cutoff", type=int, help="Atom count above which the countable reduction runs")
    parser.add_argument("--tol", type=float, help="Atom and cloud residual tolerance of the certificate")
    parser.add_argument("--out", help="Output directory (defaults to TRANSPORT_OUTPUT_DIR)")


def service_from_options(options):
    tol = options.get("tol")
    try:
        return TransportService(
            seed=options.get("seed"),
            k_cutoff=options.get("cutoff"),
            atom_tol=tol,
            cloud_tol=tol,
            output_dir=options.get("out"),
        )
    except Exception as e:
        raise command_error(e)


def command_error(error):
    """CommandError carrying the exit code of a TransportError (3 for anything else)."""
    if isinstance(error, ValidationFailed) and error.report is not None:
        report = error.report
        if "concentration" in report.codes():
            message = (f"Marginal rejected: concentration {report.concentration!r} "
                       f"is not below 1/N = {1.0 / report.N!r}")
        else:
            message = f"Marginal rejected: {', '.join(report.codes())}"
        return CommandError(message, returncode=error.exit_code)
    return CommandError(str(error), returncode=getattr(error, "exit_code", 3))
