import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from django.conf import settings

from repulsive_transport.exceptions import SchemaError, TransportError, ValidationFailed
from repulsive_transport.services import construct as construction
from repulsive_transport.services import families
from repulsive_transport.services.cost import (
    OmegaSpec,
    cost_with_error,
    load_omega,
    sharpness_estimate,
    sharpness_lower_bound,
    sharpness_marginal,
)
from repulsive_transport.services.measure import load_marginal
from repulsive_transport.services.plan import load_plan, save_plan
from repulsive_transport.services.utils import config_hash, read_structured, read_text, write_json
from repulsive_transport.services.verify import certify

logger = logging.getLogger(__name__)

BATCH_COLUMNS = [
    "case", "kind", "d", "N", "k", "diffuse_mass", "status",
    "atom_residual", "cloud_residual", "separation", "cost", "seconds",
]
SHARPNESS_COLUMNS = ["eps", "closed_form_bound", "monte_carlo_estimate", "samples"]


@dataclass(frozen=True)
class RunConfig:
    seed: int
    k_cutoff: int
    sample_weight_divisor: int
    duplicate_factor: float
    max_halvings: int
    tail_safety: float
    cost_sample_cap: int
    expansion_cap: int
    atom_tol: float
    cloud_tol: float
    ledger_tol: float
    output_dir: str

    @classmethod
    def from_settings(cls, **overrides):
        """Settings defaults with non-None overrides, validated."""
        from repulsive_transport.serializers import RunConfigSerializer

        data = {key.lower(): value for key, value in settings.TRANSPORT_CONFIG.items()}
        data.update({key: value for key, value in overrides.items() if value is not None})
        serializer = RunConfigSerializer(data=data)
        if not serializer.is_valid():
            raise SchemaError(f"Invalid run configuration: {dict(serializer.errors)}", errors=serializer.errors)
        return cls(**serializer.validated_data)

    def as_dict(self):
        return asdict(self)

    @property
    def hash(self):
        return config_hash(self.as_dict())


class TransportService:
    def __init__(self, config=None, **overrides):
        self.config = config or RunConfig.from_settings(**overrides)
        self.output_dir = Path(self.config.output_dir)

    # documents

    def load_marginal(self, path):
        return load_marginal(read_text(path), self.config.sample_weight_divisor)

    def load_plan(self, path):
        return load_plan(read_text(path))

    def load_omega(self, path=None):
        if path is None:
            return OmegaSpec.identity()
        return load_omega(read_text(path))

    # construction

    def construct(self, m, N):
        """Plan for marginal m and the mass ledger that accompanied it."""
        ledger = construction.MassLedger(tol=self.config.ledger_tol)
        try:
            p = construction.construct(
                m, N,
                seed=self.config.seed,
                k_cutoff=self.config.k_cutoff,
                duplicate_factor=self.config.duplicate_factor,
                max_halvings=self.config.max_halvings,
                tail_safety=self.config.tail_safety,
                ledger=ledger,
            )
        except ValidationFailed:
            raise
        except TransportError as e:
            logger.error(f"Error constructing plan for N={N}: {str(e)}")
            raise
        return p, ledger

    def certify(self, p, m, omegas=None, ledger=None):
        omegas = omegas or {"identity": OmegaSpec.identity()}
        return certify(
            p, m, omegas,
            ledger=ledger,
            seed=self.config.seed,
            config_hash=self.config.hash,
            config=self.config.as_dict(),
            atom_tol=self.config.atom_tol,
            cloud_tol=self.config.cloud_tol,
            expansion_cap=self.config.expansion_cap,
            cost_sample_cap=self.config.cost_sample_cap,
        )

    def construct_and_certify(self, m, N, omegas=None):
        p, ledger = self.construct(m, N)
        return p, self.certify(p, m, omegas, ledger)

    def write_artifacts(self, stem, p, certificate, output_dir=None):
        output_dir = Path(output_dir or self.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        plan_path = output_dir / f"{stem}.plan.json"
        plan_path.write_text(save_plan(p))
        certificate_path = write_json(output_dir / f"{stem}.certificate.json", certificate.as_dict())
        logger.info(f"Wrote {plan_path} and {certificate_path}")
        return plan_path, certificate_path

    def cost(self, p, w):
        return cost_with_error(p, w, self.config.cost_sample_cap, self.config.seed)

    # sharpness demonstration

    def sharpness_rows(self, w, N, eps_list, d=1, samples=100000):
        m = sharpness_marginal(w, d, N, samples, self.config.seed)
        rows = []
        for eps in eps_list:
            rows.append({
                "eps": eps,
                "closed_form_bound": sharpness_lower_bound(w, N, eps),
                "monte_carlo_estimate": sharpness_estimate(m, w, N, eps),
                "samples": samples,
            })
        return rows

    # batch runs

    def load_batch_spec(self, path):
        from repulsive_transport.serializers import BatchSpecSerializer

        data = read_structured(path)
        serializer = BatchSpecSerializer(data=data if data is not None else {})
        if not serializer.is_valid():
            raise SchemaError(f"Batch spec rejected: {dict(serializer.errors)}", errors=serializer.errors)
        spec = serializer.validated_data
        spec["base_dir"] = Path(path).parent
        return spec

    def _batch_cases(self, spec):
        for case in spec.get("cases") or []:
            path = Path(case["marginal"])
            if not path.is_absolute():
                path = spec["base_dir"] / path
            m = self.load_marginal(path)
            yield families.FamilyCase(path.stem, "file", m.d, case["N"], m.k, m.diffuse.total_mass,
                                      self.config.seed, m), case["expect"]
        for family in spec.get("families") or []:
            for case in families.expand_family(family, self.config.sample_weight_divisor):
                yield case, family["expect"]

    def run_case(self, case, omegas):
        started = time.perf_counter()
        row = {
            "case": case.name, "kind": case.kind, "d": case.d, "N": case.N,
            "k": case.k, "diffuse_mass": case.diffuse_mass,
        }
        try:
            _, certificate = self.construct_and_certify(case.marginal, case.N, omegas)
        except ValidationFailed:
            row.update(status="rejected", atom_residual="", cloud_residual="", separation="", cost="")
        except TransportError as e:
            logger.error(f"Batch case {case.name} failed: {str(e)}")
            row.update(status=f"error:{e.code}", atom_residual="", cloud_residual="", separation="", cost="")
        else:
            row.update(
                status="pass" if certificate.passed else "fail",
                atom_residual=certificate.atom_residual,
                cloud_residual=certificate.cloud_residual,
                separation=certificate.separation,
                cost=max(certificate.costs.values()),
            )
        row["seconds"] = round(time.perf_counter() - started, 4)
        return row

    def run_batch(self, spec):
        """Rows for every case and whether each matched its expectation."""
        omegas = {"identity": OmegaSpec.identity()}
        if spec.get("omega"):
            from repulsive_transport.services.cost import omega_from_document
            omegas["batch"] = omega_from_document(spec["omega"])
        rows, failures = [], 0
        for case, expect in self._batch_cases(spec):
            row = self.run_case(case, omegas)
            expected = row["status"] == ("rejected" if expect == "reject" else "pass")
            row["expected"] = expected
            failures += not expected
            rows.append(row)
        logger.info(f"Batch finished: {len(rows)} cases, {failures} unexpected")
        return rows, failures


def rows_to_csv(rows, columns):
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in row.items()})
    return buffer.getvalue()
