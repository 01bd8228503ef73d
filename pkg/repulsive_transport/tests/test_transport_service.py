import json
import math
import tempfile
import time
from pathlib import Path
from unittest.mock import patch

from django.test import SimpleTestCase, override_settings

from repulsive_transport.exceptions import InputError, SchemaError
from repulsive_transport.serializers import BatchSpecSerializer, MarginalSerializer, OmegaSerializer
from repulsive_transport.services.families import FamilyCase, expand_family
from repulsive_transport.services.measure import Marginal, validate_marginal
from repulsive_transport.services.transport_service import (
    BATCH_COLUMNS,
    RunConfig,
    TransportService,
    rows_to_csv,
)
from repulsive_transport.services.utils import canonical_json, config_hash, read_structured, sanitize_for_json


class RunConfigTestCase(SimpleTestCase):
    def test_overrides(self):
        config = RunConfig.from_settings(seed=5, k_cutoff=None)
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.k_cutoff, 64)

    def test_invalid_override(self):
        """tail_safety must be positive"""
        with self.assertRaises(SchemaError) as cm:
            RunConfig.from_settings(tail_safety=0.0)
        self.assertIn("tail_safety", cm.exception.errors)
        self.assertEqual(cm.exception.exit_code, 1)

    @override_settings(TRANSPORT_CONFIG={
        "SEED": 9, "K_CUTOFF": 8, "SAMPLE_WEIGHT_DIVISOR": 32, "DUPLICATE_FACTOR": 2.0,
        "MAX_HALVINGS": 10, "TAIL_SAFETY": 0.25, "COST_SAMPLE_CAP": 100, "EXPANSION_CAP": 1000,
        "ATOM_TOL": 1e-8, "CLOUD_TOL": 1e-8, "LEDGER_TOL": 1e-12, "OUTPUT_DIR": "reports",
    })
    def test_reads_settings(self):
        service = TransportService()
        self.assertEqual(service.config.seed, 9)
        self.assertEqual(service.config.k_cutoff, 8)
        self.assertEqual(service.output_dir, Path("reports"))

    def test_hash_follows_values(self):
        a = RunConfig.from_settings(seed=1)
        self.assertEqual(a.hash, RunConfig.from_settings(seed=1).hash)
        self.assertNotEqual(a.hash, RunConfig.from_settings(seed=2).hash)


class UtilsTestCase(SimpleTestCase):
    def test_sanitize_for_json(self):
        data = sanitize_for_json({"a": math.inf, "b": [1.5, -math.inf], "c": (1, 2)})
        self.assertEqual(data, {"a": "inf", "b": [1.5, "-inf"], "c": [1, 2]})

    def test_canonical_json_is_order_free(self):
        self.assertEqual(canonical_json({"b": 1, "a": 2}), canonical_json({"a": 2, "b": 1}))
        self.assertEqual(config_hash({"b": 1, "a": 2}), config_hash({"a": 2, "b": 1}))

    def test_read_structured(self):
        with tempfile.TemporaryDirectory() as tmp:
            yaml_path = Path(tmp) / "spec.yaml"
            yaml_path.write_text("families:\n  - kind: diffuse\n")
            self.assertEqual(read_structured(yaml_path), {"families": [{"kind": "diffuse"}]})

            broken = Path(tmp) / "broken.json"
            broken.write_text("[1, 2")
            with self.assertRaises(SchemaError) as cm:
                read_structured(broken)
            self.assertEqual(cm.exception.code, "parse_error")

            with self.assertRaises(InputError):
                read_structured(Path(tmp) / "missing.yaml")


class SerializerTestCase(SimpleTestCase):
    def test_marginal_serializer(self):
        cases = [
            ("valid", {"d": 1, "atoms": [{"x": [0.0], "b": 0.2}]}, True),
            ("negative weight", {"d": 1, "atoms": [{"x": [0.0], "b": -0.2}]}, False),
            ("wrong dimension", {"d": 2, "atoms": [{"x": [0.0], "b": 0.2}]}, False),
            ("box without samples", {"d": 1, "diffuse": {"type": "uniform_box", "total_mass": 1.0,
                                                         "lo": [0.0], "hi": [1.0]}}, False),
            ("inverted box", {"d": 1, "diffuse": {"type": "uniform_box", "total_mass": 1.0,
                                                  "lo": [1.0], "hi": [0.0], "samples": 8}}, False),
            ("mismatched samples", {"d": 1, "diffuse": {"type": "samples", "total_mass": 1.0,
                                                        "points": [[0.0]], "weights": [0.5]}}, False),
        ]
        for label, data, valid in cases:
            with self.subTest(label):
                self.assertEqual(MarginalSerializer(data=data).is_valid(), valid)

    def test_omega_serializer(self):
        cases = [
            ({"kind": "identity"}, True),
            ({"kind": "power", "s": 2}, True),
            ({"kind": "power"}, False),
            ({"kind": "table", "r": [0, 1], "w": [0, 2]}, True),
            ({"kind": "table", "r": [0, 1, 1], "w": [0, 1, 2]}, False),
            ({"kind": "table", "r": [1, 2], "w": [0, 1]}, False),
        ]
        for data, valid in cases:
            with self.subTest(data=data):
                self.assertEqual(OmegaSerializer(data=data).is_valid(), valid)

    def test_batch_spec_serializer(self):
        self.assertFalse(BatchSpecSerializer(data={}).is_valid())
        serializer = BatchSpecSerializer(data={"families": [{"kind": "diffuse"}]})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        family = serializer.validated_data["families"][0]
        self.assertEqual((family["d"], family["N"], family["expect"]), ([1], [2], "pass"))


class ExpandFamilyTestCase(SimpleTestCase):
    def family(self, **kwargs):
        serializer = BatchSpecSerializer(data={"families": [kwargs]})
        serializer.is_valid(raise_exception=True)
        return serializer.validated_data["families"][0]

    def test_few_atoms_skips_impossible_counts(self):
        """k=1 with atomic mass 1/2 and N=2 sits on the bound and is skipped"""
        cases = list(expand_family(self.family(kind="few_atoms", N=[2], diffuse_mass=[0.5], samples=64)))
        self.assertEqual([c.k for c in cases], [2])
        self.assertLess(cases[0].marginal.atoms.weights.max(), 0.5)
        self.assertAlmostEqual(cases[0].marginal.total_mass, 1.0)

    def test_many_atoms_range(self):
        cases = list(expand_family(self.family(kind="many_atoms", N=[3], k=[5, 7], samples=64)))
        self.assertEqual([c.k for c in cases], [5, 7])
        self.assertEqual({c.kind for c in cases}, {"many_atoms"})

    def test_sharpness_family_sits_on_the_bound(self):
        (case,) = expand_family(self.family(kind="sharpness", N=[3], samples=50))
        self.assertAlmostEqual(case.marginal.atoms.weights[0], 1 / 3)

    def test_sample_cap_follows_the_divisor(self):
        """64 samples of 1/64 honour divisor 64 and break divisor 128"""
        family = self.family(kind="diffuse", samples=64)
        (loose,) = expand_family(family)
        (strict,) = expand_family(family, divisor=128)
        self.assertAlmostEqual(loose.marginal.diffuse.max_sample_weight, 1 / 64)
        self.assertAlmostEqual(strict.marginal.diffuse.max_sample_weight, 1 / 128)
        self.assertTrue(validate_marginal(loose.marginal, 2).ok)
        self.assertIn("oversized_sample", validate_marginal(strict.marginal, 2).codes())


class TransportServiceTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.service = TransportService(output_dir=self.tmp.name, seed=3)
        self.m = Marginal.build(1, [[0.0], [1.0], [2.0]], [0.4, 0.35, 0.25])

    def test_construct_and_certify(self):
        p, certificate = self.service.construct_and_certify(self.m, 2)
        self.assertTrue(certificate.passed, certificate.failures())
        self.assertEqual(certificate.seed, 3)
        self.assertEqual(certificate.config_hash, self.service.config.hash)

        plan_path, certificate_path = self.service.write_artifacts("three", p, certificate)
        self.assertEqual(plan_path.name, "three.plan.json")
        self.assertTrue(json.loads(certificate_path.read_text())["passed"])
        self.assertEqual(self.service.load_plan(plan_path).N, 2)

    def test_run_case_statuses(self):
        rejected = FamilyCase("heavy", "file", 1, 2, 1, 0.0, 0, Marginal.build(1, [[0.0]], [1.0]))
        self.assertEqual(self.service.run_case(rejected, {})["status"], "rejected")

        passing = FamilyCase("three", "file", 1, 2, 3, 0.0, 0, self.m)
        row = self.service.run_case(passing, {"identity": self.service.load_omega()})
        self.assertEqual(row["status"], "pass")
        self.assertGreater(row["separation"], 0)

    def test_run_case_reports_errors(self):
        case = FamilyCase("three", "file", 1, 2, 3, 0.0, 0, self.m)
        with patch("repulsive_transport.services.construct.construct") as mock_construct:
            mock_construct.side_effect = InputError("disk on fire")
            row = self.service.run_case(case, {})
        self.assertEqual(row["status"], "error:io_error")

    def test_run_batch(self):
        spec = {
            "families": [
                {"kind": "diffuse", "d": [1, 2], "N": [3], "diffuse_mass": [0.0], "seeds": [0],
                 "samples": 96, "expect": "pass"},
                {"kind": "sharpness", "d": [1], "N": [2], "diffuse_mass": [0.0], "seeds": [0],
                 "samples": 64, "expect": "reject"},
            ],
        }
        rows, failures = self.service.run_batch(spec)
        self.assertEqual(failures, 0)
        self.assertEqual([r["status"] for r in rows], ["pass", "pass", "rejected"])

        table = rows_to_csv(rows, BATCH_COLUMNS)
        self.assertEqual(table.splitlines()[0], ",".join(BATCH_COLUMNS))
        self.assertEqual(len(table.splitlines()), 4)

    def test_rows_to_csv_spells_infinity(self):
        table = rows_to_csv([{"eps": 0.1, "closed_form_bound": math.inf}], ["eps", "closed_form_bound"])
        self.assertEqual(table, "eps,closed_form_bound\n0.1,inf\n")

    def test_batch_uses_the_configured_divisor(self):
        """The same family passes under divisor 64 and is rejected under divisor 128"""
        spec = {"families": [{"kind": "diffuse", "d": [1], "N": [2], "diffuse_mass": [0.0], "seeds": [0],
                              "samples": 64, "expect": "pass"}]}
        rows, _ = self.service.run_batch(spec)
        self.assertEqual(rows[0]["status"], "pass")

        strict = TransportService(output_dir=self.tmp.name, seed=3, sample_weight_divisor=128)
        rows, failures = strict.run_batch(spec)
        self.assertEqual(rows[0]["status"], "rejected")
        self.assertEqual(failures, 1)


class FamilySweepTestCase(SimpleTestCase):
    spec = {
        "families": [
            {"kind": "few_atoms", "d": [1, 2], "N": [2, 3, 4], "diffuse_mass": [0.3, 0.7],
             "seeds": [0, 1, 2], "samples": 128},
            {"kind": "many_atoms", "d": [1, 2], "N": [2, 3], "diffuse_mass": [0.0, 0.5],
             "seeds": [0, 1], "samples": 128},
            {"kind": "diffuse", "d": [1, 2, 3], "N": [2, 3, 4], "seeds": [0, 1], "samples": 128},
            {"kind": "geometric_tail", "d": [1, 2], "N": [2, 3], "diffuse_mass": [0.0, 0.3],
             "seeds": [0], "samples": 128},
        ],
    }

    def test_every_generated_case_is_certified(self):
        """At least 200 generated marginals, all certified, in under two minutes"""
        serializer = BatchSpecSerializer(data=self.spec)
        serializer.is_valid(raise_exception=True)
        with tempfile.TemporaryDirectory() as tmp:
            service = TransportService(output_dir=tmp, seed=0)
            started = time.perf_counter()
            rows, failures = service.run_batch(serializer.validated_data)
            elapsed = time.perf_counter() - started

        self.assertGreaterEqual(len(rows), 200)
        self.assertLess(elapsed, 120.0)
        broken = [(row["case"], row["status"]) for row in rows if row["status"] != "pass"]
        self.assertEqual(broken, [])
        self.assertEqual(failures, 0)
        self.assertEqual({row["kind"] for row in rows}, {"few_atoms", "many_atoms", "diffuse", "geometric_tail"})
