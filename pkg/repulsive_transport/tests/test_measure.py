import json

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from repulsive_transport.exceptions import SchemaError
from repulsive_transport.services.measure import (
    AtomList,
    Cloud,
    Marginal,
    concentration,
    fast_decreasing_prefix,
    load_marginal,
    save_marginal,
    uniform_box_cloud,
    validate_marginal,
)


def line_atoms(weights, start=0.0):
    return Marginal.build(1, [[start + i] for i in range(len(weights))], weights)


class ConcentrationTestCase(SimpleTestCase):
    def test_concentration(self):
        """Largest atom weight; the cloud never counts"""
        cloud = uniform_box_cloud([0.0], [1.0], 0.7, 64, seed=1)
        cases = [
            (line_atoms([0.4, 0.35, 0.25]), 0.4),
            (Marginal.build(1, cloud=uniform_box_cloud([0.0], [1.0], 1.0, 64, seed=1)), 0.0),
            (Marginal.build(1, [[3.0]], [0.3], cloud), 0.3),
        ]
        for m, expected in cases:
            with self.subTest(expected=expected):
                self.assertEqual(concentration(m), expected)


class ValidateMarginalTestCase(SimpleTestCase):
    def test_valid_marginal_passes(self):
        """N=3 with atoms (0.3, 0.3, 0.2, 0.2) is constructible"""
        report = validate_marginal(line_atoms([0.3, 0.3, 0.2, 0.2]), 3)
        self.assertTrue(report.ok)
        self.assertAlmostEqual(report.concentration, 0.3)

    def test_concentration_boundary_is_rejected(self):
        """An atom of mass exactly 1/N is not enough below the bound"""
        cloud = uniform_box_cloud([1.0], [2.0], 0.5, 64, seed=0)
        report = validate_marginal(Marginal.build(1, [[0.0]], [0.5], cloud), 2)
        self.assertEqual(report.codes(), ["concentration"])

    def test_mass_must_be_one(self):
        cloud = uniform_box_cloud([5.0], [6.0], 0.2, 64, seed=0)
        report = validate_marginal(Marginal.build(1, [[0.0], [1.0], [2.0]], [0.3, 0.3, 0.3], cloud), 4)
        self.assertIn("mass", report.codes())

    def test_structural_violations(self):
        """Unsorted weights, duplicate atoms and oversized samples are all reported"""
        cases = [
            (Marginal(1, AtomList([[0.0], [1.0]], [0.2, 0.8]), Cloud.empty(1)), "unsorted"),
            (Marginal(1, AtomList([[0.0], [0.0]], [0.5, 0.5]), Cloud.empty(1)), "duplicate_atoms"),
            (Marginal(1, AtomList([[0.0]], [0.5]), Cloud([[1.0], [2.0]], [0.4, 0.1], 0.1)), "oversized_sample"),
            (Marginal(1, AtomList([[0.0], [1.0]], [1.0, 0.0]), Cloud.empty(1)), "nonpositive_weight"),
            (Marginal(1, AtomList([[np.nan]], [1.0]), Cloud.empty(1)), "non_finite"),
        ]
        for m, code in cases:
            with self.subTest(code=code):
                self.assertIn(code, validate_marginal(m, 4).codes())

    def test_sample_on_atom_is_a_warning(self):
        cloud = Cloud([[0.0]] + [[i / 100] for i in range(1, 64)], np.full(64, 0.75 / 64))
        report = validate_marginal(Marginal.build(1, [[0.0]], [0.25], cloud), 3)
        self.assertEqual([w["code"] for w in report.warnings], ["sample_on_atom"])
        self.assertTrue(report.ok)


class FastDecreasingPrefixTestCase(SimpleTestCase):
    def test_examples(self):
        cases = [
            ((0.5, 0.2, 0.15, 0.1, 0.05), 3, 1),
            ((0.2, 0.2, 0.2, 0.2, 0.2), 3, 0),
            ((0.9, 0.05, 0.05), 2, 1),
        ]
        for b, N, expected in cases:
            with self.subTest(b=b, N=N):
                self.assertEqual(fast_decreasing_prefix(b, N), expected)

    @settings(max_examples=200, deadline=None)
    @given(
        N=st.integers(min_value=1, max_value=6),
        raw=st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=30),
    )
    def test_prefix_is_shorter_than_N(self, N, raw):
        b = sorted(raw, reverse=True)
        ell = fast_decreasing_prefix(b, N)
        self.assertLess(ell, N)
        tails = [sum(b[j:]) for j in range(1, len(b) + 1)]
        for j in range(1, ell + 1):
            self.assertGreater((N - j) * b[j - 1], tails[j - 1] * (1 - 1e-12))


class MarginalDocumentTestCase(SimpleTestCase):
    def test_load_sorts_atoms(self):
        """Atoms are stored by weight, then coordinates"""
        text = json.dumps({
            "d": 1,
            "atoms": [{"x": [2.0], "b": 0.2}, {"x": [1.0], "b": 0.2}, {"x": [0.0], "b": 0.6}],
        })
        m = load_marginal(text)
        np.testing.assert_array_equal(m.atoms.locations[:, 0], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(m.atoms.weights, [0.6, 0.2, 0.2])

    def test_uniform_box_document(self):
        text = json.dumps({
            "d": 2,
            "diffuse": {"type": "uniform_box", "total_mass": 0.5, "lo": [0, 0], "hi": [1, 2],
                        "samples": 16, "seed": 3},
        })
        m = load_marginal(text)
        self.assertEqual(m.diffuse.size, 16)
        self.assertAlmostEqual(m.diffuse.total_mass, 0.5)
        self.assertAlmostEqual(m.diffuse.max_sample_weight, 0.5 / 64)
        self.assertTrue(np.all(m.diffuse.points[:, 1] <= 2.0))

    def test_save_then_load_keeps_samples(self):
        m = Marginal.build(1, [[0.0]], [0.25], uniform_box_cloud([1.0], [2.0], 0.75, 64, seed=4))
        again = load_marginal(save_marginal(m))
        self.assertEqual(again.atoms, m.atoms)
        self.assertEqual(again.diffuse, m.diffuse)

    def test_rejects_bad_documents(self):
        """Parse errors and field errors both surface as SchemaError"""
        with self.assertRaises(SchemaError) as cm:
            load_marginal('{"d": 1, "atoms": [')
        self.assertEqual(cm.exception.code, "parse_error")

        with self.assertRaises(SchemaError) as cm:
            load_marginal(json.dumps({"d": 1, "atoms": [{"x": [0.0], "b": -0.1}]}))
        self.assertIn("atoms", cm.exception.errors)

        with self.assertRaises(SchemaError) as cm:
            load_marginal(json.dumps({"d": 2, "atoms": [{"x": [0.0], "b": 1.0}]}))
        self.assertIn("atoms", cm.exception.errors)
