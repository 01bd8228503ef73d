import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.distance import cdist

from repulsive_transport.exceptions import DegenerateCloud, GapCollapse, InsufficientMass, PreconditionError
from repulsive_transport.services.measure import Cloud, uniform_box_cloud
from repulsive_transport.services.partition import (
    cell_separation,
    choose_direction,
    direction_candidates,
    split_exact,
    split_gapped,
    subordinate_partition,
)


def grid_cloud(n, mass, lo=0.0, hi=1.0):
    """n equal samples at the midpoints of n equal subintervals of [lo, hi]"""
    points = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    return Cloud(points.reshape(-1, 1), np.full(n, mass / n), mass / n)


class DirectionTestCase(SimpleTestCase):
    def test_candidates_start_with_the_axes(self):
        candidates = direction_candidates(3, seed=7)
        self.assertEqual(candidates.shape, (10, 3))
        np.testing.assert_array_equal(candidates[:3], np.eye(3))
        np.testing.assert_allclose(np.linalg.norm(candidates, axis=1), 1.0)

    def test_line_picks_the_axis(self):
        np.testing.assert_array_equal(choose_direction(grid_cloud(8, 1.0)), [1.0])

    def test_repeated_point_is_degenerate(self):
        """A cloud sitting on one point has no usable direction"""
        cloud = Cloud(np.zeros((10, 2)), np.full(10, 0.1))
        with self.assertRaises(DegenerateCloud):
            choose_direction(cloud)

    def test_threshold_follows_the_sample_cap(self):
        """One sample of 0.5 is a duplicate under cap 0.1 but not under cap 0.25"""
        points = [[0.0], [1.0], [2.0]]
        weights = [0.5, 0.25, 0.25]
        with self.assertRaises(DegenerateCloud):
            choose_direction(Cloud(points, weights, 0.1))
        np.testing.assert_array_equal(choose_direction(Cloud(points, weights, 0.25)), [1.0])

    def test_stacked_column_uses_another_direction(self):
        """Samples sharing an x coordinate force a direction other than e_1"""
        points = np.column_stack([np.zeros(16), np.arange(16.0)])
        y = choose_direction(Cloud(points, np.full(16, 1 / 16), 1 / 16))
        self.assertNotEqual(abs(y[1]), 0.0)


class SplitExactTestCase(SimpleTestCase):
    def test_fragment_at_the_cut(self):
        """Eight samples, targets (0.3, 0.7): the third sample is split"""
        cloud = Cloud(((2 * np.arange(1, 9) - 1) / 16).reshape(-1, 1), np.full(8, 1 / 8), 1 / 8)
        first, second = split_exact(cloud, [0.3, 0.7])

        np.testing.assert_allclose(first.weights, [0.125, 0.125, 0.05])
        np.testing.assert_array_equal(first.points[:, 0], [1 / 16, 3 / 16, 5 / 16])
        self.assertAlmostEqual(first.total_mass, 0.3, places=14)
        self.assertAlmostEqual(second.total_mass, 0.7, places=14)
        self.assertEqual(second.points[0, 0], 5 / 16)
        self.assertEqual(first.max_sample_weight, cloud.max_sample_weight)

    def test_equal_cells(self):
        cloud = uniform_box_cloud([0.0, 0.0], [1.0, 1.0], 1.0, 400, seed=2)
        cells = split_exact(cloud, [0.25] * 4)
        for cell in cells:
            with self.subTest(size=cell.size):
                self.assertAlmostEqual(cell.total_mass, 0.25, places=12)
        self.assertAlmostEqual(sum(c.total_mass for c in cells), cloud.total_mass, places=14)

    def test_targets_must_match_the_mass(self):
        with self.assertRaises(PreconditionError):
            split_exact(grid_cloud(8, 1.0), [0.3, 0.3])


class SplitGappedTestCase(SimpleTestCase):
    def test_two_targets_leave_a_gap(self):
        cells, remainder = split_gapped(grid_cloud(10, 1.0), [0.3, 0.3])
        self.assertEqual(len(cells), 2)
        for cell in cells:
            self.assertAlmostEqual(cell.total_mass, 0.3, places=12)
        self.assertAlmostEqual(remainder.total_mass, 0.4, places=12)
        self.assertGreater(cell_separation(cells), 0.0)

    def test_single_target(self):
        cells, remainder = split_gapped(grid_cloud(10, 1.0), [0.3])
        self.assertEqual(len(cells), 1)
        self.assertAlmostEqual(cells[0].total_mass, 0.3, places=12)
        self.assertAlmostEqual(remainder.total_mass, 0.7, places=12)

    def test_targets_too_heavy(self):
        """Targets must leave strictly positive room for the gaps"""
        for targets in ([0.6, 0.6], [0.5, 0.5]):
            with self.subTest(targets=targets):
                with self.assertRaises(PreconditionError):
                    split_gapped(grid_cloud(10, 1.0), targets)


class SubordinatePartitionTestCase(SimpleTestCase):
    def test_single_atom(self):
        """Uniform cloud of mass 0.7 on [0, 1], atom at 2, N=2"""
        partition = subordinate_partition(grid_cloud(70, 0.7), [[2.0]], [0.3], 2)
        self.assertEqual(set(partition.pieces), {(1, 2)})
        piece = partition.piece(1, 2)
        self.assertAlmostEqual(piece.total_mass, 0.3, places=12)
        self.assertAlmostEqual(partition.remainder.total_mass, 0.4, places=12)
        self.assertGreaterEqual(float(np.min(np.abs(piece.points - 2.0))), 1.0)

    def test_pieces_are_apart(self):
        atoms = [[5.0, 5.0], [6.0, 5.0]]
        cloud = uniform_box_cloud([0.0, 0.0], [1.0, 1.0], 0.6, 200, seed=5)
        partition = subordinate_partition(cloud, atoms, [0.1, 0.05], 3)

        self.assertEqual(set(partition.pieces), {(1, 2), (1, 3), (2, 3)})
        expected = {(1, 2): 0.1, (1, 3): 0.1, (2, 3): 0.05}
        for label, mass in expected.items():
            with self.subTest(label=label):
                self.assertAlmostEqual(partition.piece(*label).total_mass, mass, places=12)
        total = sum(p.total_mass for p in partition.pieces.values()) + partition.remainder.total_mass
        self.assertAlmostEqual(total, cloud.total_mass, places=12)

        self.assertGreater(partition.separation, 0.0)
        first = [partition.piece(1, 2), partition.piece(1, 3)]
        self.assertGreater(cell_separation(first), 0.0)
        self.assertGreater(float(np.min(cdist(atoms, partition.piece(2, 3).points))), 0.0)

    def test_gaps_between_groups_only(self):
        """Six pieces of 0.1 from ten samples of 0.1: pieces sharing h may touch, pieces sharing i may not"""
        cloud = grid_cloud(10, 1.0)
        atoms = [[2.0], [3.0], [4.0]]
        partition = subordinate_partition(cloud, atoms, [0.1, 0.1, 0.1], 4)

        self.assertEqual(len(partition.pieces), 6)
        for label, piece in partition.pieces.items():
            with self.subTest(label=label):
                self.assertAlmostEqual(piece.total_mass, 0.1, places=12)
        self.assertAlmostEqual(partition.remainder.total_mass, 0.4, places=12)
        self.assertGreater(partition.separation, 0.0)
        for i in (1, 2):
            with self.subTest(i=i):
                same_i = [p for (i2, _), p in partition.pieces.items() if i2 == i]
                self.assertGreater(cell_separation(same_i), 0.0)

    def test_gap_lighter_than_a_sample(self):
        """Two groups sharing spare mass 0.5 cannot clear samples of 0.25"""
        with self.assertRaises(GapCollapse):
            subordinate_partition(grid_cloud(4, 1.0), [[2.0], [3.0]], [0.2, 0.1], 3, max_halvings=3)

    def test_no_atoms(self):
        cloud = grid_cloud(10, 1.0)
        partition = subordinate_partition(cloud, np.zeros((0, 1)), [], 3)
        self.assertEqual(partition.pieces, {})
        self.assertEqual(partition.remainder, cloud)

    def test_insufficient_mass(self):
        """A cloud of mass 0.2 cannot host (N-1) * 0.2 for N=3"""
        with self.assertRaises(InsufficientMass):
            subordinate_partition(grid_cloud(20, 0.2), [[2.0]], [0.2], 3)

    def test_too_many_atoms(self):
        with self.assertRaises(PreconditionError):
            subordinate_partition(grid_cloud(20, 1.0), [[2.0], [3.0], [4.0]], [0.1, 0.1, 0.1], 2)
