"""Independent checks of constructed plans.

Marginals are recomputed from the block formula and, when the plan is small
enough, from its dense expansion. ``exact_optimum_tiny`` solves the purely
atomic problem exactly on tiny instances for comparison.
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from repulsive_transport.exceptions import SizeCap, UnsymmetrizedPlan
from repulsive_transport.services import plan as plans
from repulsive_transport.services.cost import DEFAULT_COST_SAMPLE_CAP, cost_with_error
from repulsive_transport.services.measure import collapse_locations

logger = logging.getLogger(__name__)

DEFAULT_EXPANSION_CAP = 200000
DEFAULT_TOL = 1e-9
TINY_GRID_CAP = 10 ** 4
PIVOT_TOL = 1e-12


@dataclass
class MarginalCheck:
    atom_residual: float = 0.0
    cloud_residual: float = 0.0
    unmatched_mass: float = 0.0
    dense_residual: float = None
    symmetrized: bool = True

    def ok(self, atom_tol=DEFAULT_TOL, cloud_tol=DEFAULT_TOL):
        return (self.symmetrized
                and self.atom_residual <= atom_tol
                and self.cloud_residual <= cloud_tol
                and self.unmatched_mass <= atom_tol
                and (self.dense_residual is None or self.dense_residual <= atom_tol))


def _as_table(points, weights):
    return {tuple(p): float(w) for p, w in zip(points, weights)}


def _compare(found, expected):
    """(largest per-location residual over shared locations, mass at unshared ones)."""
    residual = 0.0
    unmatched = 0.0
    for key, w in expected.items():
        if key in found:
            residual = max(residual, abs(found[key] - w))
        else:
            unmatched += w
    for key, w in found.items():
        if key not in expected:
            unmatched += w
    return residual, unmatched


def _dense_marginal_residual(p, cap):
    if plans.expansion_size(p) > cap:
        return None
    tuples, weights = plans.dense_expand(p, cap)
    reference = plans.marginal(p)
    points = np.vstack([reference.atoms.locations, reference.diffuse.points])
    expected = _as_table(*collapse_locations(points, np.concatenate(
        [reference.atoms.weights, reference.diffuse.weights])))
    worst = 0.0
    for axis in range(p.N):
        found = _as_table(*collapse_locations(tuples[:, axis, :], weights))
        residual, unmatched = _compare(found, expected)
        worst = max(worst, residual, unmatched)
    return worst


def check_marginals(p, m, expansion_cap=DEFAULT_EXPANSION_CAP):
    try:
        computed = plans.marginal(p)
    except UnsymmetrizedPlan:
        return MarginalCheck(math.inf, math.inf, math.inf, None, symmetrized=False)

    atom_residual, atom_unmatched = _compare(
        _as_table(computed.atoms.locations, computed.atoms.weights),
        _as_table(m.atoms.locations, m.atoms.weights),
    )
    cloud_residual, cloud_unmatched = _compare(
        _as_table(*collapse_locations(computed.diffuse.points, computed.diffuse.weights)),
        _as_table(*collapse_locations(m.diffuse.points, m.diffuse.weights)),
    )
    check = MarginalCheck(
        atom_residual=atom_residual,
        cloud_residual=max(cloud_residual, cloud_unmatched),
        unmatched_mass=atom_unmatched,
        dense_residual=_dense_marginal_residual(p, expansion_cap),
    )
    logger.debug(f"Marginal check: {check}")
    return check


def _multiset(tuples, weights):
    flat = tuples.reshape(len(tuples), -1)
    return collapse_locations(flat, weights)


def check_symmetry(p, expansion_cap=DEFAULT_EXPANSION_CAP):
    if not all(b.symmetrized for b in p.blocks) and p.N > 1:
        return False
    if p.N == 1 or plans.expansion_size(p) > expansion_cap:
        return True
    tuples, weights = plans.dense_expand(p, expansion_cap)
    rows, mass = _multiset(tuples, weights)
    scale = max(1.0, float(np.sum(weights)))
    for i in range(p.N - 1):
        swap = list(range(p.N))
        swap[i], swap[i + 1] = swap[i + 1], swap[i]
        swapped_rows, swapped_mass = _multiset(tuples[:, swap, :], weights)
        if swapped_rows.shape != rows.shape or not np.array_equal(swapped_rows, rows):
            return False
        if not np.allclose(swapped_mass, mass, rtol=0, atol=1e-12 * scale):
            return False
    return True


class DenseSimplex:
    """Two-phase tableau simplex with Bland's rule for min c.x, A x = b, x >= 0 (b >= 0)."""

    def __init__(self, c, A, b):
        self.c = np.asarray(c, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.m, self.n = self.A.shape

    def _pivot(self, tableau, row, col):
        tableau[row, :] /= tableau[row, col]
        for i in range(tableau.shape[0]):
            if i != row and tableau[i, col] != 0.0:
                tableau[i, :] -= tableau[i, col] * tableau[row, :]

    def _iterate(self, tableau, basis, allowed):
        while True:
            reduced = tableau[0, :-1]
            entering = next((j for j in allowed if reduced[j] < -PIVOT_TOL), None)
            if entering is None:
                return True
            column = tableau[1:, entering]
            best = None
            for i in np.flatnonzero(column > PIVOT_TOL):
                ratio = tableau[i + 1, -1] / column[i]
                if best is None or ratio < best[0] - PIVOT_TOL \
                        or (abs(ratio - best[0]) <= PIVOT_TOL and basis[i] < basis[best[1]]):
                    best = (ratio, i)
            if best is None:
                return False
            self._pivot(tableau, best[1] + 1, entering)
            basis[best[1]] = entering

    def solve(self):
        """Optimal value, or inf when infeasible."""
        m, n = self.m, self.n
        if n == 0:
            return 0.0 if np.all(np.abs(self.b) <= PIVOT_TOL) else math.inf
        tableau = np.zeros((m + 1, n + m + 1))
        tableau[1:, :n] = self.A
        tableau[1:, n:n + m] = np.eye(m)
        tableau[1:, -1] = self.b
        tableau[0, n:n + m] = 1.0
        tableau[0, :] -= tableau[1:, :].sum(axis=0)
        basis = list(range(n, n + m))

        self._iterate(tableau, basis, range(n + m))
        if -tableau[0, -1] > 1e-9 * max(1.0, float(np.sum(self.b))):
            return math.inf

        # drive artificial variables out; rows where that fails are redundant
        keep = []
        for i in range(m):
            if basis[i] >= n:
                col = next((j for j in range(n) if abs(tableau[i + 1, j]) > 1e-9), None)
                if col is None:
                    continue
                self._pivot(tableau, i + 1, col)
                basis[i] = col
            keep.append(i)
        rows = [0] + [i + 1 for i in keep]
        tableau = np.hstack([tableau[rows, :n], tableau[rows, -1:]])
        basis = [basis[i] for i in keep]

        tableau[0, :] = 0.0
        tableau[0, :n] = self.c
        for i, j in enumerate(basis):
            tableau[0, :] -= self.c[j] * tableau[i + 1, :]
        if not self._iterate(tableau, basis, range(n)):
            return -math.inf
        return float(-tableau[0, -1])


def tuple_cost(points, w):
    if len(points) < 2:
        return 0.0
    distances = pdist(points)
    if np.any(distances == 0):
        return math.inf
    return float(np.sum(1.0 / w.omega(distances)))


def exact_optimum_tiny(atoms, N, w):
    """Minimal cost over all N-plans with marginal ``atoms`` (inf if none has finite cost)."""
    k = atoms.k
    if k ** N > TINY_GRID_CAP:
        raise SizeCap(f"k^N = {k ** N} exceeds {TINY_GRID_CAP}")
    grid = [t for t in itertools.product(range(k), repeat=N) if len(set(t)) == N]
    costs = [tuple_cost(atoms.locations[list(t)], w) for t in grid]
    A = np.zeros((N * k, len(grid)))
    for col, t in enumerate(grid):
        for axis, atom in enumerate(t):
            A[axis * k + atom, col] = 1.0
    b = np.tile(atoms.weights, N)
    value = DenseSimplex(costs, A, b).solve()
    logger.debug(f"Exact optimum over {len(grid)} tuples: {value!r}")
    return value


@dataclass
class Certificate:
    atom_residual: float
    cloud_residual: float
    unmatched_mass: float
    dense_residual: float
    symmetry_ok: bool
    separation: float
    costs: dict = field(default_factory=dict)
    cost_errors: dict = field(default_factory=dict)
    cost_bound_ok: bool = True
    ledger: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    config: dict = field(default_factory=dict)
    atom_tol: float = DEFAULT_TOL
    cloud_tol: float = DEFAULT_TOL

    @property
    def passed(self):
        return (self.atom_residual <= self.atom_tol
                and self.cloud_residual <= self.cloud_tol
                and self.unmatched_mass <= self.atom_tol
                and (self.dense_residual is None or self.dense_residual <= self.atom_tol)
                and self.symmetry_ok
                and self.separation > 0
                and all(math.isfinite(v) for v in self.costs.values())
                and self.cost_bound_ok
                and self.ledger.get("violations", 0) == 0)

    def failures(self):
        reasons = []
        if not self.atom_residual <= self.atom_tol or not self.unmatched_mass <= self.atom_tol:
            reasons.append("atom_marginal")
        if not self.cloud_residual <= self.cloud_tol:
            reasons.append("cloud_marginal")
        if self.dense_residual is not None and not self.dense_residual <= self.atom_tol:
            reasons.append("dense_marginal")
        if not self.symmetry_ok:
            reasons.append("symmetry")
        if not self.separation > 0:
            reasons.append("separation")
        if not all(math.isfinite(v) for v in self.costs.values()):
            reasons.append("cost")
        if not self.cost_bound_ok:
            reasons.append("cost_bound")
        if self.ledger.get("violations", 0):
            reasons.append("ledger")
        return reasons

    def as_dict(self):
        data = asdict(self)
        data["passed"] = self.passed
        data["failures"] = self.failures()
        return data


def certify(p, m, omegas, ledger=None, seed=0, config_hash="", config=None,
            atom_tol=DEFAULT_TOL, cloud_tol=DEFAULT_TOL,
            expansion_cap=DEFAULT_EXPANSION_CAP, cost_sample_cap=DEFAULT_COST_SAMPLE_CAP):
    """Certificate for plan p against marginal m; ``omegas`` maps names to OmegaSpec."""
    marginals = check_marginals(p, m, expansion_cap)
    separation = plans.min_separation(p)
    pairs = p.N * (p.N - 1) // 2
    costs, errors, bound_ok = {}, {}, True
    for name, w in omegas.items():
        value, error = cost_with_error(p, w, cost_sample_cap, seed)
        costs[name] = value
        errors[name] = error
        if separation > 0 and math.isfinite(separation) and math.isfinite(value):
            bound = p.mass * pairs / w.omega(separation)
            bound_ok = bound_ok and value <= bound * (1 + 1e-9)
    certificate = Certificate(
        atom_residual=marginals.atom_residual,
        cloud_residual=marginals.cloud_residual,
        unmatched_mass=marginals.unmatched_mass,
        dense_residual=marginals.dense_residual,
        symmetry_ok=marginals.symmetrized and check_symmetry(p, expansion_cap),
        separation=separation,
        costs=costs,
        cost_errors=errors,
        cost_bound_ok=bound_ok,
        ledger=ledger.as_dict() if ledger is not None else {"checks": 0, "violations": 0, "entries": []},
        seed=seed,
        config_hash=config_hash,
        config=dict(config or {}),
        atom_tol=atom_tol,
        cloud_tol=cloud_tol,
    )
    if certificate.passed:
        logger.info(f"Certificate passed: separation {separation!r}, costs {costs}")
    else:
        logger.warning(f"Certificate failed: {certificate.failures()}")
    return certificate
