"""Constructive symmetric plans of finite repulsive cost.

The entry point is ``construct``; the other functions are the building blocks
it dispatches to (pure cloud, few atoms, many atoms, fast-decreasing head and
countable tail) and are usable on their own, including on sub-probability
measures.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from repulsive_transport.exceptions import (
    ArityUnderflow,
    ConditionViolated,
    GapCollapse,
    InsufficientMass,
    LedgerViolation,
    NegativeWeight,
    PreconditionError,
    TransportError,
    ValidationFailed,
)
from repulsive_transport.services import plan as plans
from repulsive_transport.services.measure import (
    AtomList,
    Marginal,
    fast_decreasing_prefix,
    validate_marginal,
)
from repulsive_transport.services.partition import (
    DEFAULT_DUPLICATE_FACTOR,
    DEFAULT_MAX_HALVINGS,
    split_exact,
    subordinate_partition,
)
from repulsive_transport.services.plan import Factor, MapBlock, Plan, ProductBlock

logger = logging.getLogger(__name__)

DEFAULT_K_CUTOFF = 64
DEFAULT_TAIL_SAFETY = 0.5
ZERO_WEIGHT_RTOL = 1e-15
CONDITION_TOL = 1e-12
# b_1 sits on the bound (N-1)*b_1 = b_2 + ... + b_k up to this relative gap
EQUALITY_RTOL = 1e-13
NOISE_RTOL = 1e-14


@dataclass
class MassLedger:
    """Runtime bookkeeping of the masses each construction step promises."""
    tol: float = 1e-12
    checks: int = 0
    violations: int = 0
    entries: list = field(default_factory=list)

    def check(self, label, actual, expected):
        self.checks += 1
        error = abs(actual - expected)
        if error > self.tol * max(1.0, abs(expected)):
            self.violations += 1
            self.entries.append({"label": label, "actual": actual, "expected": expected})
            logger.error(f"Mass ledger violation at {label}: {actual!r} != {expected!r}")
            raise LedgerViolation(f"{label}: mass {actual!r}, expected {expected!r}")

    def as_dict(self):
        return {"checks": self.checks, "violations": self.violations, "entries": list(self.entries)}


@dataclass(frozen=True)
class TSplit:
    t: np.ndarray
    pbar: np.ndarray
    jbar: int
    remainder: np.ndarray = None


@dataclass(frozen=True)
class BaseWeights:
    a: np.ndarray

    @staticmethod
    def inverse_matrix(N):
        """Inverse of the (N+1)x(N+1) all-ones-minus-identity matrix."""
        return np.full((N + 1, N + 1), 1.0 / N) - np.eye(N + 1)


@dataclass(frozen=True)
class TailReduction:
    groups: dict = field(default_factory=dict)
    tails: dict = field(default_factory=dict)
    radii: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    tail_masses: dict = field(default_factory=dict)
    reduced_weights: np.ndarray = None


def _ledger(ledger):
    return ledger if ledger is not None else MassLedger()


def _drop_zeros(locations, weights, floor=0.0):
    """Atoms strictly heavier than ``floor``, in canonical order."""
    weights = np.asarray(weights, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if len(weights) == 0:
        return AtomList(locations.reshape(0, locations.shape[-1]), weights)
    keep = weights > floor
    return AtomList.canonical(locations[keep], weights[keep])


def _empty_plan(N, d):
    return Plan(N, d, ())


def _deltas(atoms, indices):
    return tuple(Factor.point(atoms.locations[i]) for i in indices)


def plan_diffuse(c, N, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR, ledger=None):
    """Cyclic plan for a cloud: cell j of 2N equal-mass slabs goes to cell j+2.

    Tuples chain N cells j, j+2, ..., j+2(N-1) (mod 2N) and are matched by
    common cumulative mass, so every slot carries the cloud exactly.
    """
    ledger = _ledger(ledger)
    if not c.total_mass > 0:
        raise PreconditionError("plan_diffuse needs a cloud of positive mass")
    if N == 1:
        return Plan(1, c.d, (MapBlock(c.points[:, None, :], c.weights, True, True),))

    n_cells = 2 * N
    cells = split_exact(c, [c.total_mass / n_cells] * n_cells, seed, duplicate_factor)
    fractions = []
    for cell in cells:
        f = np.round(np.cumsum(cell.weights) / cell.total_mass, 14)
        f[-1] = 1.0
        fractions.append(f)

    tuples, weights = [], []
    for j in range(n_cells):
        chain = [(j + 2 * i) % n_cells for i in range(N)]
        breaks = np.unique(np.concatenate([fractions[h] for h in chain]))
        breaks = breaks[breaks < 1.0]
        breaks = np.concatenate([[0.0], breaks, [1.0]])
        widths = np.diff(breaks)
        keep = widths > 0
        mids = (0.5 * (breaks[:-1] + breaks[1:]))[keep]
        picks = [np.minimum(np.searchsorted(fractions[h], mids, side="right"), cells[h].size - 1)
                 for h in chain]
        tuples.append(np.stack([cells[h].points[idx] for h, idx in zip(chain, picks)], axis=1))
        weights.append(widths[keep] * cells[j].total_mass)

    block = MapBlock(np.concatenate(tuples), np.concatenate(weights), True, True)
    separation = plans.block_separation(block)
    if not separation > 0:
        raise GapCollapse(f"cyclic cells collapse (separation {separation!r})")
    logger.debug(f"Diffuse plan: {len(block.weights)} tuples, separation {separation!r}")
    p = _check_symmetrized(Plan(N, c.d, (block,)), ledger, f"diffuse N={N}")
    ledger.check(f"diffuse N={N}", p.mass, c.total_mass)
    return p


def plan_few_atoms(c, atoms, N, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR,
                   max_halvings=DEFAULT_MAX_HALVINGS, ledger=None):
    ledger = _ledger(ledger)
    k = atoms.k
    if k == 0:
        return plan_diffuse(c, N, seed, duplicate_factor, ledger)
    if k > N:
        raise PreconditionError(f"plan_few_atoms takes at most N atoms (k={k}, N={N})")
    b = atoms.weights
    required = N * b[0] - float(np.sum(b))
    if not c.total_mass > required:
        raise InsufficientMass(f"cloud mass {c.total_mass!r} does not exceed N*b_1 - sum b = {required!r}")

    masses = np.append(b[:-1] - b[1:], b[-1])
    partition = subordinate_partition(c, atoms.locations, masses, N, seed, duplicate_factor, max_halvings)

    blocks = []
    for i in range(1, k + 1):
        m = float(masses[i - 1])
        if not m > 0:
            continue
        factors = _deltas(atoms, range(i)) + tuple(
            Factor.diffuse(partition.piece(i, h)) for h in range(i + 1, N + 1)
        )
        block = ProductBlock(factors, N / m ** (N - i - 1), True)
        ledger.check(f"few_atoms P_{i}", block.mass, N * m)
        blocks.append(block)

    head = _check_symmetrized(Plan(N, c.d, tuple(blocks)), ledger, "few_atoms head")
    rest = plan_diffuse(partition.remainder, N, seed, duplicate_factor, ledger)
    ledger.check("few_atoms total", head.mass + rest.mass, c.total_mass + atoms.total_mass)
    return plans.add(head, rest)


def t_split(b, N):
    """Weights t of the x_1-block and the remainder b - t for b_2..b_k.

    The remainder is evaluated from its own closed form rather than as a
    difference, so an atom the x_1-block uses up leaves exactly zero behind.
    The split invariants are checked to ``CONDITION_TOL * p_2``.
    """
    b = np.asarray(b, dtype=float)
    k = len(b)
    if k < N + 2:
        raise PreconditionError(f"t_split needs at least N+2 weights (k={k}, N={N})")
    # pbar[j] = b_j + ... + b_k for j = 2..k, stored 0-based from b_2
    pbar = np.cumsum(b[1:][::-1])[::-1]
    p2 = math.fsum(b[1:])
    tol = CONDITION_TOL * p2
    gap = p2 - (N - 1) * b[0]
    if gap < -tol:
        raise ConditionViolated(f"(N-1)*b_1 = {(N - 1) * b[0]!r} exceeds {p2!r}")
    jbar = next(j for j in range(2, k + 1) if (N - j + 2) * b[j - 1] <= pbar[j - 2])

    if gap <= EQUALITY_RTOL * p2:
        return TSplit(t=b[1:].copy(), pbar=pbar, jbar=jbar, remainder=np.zeros(k - 1))

    excess = gap / N
    remainder = np.empty(k - 1)
    remainder[:jbar - 2] = excess
    remainder[jbar - 2:] = b[jbar - 1:] / pbar[jbar - 2] * excess * (N - jbar + 2)
    t = b[1:] - remainder
    _check_t_split(b, t, remainder, N, tol)

    # rounding leftovers of used-up atoms
    spent = t <= NOISE_RTOL * b[1:]
    t[spent] = 0.0
    remainder[spent] = b[1:][spent]
    return TSplit(t=t, pbar=pbar, jbar=jbar, remainder=remainder)


def _check_t_split(b, t, remainder, N, tol):
    failed = []
    if abs(math.fsum(t) - (N - 1) * b[0]) > tol:
        failed.append(f"sum t = {math.fsum(t)!r}, expected {(N - 1) * b[0]!r}")
    if np.any(t < -tol) or np.any(remainder < -tol):
        failed.append("0 <= t <= b")
    if np.any(np.diff(t) > tol):
        failed.append("t is not non-increasing")
    if np.any(np.diff(remainder) > tol):
        failed.append("b - t is not non-increasing")
    if (N - 2) * t[0] > math.fsum(t[1:]) + tol:
        failed.append("(N-2)*t_2 exceeds the rest of t")
    if (N - 1) * remainder[0] > math.fsum(remainder[1:]) + tol:
        failed.append("(N-1)*(b_2 - t_2) exceeds the rest of b - t")
    if failed:
        raise ConditionViolated(f"t-split for N={N} breaks: {'; '.join(failed)}")


def base_weights(b, N):
    b = np.asarray(b, dtype=float)
    if len(b) != N + 1:
        raise PreconditionError(f"base_weights needs N+1 = {N + 1} weights, got {len(b)}")
    a = BaseWeights.inverse_matrix(N) @ b
    if a[0] < -CONDITION_TOL * max(1.0, float(np.sum(b))):
        raise NegativeWeight(f"a_1 = {a[0]!r} < 0")
    return BaseWeights(a=np.clip(a, 0.0, None))


def _condition_holds(b, N):
    return (N - 1) * b[0] <= math.fsum(b[1:]) * (1 + CONDITION_TOL)


def _check_symmetrized(p, ledger, label):
    """Ledger check |symmetrize(p)| = |p| on the blocks built as symmetric sums."""
    raw = Plan(p.N, p.d, tuple(replace(b, symmetrized=False) for b in p.blocks))
    ledger.check(f"{label} symmetrized", plans.marginal_mass(plans.symmetrize(raw)), raw.mass)
    return p


def _base_case(atoms, N, ledger):
    """k = N+1 atoms in N slots; k = N uses a phantom zero-weight atom."""
    b = atoms.weights
    padded = np.append(b, 0.0) if atoms.k == N else b
    a = base_weights(padded, N).a
    floor = ZERO_WEIGHT_RTOL * float(np.max(b))
    blocks = []
    for i in range(N + 1):
        if a[i] <= floor:
            continue
        kept = [h for h in range(atoms.k) if h != i]
        if len(kept) != N:
            # only the phantom atom may be omitted when k == N
            continue
        blocks.append(ProductBlock(_deltas(atoms, kept), N * float(a[i]), True))
    p = _check_symmetrized(Plan(N, atoms.d, tuple(blocks)), ledger, f"base case N={N}")
    ledger.check(f"base case N={N}", p.mass, atoms.total_mass)
    return p


def plan_discrete(atoms, N, ledger=None):
    """Symmetric plan with purely atomic marginal sum b_j delta_{x_j}."""
    ledger = _ledger(ledger)
    k = atoms.k
    if N == 1:
        return Plan(1, atoms.d, (ProductBlock((Factor.atomic(atoms.locations, atoms.weights),), 1.0, True),))
    if k < N:
        raise ArityUnderflow(f"{k} atoms cannot fill {N} distinct slots")
    b = atoms.weights
    if not _condition_holds(b, N):
        raise ConditionViolated(f"(N-1)*b_1 = {(N - 1) * b[0]!r} exceeds {math.fsum(b[1:])!r}")
    if k <= N + 1:
        return _base_case(atoms, N, ledger)

    split = t_split(b, N)
    rest = atoms.take(np.arange(1, k))
    q1 = plan_discrete(_drop_zeros(rest.locations, split.t), N - 1, ledger)
    q = plans.scale(plans.insert_symmetric(q1, Factor.point(atoms.locations[0])), 1.0 / (N - 1))
    _check_symmetrized(q, ledger, f"Q N={N} k={k}")
    ledger.check(f"Q N={N} k={k}", q.mass, N * b[0])

    remaining = _drop_zeros(rest.locations, split.remainder)
    if remaining.k == 0:
        return q
    r = plan_discrete(remaining, N, ledger)
    ledger.check(f"R N={N} k={k}", r.mass, remaining.total_mass)
    return plans.add(q, r)


def plan_with_tail(c, atoms, N, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR,
                   max_halvings=DEFAULT_MAX_HALVINGS, ledger=None):
    ledger = _ledger(ledger)
    b = atoms.weights
    ell = fast_decreasing_prefix(b, N)
    tail = atoms.take(np.arange(ell, atoms.k))
    p_ell = tail.total_mass
    q_ell = p_ell / (N - ell)
    logger.debug(f"Fast-decreasing prefix of length {ell}, q_ell = {q_ell!r}")

    p = plan_discrete(tail, N - ell, ledger)
    ledger.check(f"P_{ell + 1}", p.mass, p_ell)
    for j in range(ell, 0, -1):
        p = plans.scale(plans.insert_symmetric(p, Factor.point(atoms.locations[j - 1])), 1.0 / (N - j))
        _check_symmetrized(p, ledger, f"P_{j}")
        ledger.check(f"P_{j}", p.mass, (N - j + 1) * q_ell)

    if ell == 0:
        if c.total_mass > 0:
            p = plans.add(p, plan_diffuse(c, N, seed, duplicate_factor, ledger))
        return p
    head = AtomList(atoms.locations[:ell], b[:ell] - q_ell)
    residual = plan_few_atoms(c, head, N, seed, duplicate_factor, max_halvings, ledger)
    return plans.add(p, residual)


def tail_reduction(atoms, N, total_mass=1.0, tail_safety=DEFAULT_TAIL_SAFETY):
    """Groups, radii, thresholds and reduced weights for the countable reduction.

    Atoms 2..N+1 (1-based) seed the groups; atoms with index >= N+2 are the
    only ones that can land in a tail.
    """
    k = atoms.k
    if k < N + 1:
        raise PreconditionError(f"countable reduction needs at least N+1 atoms (k={k}, N={N})")
    b = atoms.weights
    x = atoms.locations
    seeds = x[:N + 1]
    distances = cdist(seeds, seeds)
    base_radius = 0.5 * float(np.min(distances[np.triu_indices(N + 1, 1)])) if N >= 1 else 1.0

    to_seeds = cdist(x, seeds)
    radii = {}
    member = np.full(k, 2)
    for j in range(3, N + 2):
        r = 0.9 * base_radius
        column = to_seeds[:, j - 1]
        while np.any(np.abs(column - r) <= 1e-12 * r):
            r *= 0.9
        radii[j] = r
        member[column < r] = j

    budget = tail_safety * min(float(b[N]), total_mass / N - float(b[0]))
    if not budget > 0:
        raise PreconditionError(f"tail budget {budget!r} is not positive")
    share = budget / N
    groups, tails, thresholds, tail_masses = {}, {}, {}, {}
    reduced = np.array(b, dtype=float)
    for j in range(2, N + 2):
        indices = [i for i in range(N + 1, k) if member[i] == j]
        groups[j] = indices
        # remaining[h] = mass of indices[h:]
        remaining = np.concatenate([np.cumsum(b[indices][::-1])[::-1], [0.0]]) if indices else np.zeros(1)
        start = next(h for h in range(len(remaining)) if remaining[h] < share)
        tails[j] = indices[start:]
        thresholds[j] = indices[start] + 1 if start < len(indices) else k + 1
        tail_masses[j] = float(remaining[start])
        reduced[tails[j]] = 0.0

    total_eps = math.fsum(tail_masses.values())
    for i in range(1, N + 1):
        reduced[i] = b[i] - (total_eps - tail_masses[i + 1])
    return TailReduction(groups=groups, tails=tails, radii=radii, thresholds=thresholds,
                         tail_masses=tail_masses, reduced_weights=reduced)


def reduce_countable(m, N, tail_safety=DEFAULT_TAIL_SAFETY, ledger=None):
    """Split off tail blocks so that the residual has finitely many (fewer) atoms.

    Returns (prefix_plan, residual) with marginal(prefix_plan) + residual = m.
    """
    ledger = _ledger(ledger)
    atoms = m.atoms
    reduction = tail_reduction(atoms, N, m.total_mass, tail_safety)
    blocks = []
    for j, eps in reduction.tail_masses.items():
        if not eps > 0:
            continue
        tail = reduction.tails[j]
        others = [h - 1 for h in range(2, N + 2) if h != j]
        factors = (Factor.atomic(atoms.locations[tail], atoms.weights[tail]),) + _deltas(atoms, others)
        block = ProductBlock(factors, float(N), True)
        ledger.check(f"tail P_{j}", block.mass, N * eps)
        blocks.append(block)
    prefix = _check_symmetrized(Plan(N, m.d, tuple(blocks)), ledger, "tail blocks")

    kept = _drop_zeros(atoms.locations, reduction.reduced_weights, ZERO_WEIGHT_RTOL * m.total_mass)
    residual = Marginal(m.d, kept, m.diffuse)
    ledger.check("countable reduction", prefix.mass + residual.total_mass, m.total_mass)
    logger.info(
        f"Countable reduction: {atoms.k} atoms -> {kept.k}, "
        f"tail mass {math.fsum(reduction.tail_masses.values())!r}"
    )
    return prefix, residual


def _dispatch(c, atoms, N, seed, duplicate_factor, max_halvings, ledger):
    k = atoms.k
    if k == 0:
        return plan_diffuse(c, N, seed, duplicate_factor, ledger) if c.total_mass > 0 else _empty_plan(N, c.d)
    if k <= N:
        return plan_few_atoms(c, atoms, N, seed, duplicate_factor, max_halvings, ledger)
    if _condition_holds(atoms.weights, N):
        p = plan_discrete(atoms, N, ledger)
        if c.total_mass > 0:
            p = plans.add(p, plan_diffuse(c, N, seed, duplicate_factor, ledger))
        return p
    return plan_with_tail(c, atoms, N, seed, duplicate_factor, max_halvings, ledger)


def construct(m, N, seed=0, k_cutoff=DEFAULT_K_CUTOFF, duplicate_factor=DEFAULT_DUPLICATE_FACTOR,
              max_halvings=DEFAULT_MAX_HALVINGS, tail_safety=DEFAULT_TAIL_SAFETY, ledger=None):
    """Symmetric N-plan with marginal m, for any m of concentration below 1/N."""
    ledger = _ledger(ledger)
    report = validate_marginal(m, N)
    if not report.ok:
        raise ValidationFailed(f"Marginal is not constructible: {report.codes()}", report=report)

    logger.info(f"Constructing plan: N={N}, d={m.d}, k={m.k}, diffuse mass {m.diffuse.total_mass!r}")
    try:
        prefix = _empty_plan(N, m.d)
        target = m
        if m.k > k_cutoff and m.k >= N + 1:
            prefix, target = reduce_countable(m, N, tail_safety, ledger)
        rest = _dispatch(target.diffuse, target.atoms, N, seed, duplicate_factor, max_halvings, ledger)
        result = plans.add(prefix, rest)
        ledger.check("construct", result.mass, m.total_mass)
    except TransportError as e:
        logger.error(f"Construction failed for N={N}: {str(e)}")
        raise
    logger.info(f"Constructed plan with {len(result.blocks)} blocks")
    return result
