"""Mass-exact splitting of sample clouds along a direction.

Cells are slabs ``{t_j < <x, y> <= t_{j+1}}`` cut by cumulative mass along a
direction ``y``; at most one sample per cut is split into two co-located
fragments so that every cell carries its target mass exactly.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from repulsive_transport.exceptions import (
    DegenerateCloud,
    GapCollapse,
    InsufficientMass,
    PreconditionError,
)
from repulsive_transport.services.measure import MASS_TOL, Cloud

logger = logging.getLogger(__name__)

DEFAULT_DUPLICATE_FACTOR = 2.0
DEFAULT_MAX_HALVINGS = 60
PROJECTION_DECIMALS = 12


def direction_candidates(d, seed=0):
    """The d coordinate axes followed by 2d+1 seeded pseudo-random unit vectors."""
    rng = np.random.default_rng(seed)
    random = rng.standard_normal((2 * d + 1, d))
    random /= np.linalg.norm(random, axis=1, keepdims=True)
    return np.vstack([np.eye(d), random])


def _heaviest_projection_mass(points, weights, y):
    keys = np.round(points @ y, PROJECTION_DECIMALS)
    _, inverse = np.unique(keys, return_inverse=True)
    return float(np.max(np.bincount(inverse.reshape(-1), weights=weights)))


def choose_direction(c, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR):
    """Candidate direction whose projections put the least mass on a single value.

    The first candidate wins ties, so the pick is deterministic. More than
    ``duplicate_factor`` times the cloud's max_sample_weight on one value means
    the cloud is effectively atomic.
    """
    if c.is_empty():
        raise PreconditionError("choose_direction needs a non-empty cloud", code="empty_cloud")
    candidates = direction_candidates(c.d, seed)
    scores = [_heaviest_projection_mass(c.points, c.weights, y) for y in candidates]
    best = int(np.argmin(scores))
    threshold = duplicate_factor * c.max_sample_weight
    if scores[best] > threshold:
        raise DegenerateCloud(
            f"every candidate direction leaves mass {scores[best]!r} on one projection value "
            f"(threshold {threshold!r})"
        )
    logger.debug(f"Direction {best} chosen with heaviest projection mass {scores[best]!r}")
    return candidates[best]


def sort_along(c, y):
    """Sample order along y; ties broken by lexicographic coordinates, then input index."""
    keys = [np.arange(c.size)]
    keys.extend(c.points[:, col] for col in reversed(range(c.d)))
    keys.append(c.points @ y)
    return np.lexsort(keys)


def _cut(c, order, masses):
    """Walk the samples in ``order`` and fill consecutive segments of the given masses.

    The last segment takes whatever remains, so the split conserves mass
    exactly. Returns (segments, cut_projection_indices) where each segment is a
    pair of index and weight lists.
    """
    eps = 1e-15 * max(c.total_mass, 1.0)
    segments = [([], []) for _ in masses]
    cut_samples = []
    last = len(masses) - 1
    seg = 0
    need = masses[0]
    while seg < last and need <= eps:
        seg += 1
        need = masses[seg]
        cut_samples.append(order[0] if len(order) else None)

    for idx in order:
        w = float(c.weights[idx])
        while w > 0.0:
            if seg == last:
                segments[seg][0].append(idx)
                segments[seg][1].append(w)
                break
            if w <= need + eps:
                segments[seg][0].append(idx)
                segments[seg][1].append(w)
                need -= w
                w = 0.0
            else:
                segments[seg][0].append(idx)
                segments[seg][1].append(need)
                w -= need
                need = 0.0
            if need <= eps:
                cut_samples.append(idx)
                seg += 1
                need = masses[seg]
                while seg < last and need <= eps:
                    cut_samples.append(idx)
                    seg += 1
                    need = masses[seg]
    return segments, cut_samples


def _segment_clouds(c, segments):
    return [c.child(c.points[np.asarray(idx, dtype=int)], np.asarray(w, dtype=float))
            for idx, w in segments]


def split_exact(c, targets, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR):
    targets = [float(t) for t in targets]
    if any(t <= 0 for t in targets):
        raise PreconditionError("split_exact targets must be positive")
    if abs(sum(targets) - c.total_mass) > MASS_TOL:
        raise PreconditionError(
            f"targets sum to {sum(targets)!r} but the cloud has mass {c.total_mass!r}"
        )
    y = choose_direction(c, seed, duplicate_factor)
    segments, _ = _cut(c, sort_along(c, y), targets)
    return _segment_clouds(c, segments)


def support_distance(a, b):
    """Smallest Euclidean distance between two sample supports (inf if either is empty)."""
    if a.size == 0 or b.size == 0:
        return np.inf
    return float(np.min(cdist(a.points, b.points)))


def cell_separation(cells):
    """Smallest distance between the supports of any two distinct non-empty cells."""
    best = np.inf
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            best = min(best, support_distance(cells[i], cells[j]))
    return best


def split_gapped(c, targets, seed=0, duplicate_factor=DEFAULT_DUPLICATE_FACTOR):
    """Cells of the target masses, pairwise apart, with the gaps between them as remainder."""
    targets = [float(t) for t in targets]
    if any(t < 0 for t in targets):
        raise PreconditionError("split_gapped targets must be non-negative")
    total = c.total_mass
    if not sum(targets) < total - MASS_TOL:
        raise PreconditionError(
            f"targets sum to {sum(targets)!r}, which does not leave room inside mass {total!r}"
        )
    k = len(targets)
    if k == 0:
        return [], c

    y = choose_direction(c, seed, duplicate_factor)
    if k == 1:
        masses = [targets[0], total - targets[0]]
    else:
        gap = (total - sum(targets)) / (k - 1)
        masses = []
        for j, t in enumerate(targets):
            masses.append(t)
            if j < k - 1:
                masses.append(gap)
    order = sort_along(c, y)
    segments, _ = _cut(c, order, masses)
    clouds = _segment_clouds(c, segments)
    cells = clouds[0::2] if k > 1 else clouds[:1]
    gaps = clouds[1::2] if k > 1 else clouds[1:]
    remainder = Cloud.concat(gaps, c.d) if any(g.size for g in gaps) else c.child(np.zeros((0, c.d)), [])
    separation = cell_separation(cells)
    if not separation > 0:
        raise GapCollapse(
            f"cells along direction {y.tolist()} touch (separation {separation!r})"
        )
    return cells, remainder


@dataclass(frozen=True)
class SubordinatePartition:
    pieces: dict
    remainder: Cloud
    direction: np.ndarray = None
    cuts: list = field(default_factory=list)
    radius: float = None
    separation: float = np.inf

    def piece(self, i, h):
        return self.pieces[(i, h)]


def _initial_radius(c, atoms):
    if len(atoms) > 1:
        d = cdist(atoms, atoms)
        return 0.5 * float(np.min(d[np.triu_indices(len(atoms), 1)]))
    if c.size:
        return 0.5 * float(np.max(cdist(c.points, atoms)))
    return 1.0


def _slot_layout(labels, masses, gap):
    """Segment masses along the direction: pieces grouped by h, a gap between groups.

    Pieces of one group share h and so have distinct i; they may touch. Two
    pieces with the same i always sit in different groups. Returns the segment
    masses and, per segment, its label (None for gaps and the trailing rest).
    """
    segments, slots = [], []
    for n, h in enumerate(sorted({h for _, h in labels})):
        if n:
            segments.append(gap)
            slots.append(None)
        for i, h2 in labels:
            if h2 == h:
                segments.append(masses[i - 1])
                slots.append((i, h))
    segments.append(gap)
    slots.append(None)
    return segments, slots


def subordinate_partition(c, atoms, masses, N, seed=0,
                          duplicate_factor=DEFAULT_DUPLICATE_FACTOR,
                          max_halvings=DEFAULT_MAX_HALVINGS):
    """Pieces sigma^i_h (h = i+1..N) of mass masses[i-1] plus the remainder tau.

    Pieces with the same i are kept apart from each other and every piece
    sigma^i_h is kept apart from x_1..x_i. The radius around the atoms is
    halved until the spare mass, shared by the gaps between groups of pieces
    and the trailing rest, leaves each gap heavier than any single projection
    value along the chosen direction; such a gap has positive width.
    Pieces with zero requested mass are omitted from ``pieces``.
    """
    atoms = np.asarray(atoms, dtype=float).reshape(-1, c.d)
    masses = [float(m) for m in masses]
    k = len(masses)
    if k != len(atoms):
        raise PreconditionError("one mass per atom is required")
    if k > N:
        raise PreconditionError(f"subordinate partitions need k <= N (k={k}, N={N})")
    labels = [(i, h) for i, m in enumerate(masses, start=1) if m > 0 for h in range(i + 1, N + 1)]
    if not labels:
        return SubordinatePartition(pieces={}, remainder=c)

    required = sum((N - i) * m for i, m in enumerate(masses, start=1))
    if not c.total_mass > required:
        raise InsufficientMass(
            f"cloud mass {c.total_mass!r} does not exceed sum (N-i)*m_i = {required!r}"
        )

    n_groups = len({h for _, h in labels})
    nearest = np.min(cdist(c.points, atoms), axis=1) if c.size else np.zeros(0)
    radius = _initial_radius(c, atoms)
    spare, heaviest = -np.inf, np.inf
    for _ in range(max_halvings + 1):
        near = nearest <= radius
        far_cloud = c.take(np.flatnonzero(~near))
        spare = far_cloud.total_mass - required
        if spare > MASS_TOL:
            y = choose_direction(far_cloud, seed, duplicate_factor)
            heaviest = _heaviest_projection_mass(far_cloud.points, far_cloud.weights, y)
            if n_groups == 1 or spare / n_groups > heaviest:
                break
        radius /= 2
    else:
        if spare > MASS_TOL:
            raise GapCollapse(
                f"gap mass {spare / n_groups!r} stays below the heaviest projection value "
                f"{heaviest!r} after {max_halvings} halvings"
            )
        raise InsufficientMass(
            f"mass away from the atoms stays at {spare + required!r} <= {required!r} "
            f"after {max_halvings} halvings"
        )

    gap = spare / n_groups
    segments, slots = _slot_layout(labels, masses, gap)
    order = sort_along(far_cloud, y)
    cut_segments, cut_samples = _cut(far_cloud, order, segments)
    clouds = _segment_clouds(far_cloud, cut_segments)
    pieces = {label: cloud for label, cloud in zip(slots, clouds) if label is not None}
    gaps = [cloud for label, cloud in zip(slots, clouds) if label is None]
    remainder = Cloud.concat([c.take(np.flatnonzero(near))] + gaps, c.d)
    cuts = [float(far_cloud.points[i] @ y) for i in cut_samples if i is not None]

    separation = np.inf
    for (i, h), piece in pieces.items():
        for (i2, h2), other in pieces.items():
            if i2 == i and h2 > h:
                separation = min(separation, support_distance(piece, other))
        if piece.size:
            separation = min(separation, float(np.min(cdist(atoms[:i], piece.points))))
    if not separation > 0:
        raise GapCollapse(f"subordinate partition pieces touch (separation {separation!r})")
    if not remainder.total_mass > 0:
        raise InsufficientMass("subordinate partition left no remainder mass")

    logger.debug(
        f"Subordinate partition: {len(pieces)} pieces, radius {radius!r}, gap mass {gap!r}, "
        f"remainder {remainder.total_mass!r}, separation {separation!r}"
    )
    return SubordinatePartition(
        pieces=pieces, remainder=remainder, direction=y, cuts=cuts,
        radius=radius, separation=separation,
    )
