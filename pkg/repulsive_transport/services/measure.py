"""Marginals: an atomic part plus a sampled diffuse cloud."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from repulsive_transport.exceptions import SchemaError

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12
DEFAULT_SAMPLE_WEIGHT_DIVISOR = 64


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def canonical_order(locations, weights):
    """Indices sorting by weight descending, then lexicographically by coordinates."""
    locations = np.asarray(locations, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(weights) == 0:
        return np.zeros(0, dtype=int)
    # np.lexsort sorts by the last key first
    keys = [locations[:, c] for c in reversed(range(locations.shape[1]))]
    keys.append(-weights)
    return np.lexsort(keys)


def collapse_locations(points, weights):
    """Merge co-located entries, summing their weights.

    Returns (unique_points, summed_weights) with rows in lexicographic order.
    Summation runs in input order so the result does not depend on anything
    but the input.
    """
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(weights) == 0:
        return points.reshape(0, points.shape[1] if points.ndim == 2 else 0), weights
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    summed = np.zeros(len(unique))
    np.add.at(summed, inverse.reshape(-1), weights)
    return unique, summed


@dataclass(frozen=True)
class AtomList:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        if locations.ndim == 1:
            locations = locations.reshape(len(locations), -1) if len(locations) else locations.reshape(0, 0)
        object.__setattr__(self, "locations", _frozen(locations))
        object.__setattr__(self, "weights", _frozen(self.weights))

    @classmethod
    def empty(cls, d):
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def canonical(cls, locations, weights):
        locations = np.asarray(locations, dtype=float)
        weights = np.asarray(weights, dtype=float)
        order = canonical_order(locations, weights)
        return cls(locations[order], weights[order])

    @property
    def k(self):
        return len(self.weights)

    @property
    def d(self):
        return self.locations.shape[1]

    @property
    def total_mass(self):
        return float(np.sum(self.weights))

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return AtomList(self.locations[indices], self.weights[indices])

    def __len__(self):
        return self.k

    def __eq__(self, other):
        if not isinstance(other, AtomList):
            return NotImplemented
        return (self.locations.shape == other.locations.shape
                and np.array_equal(self.locations, other.locations)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


@dataclass(frozen=True)
class Cloud:
    """Weighted samples standing in for a non-atomic measure.

    ``max_sample_weight`` is the honesty cap of the cloud; sub-clouds cut out
    of a cloud inherit the cap of their parent.
    """
    points: np.ndarray
    weights: np.ndarray
    max_sample_weight: float = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "weights", _frozen(weights))
        if self.max_sample_weight is None:
            object.__setattr__(
                self, "max_sample_weight",
                float(np.sum(weights)) / DEFAULT_SAMPLE_WEIGHT_DIVISOR,
            )

    @classmethod
    def empty(cls, d, max_sample_weight=0.0):
        return cls(np.zeros((0, d)), np.zeros(0), max_sample_weight)

    @property
    def total_mass(self):
        return float(np.sum(self.weights))

    @property
    def size(self):
        return len(self.weights)

    @property
    def d(self):
        return self.points.shape[1]

    def is_empty(self):
        return self.size == 0

    def child(self, points, weights):
        """A sub-cloud carrying this cloud's cap."""
        return Cloud(np.asarray(points, dtype=float).reshape(-1, self.d), weights, self.max_sample_weight)

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return self.child(self.points[indices], self.weights[indices])

    def scaled(self, factor):
        return Cloud(self.points, self.weights * factor, self.max_sample_weight * factor)

    @classmethod
    def concat(cls, clouds, d):
        clouds = [c for c in clouds if c.size]
        if not clouds:
            return cls.empty(d)
        cap = max(c.max_sample_weight for c in clouds)
        return cls(
            np.vstack([c.points for c in clouds]),
            np.concatenate([c.weights for c in clouds]),
            cap,
        )

    def __eq__(self, other):
        if not isinstance(other, Cloud):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights)
                and self.max_sample_weight == other.max_sample_weight)

    __hash__ = None


@dataclass(frozen=True)
class Marginal:
    d: int
    atoms: AtomList
    diffuse: Cloud

    @property
    def total_mass(self):
        return self.atoms.total_mass + self.diffuse.total_mass

    @property
    def k(self):
        return self.atoms.k

    @classmethod
    def build(cls, d, atom_locations=(), atom_weights=(), cloud=None):
        atom_locations = np.asarray(atom_locations, dtype=float).reshape(-1, d)
        atoms = AtomList.canonical(atom_locations, atom_weights)
        return cls(d, atoms, cloud if cloud is not None else Cloud.empty(d))


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    concentration: float = 0.0
    N: int = 1

    @property
    def ok(self):
        return not self.violations

    def add(self, code, message):
        self.violations.append({"code": code, "message": message})

    def warn(self, code, message):
        self.warnings.append({"code": code, "message": message})

    def codes(self):
        return [v["code"] for v in self.violations]

    def as_dict(self):
        return {
            "ok": self.ok,
            "N": self.N,
            "concentration": self.concentration,
            "violations": list(self.violations),
            "warnings": list(self.warnings),
        }


def concentration(m):
    """Largest single-point mass; the cloud counts as non-atomic."""
    if m.atoms.k == 0:
        return 0.0
    return float(np.max(m.atoms.weights))


def validate_marginal(m, N):
    report = ValidationReport(N=N)
    weights = m.atoms.weights
    locations = m.atoms.locations

    if m.atoms.k and locations.shape[1] != m.d:
        report.add("dimension", f"atom locations have dimension {locations.shape[1]}, expected {m.d}")
    if m.diffuse.size and m.diffuse.d != m.d:
        report.add("dimension", f"cloud samples have dimension {m.diffuse.d}, expected {m.d}")
    if not np.all(np.isfinite(locations)) or not np.all(np.isfinite(weights)) \
            or not np.all(np.isfinite(m.diffuse.points)) or not np.all(np.isfinite(m.diffuse.weights)):
        report.add("non_finite", "marginal contains non-finite numbers")

    total = m.total_mass
    if abs(total - 1.0) > MASS_TOL:
        report.add("mass", f"total mass is {total!r}, expected 1")

    if np.any(weights <= 0):
        report.add("nonpositive_weight", "atom weights must be strictly positive")
    if np.any(np.diff(weights) > 0):
        report.add("unsorted", "atom weights must be sorted non-increasing")
    if m.atoms.k > 1:
        unique = np.unique(locations, axis=0)
        if len(unique) != m.atoms.k:
            report.add("duplicate_atoms", "atom locations must be pairwise distinct")

    if np.any(m.diffuse.weights <= 0):
        report.add("nonpositive_sample", "cloud sample weights must be strictly positive")
    if m.diffuse.size and np.max(m.diffuse.weights) > m.diffuse.max_sample_weight * (1 + 1e-12):
        report.add(
            "oversized_sample",
            f"largest cloud sample {float(np.max(m.diffuse.weights))!r} exceeds "
            f"max_sample_weight {m.diffuse.max_sample_weight!r}",
        )

    mu = concentration(m)
    report.concentration = mu
    if mu >= 1.0 / N:
        report.add(
            "concentration",
            f"concentration {mu!r} is not below 1/N = {1.0 / N!r}",
        )

    if m.atoms.k and m.diffuse.size:
        hits = [tuple(p) for p in m.diffuse.points if np.any(np.all(locations == p, axis=1))]
        if hits:
            report.warn("sample_on_atom", f"{len(hits)} cloud samples coincide with atom locations")

    if not report.ok:
        logger.info(f"Marginal rejected for N={N}: {report.codes()}")
    return report


def fast_decreasing_prefix(b, N):
    """Length of the maximal fast-decreasing initial tuple of ``b``.

    The largest l with (N - j) * b_j > b_{j+1} + ... + b_k for every j <= l.
    Always l < N.
    """
    b = np.asarray(b, dtype=float)
    k = len(b)
    # tails[j] = sum of b[j:], accumulated from the end for a fixed order
    tails = np.concatenate([np.cumsum(b[::-1])[::-1], [0.0]])
    ell = 0
    for j in range(1, k + 1):
        if (N - j) * b[j - 1] > tails[j]:
            ell = j
        else:
            break
    return ell


def uniform_box_cloud(lo, hi, total_mass, samples, seed, max_sample_weight=None):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rng = np.random.default_rng(seed)
    points = lo + (hi - lo) * rng.random((samples, len(lo)))
    weights = np.full(samples, total_mass / samples)
    return Cloud(points, weights, max_sample_weight)


def marginal_from_document(data, sample_weight_divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    """Build a Marginal from a validated marginal document (a plain dict)."""
    d = data["d"]
    atoms = data.get("atoms") or []
    locations = np.array([a["x"] for a in atoms], dtype=float).reshape(-1, d)
    weights = np.array([a["b"] for a in atoms], dtype=float)

    diffuse = data.get("diffuse")
    cap = None
    if diffuse:
        cap = diffuse.get("max_sample_weight")
        if cap is None:
            cap = diffuse["total_mass"] / sample_weight_divisor
    if not diffuse:
        cloud = Cloud.empty(d)
    elif diffuse["type"] == "uniform_box":
        cloud = uniform_box_cloud(
            diffuse["lo"], diffuse["hi"], diffuse["total_mass"],
            diffuse["samples"], diffuse.get("seed", 0), cap,
        )
    else:
        points = np.array(diffuse.get("points") or [], dtype=float).reshape(-1, d)
        cloud = Cloud(points, np.array(diffuse.get("weights") or [], dtype=float), cap)
    return Marginal.build(d, locations, weights, cloud)


def marginal_to_document(m):
    doc = {
        "d": m.d,
        "atoms": [
            {"x": [float(c) for c in loc], "b": float(w)}
            for loc, w in zip(m.atoms.locations, m.atoms.weights)
        ],
    }
    if m.diffuse.size:
        doc["diffuse"] = {
            "type": "samples",
            "total_mass": m.diffuse.total_mass,
            "points": [[float(c) for c in p] for p in m.diffuse.points],
            "weights": [float(w) for w in m.diffuse.weights],
            "max_sample_weight": float(m.diffuse.max_sample_weight),
        }
    return doc


def load_marginal(text, sample_weight_divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    from repulsive_transport.serializers import MarginalSerializer

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(
            f"Marginal document is not valid JSON (line {e.lineno}, column {e.colno}): {e.msg}",
            code="parse_error",
        )
    serializer = MarginalSerializer(data=data)
    if not serializer.is_valid():
        logger.error(f"Marginal document rejected: {serializer.errors}")
        raise SchemaError(f"Marginal document rejected: {dict(serializer.errors)}", errors=serializer.errors)
    return marginal_from_document(serializer.validated_data, sample_weight_divisor)


def save_marginal(m):
    return json.dumps(marginal_to_document(m), indent=2)
