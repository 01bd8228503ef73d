"""Measures on (R^d)^N stored as sums of blocks.

A ``ProductBlock`` is ``scale * (f_1 x ... x f_N)`` and a ``MapBlock`` is a
weighted list of explicit N-tuples. Either can carry the ``symmetrized`` flag,
which stands for the average over all coordinate permutations; the average is
never enumerated except by ``dense_expand``.
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, replace

import jsonschema
import numpy as np
from scipy.spatial.distance import cdist, pdist

from repulsive_transport.exceptions import (
    ArityMismatch,
    DiffuseIntoMapBlock,
    ExpansionTooLarge,
    InsertIntoSymmetrized,
    PreconditionError,
    SchemaError,
    UnsymmetrizedPlan,
)
from repulsive_transport.services.measure import (
    AtomList,
    Cloud,
    Marginal,
    collapse_locations,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Factor:
    """One slot of a product measure: a finite atomic measure or a cloud piece."""
    measure: object

    @classmethod
    def point(cls, x, weight=1.0):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return cls(AtomList(x, [weight]))

    @classmethod
    def atomic(cls, locations, weights):
        return cls(AtomList(np.asarray(locations, dtype=float), weights))

    @classmethod
    def diffuse(cls, cloud):
        return cls(cloud)

    @property
    def is_diffuse(self):
        return isinstance(self.measure, Cloud)

    @property
    def points(self):
        return self.measure.points if self.is_diffuse else self.measure.locations

    @property
    def weights(self):
        return self.measure.weights

    @property
    def size(self):
        return len(self.weights)

    @property
    def mass(self):
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class ProductBlock:
    factors: tuple
    scale: float = 1.0
    symmetrized: bool = False

    @property
    def N(self):
        return len(self.factors)

    @property
    def mass(self):
        return self.scale * math.prod(f.mass for f in self.factors)


@dataclass(frozen=True)
class MapBlock:
    """Weighted explicit tuples; ``diffuse`` marks tuples made of cloud samples."""
    tuples: np.ndarray
    weights: np.ndarray
    symmetrized: bool = False
    diffuse: bool = False

    def __post_init__(self):
        tuples = np.array(self.tuples, dtype=float)
        weights = np.array(self.weights, dtype=float)
        tuples.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "tuples", tuples)
        object.__setattr__(self, "weights", weights)

    @property
    def N(self):
        return self.tuples.shape[1]

    @property
    def mass(self):
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class Plan:
    N: int
    d: int
    blocks: tuple = ()

    @property
    def mass(self):
        return math.fsum(b.mass for b in self.blocks)

    @property
    def is_symmetrized(self):
        return all(b.symmetrized for b in self.blocks)


def add(p, q):
    if p.N != q.N or p.d != q.d:
        raise ArityMismatch(f"cannot add plans with (N, d) = ({p.N}, {p.d}) and ({q.N}, {q.d})")
    return Plan(p.N, p.d, p.blocks + q.blocks)


def scale(p, s):
    if not s > 0:
        raise PreconditionError(f"plans can only be scaled by positive numbers, got {s!r}")
    blocks = []
    for b in p.blocks:
        if isinstance(b, ProductBlock):
            blocks.append(replace(b, scale=b.scale * s))
        else:
            blocks.append(replace(b, weights=b.weights * s))
    return Plan(p.N, p.d, tuple(blocks))


def symmetrize(p):
    return Plan(p.N, p.d, tuple(b if b.symmetrized else replace(b, symmetrized=True) for b in p.blocks))


def _insert_block(b, j, f):
    """Insert factor f at 1-based slot j of an unflagged block."""
    if isinstance(b, ProductBlock):
        factors = b.factors[:j - 1] + (f,) + b.factors[j - 1:]
        return ProductBlock(factors, b.scale, False)
    if f.is_diffuse or f.size != 1:
        raise DiffuseIntoMapBlock("only single-point atomic factors can enter a map block")
    point = np.broadcast_to(f.points[0], (len(b.tuples), 1, f.points.shape[1]))
    tuples = np.concatenate([b.tuples[:, :j - 1], point, b.tuples[:, j - 1:]], axis=1)
    return MapBlock(tuples, b.weights * f.mass, False, b.diffuse)


def tensor_insert(p, j, f):
    """The measure p (x)_j f: f placed in slot j of an (N+1)-slot measure."""
    if not 1 <= j <= p.N + 1:
        raise PreconditionError(f"slot {j} out of range 1..{p.N + 1}")
    blocks = []
    for b in p.blocks:
        if b.symmetrized:
            raise InsertIntoSymmetrized()
        blocks.append(_insert_block(b, j, f))
    return Plan(p.N + 1, p.d, tuple(blocks))


def insert_symmetric(p, f):
    """Sum over all slots i of p (x)_i f, for a symmetric p.

    Uses (Q (x)_1 f)_sym = (1/n) * sum_i Q_sym (x)_i f with n = N + 1, so the
    sum is n times a single symmetrized insertion.
    """
    n = p.N + 1
    blocks = []
    for b in p.blocks:
        if not b.symmetrized and b.N > 1:
            raise UnsymmetrizedPlan("insert_symmetric needs a symmetrized plan")
        inserted = _insert_block(replace(b, symmetrized=False), 1, f)
        if isinstance(inserted, ProductBlock):
            inserted = replace(inserted, scale=inserted.scale * n, symmetrized=True)
        else:
            inserted = replace(inserted, weights=inserted.weights * n, symmetrized=True)
        blocks.append(inserted)
    return Plan(n, p.d, tuple(blocks))


def marginal(p):
    """One-particle marginal of a symmetrized plan (mass |p|).

    Atomic factors and atomic map blocks land in the atoms; cloud factors and
    diffuse map blocks land in the cloud. Co-located entries are summed.
    """
    atom_points, atom_weights = [], []
    cloud_points, cloud_weights = [], []
    for b in p.blocks:
        if not b.symmetrized and b.N > 1:
            raise UnsymmetrizedPlan()
        if isinstance(b, ProductBlock):
            masses = [f.mass for f in b.factors]
            for j, f in enumerate(b.factors):
                others = math.prod(masses[:j] + masses[j + 1:])
                coefficient = b.scale * others / b.N
                if f.is_diffuse:
                    cloud_points.append(f.points)
                    cloud_weights.append(coefficient * f.weights)
                else:
                    atom_points.append(f.points)
                    atom_weights.append(coefficient * f.weights)
        else:
            points = b.tuples.reshape(-1, p.d)
            weights = np.repeat(b.weights / b.N, b.N)
            if b.diffuse:
                cloud_points.append(points)
                cloud_weights.append(weights)
            else:
                atom_points.append(points)
                atom_weights.append(weights)

    def gather(points, weights):
        if not points:
            return np.zeros((0, p.d)), np.zeros(0)
        return collapse_locations(np.vstack(points), np.concatenate(weights))

    locations, weights = gather(atom_points, atom_weights)
    samples, sample_weights = gather(cloud_points, cloud_weights)
    atoms = AtomList.canonical(locations, weights)
    cloud = Cloud(samples, sample_weights) if len(sample_weights) else Cloud.empty(p.d)
    return Marginal(p.d, atoms, cloud)


def marginal_mass(p):
    """Total mass of marginal(p), summed slot by slot without gathering locations."""
    parts = []
    for b in p.blocks:
        if not b.symmetrized and b.N > 1:
            raise UnsymmetrizedPlan()
        if isinstance(b, ProductBlock):
            masses = [f.mass for f in b.factors]
            for j in range(b.N):
                parts.append(b.scale * math.prod(masses[:j] + masses[j + 1:]) / b.N * masses[j])
        else:
            parts.extend(np.repeat(b.weights / b.N, b.N))
    return math.fsum(parts)


def block_separation(b):
    """Smallest distance between two different slots of one block."""
    if b.N < 2:
        return np.inf
    if isinstance(b, MapBlock):
        if len(b.tuples) == 0:
            return np.inf
        i, j = np.triu_indices(b.N, 1)
        gaps = np.linalg.norm(b.tuples[:, i, :] - b.tuples[:, j, :], axis=2)
        return float(np.min(gaps))
    if all(f.size == 1 for f in b.factors):
        return float(np.min(pdist(np.vstack([f.points for f in b.factors]))))
    best = np.inf
    for i in range(b.N):
        for j in range(i + 1, b.N):
            best = min(best, float(np.min(cdist(b.factors[i].points, b.factors[j].points))))
    return best


def min_separation(p):
    """Largest alpha such that every block stays outside the alpha-diagonal region."""
    if not p.blocks:
        return np.inf
    return min(block_separation(b) for b in p.blocks)


def expansion_size(p):
    total = 0
    for b in p.blocks:
        count = len(b.tuples) if isinstance(b, MapBlock) else math.prod(f.size for f in b.factors)
        total += count * (math.factorial(b.N) if b.symmetrized else 1)
    return total


def dense_expand(p, cap):
    """Explicit weighted support: (tuples of shape (T, N, d), weights of shape (T,))."""
    size = expansion_size(p)
    if size > cap:
        raise ExpansionTooLarge(f"dense expansion has {size} tuples, cap is {cap}")
    tuples, weights = [], []
    for b in p.blocks:
        if isinstance(b, MapBlock):
            raw_t, raw_w = b.tuples, b.weights
        else:
            combos = list(itertools.product(*[range(f.size) for f in b.factors]))
            raw_t = np.array([[f.points[c] for f, c in zip(b.factors, combo)] for combo in combos])
            raw_w = np.array([b.scale * math.prod(f.weights[c] for f, c in zip(b.factors, combo))
                              for combo in combos])
        raw_t = np.asarray(raw_t, dtype=float).reshape(-1, p.N, p.d)
        if b.symmetrized:
            perms = list(itertools.permutations(range(p.N)))
            for perm in perms:
                tuples.append(raw_t[:, list(perm), :])
                weights.append(raw_w / len(perms))
        else:
            tuples.append(raw_t)
            weights.append(raw_w)
    if not tuples:
        return np.zeros((0, p.N, p.d)), np.zeros(0)
    return np.concatenate(tuples), np.concatenate(weights)


PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["N", "d", "blocks"],
    "properties": {
        "N": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "blocks": {"type": "array", "items": {"$ref": "#/$defs/block"}},
    },
    "$defs": {
        "point": {"type": "array", "items": {"type": "number"}},
        "factor": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["kind", "x", "b"],
                    "properties": {
                        "kind": {"const": "atoms"},
                        "x": {"type": "array", "items": {"$ref": "#/$defs/point"}},
                        "b": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                    },
                },
                {
                    "type": "object",
                    "required": ["kind", "points", "weights"],
                    "properties": {
                        "kind": {"const": "cloud"},
                        "points": {"type": "array", "items": {"$ref": "#/$defs/point"}},
                        "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                        "max_sample_weight": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
        "block": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["kind", "scale", "symmetrized", "factors"],
                    "properties": {
                        "kind": {"const": "product"},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "symmetrized": {"type": "boolean"},
                        "factors": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/factor"}},
                    },
                },
                {
                    "type": "object",
                    "required": ["kind", "symmetrized", "tuples"],
                    "properties": {
                        "kind": {"const": "map"},
                        "symmetrized": {"type": "boolean"},
                        "diffuse": {"type": "boolean"},
                        "tuples": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "required": ["x", "w"],
                                "properties": {
                                    "x": {"type": "array", "items": {"$ref": "#/$defs/point"}},
                                    "w": {"type": "number", "exclusiveMinimum": 0},
                                },
                            },
                        },
                    },
                },
            ]
        },
    },
}


def _factor_document(f):
    if f.is_diffuse:
        return {
            "kind": "cloud",
            "points": f.points.tolist(),
            "weights": f.weights.tolist(),
            "max_sample_weight": float(f.measure.max_sample_weight),
        }
    return {"kind": "atoms", "x": f.points.tolist(), "b": f.weights.tolist()}


def plan_to_document(p):
    blocks = []
    for b in p.blocks:
        if isinstance(b, ProductBlock):
            blocks.append({
                "kind": "product",
                "scale": float(b.scale),
                "symmetrized": b.symmetrized,
                "factors": [_factor_document(f) for f in b.factors],
            })
        else:
            blocks.append({
                "kind": "map",
                "symmetrized": b.symmetrized,
                "diffuse": b.diffuse,
                "tuples": [{"x": t.tolist(), "w": float(w)} for t, w in zip(b.tuples, b.weights)],
            })
    return {"N": p.N, "d": p.d, "blocks": blocks}


def _document_error(path, message, code):
    return SchemaError(f"Plan document invalid at {path}: {message}", errors={path: code})


def _document_points(rows, d, path):
    """Rows of a point list as a (n, d) array; every row must have d coordinates."""
    for j, row in enumerate(rows):
        if len(row) != d:
            raise _document_error(f"{path}/{j}", f"point has dimension {len(row)}, expected {d}",
                                  "dimension mismatch")
    return np.array(rows, dtype=float).reshape(-1, d)


def _document_factor(f, d, path):
    locations, weights = ("x", "b") if f["kind"] == "atoms" else ("points", "weights")
    if len(f[locations]) != len(f[weights]):
        raise _document_error(
            path, f"{len(f[locations])} {locations} but {len(f[weights])} {weights}", "length mismatch",
        )
    points = _document_points(f[locations], d, f"{path}/{locations}")
    if f["kind"] == "atoms":
        return Factor.atomic(points, f["b"])
    return Factor.diffuse(Cloud(points, f["weights"], f.get("max_sample_weight")))


def plan_from_document(doc):
    try:
        jsonschema.validate(doc, PLAN_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(part) for part in e.absolute_path) or "<root>"
        raise SchemaError(f"Plan document invalid at {path}: {e.message}", errors={path: e.message})
    N, d = doc["N"], doc["d"]
    blocks = []
    for i, b in enumerate(doc["blocks"]):
        if b["kind"] == "product":
            factors = [_document_factor(f, d, f"blocks/{i}/factors/{j}") for j, f in enumerate(b["factors"])]
            block = ProductBlock(tuple(factors), b["scale"], b["symmetrized"])
        else:
            rows = []
            for j, t in enumerate(b["tuples"]):
                if len(t["x"]) != N:
                    raise _document_error(f"blocks/{i}/tuples/{j}",
                                          f"tuple has {len(t['x'])} points, expected {N}", "arity mismatch")
                rows.append(_document_points(t["x"], d, f"blocks/{i}/tuples/{j}/x"))
            tuples = np.array(rows, dtype=float).reshape(-1, N, d)
            block = MapBlock(tuples, [t["w"] for t in b["tuples"]], b["symmetrized"], b.get("diffuse", False))
        if block.N != N:
            raise SchemaError(f"Plan document invalid at blocks/{i}: arity {block.N}, expected {N}",
                              errors={f"blocks/{i}": "arity mismatch"})
        blocks.append(block)
    return Plan(N, d, tuple(blocks))


def load_plan(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(
            f"Plan document is not valid JSON (line {e.lineno}, column {e.colno}): {e.msg}",
            code="parse_error",
        )
    return plan_from_document(doc)


def save_plan(p):
    return json.dumps(plan_to_document(p))
