"""Repulsive cost profiles and plan cost evaluation.

The cost of an N-tuple is the sum over pairs of 1/omega(|x_i - x_j|). Plans
are evaluated block by block without expanding tensor products; a touching
pair makes the cost ``math.inf``, which is returned as a value.
"""
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special
from scipy.spatial.distance import cdist

from repulsive_transport.exceptions import PreconditionError, SchemaError
from repulsive_transport.services.measure import AtomList, Cloud, Marginal
from repulsive_transport.services.plan import MapBlock

logger = logging.getLogger(__name__)

DEFAULT_COST_SAMPLE_CAP = 2000
INVERSE_TOL = 1e-12


@dataclass(frozen=True)
class OmegaSpec:
    """A strictly increasing profile omega with omega(0) = 0."""
    kind: str = "identity"
    s: float = 1.0
    r: tuple = ()
    w: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "power", "table"):
            raise PreconditionError(f"unknown omega kind {self.kind!r}")
        if self.kind == "power" and not self.s > 0:
            raise PreconditionError(f"power profiles need s > 0, got {self.s!r}")
        if self.kind == "table":
            r = np.asarray(self.r, dtype=float)
            w = np.asarray(self.w, dtype=float)
            if len(r) < 2 or len(r) != len(w) or r[0] != 0 or w[0] != 0 \
                    or np.any(np.diff(r) <= 0) or np.any(np.diff(w) <= 0):
                raise PreconditionError("omega table must start at (0, 0) and be strictly increasing")
            object.__setattr__(self, "r", tuple(float(v) for v in r))
            object.__setattr__(self, "w", tuple(float(v) for v in w))

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def power(cls, s):
        return cls("power", s=float(s))

    @classmethod
    def table(cls, r, w):
        return cls("table", r=tuple(r), w=tuple(w))

    def _slopes(self):
        return np.diff(self.w) / np.diff(self.r)

    def omega(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "identity":
            return r.copy() if r.ndim else float(r)
        if self.kind == "power":
            return r ** self.s
        out = np.interp(r, self.r, self.w)
        # continue the last segment beyond the table
        beyond = r > self.r[-1]
        out = np.where(beyond, self.w[-1] + self._slopes()[-1] * (r - self.r[-1]), out)
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "identity":
            out = np.ones_like(r)
        elif self.kind == "power":
            out = self.s * r ** (self.s - 1)
        else:
            segment = np.clip(np.searchsorted(self.r, r, side="right") - 1, 0, len(self.r) - 2)
            out = self._slopes()[segment]
        return out if np.ndim(out) else float(out)

    def inverse(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v.copy() if v.ndim else float(v)
        if self.kind == "power":
            return v ** (1.0 / self.s)
        lo = np.zeros_like(v)
        hi = np.full_like(v, self.r[-1])
        while np.any(self.omega(hi) < v):
            hi = np.where(self.omega(hi) < v, 2 * hi, hi)
        while np.max(hi - lo, initial=0.0) > INVERSE_TOL:
            mid = 0.5 * (lo + hi)
            below = self.omega(mid) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return out if out.ndim else float(out)

    def as_dict(self):
        if self.kind == "power":
            return {"kind": "power", "s": self.s}
        if self.kind == "table":
            return {"kind": "table", "r": list(self.r), "w": list(self.w)}
        return {"kind": "identity"}


def omega_from_document(data):
    kind = data["kind"]
    if kind == "power":
        return OmegaSpec.power(data["s"])
    if kind == "table":
        return OmegaSpec.table(data["r"], data["w"])
    return OmegaSpec.identity()


def load_omega(text):
    from repulsive_transport.serializers import OmegaSerializer

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(
            f"Omega document is not valid JSON (line {e.lineno}, column {e.colno}): {e.msg}",
            code="parse_error",
        )
    serializer = OmegaSerializer(data=data)
    if not serializer.is_valid():
        raise SchemaError(f"Omega document rejected: {dict(serializer.errors)}", errors=serializer.errors)
    return omega_from_document(serializer.validated_data)


@dataclass(frozen=True)
class SharpnessConstants:
    alpha_d: float
    kconst: float

    @classmethod
    def for_profile(cls, w, d):
        alpha_d = math.pi ** (d / 2) / special.gamma(d / 2 + 1)
        return cls(alpha_d=float(alpha_d), kconst=float(alpha_d * w.omega(1.0)))


def pair_potential(w, r):
    if r < 0:
        raise PreconditionError(f"distance must be non-negative, got {r!r}")
    value = w.omega(r)
    return math.inf if value == 0 else 1.0 / value


def _inverse_omega_sum(w, distances, weights=None):
    """Sum of weights / omega(distances); inf if any distance is zero."""
    if distances.size == 0:
        return 0.0
    if np.any(distances == 0):
        return math.inf
    terms = 1.0 / w.omega(distances)
    if weights is not None:
        terms = terms * weights
    return float(np.sum(terms))


def stratified_subsample(points, weights, cap, rng):
    """At most ``cap`` samples: one weight-proportional pick per stratum of
    consecutive lexicographically ordered samples, carrying the stratum mass."""
    if len(weights) <= cap:
        return points, weights
    order = np.lexsort(points.T[::-1])
    picked_points, picked_weights = [], []
    for stratum in np.array_split(order, cap):
        mass = float(np.sum(weights[stratum]))
        pick = rng.choice(stratum, p=weights[stratum] / mass)
        picked_points.append(points[pick])
        picked_weights.append(mass)
    return np.array(picked_points), np.array(picked_weights)


class _FactorSampler:
    """Subsamples oversized factors once per evaluation so blocks sharing a
    factor see the same subsample."""

    def __init__(self, cap, seed):
        self.cap = cap
        self.rng = np.random.default_rng(seed)
        self.cache = {}
        self.subsampled = False

    def support(self, factor):
        key = id(factor)
        if key not in self.cache:
            points, weights = factor.points, factor.weights
            if factor.is_diffuse and len(weights) > self.cap:
                points, weights = stratified_subsample(points, weights, self.cap, self.rng)
                self.subsampled = True
            self.cache[key] = (factor, points, weights)
        return self.cache[key][1:]


def _block_cost(block, w, sampler):
    if isinstance(block, MapBlock):
        if block.N < 2 or len(block.weights) == 0:
            return 0.0
        i, j = np.triu_indices(block.N, 1)
        distances = np.linalg.norm(block.tuples[:, i, :] - block.tuples[:, j, :], axis=2)
        if np.any(distances == 0):
            return math.inf
        return float(np.sum(block.weights * np.sum(1.0 / w.omega(distances), axis=1)))

    masses = [f.mass for f in block.factors]
    total = 0.0
    for i in range(block.N):
        for j in range(i + 1, block.N):
            pu, wu = sampler.support(block.factors[i])
            pv, wv = sampler.support(block.factors[j])
            pair = _inverse_omega_sum(w, cdist(pu, pv), np.outer(wu, wv))
            if math.isinf(pair):
                return math.inf
            others = math.prod(masses[:i] + masses[i + 1:j] + masses[j + 1:])
            total += others * pair
    return block.scale * total


def _evaluate(p, w, cap, seed):
    sampler = _FactorSampler(cap, seed)
    total = 0.0
    for block in p.blocks:
        value = _block_cost(block, w, sampler)
        if math.isinf(value):
            return math.inf, sampler.subsampled
        total += value
    return total, sampler.subsampled


def cost_with_error(p, w, sample_cap=DEFAULT_COST_SAMPLE_CAP, seed=0):
    """(cost, error estimate); the error is half the spread of two independent
    subsampled evaluations and zero when nothing needed subsampling."""
    first, subsampled = _evaluate(p, w, sample_cap, seed)
    if not subsampled or math.isinf(first):
        return first, 0.0
    second, _ = _evaluate(p, w, sample_cap, seed + 1)
    error = math.inf if math.isinf(second) else abs(first - second) / 2
    logger.debug(f"Subsampled cost {first!r} with error estimate {error!r}")
    return first, error


def plan_cost(p, w, sample_cap=DEFAULT_COST_SAMPLE_CAP, seed=0):
    return cost_with_error(p, w, sample_cap, seed)[0]


def sharpness_radii(w, M, seed=0):
    """Radii with CDF omega(r)/omega(1) on (0, 1), one per stratum of [0, 1)."""
    rng = np.random.default_rng(seed)
    u = (np.arange(M) + rng.random(M)) / M
    return np.asarray(w.inverse(u * w.omega(1.0)), dtype=float).reshape(M)


def sharpness_marginal(w, d, N, M, seed=0):
    """Atom of mass 1/N at the origin plus (N-1)/N spread with radial CDF omega(r)/omega(1)."""
    if M < 1:
        raise PreconditionError("sharpness_marginal needs at least one sample")
    radii = sharpness_radii(w, M, seed)
    rng = np.random.default_rng([seed, 1])
    directions = rng.standard_normal((M, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = directions * radii[:, None]
    cloud = Cloud(points, np.full(M, (N - 1) / N / M))
    atoms = AtomList(np.zeros((1, d)), [1.0 / N])
    return Marginal(d, atoms, cloud)


def sharpness_lower_bound(w, N, eps):
    """(1/N) * integral over (eps, 1) of omega'/omega, scaled by 1/omega(1)."""
    if not 0 < eps <= 1:
        raise PreconditionError(f"eps must lie in (0, 1], got {eps!r}")
    if eps == 1:
        return 0.0
    top = w.omega(1.0)
    if w.kind in ("identity", "power"):
        return math.log(top / w.omega(eps)) / (N * top)
    breaks = [r for r in w.r if eps < r < 1.0]
    value, _ = integrate.quad(lambda r: w.derivative(r) / w.omega(r), eps, 1.0,
                              points=breaks or None, limit=200)
    return value / (N * top)


def sharpness_estimate(m, w, N, eps):
    """Monte-Carlo counterpart of ``sharpness_lower_bound`` over the cloud of m."""
    cloud = m.diffuse
    radii = np.linalg.norm(cloud.points, axis=1)
    inside = radii > eps
    values = np.zeros_like(radii)
    values[inside] = 1.0 / w.omega(radii[inside])
    return float(np.sum(cloud.weights * values) / cloud.total_mass) / N
