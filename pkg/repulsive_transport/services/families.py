"""Generated marginal families for batch runs.

Each generator is seeded and returns a probability marginal, or ``None`` when
the requested combination cannot have concentration below 1/N.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from repulsive_transport.services.cost import OmegaSpec, sharpness_marginal
from repulsive_transport.services.measure import DEFAULT_SAMPLE_WEIGHT_DIVISOR, Marginal, uniform_box_cloud

logger = logging.getLogger(__name__)

ATOM_BOX = (0.0, 1.0)
CLOUD_BOX = (-1.0, 2.0)
GEOMETRIC_ATOMS = 200


@dataclass(frozen=True)
class FamilyCase:
    name: str
    kind: str
    d: int
    N: int
    k: int
    diffuse_mass: float
    seed: int
    marginal: Marginal = None


def _cloud(d, mass, samples, seed, divisor):
    """Uniform box cloud whose samples may weigh at most mass / divisor."""
    if mass <= 0:
        return None
    lo, hi = CLOUD_BOX
    return uniform_box_cloud([lo] * d, [hi] * d, mass, samples, seed, mass / divisor)


def _locations(d, k, rng):
    lo, hi = ATOM_BOX
    return lo + (hi - lo) * rng.random((k, d))


def _spread_weights(k, total, N, rng):
    """Random weights summing to ``total`` with the largest below 1/N."""
    if k == 0:
        return np.zeros(0)
    if total / k >= 1.0 / N:
        return None
    raw = rng.dirichlet(np.ones(k)) * total
    flat = np.full(k, total / k)
    # blend towards uniform until the concentration bound holds with margin
    for lam in np.linspace(1.0, 0.0, 21):
        weights = lam * raw + (1 - lam) * flat
        if weights.max() < 0.95 / N:
            return weights
    return flat


def few_atoms(d, N, k, diffuse_mass, seed, samples, divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    rng = np.random.default_rng(seed)
    weights = _spread_weights(k, 1.0 - diffuse_mass, N, rng)
    if weights is None or diffuse_mass <= 0 and k == 0:
        return None
    return Marginal.build(d, _locations(d, k, rng), weights, _cloud(d, diffuse_mass, samples, seed, divisor))


def diffuse(d, N, seed, samples, divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    return Marginal.build(d, cloud=_cloud(d, 1.0, samples, seed, divisor))


def geometric_tail(d, N, diffuse_mass, seed, samples, k=GEOMETRIC_ATOMS, divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    """b_i proportional to r^i with r = 1 - 0.8/N, so the head stays below 1/N."""
    rng = np.random.default_rng(seed)
    ratio = 1.0 - 0.8 / N
    weights = ratio ** np.arange(k)
    weights *= (1.0 - diffuse_mass) / weights.sum()
    if weights[0] >= 1.0 / N:
        return None
    return Marginal.build(d, _locations(d, k, rng), weights, _cloud(d, diffuse_mass, samples, seed, divisor))


def expand_family(family, divisor=DEFAULT_SAMPLE_WEIGHT_DIVISOR):
    """All cases of a validated family block, in a fixed order.

    Cloud samples are capped at mass / divisor, so families asking for fewer
    samples than the divisor produce marginals that fail validation.
    """
    kind = family["kind"]
    samples = family.get("samples", 256)
    for d, N, dm, seed in itertools.product(family["d"], family["N"], family["diffuse_mass"], family["seeds"]):
        if kind == "diffuse":
            ks = [0]
        elif kind == "geometric_tail":
            ks = [GEOMETRIC_ATOMS]
        elif kind == "sharpness":
            ks = [1]
        elif family.get("k"):
            ks = family["k"]
        elif kind == "few_atoms":
            ks = list(range(1, N + 1))
        else:
            ks = list(range(N + 1, 13))
        for k in ks:
            if kind == "diffuse":
                m = diffuse(d, N, seed, samples, divisor)
            elif kind == "geometric_tail":
                m = geometric_tail(d, N, dm, seed, samples, divisor=divisor)
            elif kind == "sharpness":
                m = sharpness_marginal(OmegaSpec.identity(), d, N, samples, seed)
            else:
                m = few_atoms(d, N, k, dm, seed, samples, divisor)
            name = f"{kind}-d{d}-N{N}-k{k}-dm{dm:g}-s{seed}"
            if m is None:
                logger.debug(f"Skipping {name}: no marginal with concentration below 1/N")
                continue
            yield FamilyCase(name, kind, d, N, k, 1.0 if kind == "diffuse" else dm, seed, m)
