"""Random walks, Brownian references and the random-walk split recursion.

The rescaled walk S^n splits into its first ceil(n/2) and last floor(n/2)
steps; both halves are independent rescaled walks glued by the front/back
split operators.  Brownian motion is a fixed point of the matching limit map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from . import streams
from .ensemble import Ensemble
from .operators import BackSplit, FrontSplit, Scale, donsker_coefficients, scaled
from .paths import Path, PathKind
from .recursion import CoefficientSampler, FixedPointMap, RecursionSpec

WALK_CHUNK = 4096
_MOMENT_TOL = 1e-12


# ---------------------------------------------------------------------------
# increment laws


@dataclass(frozen=True)
class IncrementLaw:
    """Centered, unit-variance step law; sampled by inverse CDF from uniforms."""

    kind: str = "rademacher"
    values: tuple = ()
    probs: tuple = ()
    moment_order_available: float = math.inf

    KINDS = ("rademacher", "standard_normal", "uniform", "table")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown increment law {self.kind!r}; choose from {self.KINDS}")
        if self.kind != "table":
            return
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.size == 0 or v.shape != p.shape:
            raise ValueError("table law needs matching, nonempty values and probs")
        if np.any(p < 0) or abs(p.sum() - 1) > _MOMENT_TOL:
            raise ValueError("table probabilities must be nonnegative and sum to 1")
        mean = float(np.dot(p, v))
        var = float(np.dot(p, v * v)) - mean**2
        if abs(mean) > _MOMENT_TOL or abs(var - 1) > _MOMENT_TOL:
            raise ValueError(f"table law must have mean 0 and variance 1 (got {mean}, {var})")
        object.__setattr__(self, "values", tuple(float(x) for x in v))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @classmethod
    def table(cls, values, probs) -> "IncrementLaw":
        return cls("table", tuple(values), tuple(probs))

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "rademacher":
            return np.where(u < 0.5, -1.0, 1.0)
        if self.kind == "standard_normal":
            return ndtri(u)
        if self.kind == "uniform":
            return math.sqrt(3.0) * (2.0 * u - 1.0)
        cum = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "table":
            d.update(values=list(self.values), probs=list(self.probs))
        return d

    @classmethod
    def from_dict(cls, d) -> "IncrementLaw":
        if isinstance(d, str):
            return cls(d)
        return cls(d["kind"], tuple(d.get("values", ())), tuple(d.get("probs", ())))


RADEMACHER = IncrementLaw("rademacher")
STANDARD_NORMAL = IncrementLaw("standard_normal")


def _kind(interpolation) -> PathKind:
    if isinstance(interpolation, PathKind):
        return interpolation
    return {"linear": PathKind.LINEAR, "constant": PathKind.CONSTANT}[interpolation]


# ---------------------------------------------------------------------------
# walks


def random_walk_path(n: int, increments: Sequence[float], interpolation="linear") -> Path:
    """Rescaled partial-sum path with breakpoints k/n, linear or step interpolation."""
    v = np.asarray(increments, dtype=float).ravel()
    if n < 1:
        raise ValueError("n must be positive")
    if v.size != n:
        raise ValueError(f"need exactly n={n} increments, got {v.size}")
    grid = np.arange(n + 1) / n
    vals = np.concatenate(([0.0], np.cumsum(v))) / math.sqrt(n)
    return Path(_kind(interpolation), grid, vals)


def walk_increments(keys: np.ndarray, n: int, law: IncrementLaw) -> np.ndarray:
    """(len(keys), n) increments; step k of sample i depends only on (key_i, k)."""
    return law.from_uniform(streams.uniform(keys[:, None], np.arange(n)))


def _walk_values(keys, n, law):
    inc = walk_increments(keys, n, law)
    out = np.zeros((keys.size, n + 1))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out / math.sqrt(n)


def _sample_keys(size: int, seed: int) -> np.ndarray:
    if size < 1:
        raise ValueError("size must be positive")
    return streams.child_keys(streams.root_key(seed), size)


def random_walk_ensemble(
    n: int, size: int, seed: int, law: IncrementLaw = RADEMACHER, interpolation="linear"
) -> Ensemble:
    keys = _sample_keys(size, seed)
    vals = np.concatenate([_walk_values(keys[lo:hi], n, law) for lo, hi in _spans(size)])
    meta = {"label": f"walk[{law.kind}]:n={n}", "seed": seed}
    return Ensemble(_kind(interpolation), np.arange(n + 1) / n, vals, meta)


def _spans(size, chunk=WALK_CHUNK):
    return [(lo, min(size, lo + chunk)) for lo in range(0, size, chunk)]


def _interp_rows(V: np.ndarray, n: int, times: np.ndarray, kind: PathKind) -> np.ndarray:
    x = np.asarray(times, dtype=float) * n
    k = np.minimum(np.floor(x + 1e-9).astype(int), n)
    if kind is PathKind.CONSTANT:
        return V[:, k]
    k = np.minimum(np.floor(x).astype(int), n - 1)
    w = x - k
    return V[:, k] * (1 - w) + V[:, k + 1] * w


def walk_fdd(
    n: int, size: int, seed: int, times, law: IncrementLaw = RADEMACHER, interpolation="linear"
) -> np.ndarray:
    """Values of the rescaled walk ensemble at ``times`` without storing full paths."""
    keys = _sample_keys(size, seed)
    times = np.asarray(times, dtype=float)
    kind = _kind(interpolation)
    return np.concatenate(
        [_interp_rows(_walk_values(keys[lo:hi], n, law), n, times, kind) for lo, hi in _spans(size)]
    )


def walk_extremes(n: int, size: int, seed: int, law: IncrementLaw = RADEMACHER):
    """(sup_t |S^n_t|, max_t S^n_t) per sample, computed chunk by chunk."""
    keys = _sample_keys(size, seed)
    chunk = max(1, 20_000_000 // (n + 1))
    sups, maxs = [], []
    for lo, hi in _spans(size, chunk):
        V = _walk_values(keys[lo:hi], n, law)
        sups.append(np.abs(V).max(axis=1))
        maxs.append(V.max(axis=1))
    return np.concatenate(sups), np.concatenate(maxs)


# ---------------------------------------------------------------------------
# Brownian references


def covariance_exact(n: int, s: float, t: float) -> float:
    """Covariance of the linearly interpolated walk (any centered unit-variance steps)."""
    if n < 1:
        raise ValueError("n must be positive")
    if s > t:
        s, t = t, s
    if s < 0 or t > 1:
        raise ValueError("times must lie in [0, 1]")
    ks, kt = math.floor(n * s), math.floor(n * t)
    if ks < kt:
        return float(s)
    return (ks + (n * s - ks) * (n * t - kt)) / n


def covariance_matrix(n: int, times: Sequence[float]) -> np.ndarray:
    return np.array([[covariance_exact(n, a, b) for b in times] for a in times])


def linearized_bm(n: int, rng_seed: int) -> Path:
    """Brownian motion at the grid k/n, linearly interpolated.

    Identical in law to the walk with standard normal steps, and built that way.
    """
    key = np.array([streams.root_key(rng_seed)])
    return random_walk_path(n, walk_increments(key, n, STANDARD_NORMAL)[0])


def linearized_bm_ensemble(n: int, size: int, seed: int) -> Ensemble:
    ens = random_walk_ensemble(n, size, seed, STANDARD_NORMAL)
    return ens.with_meta(label=f"linearized_bm:n={n}")


def bm_fdd(times, size: int, seed: int) -> np.ndarray:
    """Exact Brownian motion sampled at ``times`` (any order, repeats allowed)."""
    times = np.asarray(times, dtype=float)
    if np.any((times < 0) | (times > 1)):
        raise ValueError("times must lie in [0, 1]")
    knots = np.unique(times)
    dt = np.diff(np.concatenate(([0.0], knots)))
    keys = _sample_keys(size, seed)
    out = []
    for lo, hi in _spans(size):
        z = streams.normal(keys[lo:hi, None], np.arange(knots.size))
        out.append(np.cumsum(z * np.sqrt(dt), axis=1))
    W = np.concatenate(out)
    return W[:, np.searchsorted(knots, times)]


def bm_grid_ensemble(size: int, seed: int, times=None, n: int | None = None) -> Ensemble:
    """Brownian motion exact at {0} u times u {1}, linear in between.

    ``n`` is a shortcut for times k/n.
    """
    if times is None:
        if n is None:
            raise ValueError("give times or n")
        times = np.arange(n + 1) / n
    grid = np.unique(np.concatenate(([0.0, 1.0], np.asarray(times, dtype=float))))
    vals = bm_fdd(grid, size, seed)
    return Ensemble(PathKind.LINEAR, grid, vals, {"label": "bm_grid", "seed": seed})


# ---------------------------------------------------------------------------
# recursion and fixed-point maps


class IncrementBase:
    """Base case n = 1: the one-step walk, 0 at time 0 and one increment at time 1."""

    def __init__(self, law: IncrementLaw, kind: PathKind):
        self.law = law
        self.kind = kind

    def draw(self, keys):
        v = self.law.from_uniform(streams.uniform(keys))
        return np.array([0.0, 1.0]), np.column_stack((np.zeros_like(v), v))

    def describe(self):
        return {"increment": self.law.to_dict()}


class WalkBase:
    """Fresh rescaled walks of length n, one per key."""

    def __init__(self, n: int, law: IncrementLaw = RADEMACHER, interpolation="linear"):
        self.n = n
        self.law = law
        self.kind = _kind(interpolation)

    def draw(self, keys):
        return np.arange(self.n + 1) / self.n, _walk_values(np.asarray(keys), self.n, self.law)

    def describe(self):
        return {"walk": self.n, "increment": self.law.to_dict()}


class ZeroBase:
    def __init__(self, kind: PathKind):
        self.kind = kind

    def draw(self, keys):
        return np.array([0.0, 1.0]), np.zeros((np.size(keys), 2))

    def describe(self):
        return {"zero": True}


def donsker_spec(increment: IncrementLaw = RADEMACHER, interpolation="linear") -> RecursionSpec:
    kind = _kind(interpolation)
    return RecursionSpec(
        K=2,
        n0=2,
        base=(ZeroBase(kind), IncrementBase(increment, kind)),
        sampler=CoefficientSampler(lambda n, rng: donsker_coefficients(n), True, "walk_split"),
        kind=kind,
        name="walk",
        params={"increment": increment.to_dict(), "interpolation": kind.value},
    )


def wiener_map(beta: float = 2.0) -> FixedPointMap:
    beta = float(beta)
    if not beta > 1:
        raise ValueError(f"split parameter must exceed 1, got {beta}")
    ops = (
        scaled(math.sqrt(1 / beta), FrontSplit(beta)),
        scaled(math.sqrt((beta - 1) / beta), BackSplit(beta)),
    )
    return FixedPointMap(2, lambda rng: (ops, None), True, f"wiener(beta={beta:g})")


def spatial_map() -> FixedPointMap:
    ops = (Scale(1 / math.sqrt(2)), Scale(1 / math.sqrt(2)))
    return FixedPointMap(2, lambda rng: (ops, None), True, "spatial")
