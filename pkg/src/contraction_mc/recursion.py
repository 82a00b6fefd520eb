"""Sampling engine for recursive distributional equations on path space.

    X_n  =d  sum_r A_r^(n) X^(r)_{I_r^(n)} + b^(n),   n >= n0,

together with the limit map T(mu) = Law(sum_r A_r Z^(r) + b) and the
accompanying sequence Q_n that mixes finite-n coefficients with draws from a
candidate fixed point.

Randomness is counter based (see :mod:`streams`): a sample with key ``k``
draws its coefficients from ``derive(k, 0)`` and expands subproblem ``r``
under ``derive(k, r + 1)``.  Samples are therefore independent of how they are
batched or threaded.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import streams
from .ensemble import Ensemble, concat, digest
from .operators import CoefficientDraw, norm_is_exact, op_norm, to_dict
from .paths import MetricOrder, Path, PathKind, combine_grids

MAX_REJECTIONS = 100
CHUNK = 2048


class RecursionDivergenceError(RuntimeError):
    pass


class ImproperSamplerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class CoefficientSampler:
    """n, rng -> CoefficientDraw.  Deterministic samplers are called with rng=None."""

    fn: Callable[[int, np.random.Generator | None], CoefficientDraw]
    deterministic: bool = False
    name: str = "custom"

    def __call__(self, n: int, rng=None) -> CoefficientDraw:
        return self.fn(n, rng)


class EnsembleBase:
    """Base case drawn uniformly from a finite ensemble."""

    def __init__(self, ensemble: Ensemble):
        self.ensemble = ensemble
        self.kind = ensemble.kind

    def draw(self, keys):
        idx = streams.uniform_index(keys, self.ensemble.size)
        return self.ensemble.grid, self.ensemble.values[idx]

    def describe(self):
        return {"ensemble": digest([self.ensemble.grid.tolist(), self.ensemble.values.tolist()])}


def _as_base(b):
    return EnsembleBase(b) if isinstance(b, Ensemble) else b


@dataclass(frozen=True, eq=False)
class RecursionSpec:
    K: int
    n0: int
    base: tuple
    sampler: CoefficientSampler
    kind: PathKind = PathKind.LINEAR
    max_depth: int | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be positive")
        base = tuple(_as_base(b) for b in self.base)
        if len(base) != self.n0:
            raise ValueError(f"need one base case per size 0..{self.n0 - 1}, got {len(base)}")
        if any(b.kind is not PathKind(self.kind) for b in base):
            raise ValueError("base cases must match the path kind")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "kind", PathKind(self.kind))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "K": self.K,
            "n0": self.n0,
            "kind": self.kind.value,
            "sampler": self.sampler.name,
            "deterministic": self.sampler.deterministic,
            "base": [b.describe() for b in self.base],
            "params": self.params,
        }

    def digest(self) -> str:
        return digest(self.describe())

    def depth_limit(self, n: int) -> int:
        if self.max_depth is not None:
            return self.max_depth
        return int(math.ceil(10 * math.log2(n + 2)))


@dataclass(frozen=True, eq=False)
class FixedPointMap:
    """Limit map; ``sampler(rng)`` returns (operators, shift)."""

    K: int
    sampler: Callable[[np.random.Generator | None], tuple]
    deterministic: bool = False
    name: str = "custom"

    def draw(self, rng=None):
        ops, shift = self.sampler(rng)
        ops = tuple(ops)
        if len(ops) != self.K:
            raise ValueError(f"map sampler returned {len(ops)} operators, expected {self.K}")
        return ops, shift

    def describe(self) -> dict:
        d = {"name": self.name, "K": self.K, "deterministic": self.deterministic}
        if self.deterministic:
            ops, shift = self.draw()
            d["operators"] = [to_dict(op) for op in ops]
            d["shift"] = None if shift is None else shift.to_dict()
        return d


@dataclass
class SamplingStats:
    rejections: int = 0


@dataclass(frozen=True)
class ContractionReport:
    s: MetricOrder
    L_hat: float
    stderr: float
    L_exact: float | None = None
    Lstar_hat: float | None = None
    norms_exact: bool = True
    trend: tuple = ()

    def to_dict(self) -> dict:
        return {
            "s": self.s.s,
            "L_hat": self.L_hat,
            "stderr": self.stderr,
            "L_exact": self.L_exact,
            "Lstar_hat": self.Lstar_hat,
            "norms_exact": self.norms_exact,
            "trend": [list(r) for r in self.trend],
        }


# ---------------------------------------------------------------------------
# engine


def _proper_draw(spec: RecursionSpec, n: int, rng, stats: SamplingStats) -> CoefficientDraw:
    for _ in range(MAX_REJECTIONS + 1):
        draw = spec.sampler(n, rng)
        if draw.K != spec.K:
            raise ValueError(f"sampler returned {draw.K} operators, expected K={spec.K}")
        if any(i > n for i in draw.indices):
            raise ValueError(f"subproblem index exceeds n={n}: {draw.indices}")
        if all(i < n for i in draw.indices):
            return draw
        stats.rejections += 1
        if spec.sampler.deterministic:
            break
    raise ImproperSamplerError(
        f"coefficient sampler keeps producing subproblem size n={n}; "
        "the recursion would not terminate"
    )


def _assemble(kind, draw_ops, shift, parts):
    mapped = [op.apply_grid(kind, t, V) for op, (t, V) in zip(draw_ops, parts)]
    sh = None if shift is None else (shift.breakpoints, shift.values)
    return combine_grids(kind, mapped, None, sh)


def _expand(spec: RecursionSpec, n: int, keys: np.ndarray, depth: int, limit: int, stats):
    """Samples of X_n for all ``keys`` on one shared grid (deterministic sampler)
    or for a single key (random sampler)."""
    if n < spec.n0:
        return spec.base[n].draw(streams.derive(keys, 0))
    if depth >= limit:
        raise RecursionDivergenceError(f"recursion depth exceeded {limit} while expanding n={n}")
    if spec.sampler.deterministic:
        draw = _proper_draw(spec, n, None, stats)
    else:
        assert keys.size == 1
        draw = _proper_draw(spec, n, streams.generator(streams.derive(keys, 0)), stats)
    parts = [
        _expand(spec, i, streams.derive(keys, r + 1), depth + 1, limit, stats)
        for r, i in enumerate(draw.indices)
    ]
    return _assemble(spec.kind, draw.operators, draw.shift, parts)


def _chunks(size: int, chunk: int):
    return [(lo, min(size, lo + chunk)) for lo in range(0, size, chunk)]


def _run_chunks(fn, size: int, threads: int, chunk: int = CHUNK):
    spans = _chunks(size, chunk)
    if threads <= 1 or len(spans) == 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(*s), spans))


def _stack(kind, results, deterministic, meta):
    if deterministic:
        return concat([Ensemble(kind, t, V) for t, V in results], meta)
    rows = [row for block in results for row in block]
    return Ensemble.from_rows(kind, rows, meta)


def sample_process(spec: RecursionSpec, n: int, rng_seed: int) -> Path:
    """One draw of X_n."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    keys = np.array([streams.root_key(rng_seed)], dtype=np.uint64)
    return _sample_keys(spec, n, keys)[0]


def _sample_keys(spec, n, keys) -> list[Path]:
    stats = SamplingStats()
    limit = spec.depth_limit(n)
    if spec.sampler.deterministic or n < spec.n0:
        t, V = _expand(spec, n, keys, 0, limit, stats)
        return [Path(spec.kind, t, v) for v in V]
    out = []
    for k in keys:
        t, V = _expand(spec, n, np.array([k], dtype=np.uint64), 0, limit, stats)
        out.append(Path(spec.kind, t, V[0]))
    return out


def sample_ensemble(
    spec: RecursionSpec, n: int, size: int, rng_seed: int, threads: int = 1
) -> Ensemble:
    """``size`` independent draws of X_n; sample i uses key derive(root_key(seed), i)."""
    if size < 1:
        raise ValueError("size must be positive")
    root = streams.root_key(rng_seed)
    keys = streams.child_keys(root, size)
    limit = spec.depth_limit(n)
    stats = SamplingStats()
    det = spec.sampler.deterministic or n < spec.n0

    def work(lo, hi):
        local = SamplingStats()
        if det:
            out = _expand(spec, n, keys[lo:hi], 0, limit, local)
        else:
            out = []
            for k in keys[lo:hi]:
                t, V = _expand(spec, n, np.array([k], dtype=np.uint64), 0, limit, local)
                out.append((t, V[0]))
        return out, local.rejections

    results = _run_chunks(work, size, threads)
    stats.rejections = sum(r for _, r in results)
    meta = {
        "label": f"{spec.name}:n={n}",
        "seed": rng_seed,
        "spec_digest": spec.digest(),
        "rejections": stats.rejections,
    }
    return _stack(spec.kind, [b for b, _ in results], det, meta)


def iterate_T(
    fmap: FixedPointMap, ensemble: Ensemble, out_size: int, rng_seed: int, threads: int = 1
) -> Ensemble:
    """Empirical T(mu): out_size draws of sum_r A_r Z^(r) + b, Z^(r) resampled from ``ensemble``."""
    if out_size < 1:
        raise ValueError("out_size must be positive")
    keys = streams.child_keys(streams.root_key(rng_seed), out_size)
    kind, m = ensemble.kind, ensemble.size
    fixed = fmap.draw() if fmap.deterministic else None

    def one_block(block_keys, ops, shift):
        parts = []
        for r in range(fmap.K):
            idx = streams.uniform_index(streams.derive(block_keys, r + 1), m)
            parts.append((ensemble.grid, ensemble.values[idx]))
        return _assemble(kind, ops, shift, parts)

    def work(lo, hi):
        if fixed is not None:
            return one_block(keys[lo:hi], *fixed)
        out = []
        for k in keys[lo:hi]:
            kk = np.array([k], dtype=np.uint64)
            ops, shift = fmap.draw(streams.generator(streams.derive(kk, 0)))
            t, V = one_block(kk, ops, shift)
            out.append((t, V[0]))
        return out

    results = _run_chunks(work, out_size, threads)
    gen = int(ensemble.meta.get("generation", 0)) + 1
    meta = {"label": f"T^{gen}[{fmap.name}]", "seed": rng_seed, "generation": gen}
    return _stack(kind, results, fixed is not None, meta)


def _expand_map(fmap: FixedPointMap, base, depth: int, keys: np.ndarray):
    if depth == 0:
        return base.draw(streams.derive(keys, 0))
    if fmap.deterministic:
        ops, shift = fmap.draw()
    else:
        ops, shift = fmap.draw(streams.generator(streams.derive(keys, 0)))
    parts = [_expand_map(fmap, base, depth - 1, streams.derive(keys, r + 1)) for r in range(fmap.K)]
    return _assemble(base.kind, ops, shift, parts)


def iterate_T_fresh(fmap: FixedPointMap, base, k: int, size: int, rng_seed: int, threads: int = 1) -> Ensemble:
    """Exact draws from T^k(mu) where ``base`` samples mu.

    Every output path expands a depth-k tree whose K**k leaves are fresh,
    independent draws from ``base`` (an Ensemble or any object with
    ``kind`` and ``draw(keys) -> (t, V)``).  Unlike repeated :func:`iterate_T`
    there is no resampling, so no sampling error carries over between generations.
    """
    if k < 0 or size < 1:
        raise ValueError("need k >= 0 and size >= 1")
    base = _as_base(base)
    keys = streams.child_keys(streams.root_key(rng_seed), size)

    def work(lo, hi):
        if fmap.deterministic:
            return _expand_map(fmap, base, k, keys[lo:hi])
        out = []
        for key in keys[lo:hi]:
            t, V = _expand_map(fmap, base, k, np.array([key], dtype=np.uint64))
            out.append((t, V[0]))
        return out

    results = _run_chunks(work, size, threads)
    meta = {"label": f"T^{k}[{fmap.name}]", "seed": rng_seed, "generation": k}
    return _stack(base.kind, results, fmap.deterministic, meta)


def _accompanying_keys(spec, fixed: Ensemble, n, keys, stats):
    if fixed.kind is not spec.kind:
        raise ValueError("fixed-point ensemble has the wrong path kind")

    def build(block_keys, draw):
        parts = []
        for r, i in enumerate(draw.indices):
            child = streams.derive(block_keys, r + 1)
            if i < spec.n0:
                parts.append(spec.base[i].draw(streams.derive(child, 0)))
            else:
                idx = streams.uniform_index(child, fixed.size, j=1)
                parts.append((fixed.grid, fixed.values[idx]))
        return _assemble(spec.kind, draw.operators, draw.shift, parts)

    if spec.sampler.deterministic:
        return build(keys, _proper_draw(spec, n, None, stats))
    out = []
    for k in keys:
        kk = np.array([k], dtype=np.uint64)
        draw = _proper_draw(spec, n, streams.generator(streams.derive(kk, 0)), stats)
        t, V = build(kk, draw)
        out.append((t, V[0]))
    return out


def accompanying_sample(spec: RecursionSpec, fixed_ensemble: Ensemble, n: int, rng_seed: int) -> Path:
    """One draw of Q_n (finite-n coefficients, fixed-point inputs for sizes >= n0)."""
    if n < spec.n0:
        raise ValueError("Q_n is defined for n >= n0")
    keys = np.array([streams.root_key(rng_seed)], dtype=np.uint64)
    res = _accompanying_keys(spec, fixed_ensemble, n, keys, SamplingStats())
    if spec.sampler.deterministic:
        t, V = res
        return Path(spec.kind, t, V[0])
    t, v = res[0]
    return Path(spec.kind, t, v)


def accompanying_ensemble(
    spec: RecursionSpec, fixed_ensemble: Ensemble, n: int, size: int, rng_seed: int, threads: int = 1
) -> Ensemble:
    if n < spec.n0:
        raise ValueError("Q_n is defined for n >= n0")
    keys = streams.child_keys(streams.root_key(rng_seed), size)
    stats = SamplingStats()
    results = _run_chunks(
        lambda lo, hi: _accompanying_keys(spec, fixed_ensemble, n, keys[lo:hi], stats), size, threads
    )
    meta = {"label": f"Q[{spec.name}]:n={n}", "seed": rng_seed}
    return _stack(spec.kind, results, spec.sampler.deterministic, meta)


# ---------------------------------------------------------------------------
# contraction diagnostics


def _mc_mean(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def contraction_constant(
    fmap: FixedPointMap, s: MetricOrder, mc_samples: int = 1000, rng_seed: int = 0
) -> ContractionReport:
    """Estimate of L = sum_r E ||A_r||_op^s."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    if fmap.deterministic:
        ops, _ = fmap.draw()
        L = math.fsum(op_norm(op) ** s.s for op in ops)
        exact = all(norm_is_exact(op) for op in ops)
        return ContractionReport(s, L, 0.0, L_exact=L if exact else None, norms_exact=exact)
    keys = streams.child_keys(streams.root_key(rng_seed), mc_samples)
    vals, exact = [], True
    for k in keys:
        ops, _ = fmap.draw(streams.generator(k))
        exact = exact and all(norm_is_exact(op) for op in ops)
        vals.append(math.fsum(op_norm(op) ** s.s for op in ops))
    mean, se = _mc_mean(vals)
    return ContractionReport(s, mean, se, norms_exact=exact)


@dataclass(frozen=True)
class RateFunction:
    """R(n) = n^-delta ("power") or log(n + 1)^-k ("log_power"); sizes below 1 count as 1."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("power", "log_power"):
            raise ValueError(f"unknown rate function {self.kind!r}")
        if self.param < 0:
            raise ValueError("rate exponent must be nonnegative")

    def __call__(self, n: int) -> float:
        n = max(int(n), 1)
        if self.kind == "power":
            return float(n) ** -self.param
        return math.log(n + 1) ** -self.param


def rate_factor(
    spec: RecursionSpec,
    s: MetricOrder,
    R: RateFunction,
    n: int,
    mc_samples: int = 1000,
    rng_seed: int = 0,
) -> float:
    """E[sum_r ||A_r^(n)||^s R(I_r^(n)) / R(n)] at size n."""
    if n < spec.n0:
        raise ValueError("rate factor is defined for n >= n0")

    def term(draw: CoefficientDraw) -> float:
        return math.fsum(op_norm(op) ** s.s * R(i) / R(n) for op, i in zip(draw.operators, draw.indices))

    stats = SamplingStats()
    if spec.sampler.deterministic:
        return term(_proper_draw(spec, n, None, stats))
    keys = streams.child_keys(streams.root_key(rng_seed), mc_samples)
    vals = [term(_proper_draw(spec, n, streams.generator(k), stats)) for k in keys]
    return _mc_mean(vals)[0]


def rate_trend(
    spec: RecursionSpec, s: MetricOrder, R: RateFunction, ns: Sequence[int], mc_samples=1000, rng_seed=0
) -> ContractionReport:
    """rate_factor over increasing n; L* is reported as the value at the largest n."""
    rows = tuple((int(n), rate_factor(spec, s, R, n, mc_samples, rng_seed)) for n in sorted(ns))
    top = rows[-1][1]
    return ContractionReport(s, top, 0.0, Lstar_hat=top, trend=rows)
