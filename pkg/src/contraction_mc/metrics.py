"""Computable distances between empirical path measures.

All values are for the *empirical* measures handed in: the minimal l_p
distance between two equal-size samples is an optimal assignment, in one
dimension the sorted pairing.  The Zolotarev distance itself is never
computed; :func:`zeta_upper_bound` reports the l_s upper bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import streams
from .ensemble import Ensemble
from .paths import MetricOrder, regrid, union_grid

ASSIGNMENT_CAP = 2048
_COST_BUDGET = 20_000_000  # floats per cost-matrix chunk


@dataclass(frozen=True)
class DistanceReport:
    value: float
    estimator: str
    p_or_s: float
    sizes: tuple
    grid: tuple = ()
    stderr: float | None = None
    blocks: int = 1
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        d["grid"] = list(self.grid)
        return d


@dataclass(frozen=True)
class MomentMatchReport:
    max_mean_gap: float
    max_cov_gap: float
    mean_gap_z: float
    cov_gap_z: float
    sup_moment_s: tuple
    verdicts: dict
    band: float
    times: tuple = ()

    @property
    def passed(self) -> bool:
        return all(v for v in self.verdicts.values() if v is not None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sup_moment_s"] = list(self.sup_moment_s)
        d["times"] = list(self.times)
        d["passed"] = self.passed
        return d


@dataclass(frozen=True)
class SupMoments:
    orders: tuple
    sup_norm: tuple
    one_sided: tuple

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


# ---------------------------------------------------------------------------
# one dimension


def wasserstein_1d(a: Sequence[float], b: Sequence[float], p: float = 1.0) -> float:
    """Exact l_p between two equal-size empirical measures on the line."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size != b.size:
        raise ValueError(f"sample sizes differ ({a.size} vs {b.size}); resample explicitly")
    if p < 1:
        raise ValueError("p must be >= 1")
    d = np.abs(np.sort(a) - np.sort(b))
    return float(np.mean(d**p) ** (1.0 / p))


def _lp_root(mean_cost: float, p: float) -> float:
    return mean_cost ** min(1.0, 1.0 / p)


def assignment_mean(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


# ---------------------------------------------------------------------------
# path space


def sup_cost_matrix(ens_a: Ensemble, ens_b: Ensemble, idx_a=None, idx_b=None) -> np.ndarray:
    """Matrix of sup_norm(x_i - y_j), exact on the union grid."""
    grid = union_grid(ens_a.grid, ens_b.grid)
    A = regrid(ens_a.kind, ens_a.grid, ens_a.values, grid)
    B = regrid(ens_b.kind, ens_b.grid, ens_b.values, grid)
    if idx_a is not None:
        A, B = A[idx_a], B[idx_b]
    out = np.empty((A.shape[0], B.shape[0]))
    rows = max(1, _COST_BUDGET // max(1, B.size))
    for lo in range(0, A.shape[0], rows):
        hi = min(A.shape[0], lo + rows)
        out[lo:hi] = np.max(np.abs(A[lo:hi, None, :] - B[None, :, :]), axis=2)
    return out


def _check_sizes(m_a, m_b):
    if m_a != m_b:
        raise ValueError(
            f"ensemble sizes differ ({m_a} vs {m_b}); resample one of them explicitly"
        )


def _blocks(m: int, cap: int, block: int | None):
    if m <= cap and block is None:
        return [(0, m)]
    if block is None:
        raise ValueError(
            f"{m} samples exceed the assignment cap {cap}; pass block=<size> for "
            "chunked averaging (mean over independent blocks, biased upward)"
        )
    if block > cap:
        raise ValueError(f"block size {block} exceeds the assignment cap {cap}")
    return [(lo, min(m, lo + block)) for lo in range(0, m, block)]


def _blocked_value(cost_fn, m, p, cap, block):
    spans = _blocks(m, cap, block)
    vals = [_lp_root(assignment_mean(cost_fn(lo, hi) ** p), p) for lo, hi in spans]
    return float(np.mean(vals)), len(spans)


def _bootstrap(stat: Callable, m: int, B: int, seed: int) -> float | None:
    if B <= 0:
        return None
    keys = streams.child_keys(streams.root_key(seed), B)
    vals = []
    for k in keys:
        ia = streams.uniform_index(streams.derive(np.array([k]), np.arange(m)), m)
        ib = streams.uniform_index(streams.derive(np.array([k]), np.arange(m, 2 * m)), m)
        vals.append(stat(ia, ib))
    return float(np.std(vals, ddof=1)) if B > 1 else 0.0


def path_lp_distance(
    ens_a: Ensemble,
    ens_b: Ensemble,
    p: float = 2.0,
    cap: int = ASSIGNMENT_CAP,
    block: int | None = None,
    bootstrap: int = 0,
    seed: int = 0,
) -> DistanceReport:
    """Minimal l_p between two empirical path measures under the sup norm."""
    if p <= 0:
        raise ValueError("p must be positive")
    m = ens_a.size
    _check_sizes(m, ens_b.size)

    def stat(ia, ib):
        def cost(lo, hi):
            return sup_cost_matrix(ens_a, ens_b, ia[lo:hi], ib[lo:hi])

        return _blocked_value(cost, m, p, cap, block)[0]

    ident = np.arange(m)
    value, nblocks = _blocked_value(
        lambda lo, hi: sup_cost_matrix(ens_a, ens_b, ident[lo:hi], ident[lo:hi]), m, p, cap, block
    )
    return DistanceReport(
        value=value,
        estimator="assignment",
        p_or_s=float(p),
        sizes=(m, ens_b.size),
        stderr=_bootstrap(stat, m, bootstrap, seed),
        blocks=nblocks,
        note="chunked average over blocks (biased upward)" if nblocks > 1 else "",
    )


def sup_moment(ens: Ensemble, s: float) -> float:
    return float(np.mean(ens.sup_norms() ** s))


def zeta_upper_bound(ens_a: Ensemble, ens_b: Ensemble, s, block: int | None = None) -> float:
    """Upper bound on zeta_s between the empirical measures via l_s.

    s <= 1: zeta_s equals l_s.  s > 1: (E||X||^s^(1-1/s) + E||Y||^s^(1-1/s)) * l_s.
    """
    s = s.s if isinstance(s, MetricOrder) else float(s)
    ls = path_lp_distance(ens_a, ens_b, p=s, block=block).value
    if s <= 1:
        return ls
    ma, mb = sup_moment(ens_a, s), sup_moment(ens_b, s)
    if not (math.isfinite(ma) and math.isfinite(mb)):
        raise ValueError("sup-norm moment estimate is not finite")
    return (ma ** (1 - 1 / s) + mb ** (1 - 1 / s)) * ls


# ---------------------------------------------------------------------------
# finite-dimensional distributions


def per_marginal_bound(X: np.ndarray, Y: np.ndarray, p: float = 2.0) -> float:
    """Lower bound on the Euclidean l_p of the joint laws from exact 1-D marginals.

    p >= 2: (sum_i W_p(X_i, Y_i)^p)^(1/p);  1 <= p < 2: max_i W_p(X_i, Y_i).
    """
    w = np.array([wasserstein_1d(X[:, i], Y[:, i], p) for i in range(X.shape[1])])
    if p >= 2:
        return float(np.sum(w**p) ** (1.0 / p))
    return float(w.max())


def fdd_distance_arrays(
    X: np.ndarray,
    Y: np.ndarray,
    p: float = 2.0,
    estimator: str = "auto",
    cap: int = ASSIGNMENT_CAP,
    block: int | None = None,
    bootstrap: int = 0,
    seed: int = 0,
    times: Sequence[float] = (),
) -> DistanceReport:
    """Empirical Euclidean l_p between two (m, k) samples of a k-dimensional marginal."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty sample")
    _check_sizes(X.shape[0], Y.shape[0])
    if X.shape[1] != Y.shape[1]:
        raise ValueError("marginal dimensions differ")
    if p < 1:
        raise ValueError("p must be >= 1")
    m, k = X.shape
    if estimator == "auto":
        estimator = "exact_1d" if k == 1 else "assignment"

    if estimator == "exact_1d":
        if k != 1:
            raise ValueError("exact_1d needs one-dimensional marginals")

        def stat(ia, ib):
            return wasserstein_1d(X[ia, 0], Y[ib, 0], p)

        nblocks = 1
    elif estimator == "per_marginal_bound":

        def stat(ia, ib):
            return per_marginal_bound(X[ia], Y[ib], p)

        nblocks = 1
    elif estimator == "assignment":

        def stat(ia, ib):
            Xa, Yb = X[ia], Y[ib]
            return _blocked_value(
                lambda lo, hi: cdist(Xa[lo:hi], Yb[lo:hi], "euclidean"), m, p, cap, block
            )[0]

        nblocks = len(_blocks(m, cap, block))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")

    ident = np.arange(m)
    return DistanceReport(
        value=stat(ident, ident),
        estimator=estimator,
        p_or_s=float(p),
        sizes=(m, Y.shape[0]),
        grid=tuple(float(t) for t in times),
        stderr=_bootstrap(stat, m, bootstrap, seed),
        blocks=nblocks,
        note="chunked average over blocks (biased upward)" if nblocks > 1 else "",
    )


def fdd_distance(
    ens_a: Ensemble, ens_b: Ensemble, times: Sequence[float], p: float = 2.0, **kw
) -> DistanceReport:
    """l_p between the finite-dimensional distributions at ``times``."""
    times = list(times)
    if not times:
        raise ValueError("need at least one time point")
    return fdd_distance_arrays(ens_a.at(times), ens_b.at(times), p, times=times, **kw)


# ---------------------------------------------------------------------------
# moments


def _gap_table(A: np.ndarray, B: np.ndarray):
    """Mean and covariance gaps with standard errors for (m, k) samples."""
    ma, mb = A.shape[0], B.shape[0]
    mean_gap = A.mean(0) - B.mean(0)
    mean_se = np.sqrt(A.var(0, ddof=1) / ma + B.var(0, ddof=1) / mb)
    Ac, Bc = A - A.mean(0), B - B.mean(0)
    Pa = Ac[:, :, None] * Ac[:, None, :]
    Pb = Bc[:, :, None] * Bc[:, None, :]
    cov_gap = Pa.mean(0) - Pb.mean(0)
    cov_se = np.sqrt(Pa.var(0, ddof=1) / ma + Pb.var(0, ddof=1) / mb)
    return mean_gap, mean_se, cov_gap, cov_se


def _max_z(gap, se):
    z = np.divide(np.abs(gap), se, out=np.where(np.abs(gap) > 1e-12, np.inf, 0.0), where=se > 0)
    return float(z.max())


def moment_match(
    ens_a: Ensemble, ens_b: Ensemble, s, times: Sequence[float], tol: float = 3.0
) -> MomentMatchReport:
    """Empirical check of the conditions that put two laws at finite zeta_s distance.

    finite s-th sup moments always; equal means if s > 1; equal covariances if
    s > 2.  A gap passes if it lies within ``tol`` standard errors.
    """
    s = s.s if isinstance(s, MetricOrder) else float(s)
    times = list(times)
    A, B = ens_a.at(times), ens_b.at(times)
    mean_gap, mean_se, cov_gap, cov_se = _gap_table(A, B)
    sup_a, sup_b = sup_moment(ens_a, s), sup_moment(ens_b, s)
    mz, cz = _max_z(mean_gap, mean_se), _max_z(cov_gap, cov_se)
    verdicts = {
        "finite_sup_moment": bool(math.isfinite(sup_a) and math.isfinite(sup_b)),
        "equal_mean": bool(mz <= tol) if s > 1 else None,
        "equal_covariance": bool(cz <= tol) if s > 2 else None,
    }
    return MomentMatchReport(
        max_mean_gap=float(np.max(np.abs(mean_gap))),
        max_cov_gap=float(np.max(np.abs(cov_gap))),
        mean_gap_z=mz,
        cov_gap_z=cz,
        sup_moment_s=(sup_a, sup_b),
        verdicts=verdicts,
        band=tol,
        times=tuple(float(t) for t in times),
    )


def ks_statistic(a: Sequence[float], b_cdf) -> float:
    """Kolmogorov-Smirnov distance of the sample ``a`` to a reference.

    ``b_cdf`` is either a vectorized CDF (one-sample statistic, computed with the
    continuous-reference formula, so a point mass against itself gives 1) or a
    second sample (two-sample statistic over the pooled points, right-continuous
    empirical CDFs).
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    if a.size == 0:
        raise ValueError("empty sample")
    m = a.size
    if callable(b_cdf):
        F = np.asarray(b_cdf(a), dtype=float)
        i = np.arange(1, m + 1)
        return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))
    b = np.sort(np.asarray(b_cdf, dtype=float).ravel())
    pts = np.concatenate((a, b))
    Fa = np.searchsorted(a, pts, side="right") / m
    Fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))


def sup_moments_from_values(sups, maxima, orders) -> SupMoments:
    sups = np.asarray(sups, dtype=float)
    pos = np.maximum(np.asarray(maxima, dtype=float), 0.0)
    orders = tuple(float(o) for o in orders)
    return SupMoments(
        orders=orders,
        sup_norm=tuple(float(np.mean(sups**o)) for o in orders),
        one_sided=tuple(float(np.mean(pos**o)) for o in orders),
    )


def sup_functional_moments(ens: Ensemble, orders: Sequence[float]) -> SupMoments:
    """E[sup_t |X_t|^q] and E[(max(0, max_t X_t))^q] for each order q."""
    return sup_moments_from_values(ens.sup_norms(), ens.maxima(), orders)
