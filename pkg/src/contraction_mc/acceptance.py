"""Acceptance gates, one function per criterion.

Each gate returns a :class:`CriterionResult`; a gate passes only if its
property holds *and* it finished inside its time budget.  All gates use the
fixed seed :data:`SEED` (sub-seeds are derived from it), never a tuned one.

Run everything with ``contraction-mc report --acceptance`` or a subset with
``--criteria 2,3``.
"""

from __future__ import annotations

import itertools
import math
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from . import streams
from .donsker import (
    bm_fdd,
    bm_grid_ensemble,
    covariance_exact,
    donsker_spec,
    linearized_bm_ensemble,
    random_walk_ensemble,
    walk_extremes,
    walk_fdd,
    wiener_map,
)
from .ensemble import Ensemble
from .experiments import ExperimentConfig, bm_characterization, null_band
from .metrics import fdd_distance, fdd_distance_arrays, ks_statistic, moment_match, path_lp_distance
from .paths import MetricOrder, Path, PathKind, lp_norm, psi_smooth, sup_norm
from .recursion import RateFunction, contraction_constant, iterate_T, rate_factor, sample_ensemble

SEED = 1
M = 20000
GRID8 = np.arange(9) / 8
BLOCK = 125  # null-calibrated gates evaluate the estimator ~100 times
POWER_BLOCK = 1000  # single comparisons can afford larger, less biased blocks
NULL_PAIRS = 50


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    runtime: float
    budget: float | None

    def line(self) -> str:
        budget = f"/{self.budget:g}s" if self.budget else ""
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.title}: {self.detail} ({self.runtime:.2f}s{budget})"


def sub_seed(*tags: int) -> int:
    key = np.array([streams.root_key(SEED)])
    for t in tags:
        key = streams.derive(key, t)
    return int(key[0] >> np.uint64(1))


def _timed(number, title, budget, fn) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    in_time = budget is None or dt < budget
    if not in_time:
        detail += f"; over time budget ({dt:.1f}s >= {budget}s)"
    return CriterionResult(number, title, bool(ok and in_time), detail, dt, budget)


def _fdd2(X, Y, block=BLOCK) -> float:
    return fdd_distance_arrays(X, Y, 2.0, "assignment", block=block).value


# ---------------------------------------------------------------------------


def brute_force_covariance(n: int, times) -> np.ndarray:
    """E[S_s S_t] averaged over all 2**n Rademacher sign patterns."""
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    partial = np.concatenate((np.zeros((signs.shape[0], 1)), np.cumsum(signs, axis=1)), axis=1) / math.sqrt(n)
    knots = np.arange(n + 1) / n
    vals = np.stack([np.interp(times, knots, row) for row in partial])
    return vals.T @ vals / signs.shape[0]


def criterion_1():
    def run():
        rng = np.random.default_rng(sub_seed(1))
        times = np.unique(np.concatenate((np.linspace(0, 1, 41), rng.random(20))))
        gap = 0.0
        for n in range(1, 9):
            oracle = brute_force_covariance(n, times)
            ours = np.array([[covariance_exact(n, s, t) for t in times] for s in times])
            gap = max(gap, float(np.max(np.abs(oracle - ours))))
        return gap <= 1e-12, f"max gap {gap:.2e} over n=1..8, {times.size} times"

    return _timed(1, "covariance exactness", 1.0, run)


def criterion_2():
    def run():
        parts, ok = [], True
        for n in (16, 64):
            spec = donsker_spec()
            X = sample_ensemble(spec, n, M, sub_seed(2, n, 0)).at(GRID8)
            Y = walk_fdd(n, M, sub_seed(2, n, 1), GRID8)
            d = _fdd2(X, Y)
            pair = lambda i, n=n: (walk_fdd(n, M, sub_seed(2, n, 2, i), GRID8), walk_fdd(n, M, sub_seed(2, n, 3, i), GRID8))
            _, p95 = null_band(pair, NULL_PAIRS, _fdd2)
            ok &= d < p95
            parts.append(f"n={n}: {d:.4f} vs null p95 {p95:.4f}")
        return ok, "; ".join(parts)

    return _timed(2, "recursion identity", 60.0, run)


def criterion_3():
    def run():
        E = bm_grid_ensemble(M, sub_seed(3, 0), times=GRID8)
        F = iterate_T(wiener_map(2.0), E, M, sub_seed(3, 1))
        d = _fdd2(F.at(GRID8), bm_fdd(GRID8, M, sub_seed(3, 2)))
        pair = lambda i: (bm_fdd(GRID8, M, sub_seed(3, 3, i)), bm_fdd(GRID8, M, sub_seed(3, 4, i)))
        _, p95 = null_band(pair, NULL_PAIRS, _fdd2)
        return d < p95, f"{d:.4f} vs null p95 {p95:.4f}"

    return _timed(3, "Wiener fixed point", 30.0, run)


def criterion_4():
    def run():
        s = MetricOrder(3)
        L = contraction_constant(wiener_map(2.0), s)
        target = 2**-0.5
        ok_L = L.L_exact is not None and abs(L.L_exact - target) <= 1e-15
        R = RateFunction("power", 0.25)
        spec = donsker_spec()
        gaps = [abs(rate_factor(spec, s, R, n) - 2**-0.25) for n in range(2, 4097, 2)]
        ok_R = max(gaps) <= 1e-12
        return ok_L and ok_R, f"L={L.L_exact!r} (target {target!r}); max rate-factor gap {max(gaps):.1e} over even n<=4096"

    return _timed(4, "contraction constants", 1.0, run)


def criterion_5():
    def run():
        x = walk_fdd(1024, M, sub_seed(5, 0), [1.0])[:, 0]
        ks = ks_statistic(x, ndtr)
        thr = 1.5 * 1.36 / math.sqrt(M)
        ref = bm_fdd(GRID8, M, sub_seed(5, 1))
        seed = sub_seed(5, 2)
        d8 = _fdd2(walk_fdd(8, M, seed, GRID8), ref, POWER_BLOCK)
        d512 = _fdd2(walk_fdd(512, M, seed, GRID8), ref, POWER_BLOCK)
        ok = ks <= thr and d512 < d8
        return ok, f"KS(n=1024)={ks:.4f} vs {thr:.4f}; fdd W2 n=8 {d8:.4f} > n=512 {d512:.4f}: {d512 < d8}"

    return _timed(5, "Donsker marginal convergence", 90.0, run)


def sup_norm_mean_oracle() -> float:
    """E sup|W| on [0,1] by integrating the tail of the two-sided exit series."""

    def cdf(x):
        if x <= 0:
            return 0.0
        k = np.arange(60)
        return float(4 / math.pi * np.sum((-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * math.pi**2 / (8 * x * x))))

    val, _ = integrate.quad(lambda x: 1 - cdf(x), 0, 12, limit=200)
    return val


def criterion_6():
    def run():
        sups, maxs = walk_extremes(4096, 50000, sub_seed(6))
        one = float(np.mean(np.maximum(maxs, 0)))
        two = float(np.mean(sups))
        t1, t2 = math.sqrt(2 / math.pi), sup_norm_mean_oracle()
        ok = abs(one / t1 - 1) <= 0.02 and abs(two / t2 - 1) <= 0.03
        return ok, (
            f"E max={one:.5f} vs {t1:.5f} ({100 * (one / t1 - 1):+.2f}%); "
            f"E sup|.|={two:.5f} vs {t2:.5f} ({100 * (two / t2 - 1):+.2f}%); grid maxima bias low"
        )

    return _timed(6, "sup-moment convergence", 120.0, run)


def criterion_7():
    def run():
        times = np.arange(1, 11) / 10
        S = random_walk_ensemble(64, M, sub_seed(7, 0))
        W = linearized_bm_ensemble(64, M, sub_seed(7, 1))
        good = moment_match(S, W, 3.0, times)
        S4 = random_walk_ensemble(4, M, sub_seed(7, 2))
        B = bm_grid_ensemble(M, sub_seed(7, 3), times=times)
        bad = moment_match(S4, B, 3.0, times)
        ok = good.passed and bad.verdicts["equal_covariance"] is False
        return ok, (
            f"n=64 vs linearized BM: mean z {good.mean_gap_z:.2f}, cov z {good.cov_gap_z:.2f} -> {good.passed}; "
            f"n=4 vs BM: cov gap {bad.max_cov_gap:.4f} (z {bad.cov_gap_z:.1f}) -> detected {not bad.verdicts['equal_covariance']}"
        )

    return _timed(7, "moment matching", 60.0, run)


def _random_pl(rng) -> Path:
    k = int(rng.integers(2, 6))
    t = np.concatenate(([0.0], np.sort(rng.random(k - 2)), [1.0]))
    return Path(PathKind.LINEAR, t, rng.normal(size=k))


def brute_force_assignment(cost: np.ndarray, p: float) -> float:
    m = cost.shape[0]
    best = min(sum(cost[i, j] ** p for i, j in enumerate(perm)) for perm in itertools.permutations(range(m)))
    return (best / m) ** min(1.0, 1.0 / p)


def criterion_8():
    def run():
        rng = np.random.default_rng(sub_seed(8))
        gap = 0.0
        for _ in range(500):
            m = int(rng.integers(1, 7))
            p = float(rng.choice([1.0, 2.0, 3.0]))
            A = Ensemble.from_paths([_random_pl(rng) for _ in range(m)])
            B = Ensemble.from_paths([_random_pl(rng) for _ in range(m)])
            cost = np.array([[sup_norm(Path(PathKind.LINEAR, *_diff(a, b))) for b in B.paths()] for a in A.paths()])
            gap = max(gap, abs(path_lp_distance(A, B, p).value - brute_force_assignment(cost, p)))
            times = np.sort(rng.random(int(rng.integers(1, 4))))
            XA, XB = A.at(times), B.at(times)
            ecost = np.sqrt(((XA[:, None, :] - XB[None, :, :]) ** 2).sum(-1))
            gap = max(gap, abs(fdd_distance(A, B, times, p).value - brute_force_assignment(ecost, p)))
        return gap <= 1e-12, f"max gap {gap:.1e} over 500 instances (m<=6)"

    return _timed(8, "transport oracle equivalence", 10.0, run)


def _diff(a: Path, b: Path):
    t = np.union1d(a.breakpoints, b.breakpoints)
    return t, np.interp(t, a.breakpoints, a.values) - np.interp(t, b.breakpoints, b.values)


def criterion_9():
    def run():
        rng = np.random.default_rng(sub_seed(9))
        worst, mono, below, psi_ok = 0.0, True, True, True
        ps = (2, 4, 6, 8)
        for _ in range(100):
            f = _random_pl(rng)
            norms = []
            for p in ps:
                ref, _ = integrate.quad(
                    lambda x: abs(np.interp(x, f.breakpoints, f.values)) ** p, 0, 1,
                    points=f.breakpoints[1:-1], epsabs=0, epsrel=1e-12, limit=200,
                )
                ref **= 1 / p
                got = lp_norm(f, p)
                if ref > 0:
                    worst = max(worst, abs(got - ref) / ref)
                norms.append(got)
            mono &= all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))
            below &= norms[-1] <= sup_norm(f) + 1e-12
            y = _random_pl(rng)
            for p in (4, 6):
                psi_ok &= psi_smooth(f, y, p) >= 1.0 and (psi_smooth(f, y, p) > 1.0) == (f != y)
                psi_ok &= psi_smooth(f, f, p) == 1.0
        ok = worst <= 1e-8 and mono and below and psi_ok
        return ok, f"max rel err {worst:.1e}; monotone {mono}; <= sup {below}; psi >= 1, =1 iff equal {psi_ok}"

    return _timed(9, "L_p machinery", 5.0, run)


def criterion_10():
    def run():
        cfg = ExperimentConfig(seed=SEED, grid=(0.5, 1.0), estimator="per_marginal_bound", ensemble_size=M)
        s = bm_characterization(cfg).summary
        ok = s["decreasing_steps"] >= 6 and s["final_within_null"]
        d = ", ".join(f"{v:.4f}" for v in s["distances"])
        return ok, f"{s['decreasing_steps']}/8 decreasing; final {s['distances'][-1]:.4f} vs null p95 {s['null_p95']:.4f}; [{d}]"

    return _timed(10, "bm-characterization", 120.0, run)


SMALL_CONFIGS = {
    "donsker": {"seed": SEED, "n_values": [8, 32], "ensemble_size": 5000, "zeta_size": 100},
    "bm-char": {"seed": SEED, "ensemble_size": 5000, "iterations": 4, "null_pairs": 5},
    "spatial": {"seed": SEED, "ensemble_size": 5000, "iterations": 4, "null_pairs": 5},
    "rates": {"seed": SEED},
}


def criterion_11():
    from .cli import main

    def outputs(root: FsPath) -> dict:
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"
        }

    def run():
        tmp = FsPath(tempfile.mkdtemp(prefix="cmc-determinism-"))
        try:
            cfg_dir = tmp / "configs"
            cfg_dir.mkdir()
            import json

            sim = cfg_dir / "simulate.json"
            sim.write_text(json.dumps({"seed": SEED, "n": 64, "size": 5000}))
            runs = {}
            for threads in (1, 3):
                out = tmp / f"threads{threads}"
                codes = [main(["simulate", str(sim), "--threads", str(threads), "--out", str(out), ])]
                for name, cfg in SMALL_CONFIGS.items():
                    path = cfg_dir / f"{name}.json"
                    path.write_text(json.dumps(cfg))
                    codes.append(main(["experiment", name, "--config", str(path), "--threads", str(threads), "--out", str(out)]))
                if any(codes):
                    return False, f"nonzero exit codes {codes}"
                runs[threads] = outputs(out)
            same = runs[1] == runs[3]
            return same, f"{len(runs[1])} output files byte-identical across --threads 1/3: {same}"
        finally:
            shutil.rmtree(tmp, ignore_errors=True)

    return _timed(11, "determinism", None, run)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_all(numbers=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else numbers
    return [CRITERIA[i]() for i in numbers]
