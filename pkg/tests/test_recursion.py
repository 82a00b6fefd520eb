import math

import numpy as np
import pytest

from contraction_mc.donsker import (
    RADEMACHER,
    IncrementBase,
    WalkBase,
    ZeroBase,
    bm_grid_ensemble,
    covariance_matrix,
    donsker_spec,
    spatial_map,
    wiener_map,
)
from contraction_mc.ensemble import Ensemble
from contraction_mc.operators import BackSplit, CoefficientDraw, FrontSplit, Scale, donsker_coefficients, scaled
from contraction_mc.paths import MetricOrder, Path, PathKind, eval_path
from contraction_mc.recursion import (
    CoefficientSampler,
    FixedPointMap,
    ImproperSamplerError,
    RateFunction,
    RecursionDivergenceError,
    RecursionSpec,
    accompanying_ensemble,
    accompanying_sample,
    contraction_constant,
    iterate_T,
    iterate_T_fresh,
    rate_factor,
    rate_trend,
    sample_ensemble,
    sample_process,
)

LIN = PathKind.LINEAR
S3 = MetricOrder(3)


def _const_map(*ops):
    return FixedPointMap(len(ops), lambda rng: (ops, None), True, "const")


def _random_spec(stall_prob=0.0):
    """K=1 recursion X_n = +-X_{n-1}; with probability stall_prob the draw asks for X_n again."""

    def fn(n, rng):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        i = n if rng.random() < stall_prob else n - 1
        return CoefficientDraw((Scale(sign),), (i,))

    base = (ZeroBase(LIN), IncrementBase(RADEMACHER, LIN))
    return RecursionSpec(1, 2, base, CoefficientSampler(fn, False, "sign_flip"))


def test_walk_recursion_small_n():
    spec = donsker_spec()
    ens = sample_ensemble(spec, 1, 200, 3)
    assert set(np.round(ens.at([1.0])[:, 0], 12)) == {-1.0, 1.0}
    assert np.all(ens.at([0.0]) == 0)
    ens = sample_ensemble(spec, 2, 400, 4)
    half, one = ens.at([0.5, 1.0]).T
    assert set(np.round(half, 12)) == {round(-1 / math.sqrt(2), 12), round(1 / math.sqrt(2), 12)}
    assert set(np.round(one, 12)) == {round(-math.sqrt(2), 12), 0.0, round(math.sqrt(2), 12)}
    assert np.all(sample_ensemble(spec, 0, 10, 1).values == 0)


def test_sample_process_is_a_path():
    p = sample_process(donsker_spec(), 7, 11)
    assert isinstance(p, Path) and p(0) == 0
    assert sample_process(donsker_spec(), 7, 11) == p
    with pytest.raises(ValueError):
        sample_process(donsker_spec(), -1, 0)


def test_zero_base_gives_zero_process():
    spec = RecursionSpec(
        2, 2, (ZeroBase(LIN), ZeroBase(LIN)),
        CoefficientSampler(lambda n, rng: donsker_coefficients(n), True), LIN,
    )
    assert np.all(sample_ensemble(spec, 37, 50, 0).values == 0)


def test_spec_validation():
    sampler = CoefficientSampler(lambda n, rng: donsker_coefficients(n), True)
    with pytest.raises(ValueError):
        RecursionSpec(2, 2, (ZeroBase(LIN),), sampler)
    with pytest.raises(ValueError):
        RecursionSpec(0, 1, (ZeroBase(LIN),), sampler)
    with pytest.raises(ValueError):
        RecursionSpec(2, 2, (ZeroBase(PathKind.CONSTANT), ZeroBase(LIN)), sampler)


def test_improper_sampler_rejected_or_raises():
    spec = _random_spec(stall_prob=0.3)
    ens = sample_ensemble(spec, 6, 200, 2)
    assert ens.meta["rejections"] > 0
    assert set(np.round(np.abs(ens.at([1.0])[:, 0]), 12)) == {1.0}
    with pytest.raises(ImproperSamplerError):
        sample_ensemble(_random_spec(stall_prob=1.0), 4, 1, 0)
    stuck = CoefficientSampler(lambda n, rng: CoefficientDraw((Scale(1), Scale(1)), (n, 0)), True)
    with pytest.raises(ImproperSamplerError):
        sample_ensemble(RecursionSpec(2, 1, (ZeroBase(LIN),), stuck), 3, 1, 0)


def test_depth_limit():
    spec = RecursionSpec(
        1, 2, (ZeroBase(LIN), IncrementBase(RADEMACHER, LIN)),
        CoefficientSampler(lambda n, rng: CoefficientDraw((Scale(1),), (n - 1,)), True),
        max_depth=5,
    )
    assert sample_ensemble(spec, 6, 3, 0).size == 3
    with pytest.raises(RecursionDivergenceError):
        sample_ensemble(spec, 7, 3, 0)


def test_threads_and_batching_do_not_change_samples():
    spec = donsker_spec()
    a = sample_ensemble(spec, 16, 5000, 9, threads=1)
    b = sample_ensemble(spec, 16, 5000, 9, threads=3)
    assert np.array_equal(a.grid, b.grid) and np.array_equal(a.values, b.values)
    head = sample_ensemble(spec, 16, 100, 9)
    assert np.array_equal(head.values, a.values[:100])
    r1 = sample_ensemble(_random_spec(0.2), 5, 3000, 1, threads=1)
    r3 = sample_ensemble(_random_spec(0.2), 5, 3000, 1, threads=3)
    assert np.array_equal(r1.values, r3.values)


def test_recursion_moments_match_walk_covariance():
    times = np.arange(1, 9) / 8
    X = sample_ensemble(donsker_spec(), 64, 20000, 5).at(times)
    assert np.max(np.abs(X.mean(0))) < 4 / math.sqrt(20000)
    C = np.cov(X.T, bias=True)
    assert np.max(np.abs(C - covariance_matrix(64, times))) < 0.04


def test_iterate_T_identity_and_zero():
    E = bm_grid_ensemble(500, 1, n=8)
    same = iterate_T(_const_map(Scale(1.0)), E, 300, 2)
    rows = {tuple(r) for r in E.values}
    assert all(tuple(r) in rows for r in same.at(E.grid))
    assert same.meta["generation"] == 1
    zero = iterate_T(_const_map(Scale(0.0), Scale(0.0)), E, 50, 3)
    assert np.all(zero.values == 0)
    with pytest.raises(ValueError):
        iterate_T(wiener_map(2.0), E, 0, 0)


def test_iterate_T_random_map():
    ops = (Scale(1.0), Scale(-1.0))
    fmap = FixedPointMap(1, lambda rng: ((ops[int(rng.random() < 0.5)],), None), False, "sign")
    E = Ensemble.from_paths([Path.linear([(0, 0), (1, 1)])])
    out = iterate_T(fmap, E, 2000, 4)
    ends = out.at([1.0])[:, 0]
    assert set(ends) == {-1.0, 1.0} and abs(ends.mean()) < 0.1
    assert np.array_equal(out.values, iterate_T(fmap, E, 2000, 4, threads=3).values)


def test_iterate_T_fresh_doubles_walks():
    # splitting a walk of length n in halves with beta = 2 gives a walk of length 2n
    out = iterate_T_fresh(wiener_map(2.0), WalkBase(1), 3, 20000, 6)
    X = out.at(np.arange(1, 9) / 8)
    assert np.allclose(np.round(X * math.sqrt(8)), X * math.sqrt(8), atol=1e-9)
    assert np.max(np.abs(np.cov(X.T, bias=True) - covariance_matrix(8, np.arange(1, 9) / 8))) < 0.04
    assert out.meta["generation"] == 3
    zero = iterate_T_fresh(wiener_map(3.0), ZeroBase(LIN), 2, 10, 0)
    assert np.all(zero.values == 0)
    base = iterate_T_fresh(wiener_map(2.0), WalkBase(4), 0, 10, 0)
    assert np.array_equal(base.grid, np.arange(5) / 4)


def test_accompanying_sequence_degenerate_cases():
    spec = donsker_spec()
    zero_fixed = Ensemble.from_paths([Path.linear([(0, 0), (1, 0)])])
    # n = 4: both halves have size 2 >= n0, so all inputs come from the fixed ensemble
    assert np.all(accompanying_ensemble(spec, zero_fixed, 4, 100, 1).values == 0)
    # n = 2: both halves have size 1 < n0, so Q_2 is X_2
    q2 = accompanying_ensemble(spec, zero_fixed, 2, 2000, 1).at([1.0])[:, 0]
    assert set(np.round(q2, 12)) == {round(-math.sqrt(2), 12), 0.0, round(math.sqrt(2), 12)}
    ident = Path.linear([(0, 0), (1, 1)])
    q = accompanying_sample(spec, Ensemble.from_paths([ident]), 4, 3)
    x = np.linspace(0, 1, 17)
    expect = np.where(x <= 0.5, 2 * x, 1) / math.sqrt(2) + np.where(x <= 0.5, 0, 2 * x - 1) / math.sqrt(2)
    assert np.allclose(eval_path(q, x), expect)
    with pytest.raises(ValueError):
        accompanying_sample(spec, zero_fixed, 1, 0)


def test_contraction_constants():
    assert contraction_constant(wiener_map(2.0), S3).L_exact == pytest.approx(2**-0.5, abs=1e-15)
    assert contraction_constant(wiener_map(2.0), MetricOrder(2)).L_exact == pytest.approx(1.0, abs=1e-15)
    assert contraction_constant(wiener_map(4.0), MetricOrder(2)).L_exact == pytest.approx(1.0, abs=1e-15)
    assert contraction_constant(spatial_map(), S3).L_exact == pytest.approx(2**-0.5, abs=1e-15)
    assert contraction_constant(_const_map(Scale(0.5)), MetricOrder(1)).L_exact == 0.5
    ops = (Scale(0.5), Scale(1.0))
    rnd = FixedPointMap(1, lambda rng: ((ops[int(rng.random() < 0.5)],), None), False)
    rep = contraction_constant(rnd, MetricOrder(1), mc_samples=4000, rng_seed=1)
    assert rep.L_exact is None and abs(rep.L_hat - 0.75) < 4 * rep.stderr + 1e-12


def test_rate_factor():
    spec = donsker_spec()
    R = RateFunction("power", 0.25)
    for n in (2, 4, 10, 1000):
        assert rate_factor(spec, S3, R, n) == pytest.approx(2**-0.25, abs=1e-12)
    assert rate_factor(spec, S3, RateFunction("power", 0.0), 8) == pytest.approx(2**-0.5, abs=1e-15)
    # odd n: halves of unequal size
    n = 9
    expect = (5 / 9) ** 1.5 * (5 / 9) ** -0.25 + (4 / 9) ** 1.5 * (4 / 9) ** -0.25
    assert rate_factor(spec, S3, R, n) == pytest.approx(expect, abs=1e-12)
    zero_ops = CoefficientSampler(lambda n, rng: CoefficientDraw((Scale(0.0), Scale(0.0)), (n - 1, n - 2)), True)
    zspec = RecursionSpec(2, 2, (ZeroBase(LIN), ZeroBase(LIN)), zero_ops)
    assert rate_factor(zspec, S3, R, 5) == 0
    with pytest.raises(ValueError):
        rate_factor(spec, S3, R, 1)
    with pytest.raises(ValueError):
        RateFunction("exp", 1.0)
    assert RateFunction("log_power", 1.0)(0) == RateFunction("log_power", 1.0)(1)
    trend = rate_trend(spec, S3, R, [16, 4, 64])
    assert [r[0] for r in trend.trend] == [4, 16, 64] and trend.Lstar_hat == pytest.approx(2**-0.25)


def test_split_scaling_matches_helpers():
    c = donsker_coefficients(4)
    assert c.operators == (scaled(math.sqrt(0.5), FrontSplit(2.0)), scaled(math.sqrt(0.5), BackSplit(2.0)))
