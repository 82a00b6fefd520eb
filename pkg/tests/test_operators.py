import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contraction_mc.operators import (
    BackSplit,
    CoefficientDraw,
    Compose,
    FrontSplit,
    Scale,
    Sum,
    apply,
    donsker_coefficients,
    from_dict,
    norm_is_exact,
    op_norm,
    scaled,
    to_dict,
)
from contraction_mc.paths import Path, PathKind, affine_combine, eval_path, sup_norm

PL = Path.linear
IDENT = PL([(0, 0), (1, 1)])


@st.composite
def paths(draw, kind=PathKind.LINEAR):
    k = draw(st.integers(2, 6))
    inner = draw(st.lists(st.floats(0.02, 0.98), min_size=k - 2, max_size=k - 2, unique=True))
    t = [0.0] + sorted(inner) + [1.0]
    v = draw(st.lists(st.floats(-4, 4), min_size=k, max_size=k))
    return Path(kind, t, v)


betas = st.floats(1.05, 8.0)


@st.composite
def operators(draw, depth=2):
    leaf = st.one_of(
        st.floats(-3, 3).map(Scale),
        betas.map(FrontSplit),
        betas.map(BackSplit),
    )
    if depth == 0:
        return draw(leaf)
    choice = draw(st.integers(0, 2))
    if choice == 0:
        return draw(leaf)
    a, b = draw(operators(depth - 1)), draw(operators(depth - 1))
    return Compose(a, b) if choice == 1 else Sum(a, b)


def test_split_examples():
    assert apply(FrontSplit(2), IDENT) == PL([(0, 0), (0.5, 1), (1, 1)])
    assert apply(BackSplit(2), IDENT) == PL([(0, 0), (0.5, 0), (1, 1)])
    f = PL([(0, 0.3), (0.2, -1), (1, 2)])
    assert apply(Scale(1), f) == f


def test_split_definition_pointwise():
    f = PL([(0, 0.5), (0.3, -1), (0.8, 2), (1, 1)])
    x = np.linspace(0, 1, 301)
    for beta in (1.5, 2.0, 3.0):
        phi = eval_path(apply(FrontSplit(beta), f), x)
        psi = eval_path(apply(BackSplit(beta), f), x)
        expect_phi = np.where(x <= 1 / beta, eval_path(f, np.minimum(beta * x, 1)), f(1))
        arg = np.clip((beta * x - 1) / (beta - 1), 0, 1)
        expect_psi = np.where(x <= 1 / beta, f(0), eval_path(f, arg))
        assert np.allclose(phi, expect_phi, atol=1e-12)
        assert np.allclose(psi, expect_psi, atol=1e-12)


def test_split_constant_paths_keep_kind():
    f = Path.constant([0, 0.5, 1], [1, -2], end_value=3)
    g = apply(FrontSplit(2), f)
    assert g.kind is PathKind.CONSTANT
    assert g(0.2) == 1 and g(0.25) == -2 and g(0.3) == -2 and g(0.6) == 3 and g(1) == 3
    h = apply(BackSplit(2), f)
    assert h(0.2) == 1 and h(0.75) == -2 and h(1) == 3


def test_split_requires_beta_above_one():
    for b in (1.0, 0.5, -2):
        with pytest.raises(ValueError):
            FrontSplit(b)
        with pytest.raises(ValueError):
            BackSplit(b)


def test_norm_examples():
    assert op_norm(FrontSplit(3.7)) == 1
    assert op_norm(BackSplit(1.1)) == 1
    assert op_norm(Scale(-0.5)) == 0.5
    assert op_norm(Compose(Scale(2), FrontSplit(3))) == 2
    assert norm_is_exact(Compose(Scale(2), FrontSplit(3)))
    assert not norm_is_exact(Sum(FrontSplit(2), BackSplit(2)))


@settings(max_examples=100, deadline=None)
@given(paths(), betas)
def test_splits_preserve_sup_norm(f, beta):
    assert sup_norm(apply(FrontSplit(beta), f)) == sup_norm(f)
    assert sup_norm(apply(BackSplit(beta), f)) == sup_norm(f)


@settings(max_examples=100, deadline=None)
@given(operators(), paths(), paths(), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(op, f, g, a, b):
    lhs = apply(op, affine_combine([a, b], [f, g]))
    rhs = affine_combine([a, b], [apply(op, f), apply(op, g)])
    x = np.random.default_rng(0).random(100)
    assert np.allclose(eval_path(lhs, x), eval_path(rhs, x), atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(operators(), paths())
def test_norm_bounds_unit_ball_probes(op, f):
    n = sup_norm(f)
    if n == 0:
        return
    unit = affine_combine([1 / n], [f])
    assert sup_norm(apply(op, unit)) <= op_norm(op) + 1e-10


@settings(max_examples=100, deadline=None)
@given(paths(), paths(), betas)
def test_glue_value_at_cut(f, g, beta):
    f0 = affine_combine([1.0, -1.0], [f, PL([(0, f(0)), (1, f(0))])])  # f0(0) = 0
    g0 = affine_combine([1.0, -1.0], [g, PL([(0, g(0)), (1, g(0))])])
    h = affine_combine([1, 1], [apply(FrontSplit(beta), f0), apply(BackSplit(beta), g0)])
    c = 1 / beta
    assert h(c) == pytest.approx(f0(1) + g0(0), abs=1e-12)
    # the front part ends at f0(1) and the back part starts at g0(0) = 0
    assert apply(FrontSplit(beta), f0)(c) == pytest.approx(f0(1), abs=1e-12)
    assert apply(BackSplit(beta), g0)(c) == pytest.approx(0, abs=1e-12)


def test_json_roundtrip():
    op = Sum(Compose(Scale(0.5), FrontSplit(2)), Compose(Scale(-1), BackSplit(3)))
    d = to_dict(op)
    assert d["kind"] == "sum" and len(d["children"]) == 2
    assert from_dict(d) == op
    with pytest.raises(ValueError):
        from_dict({"kind": "rotate"})


def test_donsker_coefficients_examples():
    c = donsker_coefficients(2)
    assert c.indices == (1, 1) and c.shift is None
    assert c.operators[0] == scaled(math.sqrt(0.5), FrontSplit(2.0))
    assert c.operators[1] == scaled(math.sqrt(0.5), BackSplit(2.0))
    c = donsker_coefficients(3)
    assert c.indices == (2, 1)
    assert c.operators[0] == scaled(math.sqrt(2 / 3), FrontSplit(1.5))
    assert c.operators[1] == scaled(math.sqrt(1 / 3), BackSplit(1.5))
    for n in range(2, 40):
        c = donsker_coefficients(n)
        hi, lo = c.indices
        assert [op_norm(o) for o in c.operators] == pytest.approx([math.sqrt(hi / n), math.sqrt(lo / n)])
    with pytest.raises(ValueError):
        donsker_coefficients(1)


def test_coefficient_draw_validation():
    with pytest.raises(ValueError):
        CoefficientDraw((Scale(1),), (1, 2))
    with pytest.raises(ValueError):
        CoefficientDraw((Scale(1),), (-1,))
    assert CoefficientDraw((Scale(1), Scale(2)), (0, 1)).K == 2
