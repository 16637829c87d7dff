from fractions import Fraction

import numpy as np
import pytest

from shortc2 import maps as M
from shortc2 import numerics as nx
from shortc2.polynomial import Polynomial

HALF = Fraction(1, 2)


@pytest.fixture
def ctx():
    return nx.set_precision(256)


def _pt(ctx, z, w):
    return nx.point(ctx, z, w)


def _same(P, Q, tol):
    return nx.point_rel_err(P, Q) <= tol


def test_tau_apply_and_inverse(ctx):
    t = M.Tau(HALF)
    assert M.apply(t, _pt(ctx, 2, 4)) == _pt(ctx, 2, 1)
    assert M.apply_inverse(t, _pt(ctx, 2, 1)) == _pt(ctx, 2, 4)
    assert M.apply(M.TauInverse(HALF), _pt(ctx, 2, 1)) == _pt(ctx, 2, 4)


def test_tau_power_matches_repeated_tau(ctx):
    P = _pt(ctx, (1, 2), (-3, 0.5))
    for m in (-5, -4, 0, 3, 6):
        word = M.MapWord(tuple(M.Tau(HALF, 1 if m > 0 else -1) for _ in range(abs(m))))
        assert M.apply(M.Tau(HALF, m), P) == word.apply(P)


def test_model_examples(ctx):
    m = M.Model(HALF, 2, 2)
    assert M.apply(m, _pt(ctx, 0, 0)) == _pt(ctx, 0, 0)
    assert M.apply(m, _pt(ctx, 2, 0)) == _pt(ctx, 1, "1/2")
    assert M.apply_inverse(m, _pt(ctx, 1, "1/2")) == _pt(ctx, 2, 0)


def test_model_needs_nonzero_a():
    with pytest.raises(ValueError):
        M.Model(0, 2, 2)


def test_affine_scale_needs_positive_beta(ctx):
    with pytest.raises(ValueError):
        M.AffineScale(_pt(ctx, 0, 0), 0)


def _random_shear_word(rng, n):
    ctx = nx.set_precision(256)
    out = []
    for _ in range(n):
        coeffs = [ctx.mpc(complex(*rng.standard_normal(2)) / 2) for _ in range(int(rng.integers(1, 4)))]
        out.append(M.Shear(Polynomial(tuple(coeffs)), HALF))
    return M.MapWord(tuple(out))


def test_word_round_trip(ctx):
    rng = np.random.default_rng(1)
    word = _random_shear_word(rng, 6)
    tol = ctx.ldexp(1, 16 - ctx.prec)
    for _ in range(20):
        P = _pt(ctx, complex(*rng.standard_normal(2)) / 4, complex(*rng.standard_normal(2)) / 4)
        assert _same(word.apply_inverse(word.apply(P)), P, tol)
        assert _same(word.inverse().apply(word.apply(P)), P, tol)


def test_word_is_sequential_composition(ctx):
    rng = np.random.default_rng(2)
    word = _random_shear_word(rng, 4)
    P = _pt(ctx, "0.3", "-0.1")
    Q = P
    for m in reversed(word.factors):   # rightmost factor acts first
        Q = m.apply(Q)
    assert word.apply(P) == Q


def test_inverse_word_reverses_factors(ctx):
    w = M.MapWord((M.Tau(HALF), M.Model(HALF, 2, 2)))
    inv = w.inverse()
    assert inv.factors[-1] == M.Tau(HALF, -1)
    P = _pt(ctx, 2, 0)
    assert inv.factors[0].apply(M.Model(HALF, 2, 2).apply(P)) == P


def test_shear_differential_linear(ctx):
    s = M.Shear(Polynomial.identity(), HALF)
    J = M.differential(s, _pt(ctx, 3, -2))
    assert J.entries() == (1, 0.5, 0.5, 0)


def test_model_differential_at_origin(ctx):
    J = M.differential(M.Model(HALF, 2, 2), _pt(ctx, 0, 0))
    assert J.entries() == (0, 0.25, 0.25, 0)


def test_shear_word_determinant(ctx):
    rng = np.random.default_rng(3)
    word = _random_shear_word(rng, 5)
    P = _pt(ctx, "0.2", "0.7")
    det = M.differential(word, P).det()
    expected = (-ctx.mpf(0.25)) ** 5
    assert nx.rel_err(det, ctx.mpc(expected)) <= ctx.ldexp(1, 8 - ctx.prec)


def test_finite_difference_linear(ctx):
    s = M.Shear(Polynomial.identity(), HALF)
    dev = M.finite_difference_check(s, _pt(ctx, 1, 1), ctx.ldexp(1, -20))
    assert dev <= ctx.ldexp(1, 8 - ctx.prec)


def test_finite_difference_model(ctx):
    dev = M.finite_difference_check(M.Model(HALF, 3, 3), _pt(ctx, 1, 1), ctx.ldexp(1, -40))
    assert dev <= ctx.ldexp(1, -60)


def test_finite_difference_zero_step(ctx):
    with pytest.raises(ValueError):
        M.finite_difference_check(M.Tau(HALF), _pt(ctx, 1, 1), 0)


def test_flatten_expands_tau_powers():
    w = M.MapWord((M.Tau(HALF, 3), M.Shear(Polynomial.identity(), HALF)))
    flat = list(w.flatten())
    assert len(flat) == w.flat_length() == 4
    # application order: the shear acts first
    assert isinstance(flat[0], M.Shear)
    assert all(f == M.Tau(HALF) for f in flat[1:])


def test_flatten_keeps_negative_powers_whole():
    assert list(M.MapWord((M.Tau(HALF, -2),)).flatten()) == [M.Tau(HALF, -2)]


def test_shear_form_residual(ctx):
    P = _pt(ctx, "0.3", "0.4")
    s = M.Shear(Polynomial((0, 1, 2)), HALF)
    assert M.shear_form_residual(s, P, 0.9) <= ctx.ldexp(1, 8 - ctx.prec)
    assert M.shear_form_residual(M.Model(HALF, 2, 5), P, 0.9) <= ctx.ldexp(1, 8 - ctx.prec)
    assert M.shear_form_residual(M.Tau(HALF, 2), P, 0.9) == ctx.inf


def test_calH_is_a_shear(ctx):
    h = M.CalH(HALF, -3, 3)
    P = _pt(ctx, "0.3", "-0.2")
    assert _same(h.apply(P), h.as_shear().apply(P), ctx.ldexp(1, 8 - ctx.prec))


def test_json_round_trip(ctx):
    word = M.MapWord((M.Tau(HALF, 3), M.Model(HALF, 2, 6), M.CalH(HALF, -2, 3),
                      M.Translation(_pt(ctx, "0.25", 0)), M.AffineScale(_pt(ctx, 1, 0), Fraction(1, 4)),
                      M.Inverse(M.Shear(Polynomial((0, 1)), HALF))))
    back = M.MapWord.from_json(word.to_json(), ctx)
    P = _pt(ctx, "0.1", "0.2")
    assert _same(back.apply(P), word.apply(P), ctx.ldexp(1, 4 - ctx.prec))


def test_factor_from_json_errors_name_location(ctx):
    with pytest.raises(ValueError, match="bad"):
        M.factor_from_json({"kind": "nope"}, ctx, "bad")
