import json
from dataclasses import replace
from fractions import Fraction
from importlib import resources

import numpy as np
import pytest

from shortc2 import maps as M
from shortc2 import numerics as nx
from shortc2 import oscillation as osc
from shortc2.polynomial import Polynomial
from shortc2.shortbasin import ModelSequence, ball_samples, to_points

HALF = Fraction(1, 2)
Z = Polynomial.identity()


@pytest.fixture
def ctx():
    return nx.set_precision(256)


def _tol(ctx):
    return ctx.ldexp(ctx.one, 16 - ctx.prec)


def _plan(name="toy_plan.json", ctx=None):
    data = json.loads(resources.files("shortc2").joinpath("data", name).read_text())
    return osc.OscillationPlan.from_json(data, ctx)


def _simple_plan(ds, qs=None):
    stages, n = [], 0
    for k, d in enumerate(ds, 1):
        q = qs[k - 1] if qs else 3
        stages.append(osc.Stage(d, n + 1, n + 2, q, Fraction(10**k), 1))
        n += 2
    return osc.OscillationPlan(tuple(stages))


def _conditions(plan):
    return [v.condition for v in osc.validate_plan(plan)]


# -- validation ---------------------------------------------------------------

def test_fixture_plans_are_valid():
    assert osc.validate_plan(_plan()) == []
    assert osc.validate_plan(_plan("toy_plan_3.json")) == []


def test_odd_product_has_no_parity_violation():
    assert "parity" not in _conditions(_simple_plan((3, 3)))


def test_even_product_is_a_parity_violation():
    found = osc.validate_plan(_simple_plan((2, 3)))
    assert any(v.condition == "parity" and "product must be odd" in v.message for v in found)


def test_condition_f_arithmetic():
    # q_1 = 3: |log beta| = 6 log 2 = 4.159 > 3 but <= 5
    assert "f" in _conditions(_simple_plan((3,), (3,)))
    assert "f" not in _conditions(_simple_plan((5,), (3,)))


def test_condition_e_needs_small_beta():
    assert "e" in _conditions(_simple_plan((5,), (0,)))


def test_a_must_be_one_half():
    assert "a" in _conditions(replace(_plan(), a=Fraction(1, 3)))


def test_beta_schedule():
    plan = _plan()
    st1, st2 = plan.stage(1), plan.stage(2)
    assert plan.beta(st1.n) == Fraction(1, 4**st1.q)
    assert plan.beta(st1.N) == Fraction(1, 2)
    assert plan.beta(st2.n - 1) == Fraction(1, 2)
    with pytest.raises(ValueError):
        plan.beta(st2.N + 1)


def test_plan_json_round_trip():
    plan = _plan()
    assert osc.OscillationPlan.from_json(plan.to_json()).stages == plan.stages


def test_plan_json_errors_name_the_stage():
    with pytest.raises(ValueError, match="stage 1"):
        osc.OscillationPlan.from_json({"stages": [{"d": 3}]})


# -- inverse iterates ------------------------------------------------------------

def test_inverse_iterate_hand_trace(ctx):
    word = osc.factor_inverse_iterate(Z, HALF, 1)
    assert word.apply(nx.point(ctx, 1, 0)) == nx.point(ctx, 0, 2)
    assert len(word.factors) == 4
    assert word.factors[-1] == M.Tau(HALF, -4)


@pytest.mark.parametrize("coeffs", [(0, 1), (0, 1, 1), (0, 1, 0, Fraction(3, 10))])
def test_inverse_iterates_match_closed_form(ctx, coeffs):
    f = Polynomial(coeffs)
    pts = to_points(ctx, ball_samples(np.random.default_rng(1), 40))
    res = osc.inverse_iterate_residuals(f, HALF, 5, pts)
    assert max(max(r) for r in res.values()) <= _tol(ctx)
    F = osc.henon(f, HALF)
    for P in pts[:5]:
        Q = P
        for _ in range(3):
            Q = F.apply(Q)
        assert nx.point_rel_err(osc.factor_inverse_iterate(f, HALF, 3, "hat").apply(Q), P) <= _tol(ctx)


def test_commutation_relations(ctx):
    pts = to_points(ctx, ball_samples(np.random.default_rng(2), 20))
    for j in (1, 3):
        r1, r2 = osc.commutation_residuals(Polynomial((0, 1, 1)), HALF, j, pts)
        assert r1 <= _tol(ctx) and r2 <= _tol(ctx)


# -- model split and affine factors -------------------------------------------------

def test_model_split_example(ctx):
    word = osc.factor_model_split(ModelSequence((3,)), 0, ctx=ctx)
    H1 = M.Model(HALF, 3, 3)
    P = nx.point(ctx, 1, 1)
    assert nx.point_rel_err(word.apply(P), H1.apply(P)) <= _tol(ctx)
    assert word.factors[1] == M.Tau(HALF, 2)
    assert word.apply(nx.point(ctx, 0, 0)) == nx.point(ctx, 0, 0)


def test_model_split_even_product():
    with pytest.raises(osc.PlanError, match="product must be odd"):
        osc.factor_model_split(ModelSequence((3, 2)), 1)


def test_affine_centered_case(ctx):
    plan = _plan(ctx=ctx)
    q = plan.stage(1).q
    origin = nx.point(ctx, 0, 0)
    _, phi_inv = osc.affine_words(HALF, origin, plan.stage(2).q, origin, q)
    tau, R2, R1 = phi_inv.factors
    assert tau == M.Tau(HALF, -2 * (q + 1))
    assert R1.phi(ctx.mpc(0)) == 0 and R2.phi(ctx.mpc(0)) == 0


def test_inverse_scaling_needs_q_plus_one(ctx):
    """The inverse of ``Phi_n(z) = P + beta z`` with ``beta = a^(2q)`` is not
    ``tau^(-2(q-1)) o R2 o R1``: the shears ``R_i`` contribute a factor
    ``a^2`` that must be undone, giving ``tau^(-2(q+1))``."""
    q = 3
    P_n = nx.point(ctx, "0.4", "0.1")
    direct = M.Inverse(M.AffineScale(P_n, HALF ** (2 * q)))
    _, good = osc.affine_words(HALF, P_n, 3, P_n, q)
    bad = M.MapWord((M.Tau(HALF, -2 * (q - 1)),) + good.factors[1:])
    X = nx.point(ctx, "0.3", "-0.2")
    assert nx.point_rel_err(good.apply(X), direct.apply(X)) <= _tol(ctx)
    assert nx.point_rel_err(bad.apply(X), direct.apply(X)) > 0.5


def test_factor_affine_random_center(ctx):
    plan = _plan(ctx=ctx)
    phi_ell, phi_inv = osc.factor_affine(plan, 1, nx.point(ctx, "0.3", "-0.7"),
                                         nx.point(ctx, "1.5", "0.25"), samples=10)
    assert len(phi_ell.factors) == 3 and len(phi_inv.factors) == 3


def test_even_power_index():
    assert osc.even_power_index(Fraction(1, 64), HALF) == 3
    with pytest.raises(osc.PlanError):
        osc.even_power_index(Fraction(1, 8), HALF)


# -- transitions -------------------------------------------------------------------

def test_transition_toy_plan_k0(ctx):
    plan = _plan(ctx=ctx)
    data = plan.transitions[0]
    fact = osc.factor_transition(plan, 0, data, 10, 1, ctx)
    tol = _tol(ctx)
    assert fact.max_residual() <= tol
    assert fact.max_residual("conjugated_residual") <= tol
    rng = np.random.default_rng(3)
    probe = to_points(ctx, ball_samples(rng, 10))
    w2 = [complex(*rng.standard_normal(2)) for _ in probe]
    assert osc.shear_structure_residual(fact.flat, probe, w2) <= tol
    assert osc.determinant_residual(fact.flat, probe, HALF) <= tol
    assert osc.threading_residual(fact) <= tol
    assert osc.theta_endpoints_residual(fact) == (0, 0)
    assert fact.length == fact.word.flat_length()


def test_transition_residual_detects_a_wrong_factor(ctx):
    plan = _plan(ctx=ctx)
    data = plan.transitions[1]
    fact = osc.factor_transition(plan, 1, data, 5, 1, ctx)
    flat = list(fact.flat)
    i = next(i for i, m in enumerate(flat) if isinstance(m, M.Shear))
    flat[i] = M.Shear(flat[i].phi.add_constant(Fraction(1, 10**6)), HALF)
    wrong = M.MapWord(tuple(reversed(flat)))
    P = fact.report[0]["point"]
    assert nx.point_rel_err(wrong.apply(P), fact.target.apply(P)) > ctx.ldexp(1, -40)


def test_transition_parity_broken(ctx):
    plan = _plan(ctx=ctx)
    stages = list(plan.stages)
    stages[1] = replace(stages[1], d=4)
    broken = replace(plan, stages=tuple(stages))
    with pytest.raises(osc.PlanError, match="product must be odd"):
        osc.factor_transition(broken, 1, plan.transitions[1], 2, 0, ctx)


def test_transition_json(ctx):
    plan = _plan(ctx=ctx)
    fact = osc.factor_transition(plan, 0, plan.transitions[0], 2, 0, ctx)
    doc = json.loads(json.dumps(fact.to_json()))
    assert doc["length"] == fact.length and len(doc["verification"]) == 2


# -- potentials and theta ---------------------------------------------------------------

def _wandering_orbit(plan, ctx, P0):
    F = osc.henon(Z, HALF)
    forward, points = {}, {}
    for k in range(1, plan.K + 1):
        n = plan.stage(k).n
        forward[k] = M.MapWord(tuple(F for _ in range(n)))
        points[k] = forward[k].apply(P0)
    return osc.WanderingOrbit(forward, points)


def test_wandering_potential_on_orbit(ctx):
    plan = _plan(ctx=ctx)
    P0 = nx.point(ctx, "0.2", "0.1")
    orbit = _wandering_orbit(plan, ctx, P0)
    for k in (1, 2):
        value = osc.wandering_potential(plan, orbit, P0, k)
        expected = ctx.log(plan.beta_nk(ctx, k)) / plan.D(k) - ctx.ln2
        assert abs(value - expected) <= ctx.ldexp(1, -200)


def test_wandering_potential_far_from_orbit(ctx):
    plan = _plan(ctx=ctx)
    orbit = _wandering_orbit(plan, ctx, nx.point(ctx, "0.2", "0.1"))
    far = nx.point(ctx, 50, 50)
    for k in (1, 2):
        assert osc.wandering_potential(plan, orbit, far, k) >= ctx.log(plan.beta_nk(ctx, k)) / plan.D(k)


def test_theta_at_origin_is_exact(ctx):
    seq = ModelSequence((2, 3), extend="cycle")
    G = [seq.model_map(k) for k in range(1, 9)]
    rep = osc.theta_recursion_check(G, seq, nx.point(ctx, 0, 0), 8)
    assert rep.max_ratio == 1
    assert rep.thetas[3] == seq.eta(ctx, 3)


def test_theta_random_w_and_perturbed(ctx):
    seq = ModelSequence((2,))
    rng = np.random.default_rng(4)
    ws = to_points(ctx, ball_samples(rng, 20))
    G = osc.perturbed_models(seq, 8, seed=4, ctx=ctx)
    osc.eta_budget_check(G, seq, 8, samples=50, ctx=ctx)
    H = [seq.model_map(k) for k in range(1, 9)]
    for w in ws:
        assert osc.theta_recursion_check(H, seq, w, 8).max_ratio <= 3
        assert osc.theta_recursion_check(G, seq, w, 8).max_ratio <= 3


def test_eta_budget_violation(ctx):
    seq = ModelSequence((2,))
    G = osc.perturbed_models(seq, 3, fraction=Fraction(3), ctx=ctx)
    with pytest.raises(osc.PlanError):
        osc.eta_budget_check(G, seq, 3, samples=10, ctx=ctx)
