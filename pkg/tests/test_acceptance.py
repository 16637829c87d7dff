"""Acceptance criteria 1-11, one test each, at the stated tolerances (p = 256)."""

import json
from dataclasses import replace
from fractions import Fraction
from importlib import resources

import numpy as np
import pytest

from shortc2 import calibrated as cb
from shortc2 import cli
from shortc2 import equivalence as eq
from shortc2 import numerics as nx
from shortc2 import oscillation as osc
from shortc2 import render as rd
from shortc2.polynomial import Polynomial
from shortc2.shortbasin import (ModelSequence, ball_samples, classify, kobayashi_upper_bound,
                                orbit, potential, to_points)

P_BITS = 256
SEED = 20240917


@pytest.fixture(scope="module")
def ctx():
    return nx.set_precision(P_BITS)


def _data(name):
    return json.loads(resources.files("shortc2").joinpath("data", name).read_text())


SEQUENCES = {
    "(2,2,...)": ModelSequence((2,)),
    "(3,3,...)": ModelSequence((3,)),
    "(2,3,2,3,...)": ModelSequence((2, 3), extend="cycle"),
}


def test_criterion_01_potential_normalization(ctx, criterion):
    origin = nx.point(ctx, 0, 0)
    tol = ctx.ldexp(ctx.one, -200)
    worst = ctx.zero
    for seq in SEQUENCES.values():
        for k in range(1, 31):
            worst = max(worst, abs(potential(seq, k, origin).psi_k + ctx.ln2))
    ok = worst <= tol
    criterion(1, ok, f"max |psi_k(0) + log 2| over k <= 30, 3 sequences = {nx.real_to_str(worst, 4)} "
                     f"(tol 2^-200)")
    assert ok


@pytest.fixture(scope="module")
def phi_table(ctx):
    """``phi_k`` for ``k = 0..20`` on 10^4 seeded points with euclidean norm <= 10."""
    rng = np.random.default_rng(SEED)
    pts = to_points(ctx, ball_samples(rng, 10_000, 10.0))
    table = {}
    for name, seq in SEQUENCES.items():
        rows = []
        for P in pts:
            rows.append([max(abs(h1), abs(h2), eta) for _, h1, h2, eta in orbit(seq, P, 20)])
        table[name] = rows
    return table


def test_criterion_02_recursion_inequality(phi_table, criterion):
    violations = 0
    checks = 0
    for name, rows in phi_table.items():
        seq = SEQUENCES[name]
        for phis in rows:
            for k in range(0, 20):
                checks += 1
                if not phis[k + 1] <= 2 * phis[k] ** seq.degree(k + 1):
                    violations += 1
    ok = violations == 0
    criterion(2, ok, f"phi_(k+1) <= 2 phi_k^d_(k+1): {violations} violations in {checks} checks")
    assert ok


def test_criterion_03_monotone_certificate(ctx, phi_table, criterion):
    slack = ctx.ldexp(ctx.one, -100)
    violations = 0
    checks = 0
    for name, rows in phi_table.items():
        seq = SEQUENCES[name]
        tails = [None] + [seq.tail(ctx, k) for k in range(1, 21)]
        for phis in rows:
            prev = ctx.log(phis[1]) / seq.D(1) + tails[1]
            for k in range(1, 20):
                cur = ctx.log(phis[k + 1]) / seq.D(k + 1) + tails[k + 1]
                checks += 1
                if not cur <= prev + slack:
                    violations += 1
                prev = cur
    ok = violations == 0
    criterion(3, ok, f"psi~_(k+1) <= psi~_k + 2^-100: {violations} violations in {checks} checks")
    assert ok


def test_criterion_04_witness_classifications(ctx, criterion):
    seq = ModelSequence((2,))
    c0 = classify(seq, nx.point(ctx, 0, 0), 25)
    c8 = classify(seq, nx.point(ctx, 8, 0), 25)
    spec = rd.SliceSpec("z", (Fraction(0), Fraction(0)), Fraction(20), Fraction(20), 256, 256, seq, 25)
    out = rd.render(spec, P_BITS, 1)
    unknown = out.counts["Unknown"] / (256 * 256)
    ok = (c0.inside and c0.k <= 2 and c8.outside and c8.k <= 2 and unknown <= 0.05)
    criterion(4, ok, f"(0,0) -> {c0}, (8,0) -> {c8}, 256x256 slice Unknown = {100 * unknown:.2f}% "
                     f"(<= 5%)")
    assert ok


def test_criterion_05_kobayashi_decay(ctx, criterion):
    seq = ModelSequence((2,))
    q = kobayashi_upper_bound(seq, nx.point(ctx, 0, 0), nx.point(ctx, 1, 0), 0, 5)
    tol = ctx.ldexp(ctx.one, -100)
    prod = ctx.one
    worst = ctx.zero
    bounds = dict(q.history)
    for k in range(1, 6):
        prod *= seq.eta(ctx, k)
        worst = max(worst, nx.rel_err(bounds[k], prod))
    ok = worst <= tol and bounds[5] <= ctx.mpf("1e-6")
    criterion(5, ok, f"max rel err vs prod eta_j (k <= 5) = {nx.real_to_str(worst, 4)}; "
                     f"bound at k=5 = {nx.real_to_str(bounds[5], 4)}")
    assert ok


def test_criterion_06_telescoping(ctx, criterion):
    seq = ModelSequence((2,))
    H = eq.model_maps(seq, 5)
    sched = eq.epsilon_schedule(H, 5, seed=SEED)
    consts = eq.perturbation_constants(sched, Fraction(1, 10**9))
    pair = eq.SequencePair(H, eq.translated(H, consts)).check(seed=SEED)
    rng = np.random.default_rng(SEED)
    pts = [P for P in to_points(ctx, ball_samples(rng, 300, 1.5))
           if eq.orbit_entry(pair.G, P, 5) is not None][:100]
    assert len(pts) == 100
    nominal = ctx.mpf(10) ** -9
    worst_ratio, worst_disp = ctx.zero, ctx.zero
    within = all(c <= lv.epsilon for c, lv in zip(consts, sched.levels))
    for P in pts:
        tr = eq.build_conjugacy(pair, P, 5, sched)
        for step in tr.steps[1:]:
            bound = ctx.mpf(sched.M(step.n)) * ctx.mpf(sched.N(step.n)) * nominal
            worst_ratio = max(worst_ratio, step.increment / bound)
        worst_disp = max(worst_disp, tr.displacement())
    ok = within and worst_ratio <= 1 and worst_disp <= ctx.mpf(0.25)
    criterion(6, ok, f"max increment / (M N 1e-9) = {nx.real_to_str(worst_ratio, 4)}, "
                     f"max displacement = {nx.real_to_str(worst_disp, 4)} (<= 1/4), "
                     f"perturbation within schedule: {within}")
    assert ok


def test_criterion_07_factorization_identities(ctx, criterion):
    tol = ctx.ldexp(ctx.one, 16 - P_BITS)
    rng = np.random.default_rng(SEED)
    pts = to_points(ctx, ball_samples(rng, 1000))
    half = Fraction(1, 2)
    bilbo = ctx.zero
    for coeffs in (["0", "1"], ["0", "1", "1"], ["0", "1", "0", "3/10"]):
        res = osc.inverse_iterate_residuals(Polynomial.from_json(coeffs), half, 8, pts)
        bilbo = max([bilbo] + [max(t, h) for t, h in res.values()])
    gandalf = struct = det = ctx.zero
    probe = to_points(ctx, ball_samples(rng, 20))
    w2 = [complex(*rng.standard_normal(2)) for _ in probe]
    for name in ("toy_plan.json", "toy_plan_3.json"):
        plan = osc.OscillationPlan.from_json(_data(name), ctx)
        for data in plan.transitions:
            fact = osc.factor_transition(plan, data.k, data, 1000, SEED, ctx)
            gandalf = max(gandalf, fact.max_residual())
            struct = max(struct, osc.shear_structure_residual(fact.flat, probe, w2))
            det = max(det, osc.determinant_residual(fact.flat, probe, plan.a))
    ok = max(bilbo, gandalf, struct, det) <= tol
    criterion(7, ok, f"bilbo {nx.real_to_str(bilbo, 3)}, gandalf {nx.real_to_str(gandalf, 3)}, "
                     f"shear structure {nx.real_to_str(struct, 3)}, det + a^2 {nx.real_to_str(det, 3)} "
                     f"(tol 2^(16-p) = {nx.real_to_str(tol, 3)})")
    assert ok


def test_criterion_08_theta_recursion(ctx, criterion):
    rng = np.random.default_rng(SEED)
    ws = to_points(ctx, ball_samples(rng, 100))
    worst = ctx.zero
    for seq in (ModelSequence((2,)), ModelSequence((2, 3), extend="cycle")):
        G = osc.perturbed_models(seq, 12, seed=SEED, ctx=ctx)
        osc.eta_budget_check(G, seq, 12, seed=SEED, ctx=ctx)
        for family in ([seq.model_map(k) for k in range(1, 13)], G):
            for w in ws:
                worst = max(worst, osc.theta_recursion_check(family, seq, w, 12).max_ratio)
    ok = worst <= 3
    criterion(8, ok, f"max theta_(k+1) / theta_k^d_(k+1) over k <= 12, G in {{H, perturbed}} = "
                     f"{nx.real_to_str(worst, 5)} (<= 3)")
    assert ok


MUTATIONS = [
    ("even d", 2, {"d": 4}, "parity"),
    ("q too small", 2, {"q": 2}, "q-bound"),
    ("(f) violated", 2, {"q": 6}, "f"),
    ("degree bound violated", 1, {"N": 10}, "degree"),
]


def test_criterion_09_plan_validator(criterion):
    results = []
    plans = [osc.OscillationPlan.from_json(_data(n)) for n in ("toy_plan.json", "toy_plan_3.json")]
    fixtures_ok = all(not osc.validate_plan(p) for p in plans)
    base = plans[0]
    for label, stage, change, expected in MUTATIONS:
        stages = list(base.stages)
        stages[stage - 1] = replace(stages[stage - 1], **change)
        found = [v.condition for v in osc.validate_plan(replace(base, stages=tuple(stages)))]
        results.append((label, found, found == [expected]))
    ok = fixtures_ok and all(r[2] for r in results)
    detail = "; ".join(f"{label} -> {found}" for label, found, _ in results)
    criterion(9, ok, f"fixtures valid: {fixtures_ok}; {detail}")
    assert ok


def test_criterion_10_calibrated_basin(ctx, criterion):
    system = cb.AttractingSystem.from_json(_data("half_contraction.json"), ctx)
    n = cb.choose_iterates(system, 12, ctx)
    iterates_ok = n[0] == 1 and all(n[j] == j * (j + 1) for j in range(1, 11))
    fixed = replace(system, n=[1, 4])
    G1 = cb.appendix_potential(fixed, nx.point(ctx, "0.1", 0), 1)
    rng = np.random.default_rng(SEED)
    samples = to_points(ctx, ball_samples(rng, 50, 1.0))
    deepest = max(cb.appendix_potential(system, P, 12) for P in samples)
    ok = iterates_ok and abs(G1 + ctx.mpf("2.0806")) <= ctx.mpf("1e-3") and deepest <= ctx.mpf("-0.9")
    criterion(10, ok, f"n = {n[:11]}; G_1((0.1,0)) = {nx.real_to_str(G1, 6)}; "
                      f"max G_12 over 50 in-basin samples = {nx.real_to_str(deepest, 5)}")
    assert ok


def test_criterion_11_determinism(ctx, criterion, tmp_path):
    spec = rd.SliceSpec("z", (Fraction(0), Fraction(0)), Fraction(20), Fraction(20), 24, 24,
                        ModelSequence((2,)), 25)
    outs = [rd.render(spec, P_BITS, w) for w in (1, 4, 64)]
    render_ok = all(o.ppm == outs[0].ppm and o.csv == outs[0].csv for o in outs)
    cfg = {"f": ["0", "1", "1"], "j_max": 3, "samples": 50}
    theta_cfg = {"seq": {"d": [2]}, "k_max": 6, "samples": 20}
    reports = []
    for target, c in (("bilbo", cfg), ("theta", theta_cfg)):
        a = cli.run_verify(target, c, str(tmp_path), ctx, 99)[1]
        b = cli.run_verify(target, c, str(tmp_path), nx.set_precision(P_BITS), 99)[1]
        reports.append(json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True))
    ok = render_ok and all(reports)
    criterion(11, ok, f"render identical across 1/4/64 workers: {render_ok}; "
                      f"verify reports identical for equal seeds: {all(reports)}")
    assert ok
