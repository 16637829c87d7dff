from fractions import Fraction

import numpy as np
import pytest

from shortc2 import numerics as nx
from shortc2 import shortbasin as sb
from shortc2.shortbasin import ModelSequence


@pytest.fixture
def ctx():
    return nx.set_precision(256)


D2 = ModelSequence((2,))


def test_sequence_validation():
    with pytest.raises(ValueError):
        ModelSequence((1,))
    with pytest.raises(ValueError):
        ModelSequence((3, 2), odd=True)
    with pytest.raises(ValueError):
        ModelSequence((2,), a=Fraction(3, 2))
    with pytest.raises(ValueError):
        ModelSequence(())


def test_extension_rules():
    assert ModelSequence((2, 3)).degree(5) == 3
    assert ModelSequence((2, 3), extend="cycle").degree(5) == 2
    with pytest.raises(IndexError):
        ModelSequence((2, 3), extend="none").degree(3)


def test_D_and_eta_monotone(ctx):
    seq = ModelSequence((2, 3), extend="cycle")
    Ds = [seq.D(k) for k in range(8)]
    assert Ds[:4] == [1, 2, 6, 12]
    assert all(x < y for x, y in zip(Ds, Ds[1:]))
    etas = [seq.eta(ctx, k) for k in range(1, 8)]
    assert all(x > y for x, y in zip(etas, etas[1:]))


def test_compose_model_examples(ctx):
    h1, h2, eta = sb.compose_model(D2, 0, nx.point(ctx, "0.3", "0.1"))
    assert (h1, h2, eta) == (ctx.mpc("0.3"), ctx.mpc("0.1"), 1)
    h1, h2, eta = sb.compose_model(D2, 1, nx.point(ctx, 2, 0))
    assert (h1, h2, eta) == (1, 0.5, 0.25)
    for k in (1, 5, 12):
        h1, h2, _ = sb.compose_model(ModelSequence((3, 2)), k, nx.point(ctx, 0, 0))
        assert h1 == 0 and h2 == 0


def test_psi_at_origin_is_minus_log_two(ctx):
    for k in (1, 2, 7, 20):
        assert abs(sb.potential(D2, k, nx.point(ctx, 0, 0)).psi_k + ctx.ln2) <= ctx.ldexp(1, -240)


def test_psi_tilde_one_at_origin(ctx):
    est = sb.potential(D2, 1, nx.point(ctx, 0, 0))
    assert abs(est.psi_tilde_k - (-ctx.ln2 / 2)) <= ctx.ldexp(1, -240)
    assert abs(float(est.psi_tilde_k) + 0.34657) < 1e-5


def test_tail_matches_closed_form(ctx):
    # d = (2, 2, ...): sum_{j > k} 2^-j = 2^-k
    for k in (1, 3, 6):
        assert abs(D2.tail(ctx, k) - ctx.ln2 * ctx.ldexp(1, -k)) <= ctx.ldexp(1, -240)


def test_psi_increment_bound_on_random_points(ctx):
    rng = np.random.default_rng(5)
    seq = ModelSequence((2, 3), extend="cycle")
    for P in sb.to_points(ctx, sb.ball_samples(rng, 200, 4.0)):
        prev = sb.potential(seq, 1, P).psi_k
        for k in range(1, 8):
            cur = sb.potential(seq, k + 1, P).psi_k
            assert cur <= prev + ctx.ln2 / seq.D(k + 1) + ctx.ldexp(1, -200)
            prev = cur


def test_classify_witnesses(ctx):
    c0 = sb.classify(D2, nx.point(ctx, 0, 0), 25)
    assert (c0.verdict, c0.k) == (sb.INSIDE, 1)
    c8 = sb.classify(D2, nx.point(ctx, 8, 0), 25)
    assert (c8.verdict, c8.k) == (sb.OUTSIDE, 1)
    assert (c8.h1, c8.h2) == (16, 2)


def test_classify_abstains_when_undecided(ctx):
    cert = sb.classify(D2, nx.point(ctx, 2, 0), 1)
    assert (cert.verdict, cert.k) == (sb.UNKNOWN, 1)


def test_classify_overflow_is_outside(ctx):
    cert = sb.classify(ModelSequence((9,)), nx.point(ctx, 10**6, 0), 25)
    assert cert.outside


def test_inside_certificate_means_negative_psi_tilde(ctx):
    rng = np.random.default_rng(6)
    for P in sb.to_points(ctx, sb.ball_samples(rng, 100, 6.0)):
        cert = sb.classify(D2, P, 25)
        if cert.inside:
            assert cert.psi_tilde < 0


def test_outside_orbit_keeps_growing(ctx):
    cert = sb.classify(D2, nx.point(ctx, 8, 0), 25)
    _, h1, _, _ = list(sb.orbit(D2, nx.point(ctx, 8, 0), 6))[-1]
    assert abs(h1) > abs(cert.h1) ** 2


def test_depth_beyond_declared_length(ctx):
    with pytest.raises(ValueError):
        sb.classify(ModelSequence((2, 2), extend="none"), nx.point(ctx, 0, 0), 3)


def test_kobayashi_example(ctx):
    q = sb.kobayashi_upper_bound(ModelSequence((2, 2)), nx.point(ctx, 0, 0), nx.point(ctx, 1, 0), 0, 2)
    bounds = dict(q.history)
    assert bounds[2] == Fraction(1, 64)
    assert q.zeta_k == nx.point(ctx, Fraction(1, 64), 0)


def test_kobayashi_zero_vector(ctx):
    with pytest.raises(ValueError):
        sb.kobayashi_upper_bound(D2, nx.point(ctx, 0, 0), nx.point(ctx, 0, 0), 0, 3)


def test_kobayashi_monotone_and_disk_inside_ball(ctx):
    p = nx.point(ctx, "0.3", "0.2")
    q = sb.kobayashi_upper_bound(D2, p, nx.point(ctx, 1, 1), 0, 8)
    values = [b for _, b in q.history]
    assert all(y < x for x, y in zip(values, values[1:]))
    assert sb.kobayashi_disk_check(q, 200) <= 1 + ctx.ldexp(1, -200)


@pytest.mark.parametrize("d,bound", [(2, 0.5), (5, 0.1)])
def test_ball_contraction(d, bound):
    seq = ModelSequence((d,))
    assert sb.ball_contraction_check(seq, 1, 2000, seed=1) <= bound


def test_ball_contraction_strict_on_boundary():
    assert sb.ball_contraction_check(D2, 3, 10_000, seed=2) < 1


def test_classification_csv_header_only():
    assert sb.classification_csv([]) == ",".join(sb.CSV_HEADER) + "\n"
