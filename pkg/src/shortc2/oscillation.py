"""Oscillation plans and the shear factorization of the transition maps.

An oscillation plan fixes, per stage ``k``, the degree ``d_k``, orbit indices
``n_k <= N_k``, the radius exponent ``q_k`` (``beta_{n_k} = a**(2 q_k)``), the
cylinder radius ``R_k`` and the detour index ``ell_k`` used by the transition
to stage ``k+1``.  Stage 0 is implicit: ``n_0 = N_0 = q_0 = 0``, ``R_0 = 1``,
``beta_0 = 1``; its detour index is the plan's ``ell0``.

The transition built at stage ``k`` is

    T = F^-ell o Phi_ell o H_{k+1} o Phi_{n_k}^-1 o F^(n_k - N_k)

with ``F(z, w) = (f(z) + a w, a z)``, ``Phi_ell = Q_ell + s (z, w)`` and
``Phi_{n_k} = P_{n_k} + beta (z, w)``.  Writing ``tau(z, w) = (a w, a z)``,
``j = N_k - n_k`` and ``m = j + 1``, T equals the word (rightmost first)

    tau o L~_1 o ... o L~_ell o tau^(2(q_{k+1} - ell - 2) + 1) o S2 o S1 o calH
      o tau^(D_{k+1} - 5 - 2(j + q_k)) o R~2 o R~1 o tau o L^_j o ... o L^_1 o tau

where every factor has the shear form ``(phi(z) + a w, a z)``.  Note the
``-5``: it comes from ``Phi_{n_k}^-1 = tau^(-2(q_k + 1)) o R2 o R1`` (the
two ``R`` shears contribute ``a**2``), which also sets the degree bound
``D_{k+1} >= 2(N_k - n_k + q_k) + 5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import numerics as nx
from .maps import (AffineScale, CalH, ConjugatedShear, ElementaryMap, Inverse, MapWord,
                   Model, Shear, Tau, Translation, as_word, shear_form_residual)
from .numerics import BigComplexPoint
from .polynomial import Polynomial
from .shortbasin import ModelSequence, ball_samples, sphere_samples, to_points

HALF = Fraction(1, 2)


class PlanError(ValueError):
    """A plan or transition request is inconsistent; ``violations`` lists why."""

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    d: int
    n: int
    N: int
    q: int
    R: Fraction
    ell: int = 1

    def to_json(self) -> dict:
        R = self.R
        return {"d": self.d, "n": self.n, "N": self.N, "q": self.q,
                "R": str(R.numerator) if R.denominator == 1 else f"{R.numerator}/{R.denominator}",
                "ell": self.ell}


@dataclass(frozen=True)
class Violation:
    condition: str
    stage: int
    message: str

    def __str__(self):
        return f"[{self.condition}] stage {self.stage}: {self.message}"

    def to_json(self) -> dict:
        return {"condition": self.condition, "stage": self.stage, "message": self.message}


@dataclass(frozen=True)
class OscillationPlan:
    """Stages ``1..K`` of an oscillation plan (stage 0 is implicit)."""

    stages: tuple
    a: Fraction = HALF
    ell0: int = 1
    transitions: tuple = ()

    @property
    def K(self) -> int:
        return len(self.stages)

    def stage(self, k: int) -> Stage:
        if k == 0:
            return Stage(1, 0, 0, 0, Fraction(1), self.ell0)
        return self.stages[k - 1]

    def D(self, k: int) -> int:
        out = 1
        for i in range(1, k + 1):
            out *= self.stages[i - 1].d
        return out

    def ell(self, k: int) -> int:
        return self.stage(k).ell

    def beta_nk(self, ctx, k: int):
        """``beta_{n_k} = a**(2 q_k)``."""
        return nx.rational_power(ctx, self.a, 2 * self.stage(k).q)

    def beta(self, n: int) -> Fraction:
        """Condition (e) radii ``beta_n`` (exact)."""
        if n == 0:
            return Fraction(1)
        for k in range(1, self.K + 1):
            st, prev = self.stage(k), self.stage(k - 1)
            if prev.N < n < st.n:
                return Fraction(1, k)
            if n == st.n:
                return self.a ** (2 * st.q)
            if st.n < n <= st.N:
                return Fraction(1, k + 1)
        raise ValueError(f"index {n} lies beyond N_K = {self.stage(self.K).N}")

    def model_sequence(self) -> ModelSequence:
        return ModelSequence(tuple(s.d for s in self.stages), self.a, "none")

    def to_json(self) -> dict:
        a = self.a
        out = {"a": f"{a.numerator}/{a.denominator}", "ell0": self.ell0,
               "stages": [s.to_json() for s in self.stages]}
        if self.transitions:
            out["transitions"] = [t.to_json() for t in self.transitions]
        return out

    @classmethod
    def from_json(cls, data, ctx=None) -> OscillationPlan:
        if not isinstance(data, dict):
            raise ValueError("plan must be a JSON object")
        if "stages" not in data or not isinstance(data["stages"], list):
            raise ValueError("plan: missing 'stages' array")
        stages = []
        for i, rec in enumerate(data["stages"], 1):
            if not isinstance(rec, dict):
                raise ValueError(f"plan: stage {i} must be an object")
            try:
                stages.append(Stage(int(rec["d"]), int(rec["n"]), int(rec["N"]), int(rec["q"]),
                                    nx.to_fraction(rec.get("R", 1)), int(rec.get("ell", 1))))
            except KeyError as exc:
                raise ValueError(f"plan: stage {i} missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise ValueError(f"plan: stage {i}: {exc}") from None
        trans = tuple(TransitionData.from_json(t, ctx, i)
                      for i, t in enumerate(data.get("transitions", [])))
        return cls(tuple(stages), nx.to_fraction(data.get("a", "1/2")),
                   int(data.get("ell0", 1)), trans)


def validate_plan(plan: OscillationPlan) -> list:
    """Every violated plan condition, each naming the condition and stage.

    Conditions: ``a`` (a = 1/2), ``e`` (beta_{n_k} = a**(2q_k) < 1/(k+1)),
    ``f`` (k |log beta_{n_k}| <= D_k), ``parity`` (d_k odd so every D_k is
    odd), ``d-min`` (d_k >= 3), ``degree`` (D_{k+1} >= 2(N_k - n_k + q_k) + 5),
    ``q-bound`` (q_{k+1} >= ell_k + 2) and ``monotone`` (orders of n, N, R).
    """
    out = []
    a = plan.a
    if a != HALF:
        out.append(Violation("a", 0, f"a must be 1/2, got {a}"))
    if not 0 < a < 1:
        return out
    log_inv_a = -math.log(a.numerator / a.denominator)
    for k in range(1, plan.K + 1):
        st, prev = plan.stage(k), plan.stage(k - 1)
        if st.d % 2 == 0:
            out.append(Violation("parity", k, f"d_{k} = {st.d} is even: product must be odd"))
        elif st.d < 3:
            out.append(Violation("d-min", k, f"d_{k} = {st.d} < 3"))
        if st.q < 1 or not a ** (2 * st.q) < Fraction(1, k + 1):
            out.append(Violation("e", k, f"beta_(n_{k}) = a^(2*{st.q}) is not below 1/{k + 1}"))
        # floats are enough: k * 2q * log 2 is never an integer, so no ties
        lhs = k * 2 * st.q * log_inv_a
        if lhs > plan.D(k):
            out.append(Violation("f", k, f"k|log beta| = {lhs:.6g} exceeds D_{k} = {plan.D(k)}"))
        if not prev.N <= st.n <= st.N:
            out.append(Violation("monotone", k, f"need N_{k - 1} <= n_{k} <= N_{k}, got "
                                                f"{prev.N}, {st.n}, {st.N}"))
        if k > 1 and not (st.n > prev.n and st.N > prev.N):
            out.append(Violation("monotone", k, "n_k and N_k must increase strictly"))
        if k == 1 and st.N <= 0:
            out.append(Violation("monotone", k, "N_1 must be positive"))
        if not st.R > prev.R:
            out.append(Violation("monotone", k, f"R_{k} = {st.R} must exceed R_{k - 1} = {prev.R}"))
        need = prev.ell + 2
        if st.q < need:
            out.append(Violation("q-bound", k, f"q_{k} = {st.q} < ell_{k - 1} + 2 = {need}"))
        bound = 2 * (prev.N - prev.n + prev.q) + 5
        if plan.D(k) < bound:
            out.append(Violation("degree", k, f"D_{k} = {plan.D(k)} < 2(N-n+q)+5 = {bound} "
                                              f"(degree bound of the transition from stage {k - 1})"))
    return out


# ---------------------------------------------------------------------------
# inverse iterates
# ---------------------------------------------------------------------------

def henon(f: Polynomial, a) -> Shear:
    """``F(z, w) = (f(z) + a w, a z)``."""
    return Shear(f, a)


def lambda_tilde(f: Polynomial, a, i: int) -> Shear:
    """``(z, w) -> (-f(a**(2i) z) / a**(2i) + a w, a z)``."""
    s = Fraction(a) ** (2 * i)
    return Shear(f.compose_scale(s).scale(-1 / s), a)


def lambda_hat(f: Polynomial, a, i: int) -> Shear:
    """``(z, w) -> (-a**(2i) f(z / a**(2i)) + a w, a z)``."""
    s = Fraction(a) ** (2 * i)
    return Shear(f.compose_scale(1 / s).scale(-s), a)


def lambda_map(f: Polynomial, a) -> Shear:
    return Shear(-f, a)


def factor_inverse_iterate(f: Polynomial, a, j: int, form: str = "tilde") -> MapWord:
    """``F**-j`` as a word of tau powers and shears.

    ``form="tilde"``: ``tau o L~_1 o ... o L~_j o tau o tau^(-2(j+1))``;
    ``form="hat"``:   ``tau^(-2(j+1)) o tau o L^_j o ... o L^_1 o tau``.
    """
    if j < 1:
        raise ValueError("j must be at least 1")
    a = Fraction(a)
    if form == "tilde":
        return MapWord((Tau(a, 1),) + tuple(lambda_tilde(f, a, i) for i in range(1, j + 1))
                       + (Tau(a, 1), Tau(a, -2 * (j + 1))))
    if form == "hat":
        return MapWord((Tau(a, -2 * (j + 1)), Tau(a, 1))
                       + tuple(lambda_hat(f, a, i) for i in range(j, 0, -1)) + (Tau(a, 1),))
    raise ValueError(f"unknown form {form!r}")


def inverse_iterate_residuals(f: Polynomial, a, j_max: int, points: Sequence[BigComplexPoint]):
    """Max relative residual per ``j`` of both factorizations against ``F**-j``.

    Returns ``{j: (tilde_residual, hat_residual)}``.  ``F**-j`` is computed
    by iterating the closed-form inverse of ``F``.
    """
    F = henon(f, a)
    words = {j: (factor_inverse_iterate(f, a, j, "tilde"), factor_inverse_iterate(f, a, j, "hat"))
             for j in range(1, j_max + 1)}
    ctx = points[0].ctx
    worst = {j: [ctx.zero, ctx.zero] for j in words}
    for P in points:
        Q = P
        for j in range(1, j_max + 1):
            Q = F.apply_inverse(Q)
            for i, word in enumerate(words[j]):
                r = nx.point_rel_err(word.apply(P), Q)
                if r > worst[j][i]:
                    worst[j][i] = r
    return {j: tuple(v) for j, v in worst.items()}


def commutation_residuals(f: Polynomial, a, j: int, points: Sequence[BigComplexPoint]):
    """Residuals of ``tau^-2j o L = L~_j o tau^-2j`` and ``L o tau^-2j = tau^-2j o L^_j``."""
    L = lambda_map(f, a)
    t = Tau(a, -2 * j)
    lhs1, rhs1 = MapWord((t, L)), MapWord((lambda_tilde(f, a, j), t))
    lhs2, rhs2 = MapWord((L, t)), MapWord((t, lambda_hat(f, a, j)))
    ctx = points[0].ctx
    r1 = max((nx.point_rel_err(lhs1.apply(P), rhs1.apply(P)) for P in points), default=ctx.zero)
    r2 = max((nx.point_rel_err(lhs2.apply(P), rhs2.apply(P)) for P in points), default=ctx.zero)
    return r1, r2


# ---------------------------------------------------------------------------
# model split and affine factors
# ---------------------------------------------------------------------------

def factor_model_split(plan, k: int, samples: int = 8, seed: int = 0, ctx=None) -> MapWord:
    """``H_{k+1} = calH_{k+1} o tau^(D_{k+1} - 1)``, checked at sample points.

    ``plan`` may be an :class:`OscillationPlan` or a :class:`ModelSequence`.
    An even ``D_{k+1}`` cannot match the linear parts and raises.
    """
    if ctx is None:
        ctx = nx.default_context()
    if isinstance(plan, ModelSequence):
        a, D, d = plan.a, plan.D(k + 1), plan.degree(k + 1)
    else:
        a, D, d = plan.a, plan.D(k + 1), plan.stage(k + 1).d
    if D % 2 == 0:
        raise PlanError(f"D_{k + 1} = {D} is even: product must be odd",
                        [Violation("parity", k + 1, "product must be odd")])
    word = MapWord((CalH(a, (2 - D) * d, d), Tau(a, D - 1)))
    model = Model(a, d, D)
    rng = np.random.default_rng(seed)
    pts = to_points(ctx, ball_samples(rng, samples, 2.0))
    pts.append(nx.point(ctx, 1, 1))
    tol = ctx.ldexp(ctx.one, 16 - ctx.prec)
    for P in pts:
        r = nx.point_rel_err(word.apply(P), model.apply(P))
        if r > tol:
            raise PlanError(f"model split residual {nx.real_to_str(r, 6)} at {P.as_complex()}")
    return word


def even_power_index(beta, a) -> int:
    """``q`` with ``beta = a**(2q)``; raises if ``beta`` is not such a power."""
    beta, a = nx.to_fraction(beta), Fraction(a)
    if beta <= 0:
        raise PlanError("beta must be positive")
    q, cur = 0, Fraction(1)
    while cur > beta:
        cur *= a * a
        q += 1
    if cur != beta:
        raise PlanError(f"beta = {beta} is not an even power of a = {a}")
    return q


def affine_words(a, Q_ell: BigComplexPoint, q_next: int, P_n: BigComplexPoint, q: int):
    """``(Phi_ell, Phi_{n_k}^-1)`` as words of shears and tau powers.

    ``Phi_ell = tau^(2(q_next - 1)) o S2 o S1`` and
    ``Phi_{n_k}^-1 = tau^(-2(q + 1)) o R2 o R1``.
    """
    a = Fraction(a)
    ctx = Q_ell.ctx
    S1 = Shear(Polynomial.constant(Q_ell.w / nx.rational_power(ctx, a, 2 * (q_next - 1) + 1)), a)
    S2 = Shear(Polynomial.constant(Q_ell.z / nx.rational_power(ctx, a, 2 * (q_next - 1))), a)
    R1 = Shear(Polynomial.constant(-nx.to_real(ctx, a) * P_n.w), a)
    R2 = Shear(Polynomial.constant(-nx.rational_power(ctx, a, 2) * P_n.z), a)
    phi_ell = MapWord((Tau(a, 2 * (q_next - 1)), S2, S1))
    phi_inv = MapWord((Tau(a, -2 * (q + 1)), R2, R1))
    return phi_ell, phi_inv


def commuted_R(a, P_n: BigComplexPoint, m: int):
    """``R~1, R~2`` with ``R_i o tau^(-2m) = tau^(-2m) o R~_i``."""
    a = Fraction(a)
    ctx = P_n.ctx
    R1 = Shear(Polynomial.constant(-nx.rational_power(ctx, a, 2 * m + 1) * P_n.w), a)
    R2 = Shear(Polynomial.constant(-nx.rational_power(ctx, a, 2 * m + 2) * P_n.z), a)
    return R1, R2


def factor_affine(plan: OscillationPlan, stage: int, P_n: BigComplexPoint, Q_ell: BigComplexPoint,
                  samples: int = 10, seed: int = 0):
    """Words for ``Phi_ell`` and ``Phi_{n_k}^-1`` at ``stage = k``, checked pointwise."""
    if not 0 <= stage < plan.K:
        raise PlanError(f"stage {stage} has no successor in a {plan.K}-stage plan")
    q = plan.stage(stage).q
    q_next = plan.stage(stage + 1).q
    phi_ell, phi_inv = affine_words(plan.a, Q_ell, q_next, P_n, q)
    ctx = P_n.ctx
    direct_ell = AffineScale(Q_ell, plan.a ** (2 * q_next))
    direct_inv = Inverse(AffineScale(P_n, plan.a ** (2 * q)))
    rng = np.random.default_rng(seed)
    tol = ctx.ldexp(ctx.one, 16 - ctx.prec)
    for P in to_points(ctx, ball_samples(rng, samples, 2.0)):
        for word, direct in ((phi_ell, direct_ell), (phi_inv, direct_inv)):
            r = nx.point_rel_err(word.apply(P), direct.apply(P))
            if r > tol:
                raise PlanError(f"affine factor residual {nx.real_to_str(r, 6)}")
    return phi_ell, phi_inv


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionData:
    """User-supplied orbit data for the transition out of stage ``k``."""

    k: int
    f: Polynomial
    P_n: BigComplexPoint
    Q_ell: BigComplexPoint
    z_free: tuple = ()
    seed: int = 0

    def to_json(self) -> dict:
        out = {"k": self.k, "f": self.f.to_json(), "P_n": self.P_n.to_json(),
               "Q_ell": self.Q_ell.to_json(), "seed": self.seed}
        if self.z_free:
            out["z_free"] = [nx.complex_to_json(z) for z in self.z_free]
        return out

    @classmethod
    def from_json(cls, rec, ctx=None, where: int = 0) -> TransitionData:
        if ctx is None:
            ctx = nx.default_context()
        try:
            return cls(int(rec["k"]), Polynomial.from_json(rec["f"]),
                       nx.point_from_json(ctx, rec["P_n"]), nx.point_from_json(ctx, rec["Q_ell"]),
                       tuple(nx.to_complex(ctx, z) for z in rec.get("z_free", [])),
                       int(rec.get("seed", 0)))
        except KeyError as exc:
            raise ValueError(f"transitions[{where}]: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ValueError(f"transitions[{where}]: {exc}") from None

    def at(self, ctx) -> TransitionData:
        return TransitionData(self.k, self.f, self.P_n.to(ctx), self.Q_ell.to(ctx),
                              tuple(ctx.mpc(z) for z in self.z_free), self.seed)


@dataclass
class TransitionFactorization:
    k: int
    target: MapWord
    blocks: list
    word: MapWord
    flat: list
    X: list
    T: list
    conjugated: list
    exponents: dict
    report: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.flat)

    def max_residual(self, key: str = "residual"):
        return max(r[key] for r in self.report) if self.report else None

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "exponents": self.exponents,
            "word": self.word.to_json(),
            "length": self.length,
            "conjugated": [g.to_json() for g in self.conjugated],
            "orbit_T": [t.to_json() for t in self.T],
            "verification": [
                {"point": r["point"].to_json(), "lhs": r["lhs"].to_json(), "rhs": r["rhs"].to_json(),
                 "residual": nx.real_to_str(r["residual"], 8),
                 "conjugated_residual": nx.real_to_str(r["conjugated_residual"], 8)}
                for r in self.report
            ],
        }


def transition_exponents(plan: OscillationPlan, k: int) -> dict:
    st, nxt = plan.stage(k), plan.stage(k + 1)
    j = st.N - st.n
    D = plan.D(k + 1)
    ell = st.ell
    return {"j": j, "ell": ell, "D": D, "q": st.q, "q_next": nxt.q,
            "middle": D - 5 - 2 * (j + st.q), "outer": 2 * (nxt.q - ell - 2) + 1}


def _target_composite(plan, k, data: TransitionData) -> tuple:
    a = plan.a
    st, nxt = plan.stage(k), plan.stage(k + 1)
    F = henon(data.f, a)
    j = st.N - st.n
    ell = st.ell
    D = plan.D(k + 1)
    blocks = [
        ("F^-ell", MapWord(tuple(Inverse(F) for _ in range(ell)))),
        ("Phi_ell", MapWord((AffineScale(data.Q_ell, a ** (2 * nxt.q)),))),
        ("H", MapWord((Model(a, nxt.d, D),))),
        ("Phi_n^-1", MapWord((Inverse(AffineScale(data.P_n, a ** (2 * st.q))),))),
        ("F^(n-N)", MapWord(tuple(Inverse(F) for _ in range(j)))),
    ]
    return MapWord(tuple(w for _, w in blocks)), blocks


def factor_transition(plan: OscillationPlan, k: int, data: TransitionData, samples: int = 10,
                      seed: int | None = None, ctx=None, check: bool = True) -> TransitionFactorization:
    """Shear factorization of the stage-``k`` transition with its conjugated form.

    Raises :class:`PlanError` when a tau exponent would be negative (degree
    bound or ``q``-bound violated) or when ``D_{k+1}`` is even.
    """
    if ctx is None:
        ctx = data.P_n.ctx
    data = data.at(ctx)
    if not 0 <= k < plan.K:
        raise PlanError(f"no transition out of stage {k} in a {plan.K}-stage plan")
    a = plan.a
    ex = transition_exponents(plan, k)
    problems = []
    if ex["D"] % 2 == 0:
        problems.append(Violation("parity", k + 1, "product must be odd"))
    if ex["middle"] < 0:
        problems.append(Violation("degree", k + 1,
                                  f"tau exponent D - 5 - 2(N-n+q) = {ex['middle']} is negative; "
                                  f"need D_{k + 1} >= 2(N_k - n_k + q_k) + 5"))
    if ex["outer"] < 0:
        problems.append(Violation("q-bound", k + 1,
                                  f"tau exponent 2(q_(k+1) - ell - 2) + 1 = {ex['outer']} is negative"))
    if problems:
        raise PlanError("; ".join(str(v) for v in problems), problems)

    st, nxt = plan.stage(k), plan.stage(k + 1)
    j, ell, D = ex["j"], ex["ell"], ex["D"]
    f = data.f
    phi_ell, _ = affine_words(a, data.Q_ell, nxt.q, data.P_n, st.q)
    S2, S1 = phi_ell.factors[1], phi_ell.factors[2]
    Rt1, Rt2 = commuted_R(a, data.P_n, j + 1)
    calH = CalH(a, (2 - D) * nxt.d, nxt.d)
    # leftmost factor first
    factors = ((Tau(a, 1),)
               + tuple(lambda_tilde(f, a, i) for i in range(1, ell + 1))
               + (Tau(a, ex["outer"]), S2, S1, calH, Tau(a, ex["middle"]), Rt2, Rt1, Tau(a, 1))
               + tuple(lambda_hat(f, a, i) for i in range(j, 0, -1))
               + (Tau(a, 1),))
    word = MapWord(factors)
    flat = list(word.flatten())
    target, blocks = _target_composite(plan, k, data)

    # orbit X_n = psi_n o ... o psi_1 (P_{N_k}) and the connecting points T_n
    F = henon(f, a)
    P_N = data.P_n
    for _ in range(j):
        P_N = F.apply(P_N)
    X = [P_N]
    for psi in flat:
        X.append(psi.apply(X[-1]))
    N = len(flat)
    Q0 = data.Q_ell
    for _ in range(ell):
        Q0 = F.apply_inverse(Q0)
    zpp = _connecting_points(ctx, X, Q0, a, data, N, seed)
    T = [X[0]]
    for n in range(1, N + 1):
        T.append(BigComplexPoint(zpp[n], nx.to_real(ctx, a) * zpp[n - 1]))
    T[N] = Q0
    conj = []
    an = nx.to_real(ctx, a)
    for n in range(1, N + 1):
        psi = flat[n - 1]
        phi = _shear_phi(psi)
        x_prev = X[n - 1].z
        shift = x_prev - T[n - 1].z
        const = T[n].z - phi(x_prev) - an * T[n - 1].w
        conj.append(ConjugatedShear(phi, a, shift, const))

    fact = TransitionFactorization(k, target, blocks, word, flat, X, T, conj, ex)
    if check:
        verify_transition(fact, plan, data, samples, data.seed if seed is None else seed)
    return fact


def _shear_phi(m: ElementaryMap) -> Polynomial:
    if isinstance(m, Shear):
        return m.phi
    if isinstance(m, CalH):
        return m.as_shear().phi
    if isinstance(m, Tau) and m.power == 1:
        return Polynomial.constant(0)
    raise TypeError(f"factor {m!r} is not a shear")


def _connecting_points(ctx, X, Q0, a, data, N, seed):
    """``z''_0..z''_N``: endpoints fixed, ``z''_{N-1} = w'_0 / a``, the rest free."""
    zpp = [None] * (N + 1)
    zpp[0] = X[0].z
    zpp[N] = Q0.z
    if N >= 1:
        zpp[N - 1] = Q0.w / nx.to_real(ctx, a)
    free = list(data.z_free)
    rng = np.random.default_rng(data.seed if seed is None else seed)
    for n in range(1, N - 1):
        if free:
            zpp[n] = ctx.mpc(free.pop(0))
        else:
            off = rng.standard_normal(2) / 4
            zpp[n] = X[n].z + ctx.mpc(complex(off[0], off[1]))
    return zpp


def sample_W(plan: OscillationPlan, k: int, data: TransitionData, count: int, seed: int):
    """Points of ``F^(N_k - n_k)(B(P_{n_k}, beta_{n_k}))``."""
    ctx = data.P_n.ctx
    st = plan.stage(k)
    beta = plan.beta_nk(ctx, k)
    F = henon(data.f, plan.a)
    rng = np.random.default_rng(seed)
    out = []
    for u in to_points(ctx, ball_samples(rng, count)):
        P = data.P_n + u.scale(beta)
        for _ in range(st.N - st.n):
            P = F.apply(P)
        out.append(P)
    return out


def verify_transition(fact: TransitionFactorization, plan, data, samples: int, seed: int):
    """Fill ``fact.report`` with per-point residuals of both word forms."""
    conj_word = MapWord(tuple(reversed(fact.conjugated)))
    flat_word = MapWord(tuple(reversed(fact.flat)))
    fact.report = []
    for P in sample_W(plan, fact.k, data, samples, seed):
        lhs = fact.target.apply(P)
        rhs = flat_word.apply(P)
        rc = conj_word.apply(P)
        fact.report.append({"point": P, "lhs": lhs, "rhs": rhs,
                            "residual": nx.point_rel_err(lhs, rhs),
                            "conjugated_residual": nx.point_rel_err(lhs, rc)})
    return fact.report


def threading_residual(fact: TransitionFactorization):
    """Max relative defect of ``G_n(T_{n-1}) = T_n`` over the word."""
    worst = fact.T[0].ctx.zero
    for n, G in enumerate(fact.conjugated, 1):
        worst = max(worst, nx.point_rel_err(G.apply(fact.T[n - 1]), fact.T[n]))
    return worst


def theta_endpoints_residual(fact: TransitionFactorization):
    """Defects of ``Theta_0 = id`` and ``Theta_N = id`` (``X_0 = T_0``, ``X_N = T_N``)."""
    return (nx.point_rel_err(fact.X[0], fact.T[0]), nx.point_rel_err(fact.X[-1], fact.T[-1]))


def shear_structure_residual(factors, points: Sequence[BigComplexPoint], w2_list) -> object:
    """Worst structural shear-form residual over factors and sample points."""
    ctx = points[0].ctx
    worst = ctx.zero
    for m in factors:
        for P, w2 in zip(points, w2_list):
            worst = max(worst, shear_form_residual(m, P, w2))
    return worst


def determinant_residual(factors, points: Sequence[BigComplexPoint], a) -> object:
    """Worst relative deviation of ``det dm`` from ``-a**2`` over factors and points."""
    ctx = points[0].ctx
    target = -nx.to_real(ctx, Fraction(a)) ** 2
    worst = ctx.zero
    for m in factors:
        for P in points:
            worst = max(worst, nx.rel_err(m.jacobian(P).det(), ctx.mpc(target)))
    return worst


# ---------------------------------------------------------------------------
# potentials and theta recursion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WanderingOrbit:
    """Per stage ``k``: the map ``F**n_k`` (as a word) and the point ``P_{n_k}``."""

    forward: dict
    points: dict


def wandering_potential(plan: OscillationPlan, orbit: WanderingOrbit, z: BigComplexPoint, k: int):
    """``log(max(|F^{n_k}(z) - P_{n_k}|, beta_{n_k} eta_k)) / D_k`` (euclidean norm)."""
    ctx = z.ctx
    if k < 1:
        raise ValueError("k must be at least 1")
    D = plan.D(k)
    clamp = plan.beta_nk(ctx, k) * nx.rational_power(ctx, plan.a, D)
    image = as_word(orbit.forward[k]).apply(z)
    dist = (image - orbit.points[k].to(ctx)).norm()
    return nx.log(ctx, max(dist, clamp)) / D


@dataclass(frozen=True)
class ThetaReport:
    max_ratio: object
    ratios: tuple
    entry: int | None
    thetas: tuple


def eta_budget_check(G: Sequence, seq: ModelSequence, k_max: int, samples: int = 200,
                     seed: int = 0, ctx=None) -> list:
    """Sampled ``|G_k - H_k|`` on the closed ball; raises when above ``eta_k``."""
    if ctx is None:
        ctx = nx.default_context()
    rng = np.random.default_rng(seed)
    pts = to_points(ctx, ball_samples(rng, samples)) + to_points(ctx, sphere_samples(rng, samples))
    out = []
    for k in range(1, k_max + 1):
        Hk, Gk = seq.model_map(k), as_word(G[k - 1])
        dev = max((Gk.apply(P) - Hk.apply(P)).norm() for P in pts)
        eta = seq.eta(ctx, k)
        if dev > eta:
            raise PlanError(f"|G_{k} - H_{k}| = {nx.real_to_str(dev, 6)} exceeds eta_{k}")
        out.append(dev)
    return out


def theta_recursion_check(G: Sequence, seq: ModelSequence, w: BigComplexPoint, k_max: int,
                          check_budget: bool = False) -> ThetaReport:
    """Max of ``theta_{k+1} / theta_k**d_{k+1}`` over ``k >= j``.

    ``theta_k = max(|G_{k,0}(w)|, eta_k)`` (euclidean), and ``j`` is the
    first depth with ``G_{j,0}(w)`` in the unit ball.
    """
    ctx = w.ctx
    if check_budget:
        eta_budget_check(G, seq, k_max, ctx=ctx)
    thetas = []
    x = w
    entry = 0 if w.norm() < 1 else None
    thetas.append(max(x.norm(), ctx.one))
    for k in range(1, k_max + 1):
        x = as_word(G[k - 1]).apply(x)
        if entry is None and x.norm() < 1:
            entry = k
        thetas.append(max(x.norm(), seq.eta(ctx, k)))
    if entry is None:
        raise ValueError("w does not enter the unit ball within k_max")
    ratios = []
    for k in range(entry, k_max):
        ratios.append(thetas[k + 1] / thetas[k] ** seq.degree(k + 1))
    best = max(ratios) if ratios else ctx.zero
    return ThetaReport(best, tuple(ratios), entry, tuple(thetas))


def perturbed_models(seq: ModelSequence, k_max: int, fraction=Fraction(9, 10), seed: int = 0,
                     ctx=None) -> list:
    """``G_k = (translation by 0.9 eta_k * (u_k, v_k)) o H_k`` with unit ``(u_k, v_k)``."""
    if ctx is None:
        ctx = nx.default_context()
    rng = np.random.default_rng(seed)
    out = []
    for k in range(1, k_max + 1):
        u = sphere_unit(rng)
        c = nx.to_real(ctx, fraction) * seq.eta(ctx, k)
        v = BigComplexPoint(ctx.mpc(complex(u[0])) * c, ctx.mpc(complex(u[1])) * c)
        out.append(MapWord((Translation(v), seq.model_map(k))))
    return out


def sphere_unit(rng) -> np.ndarray:
    g = rng.standard_normal(4)
    g /= np.linalg.norm(g)
    return np.array([complex(g[0], g[1]), complex(g[2], g[3])])
