"""Basin equivalence under small perturbations of a contracting sequence.

Given automorphisms ``H_n`` with ``H_n(B)`` compactly inside the unit ball
``B`` and companions ``G_n`` with ``G_n(B) in B``, the maps

    Phi_n = H_{n,0}^{-1} o G_{n,0}

converge on the basin of ``G`` once ``|H_n - G_n|`` on the closed ball stays
below a schedule ``eps_n`` built from Lipschitz constants:

    M_n   Lipschitz constant of H_{n-1,0}^{-1} on H_n^{-1}(closed B)
    N_n   Lipschitz constant of H_n^{-1} on closed B
    eps_n = min(delta~, delta_1, ..., delta_n) / (2**n M_n N_n)

Lipschitz constants are sampled sups of the Jacobian operator norm over a
grid on the unit sphere (the log of the norm of a holomorphic matrix is
plurisubharmonic, so the sup over the ball is attained on the sphere),
refined until successive sups agree within 2%, times a safety factor 1.1.
None of these numbers is certified: they are estimates, and reports say so.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import numerics as nx
from .maps import Map, MapWord, Translation, as_word, differential
from .numerics import BigComplexPoint
from .shortbasin import ModelSequence, sphere_samples, ball_samples, to_points

DELTA_TILDE = Fraction(1, 4)
SAFETY = 1.1
REFINE_TOL = 0.02
STRICTNESS_WARN = 1e-6


class HypothesisError(ValueError):
    """A containment hypothesis failed at a named level."""

    def __init__(self, level: int, message: str):
        super().__init__(f"level {level}: {message}")
        self.level = level


# ---------------------------------------------------------------------------
# domains and grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallDomain:
    """Closed euclidean ball; grid points are taken on its boundary sphere."""

    center: tuple = (0, 0)
    radius: Fraction = Fraction(1)

    def points(self, ctx, grid) -> list:
        c = nx.point(ctx, *self.center) if not isinstance(self.center, BigComplexPoint) else self.center.to(ctx)
        r = nx.to_real(ctx, self.radius)
        return [c + BigComplexPoint(ctx.mpc(z), ctx.mpc(w)).scale(r) for z, w in grid]


@dataclass(frozen=True)
class ImageDomain:
    """Image ``g(closed B)`` of the unit ball; boundary points are ``g(sphere)``."""

    g: Map

    def points(self, ctx, grid) -> list:
        word = as_word(self.g)
        return [word.apply(BigComplexPoint(ctx.mpc(z), ctx.mpc(w))) for z, w in grid]


def hopf_grid(density: int) -> np.ndarray:
    """Points ``(cos t e^{i a}, sin t e^{i b})`` of the unit sphere.

    ``t`` takes ``density + 1`` values on ``[0, pi/2]`` (endpoints included),
    ``a`` and ``b`` take ``density`` values each; doubling the density
    refines the previous grid.
    """
    n = int(density)
    if n < 1:
        raise ValueError("grid density must be positive")
    t = np.linspace(0.0, np.pi / 2, n + 1)
    ang = 2 * np.pi * np.arange(n) / n
    T, A, Bb = np.meshgrid(t, ang, ang, indexing="ij")
    z = np.cos(T) * np.exp(1j * A)
    w = np.sin(T) * np.exp(1j * Bb)
    return np.stack([z.ravel(), w.ravel()], axis=1)


@dataclass(frozen=True)
class LipschitzEstimate:
    value: object
    sampled_sup: object
    density: int
    converged: bool


def _grid_sup(word: MapWord, domain, density: int, ctx):
    best = ctx.zero
    for P in domain.points(ctx, hopf_grid(density)):
        best = max(best, differential(word, P).op_norm())
    return best


def lipschitz_estimate(m: Map, domain=None, grid_density: int = 6, ctx=None,
                       max_density: int = 48, tol: float = REFINE_TOL) -> LipschitzEstimate:
    """Sampled Lipschitz constant of ``m`` on ``domain`` with refinement record."""
    if ctx is None:
        ctx = nx.set_precision(nx.MIN_PREC)
    if domain is None:
        domain = BallDomain()
    word = as_word(m)
    density = grid_density
    prev = None
    while True:
        try:
            sup = _grid_sup(word, domain, density, ctx)
        except nx.ExponentOverflow as exc:
            raise nx.ExponentOverflow(f"Lipschitz grid evaluation overflowed: {exc}") from None
        converged = prev is not None and abs(sup - prev) <= tol * sup
        if converged or 2 * density > max_density:
            break
        prev, density = sup, 2 * density
    return LipschitzEstimate(sup * ctx.mpf(SAFETY), sup, density, converged)


def lipschitz_constant(m: Map, domain=None, grid_density: int = 6, ctx=None):
    """Sampled sup of the Jacobian operator norm of ``m`` on ``domain``, times 1.1."""
    return lipschitz_estimate(m, domain, grid_density, ctx).value


# ---------------------------------------------------------------------------
# sequences of maps
# ---------------------------------------------------------------------------

def model_maps(seq: ModelSequence, n_max: int) -> list:
    return [seq.model_map(k) for k in range(1, n_max + 1)]


def composite_inverse(H: Sequence[Map], n: int) -> MapWord:
    """``H_{n,0}^{-1} = H_1^{-1} o ... o H_n^{-1}``."""
    return MapWord(tuple(as_word(h).inverse() for h in H[:n]))


def composite(H: Sequence[Map], n: int) -> MapWord:
    """``H_{n,0} = H_n o ... o H_1``."""
    return MapWord(tuple(as_word(h) for h in reversed(H[:n])))


def sup_norm_on_sphere(m: Map, points: list):
    """Sampled sup of the euclidean norm of ``m`` over the given points."""
    word = as_word(m)
    return max(word.apply(P).norm() for P in points)


def _float_scaled(pts: list) -> np.ndarray:
    # common power-of-two scaling so that huge preimages fit in doubles
    exps = [e for P in pts for e in (nx.exponent(P.z), nx.exponent(P.w)) if e is not None]
    shift = max(exps) - 500 if exps and max(exps) > 500 else 0
    out = np.empty((len(pts), 4))
    for i, P in enumerate(pts):
        ctx = P.ctx
        vals = (P.z.real, P.z.imag, P.w.real, P.w.imag)
        out[i] = [float(ctx.ldexp(v, -shift)) for v in vals]
    return out, shift


def boundary_gap(inner: list, outer: list) -> object:
    """Sampled distance between two boundary point clouds (euclidean)."""
    ctx = inner[0].ctx
    both, shift = _float_scaled(list(inner) + list(outer))
    A, B = both[: len(inner)], both[len(inner):]
    best = math.inf
    for start in range(0, len(A), 256):
        blk = A[start:start + 256]
        d2 = ((blk[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        best = min(best, float(d2.min()))
    return ctx.ldexp(ctx.sqrt(ctx.mpf(best)), shift)


@dataclass(frozen=True)
class ScheduleLevel:
    level: int
    M: object
    N: object
    delta: object
    epsilon: object
    containment_sup: object
    M_converged: bool = True
    N_converged: bool = True

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "M": nx.real_to_str(self.M, 12),
            "N": nx.real_to_str(self.N, 12),
            "delta": nx.real_to_str(self.delta, 12),
            "epsilon": nx.real_to_str(self.epsilon, 12),
            "containment_sup": nx.real_to_str(self.containment_sup, 12),
            "refinement_converged": bool(self.M_converged and self.N_converged),
        }


@dataclass(frozen=True)
class EpsilonSchedule:
    levels: tuple
    delta_tilde: Fraction = DELTA_TILDE
    seed: int = 0
    notes: tuple = (
        "Lipschitz constants and delta_n are sampled estimates, not certified bounds.",
    )

    def epsilon(self, n: int):
        return self.levels[n - 1].epsilon

    def M(self, n: int):
        return self.levels[n - 1].M

    def N(self, n: int):
        return self.levels[n - 1].N

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "delta_tilde": f"{self.delta_tilde.numerator}/{self.delta_tilde.denominator}",
            "levels": [lv.to_json() for lv in self.levels],
            "notes": list(self.notes),
        }


def epsilon_schedule(H: Sequence[Map], n_max: int, grid_density: int = 6,
                     samples: int = 400, seed: int = 0, ctx=None,
                     delta_tilde: Fraction = DELTA_TILDE) -> EpsilonSchedule:
    """Schedule ``eps_1..eps_{n_max}`` for the sequence ``H``.

    Containment ``H_n(B)`` compactly in ``B`` is checked first on ``samples``
    random sphere points; a failure raises :class:`HypothesisError`.
    """
    if ctx is None:
        ctx = nx.set_precision(nx.MIN_PREC)
    if n_max > len(H):
        raise ValueError(f"n_max = {n_max} exceeds the {len(H)} supplied maps")
    rng = np.random.default_rng(seed)
    sphere = to_points(ctx, sphere_samples(rng, samples))
    dt = nx.to_real(ctx, delta_tilde)
    levels = []
    deltas = []
    prev_boundary = sphere
    for n in range(1, n_max + 1):
        Hn = as_word(H[n - 1])
        try:
            sup = sup_norm_on_sphere(Hn, sphere)
        except nx.ExponentOverflow:
            raise HypothesisError(n, "H_n overflows on the unit sphere") from None
        if not sup < 1:
            raise HypothesisError(n, f"H_n(B) is not inside B (sampled sup {nx.real_to_str(sup, 8)})")
        Hn_inv = Hn.inverse()
        N = lipschitz_estimate(Hn_inv, BallDomain(), grid_density, ctx)
        M = lipschitz_estimate(composite_inverse(H, n - 1), ImageDomain(Hn_inv), grid_density, ctx)
        # V_n = H_{n,0}^{-1}(closed B); its boundary is the image of the sphere
        boundary = [composite_inverse(H, n).apply(P) for P in sphere]
        delta = boundary_gap(prev_boundary, boundary) / 2
        deltas.append(delta)
        eps = min([dt] + deltas) / (ctx.ldexp(ctx.one, n) * M.value * N.value)
        levels.append(ScheduleLevel(n, M.value, N.value, delta, eps, sup,
                                    M.converged, N.converged))
        prev_boundary = boundary
    return EpsilonSchedule(tuple(levels), Fraction(delta_tilde), seed)


# ---------------------------------------------------------------------------
# conjugacy
# ---------------------------------------------------------------------------

@dataclass
class SequencePair:
    """``H`` with ``H_n(B)`` compactly in ``B`` and a companion ``G`` with ``G_n(B) in B``."""

    H: list
    G: list
    deviations: list = field(default_factory=list)
    G_sups: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.H) != len(self.G):
            raise ValueError("H and G must have the same length")

    def check(self, samples: int = 400, seed: int = 0, ctx=None) -> SequencePair:
        """Sample containment hypotheses and the per-level deviations."""
        if ctx is None:
            ctx = nx.set_precision(nx.MIN_PREC)
        rng = np.random.default_rng(seed)
        sphere = to_points(ctx, sphere_samples(rng, samples))
        interior = to_points(ctx, ball_samples(rng, samples))
        devs, sups, notes = [], [], []
        for n, (h, g) in enumerate(zip(self.H, self.G), 1):
            hw, gw = as_word(h), as_word(g)
            hs = sup_norm_on_sphere(hw, sphere)
            gs = sup_norm_on_sphere(gw, sphere)
            if not hs < 1:
                raise HypothesisError(n, "H_n(B) is not compactly inside B")
            if gs > 1:
                raise HypothesisError(n, "G_n(B) is not inside B")
            if gs > 1 - STRICTNESS_WARN:
                notes.append(f"level {n}: sampled sup of |G_n| on the sphere is within 1e-6 of 1")
            devs.append(_deviation(hw, gw, sphere + interior))
            sups.append(gs)
        self.deviations, self.G_sups, self.notes = devs, sups, notes
        return self


def _deviation(hw: MapWord, gw: MapWord, points: list):
    """Sampled sup of ``|H_n - G_n|``, raising precision until it is resolved.

    A deviation below the rounding level of the map values would read as
    zero, so the sup is recomputed with more bits until it clears
    ``2**(16 - p)`` times the size of the values (or the cap is reached).
    """
    ctx = points[0].ctx
    prec = ctx.prec
    while True:
        work = nx.set_precision(prec)
        best, scale = work.zero, work.zero
        for P in points:
            Q = P.to(work)
            a, b = hw.apply(Q), gw.apply(Q)
            best = max(best, (a - b).norm())
            scale = max(scale, a.norm())
        resolved = best > work.ldexp(scale, 16 - prec)
        if resolved or prec >= nx.MAX_PREC:
            return best
        prec = min(nx.MAX_PREC, 4 * prec)


def translated(H: Sequence[Map], constants: Sequence) -> list:
    """``G_n = (translation by (c_n, 0)) o H_n``: a constant-term perturbation."""
    out = []
    for h, c in zip(H, constants):
        v = BigComplexPoint(c.context.mpc(c), c.context.mpc(0)) if hasattr(c, "context") \
            else nx.point(nx.set_precision(nx.MIN_PREC), c, 0)
        out.append(MapWord((Translation(v), as_word(h))))
    return out


def perturbation_constants(schedule: EpsilonSchedule, nominal=Fraction(1, 10**9)) -> list:
    """``c_n = min(nominal, eps_n)`` so that every level stays within the schedule."""
    out = []
    for lv in schedule.levels:
        ctx = lv.epsilon.context
        out.append(min(nx.to_real(ctx, nominal), lv.epsilon))
    return out


@dataclass(frozen=True)
class TraceStep:
    n: int
    phi_n: BigComplexPoint
    increment: object
    bound: object = None

    def to_json(self) -> dict:
        out = {"n": self.n, "phi_n": self.phi_n.to_json(),
               "increment": None if self.increment is None else nx.real_to_str(self.increment, 12)}
        if self.bound is not None:
            out["bound"] = nx.real_to_str(self.bound, 12)
        return out


@dataclass(frozen=True)
class ConjugacyTrace:
    P: BigComplexPoint
    steps: tuple
    entry: int
    converged: bool
    working_prec: int

    def increments(self) -> list:
        return [s.increment for s in self.steps[1:]]

    def displacement(self):
        return (self.steps[-1].phi_n - self.P).norm()

    def telescoping_ok(self) -> bool:
        return all(s.bound is None or s.increment <= s.bound for s in self.steps[1:])

    def to_json(self) -> dict:
        return {"point": self.P.to_json(), "entry": self.entry, "converged": self.converged,
                "working_prec": self.working_prec,
                "steps": [s.to_json() for s in self.steps]}


def _trace_values(pair: SequencePair, P: BigComplexPoint, n_max: int) -> list:
    H, G = pair.H, pair.G
    out = []
    y = P
    for n in range(0, n_max + 1):
        if n:
            y = as_word(G[n - 1]).apply(y)
        out.append(composite_inverse(H, n).apply(y))
    return out


def orbit_entry(maps: Sequence[Map], P: BigComplexPoint, n_max: int) -> int | None:
    """First ``n`` with ``G_{n,0}(P)`` in the open unit ball, if any."""
    y = P
    for n in range(0, n_max + 1):
        if n:
            y = as_word(maps[n - 1]).apply(y)
        if y.norm() < 1:
            return n
    return None


def build_conjugacy(pair: SequencePair, P: BigComplexPoint, n_max: int,
                    schedule: EpsilonSchedule | None = None) -> ConjugacyTrace:
    """Trace ``Phi_n(P)`` for ``n = 0..n_max`` with increments.

    ``P`` must enter ``B`` under ``G`` within ``n_max`` steps.  Values are
    computed at working precision ``p + 64`` and re-done at twice that when
    the two disagree by more than ``2**-(p/2)``.  With a schedule (or checked
    deviations) each increment carries the bound ``M_{n+1} N_{n+1} |H - G|``.
    """
    ctx = P.ctx
    n_max = min(n_max, len(pair.H))
    entry = orbit_entry(pair.G, P, n_max)
    if entry is None:
        raise ValueError("point is not certified in the basin of G (no entry into B)")
    tol = ctx.ldexp(ctx.one, -(ctx.prec // 2))
    prec = min(nx.MAX_PREC, ctx.prec + 64)
    while True:
        lo = _trace_values(pair, P.to(nx.set_precision(prec)), n_max)
        hi_prec = min(nx.MAX_PREC, 2 * prec)
        hi = _trace_values(pair, P.to(nx.set_precision(hi_prec)), n_max)
        worst = max(ctx.mpf(nx.point_rel_err(a.to(ctx), b.to(ctx))) for a, b in zip(lo, hi))
        if worst <= tol or hi_prec == nx.MAX_PREC:
            vals = [v.to(ctx) for v in hi]
            prec = hi_prec
            break
        prec = hi_prec
    steps = [TraceStep(0, vals[0], None)]
    for n in range(1, n_max + 1):
        inc = (vals[n] - vals[n - 1]).norm()
        bound = None
        if schedule is not None and pair.deviations and n - 1 >= entry:
            bound = ctx.mpf(schedule.M(n)) * ctx.mpf(schedule.N(n)) * ctx.mpf(pair.deviations[n - 1])
        steps.append(TraceStep(n, vals[n], inc, bound))
    converged = steps[-1].increment is not None and steps[-1].increment < tol
    return ConjugacyTrace(P, tuple(steps), entry, converged, prec)


def schedule_report(schedule: EpsilonSchedule, traces: Sequence[ConjugacyTrace] = ()) -> str:
    doc = schedule.to_json()
    if traces:
        doc["traces"] = [t.to_json() for t in traces]
    return json.dumps(doc, indent=2)
