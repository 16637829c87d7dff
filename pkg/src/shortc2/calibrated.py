"""Calibrated basins of non-autonomous attracting systems.

A system is a list of maps ``f_j`` fixing the origin with attracting linear
part, radii ``r_j`` decreasing to 0, contraction constants ``(C_j, mu_j)``
with ``|f_j^n(z)| <= C_j mu_j^n |z|`` on ``B(0, r_j)``, and iterate counts
``n_j``.  The calibrated basin is the union over ``j`` of the preimages of
``B(0, r_j)`` under ``f_{j-1}^{n_{j-1}} o ... o f_0^{n_0}``.  All norms here
are euclidean.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .maps import Map, MapWord, as_word, differential, factor_from_json
from .numerics import BigComplexPoint
from .shortbasin import ball_samples, sphere_samples, to_points

SAFETY = 1.1


class CalibrationError(ValueError):
    """Invalid attracting system (non-attracting map, bad radii, ...)."""


@dataclass
class AttractingSystem:
    """Maps ``f_0, f_1, ...`` (the last one repeats) with radii and constants.

    ``C``, ``mu`` and ``n`` may be left empty and filled by
    :func:`estimate_system` and :func:`choose_iterates`.
    """

    maps: list
    r: list
    horizon: int = 20
    C: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    n: list = field(default_factory=list)

    def __post_init__(self):
        if not self.maps:
            raise CalibrationError("system has no maps")
        self.r = [nx.to_fraction(v) for v in self.r]
        if len(self.r) < 2:
            raise CalibrationError("need at least two radii")
        for j, (x, y) in enumerate(zip(self.r, self.r[1:])):
            if not x > 0 or not y > 0:
                raise CalibrationError(f"radius r_{j} must be positive")
            if not y < x:
                raise CalibrationError(f"radii must decrease strictly (r_{j + 1} >= r_{j})")

    def map(self, j: int) -> MapWord:
        return as_word(self.maps[min(j, len(self.maps) - 1)])

    @property
    def depth(self) -> int:
        """Largest ``j`` for which ``r_{j+1}`` is declared."""
        return len(self.r) - 2

    def constants(self, j: int):
        return self.C[min(j, len(self.C) - 1)], self.mu[min(j, len(self.mu) - 1)]

    @classmethod
    def from_json(cls, data, ctx=None) -> AttractingSystem:
        if ctx is None:
            ctx = nx.default_context()
        if not isinstance(data, dict):
            raise ValueError("system must be a JSON object")
        if "maps" not in data or "r" not in data:
            raise ValueError("system: needs 'maps' and 'r'")
        maps = []
        for i, m in enumerate(data["maps"]):
            if isinstance(m, list):
                maps.append(MapWord.from_json(m, ctx))
            else:
                maps.append(MapWord((factor_from_json(m, ctx, f"maps[{i}]"),)))
        r = data["r"]
        if isinstance(r, dict):
            r0, ratio = nx.to_fraction(r.get("r0", 1)), nx.to_fraction(r["ratio"])
            count = int(r.get("count", 16))
            if not 0 < ratio < 1:
                raise ValueError("system: geometric radii need 0 < ratio < 1")
            r = [r0 * ratio ** j for j in range(count)]
        else:
            r = [nx.to_fraction(x) for x in r]
        sys_ = cls(maps, r, int(data.get("horizon", 20)))
        if "C" in data:
            sys_.C = [nx.to_fraction(x) for x in _as_list(data["C"])]
        if "mu" in data:
            sys_.mu = [nx.to_fraction(x) for x in _as_list(data["mu"])]
        if "n" in data:
            sys_.n = [int(x) for x in data["n"]]
        return sys_


def _as_list(x):
    return x if isinstance(x, list) else [x]


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def estimate_contraction(f: Map, r, horizon: int, samples: int, seed: int = 0, ctx=None):
    """``(C, mu)`` with ``mu = (rho + 1) / 2`` and ``C`` the sampled sup of
    ``|f^n z| / (mu^n |z|)`` over ``z`` in ``B(0, r)``, ``n <= horizon``, times 1.1.

    ``rho`` is the spectral radius of ``d_0 f``.
    """
    if ctx is None:
        ctx = nx.default_context()
    word = as_word(f)
    origin = BigComplexPoint(ctx.mpc(0), ctx.mpc(0))
    if word.apply(origin).norm() > ctx.ldexp(ctx.one, 8 - ctx.prec):
        raise CalibrationError("map does not fix the origin")
    rho = differential(word, origin).spectral_radius()
    if not rho < 1:
        raise CalibrationError(f"fixed point is not attracting (spectral radius {nx.real_to_str(rho, 6)})")
    mu = (rho + 1) / 2
    rng = np.random.default_rng(seed)
    rr = float(nx.to_fraction(r)) if not hasattr(r, "_mpf_") else float(r)
    pts = to_points(ctx, ball_samples(rng, samples, rr)) + to_points(ctx, sphere_samples(rng, samples) * rr)
    best = ctx.zero
    for P in pts:
        size = P.norm()
        if not size:
            continue
        Q = P
        scale = size
        for _ in range(horizon):
            Q = word.apply(Q)
            scale = scale * mu
            best = max(best, Q.norm() / scale)
    C = max(best, ctx.one) * ctx.mpf(SAFETY)
    return C, mu


def estimate_system(system: AttractingSystem, samples: int = 200, seed: int = 0, ctx=None):
    """Fill ``C`` and ``mu`` for every declared map (radius ``r_j`` for map ``j``)."""
    C, mu = [], []
    for j in range(len(system.maps)):
        c, m = estimate_contraction(system.maps[j], system.r[j], system.horizon, samples, seed + j, ctx)
        C.append(c)
        mu.append(m)
    system.C, system.mu = C, mu
    return system


def choose_iterates(system: AttractingSystem, j_max: int, ctx=None) -> list:
    """Minimal ``n_j >= 1`` with ``C_j mu_j^n r_j <= r_{j+1}`` and
    ``|log r_j| / (n |log mu_j|) <= 1 / (j + 1)``.

    Inequalities are tested with a relative slack of ``2**-(p/2)`` so that an
    exact tie (e.g. ``n_j = j(j+1)`` for the half contraction) is accepted.
    """
    if ctx is None:
        ctx = nx.default_context()
    if not system.C or not system.mu:
        raise CalibrationError("contraction constants missing; run estimate_system first")
    if j_max > system.depth:
        raise CalibrationError(f"j_max = {j_max} needs r_{j_max + 1}, only {len(system.r)} radii given")
    slack = ctx.ldexp(ctx.one, -(ctx.prec // 2))
    out = []
    for j in range(j_max + 1):
        C, mu = (nx.to_real(ctx, x) for x in system.constants(j))
        if not 0 < mu < 1:
            raise CalibrationError(f"mu_{j} must lie in (0, 1)")
        rj, rj1 = nx.to_real(ctx, system.r[j]), nx.to_real(ctx, system.r[j + 1])
        lmu = -ctx.log(mu)
        # nesting: n >= log(C r_j / r_{j+1}) / |log mu|
        need_nest = ctx.log(C * rj / rj1) / lmu
        # rate: n >= (j + 1) |log r_j| / |log mu|
        need_rate = (j + 1) * abs(ctx.log(rj)) / lmu
        need = max(need_nest, need_rate)
        n = max(1, int(ctx.ceil(need - slack * max(abs(need), 1))))
        out.append(n)
    system.n = out
    return out


def rate_values(system: AttractingSystem, ctx=None) -> list:
    """``|log r_j| / (n_j |log mu_j|)`` for each chosen ``n_j``."""
    if ctx is None:
        ctx = nx.default_context()
    out = []
    for j, n in enumerate(system.n):
        _, mu = system.constants(j)
        out.append(abs(ctx.log(nx.to_real(ctx, system.r[j]))) / (n * abs(ctx.log(nx.to_real(ctx, mu)))))
    return out


def nesting_check(system: AttractingSystem, j: int, samples: int = 1000, seed: int = 0, ctx=None):
    """Largest ``|f_j^{n_j}(z)| / r_{j+1}`` over sampled ``|z| = r_j``."""
    if ctx is None:
        ctx = nx.default_context()
    rng = np.random.default_rng(seed)
    rj = nx.to_real(ctx, system.r[j])
    word = system.map(j)
    worst = ctx.zero
    target = nx.to_real(ctx, system.r[j + 1])
    for P in to_points(ctx, sphere_samples(rng, samples)):
        Q = P.scale(rj / P.norm())   # exactly on the sphere, not just to float accuracy
        for _ in range(system.n[j]):
            Q = word.apply(Q)
        worst = max(worst, Q.norm() / target)
    return worst


# ---------------------------------------------------------------------------
# membership and potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Membership:
    verdict: str
    j: int
    G: object = None

    def __str__(self):
        return f"{self.verdict}({self.j})"


def stage_orbit(system: AttractingSystem, P: BigComplexPoint, depth: int):
    """Yield ``(j, x_j)`` with ``x_0 = P`` and ``x_{j+1} = f_j^{n_j}(x_j)``."""
    if len(system.n) < depth:
        raise CalibrationError(f"iterates chosen only up to j = {len(system.n) - 1}")
    x = P
    yield 0, x
    for j in range(depth):
        word = system.map(j)
        for _ in range(system.n[j]):
            x = word.apply(x)
        yield j + 1, x


def calibrated_membership(system: AttractingSystem, P: BigComplexPoint, depth: int) -> Membership:
    """``Inside(j)`` for the first ``j <= depth`` with ``x_j`` in ``B(0, r_j)``."""
    ctx = P.ctx
    depth = min(depth, len(system.r) - 1)
    for j, x in stage_orbit(system, P, min(depth, len(system.n))):
        if x.norm() < nx.to_real(ctx, system.r[j]):
            return Membership("Inside", j)
    return Membership("Unknown", depth)


def appendix_potential(system: AttractingSystem, P: BigComplexPoint, j: int):
    """``G_j(P) = log|f_j^{n_j} o ... o f_0^{n_0}(P)| / (-n_j log mu_j)``.

    An orbit point exactly at the origin returns ``-inf`` (sentinel).
    """
    ctx = P.ctx
    x = None
    for i, x in stage_orbit(system, P, j + 1):
        pass
    size = x.norm()
    if not size:
        return ctx.ninf
    _, mu = system.constants(j)
    return ctx.log(size) / (-system.n[j] * ctx.log(nx.to_real(ctx, mu)))


CSV_HEADER = ["re_z", "im_z", "re_w", "im_w", "verdict", "j", "G_j"]


def membership_csv(rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_HEADER)
    for P, m in rows:
        ctx = P.ctx
        G = "" if m.G is None else ctx.nstr(m.G, 15)
        out.writerow([ctx.nstr(P.z.real, 20), ctx.nstr(P.z.imag, 20), ctx.nstr(P.w.real, 20),
                      ctx.nstr(P.w.imag, 20), m.verdict, m.j, G])
    return buf.getvalue()
