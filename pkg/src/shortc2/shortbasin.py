"""The model Short C^2 basin.

For a rational ``a`` in ``(0, 1)`` and integers ``d_k >= 2`` the maps

    H_k(z, w) = ((a z)**d_k + eta_k w, eta_k z),   eta_k = a**D_k,  D_k = d_k ... d_1

contract the unit ball, and the basin ``Omega_H`` is the set of points whose
forward composites ``H_{k,0} = H_k o ... o H_1`` eventually enter it.  With
``(h1, h2) = H_{k,0}(P)`` we use

    phi_k = max(|h1|, |h2|, eta_k),   psi_k = log(phi_k) / D_k,
    psi~_k = psi_k + tail_k,

where ``tail_k`` majorizes ``sum_{j>k} log 2 / D_j``.  ``psi~_k`` decreases
in ``k`` and bounds the limit potential from above, so ``psi~_k < 0``
certifies membership.  Escape is certified by the invariant
``|h1| >= 2/a**2, |h2| <= |h1|, eta_{k+1} <= 1/4``, under which ``|h1|``
grows by at least ``7/4`` per step.

Norms: ``phi_k`` and the escape test use coordinate moduli (max norm); the
unit ball ``B`` and the Kobayashi disk use the euclidean norm.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .maps import Jacobian2, Model
from .numerics import BigComplexPoint, ExponentOverflow

EXTEND_RULES = ("repeat-last", "cycle", "none")


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSequence:
    """``(a, d_1, ..., d_L)`` with an extension rule past ``L``.

    ``extend="repeat-last"`` repeats ``d_L``; ``"cycle"`` repeats the whole
    list; ``"none"`` caps the depth at ``L``.  With ``odd=True`` every
    ``d_k`` must be odd and at least 3.
    """

    d: tuple
    a: Fraction = Fraction(1, 2)
    extend: str = "repeat-last"
    odd: bool = False
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "a", nx.to_fraction(self.a))
        object.__setattr__(self, "d", tuple(int(x) for x in self.d))
        if not 0 < self.a < 1:
            raise ValueError(f"a must lie in (0, 1), got {self.a}")
        if not self.d:
            raise ValueError("degree list is empty")
        for k, dk in enumerate(self.d, 1):
            if dk < 2:
                raise ValueError(f"d_{k} = {dk} < 2")
            if self.odd and (dk % 2 == 0 or dk < 3):
                raise ValueError(f"d_{k} = {dk} must be odd and >= 3 for this sequence")
        if self.extend not in EXTEND_RULES:
            raise ValueError(f"extend must be one of {EXTEND_RULES}, got {self.extend!r}")

    @property
    def declared_length(self) -> int:
        return len(self.d)

    @property
    def max_depth(self) -> float:
        return len(self.d) if self.extend == "none" else math.inf

    def degree(self, k: int) -> int:
        """``d_k`` for ``k >= 1``."""
        if k < 1:
            raise ValueError("degrees are indexed from 1")
        L = len(self.d)
        if k <= L:
            return self.d[k - 1]
        if self.extend == "repeat-last":
            return self.d[-1]
        if self.extend == "cycle":
            return self.d[(k - 1) % L]
        raise IndexError(f"depth {k} beyond the declared length {L}")

    def D(self, k: int) -> int:
        """``D_k = d_k ... d_1`` (``D_0 = 1``)."""
        prods = self._cache.setdefault("D", [1])
        while len(prods) <= k:
            prods.append(prods[-1] * self.degree(len(prods)))
        return prods[k]

    def eta(self, ctx, k: int):
        """``eta_k = a**D_k``; raises :class:`ExponentOverflow` past the range."""
        key = ("eta", id(ctx), ctx.prec, k)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not ctx:
            hit = (ctx, nx.rational_power(ctx, self.a, self.D(k)))
            self._cache[key] = hit
        return hit[1]

    def model_map(self, k: int) -> Model:
        return Model(self.a, self.degree(k), self.D(k))

    def tail(self, ctx, k: int):
        """Upper bound for ``sum_{j>k} log 2 / D_j``.

        Exact terms up to the declared length ``L``, then the geometric
        majorant ``log 2 / (D_max(k,L) * (m - 1))`` with ``m = min d``.
        """
        key = ("tail", id(ctx), ctx.prec, k)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not ctx:
            L = len(self.d)
            m = min(self.d)
            s = ctx.zero
            for j in range(k + 1, L + 1):
                s += ctx.one / self.D(j)
            s += ctx.one / (self.D(max(k, L)) * (m - 1))
            hit = (ctx, ctx.ln2 * s)
            self._cache[key] = hit
        return hit[1]

    def inside_threshold(self, ctx, k: int, guard=None):
        """``phi_k`` below this value means ``psi~_k < -guard``."""
        if guard is None:
            guard = ctx.ldexp(ctx.one, -(ctx.prec // 2))
        key = ("thr", id(ctx), ctx.prec, k, guard)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not ctx:
            hit = (ctx, ctx.exp(-self.D(k) * (self.tail(ctx, k) + guard)))
            self._cache[key] = hit
        return hit[1]

    def to_json(self) -> dict:
        a = self.a
        out = {"a": f"{a.numerator}/{a.denominator}", "d": list(self.d), "extend": self.extend}
        if self.odd:
            out["odd"] = True
        return out

    @classmethod
    def from_json(cls, data) -> ModelSequence:
        if not isinstance(data, dict):
            raise ValueError("sequence must be a JSON object")
        if "d" not in data:
            raise ValueError("sequence: missing field 'd'")
        d = data["d"]
        if not isinstance(d, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in d):
            raise ValueError("sequence: 'd' must be a list of integers")
        return cls(tuple(d), nx.to_fraction(data.get("a", "1/2")),
                   data.get("extend", "repeat-last"), bool(data.get("odd", False)))


# ---------------------------------------------------------------------------
# forward composites
# ---------------------------------------------------------------------------

def _check_depth(seq: ModelSequence, k: int):
    if k < 0:
        raise ValueError("depth must be nonnegative")
    if k > seq.max_depth:
        raise ValueError(f"depth {k} exceeds the declared length {seq.declared_length}")


def orbit(seq: ModelSequence, P: BigComplexPoint, K: int) -> Iterator[tuple]:
    """Yield ``(k, h1, h2, eta_k)`` for ``k = 0..K``.

    Raises :class:`ExponentOverflow` at the first depth whose values leave
    the exponent range.
    """
    _check_depth(seq, K)
    ctx = P.ctx
    a = nx.to_real(ctx, seq.a)
    h1, h2 = P.z, P.w
    yield 0, h1, h2, ctx.one
    for k in range(1, K + 1):
        eta = seq.eta(ctx, k)
        h1, h2 = (a * h1) ** seq.degree(k) + eta * h2, eta * h1
        nx.check(h1)
        nx.check(h2)
        yield k, h1, h2, eta


def compose_model(seq: ModelSequence, k: int, P: BigComplexPoint):
    """``(h1, h2, eta_k)`` with ``(h1, h2) = H_{k,0}(P)``; ``k = 0`` is the identity."""
    for _, h1, h2, eta in orbit(seq, P, k):
        pass
    return h1, h2, eta


def composite_differential(seq: ModelSequence, k: int, P: BigComplexPoint):
    """``(H_{k,0}(P), d_P H_{k,0})`` by the chain rule."""
    _check_depth(seq, k)
    ctx = P.ctx
    J = Jacobian2.identity(ctx)
    for n in range(1, k + 1):
        m = seq.model_map(n)
        J = m.jacobian(P) @ J
        P = m.apply(P).checked()
    return P, J


# ---------------------------------------------------------------------------
# potentials and certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialEstimate:
    k: int
    h1: object
    h2: object
    eta: object
    phi_k: object
    psi_k: object
    tail_bound: object
    psi_tilde_k: object

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "h1": nx.complex_to_json(self.h1),
            "h2": nx.complex_to_json(self.h2),
            "phi": nx.real_to_str(self.phi_k),
            "psi": nx.real_to_str(self.psi_k),
            "tail": nx.real_to_str(self.tail_bound),
            "psi_tilde": nx.real_to_str(self.psi_tilde_k),
        }


def phi_value(h1, h2, eta):
    return max(abs(h1), abs(h2), eta)


def estimate_from_state(seq: ModelSequence, k: int, h1, h2, eta) -> PotentialEstimate:
    ctx = h1.context
    phi = phi_value(h1, h2, eta)
    psi = nx.log(ctx, phi) / seq.D(k)
    tail = seq.tail(ctx, k)
    return PotentialEstimate(k, h1, h2, eta, phi, psi, tail, psi + tail)


def potential(seq: ModelSequence, k: int, P: BigComplexPoint) -> PotentialEstimate:
    """``phi_k``, ``psi_k`` and the upper bound ``psi~_k`` at ``P``."""
    if k < 1:
        raise ValueError("potential needs k >= 1")
    h1, h2, eta = compose_model(seq, k, P)
    return estimate_from_state(seq, k, h1, h2, eta)


INSIDE, OUTSIDE, UNKNOWN = "Inside", "Outside", "Unknown"


@dataclass(frozen=True)
class BasinCertificate:
    """Verdict at depth ``k`` with the evidence behind it.

    ``psi_tilde`` is the last computed ``psi~_k`` (``None`` when the depth
    was reached through exponent overflow).  For ``Outside`` the escape state
    ``(h1, h2)`` is kept; ``overflow`` marks an escape detected by leaving
    the exponent range.
    """

    verdict: str
    k: int
    psi_tilde: object = None
    h1: object = None
    h2: object = None
    overflow: bool = False

    def __str__(self):
        return f"{self.verdict}({self.k})"

    @property
    def inside(self) -> bool:
        return self.verdict == INSIDE

    @property
    def outside(self) -> bool:
        return self.verdict == OUTSIDE


def escape_radius(a: Fraction) -> Fraction:
    """``2 / a**2``: beyond it ``(a|h1|)**d >= 2|h1|`` for every ``d >= 2``."""
    return 2 / Fraction(a) ** 2


def classify(seq: ModelSequence, P: BigComplexPoint, K_max: int, guard=None) -> BasinCertificate:
    """Certified verdict for ``P`` against ``Omega_H`` using depths ``1..K_max``.

    ``Inside(k)`` once ``psi~_k < -guard`` (default ``2**-(p/2)``, so that
    rounding cannot flip the sign); ``Outside(k)`` once the escape invariant
    holds or the composite overflows; ``Unknown(K_max)`` otherwise.
    """
    ctx = P.ctx
    _check_depth(seq, K_max)
    r_esc = nx.to_real(ctx, escape_radius(seq.a))
    quarter = ctx.mpf(0.25)
    last = (0, P.z, P.w, ctx.one)
    it = orbit(seq, P, K_max)
    next(it)
    k = 0
    try:
        for k, h1, h2, eta in it:
            last = (k, h1, h2, eta)
            phi = phi_value(h1, h2, eta)
            if phi < seq.inside_threshold(ctx, k, guard):
                est = estimate_from_state(seq, k, h1, h2, eta)
                return BasinCertificate(INSIDE, k, est.psi_tilde_k)
            a1 = abs(h1)
            if a1 >= r_esc and abs(h2) <= a1 and _eta_next_small(seq, ctx, k, quarter):
                est = estimate_from_state(seq, k, h1, h2, eta)
                return BasinCertificate(OUTSIDE, k, est.psi_tilde_k, h1, h2)
    except ExponentOverflow:
        k_fail = last[0] + 1
        if _is_large(last[1], last[2]):
            return BasinCertificate(OUTSIDE, k_fail, None, last[1], last[2], overflow=True)
        return BasinCertificate(UNKNOWN, last[0], None)
    k, h1, h2, eta = last
    est = estimate_from_state(seq, k, h1, h2, eta) if k >= 1 else None
    return BasinCertificate(UNKNOWN, K_max, est.psi_tilde_k if est else None)


def _eta_next_small(seq, ctx, k, quarter) -> bool:
    try:
        return seq.eta(ctx, k + 1) <= quarter
    except ExponentOverflow:
        return True


def _is_large(h1, h2) -> bool:
    # overflow of a large orbit is escape; underflow of a tiny one is not
    e = [x for x in (nx.exponent(h1), nx.exponent(h2)) if x is not None]
    return bool(e) and max(e) > 0


# ---------------------------------------------------------------------------
# Kobayashi bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KobayashiQuery:
    """Upper bound ``|zeta_k| / (1 - |p_k|)`` at depth ``k`` (euclidean norms)."""

    p: BigComplexPoint
    zeta: BigComplexPoint
    k: int
    upper_bound: object
    p_k: BigComplexPoint
    zeta_k: BigComplexPoint
    history: tuple = ()

    @property
    def radius(self):
        """``R = (1 - |p_k|) / |zeta_k|``, the disk radius realizing the bound."""
        return 1 / self.upper_bound


def kobayashi_upper_bound(seq: ModelSequence, p: BigComplexPoint, zeta: BigComplexPoint,
                          target, K_max: int) -> KobayashiQuery:
    """Smallest depth ``k <= K_max`` whose disk bound is ``<= target``.

    If no depth reaches the target the best bound found is returned.
    ``history`` lists ``(k, bound)`` for every depth with ``p_k`` in ``B``.
    """
    ctx = p.ctx
    if not zeta.z and not zeta.w:
        raise ValueError("tangent vector must be nonzero")
    cert = classify(seq, p, K_max)
    if not cert.inside:
        raise ValueError(f"point is not certified inside the basin (got {cert})")
    target = nx.to_real(ctx, target)
    P, v = p, zeta
    best = None
    history = []
    for k in range(1, K_max + 1):
        m = seq.model_map(k)
        v = m.jacobian(P).apply(v)
        P = m.apply(P).checked()
        r = P.norm()
        if r >= 1:
            continue
        bound = v.norm() / (1 - r)
        history.append((k, bound))
        if best is None or bound < best.upper_bound:
            best = KobayashiQuery(p, zeta, k, bound, P, v)
        if bound <= target:
            break
    if best is None:
        raise ValueError(f"orbit did not enter the unit ball within depth {K_max}")
    return KobayashiQuery(best.p, best.zeta, best.k, best.upper_bound, best.p_k,
                          best.zeta_k, tuple(history))


def kobayashi_disk_check(query: KobayashiQuery, samples: int = 1000):
    """Largest euclidean norm of ``p_k + w R zeta_k`` over ``w`` on the unit circle."""
    ctx = query.upper_bound.context
    R = query.radius
    worst = ctx.zero
    for i in range(samples):
        w = ctx.expjpi(ctx.mpf(2 * i) / samples)
        q = BigComplexPoint(query.p_k.z + w * R * query.zeta_k.z,
                            query.p_k.w + w * R * query.zeta_k.w)
        worst = max(worst, q.norm())
    return worst


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sphere_samples(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` uniform points of the unit sphere in C^2 as an ``(n, 2)`` complex array."""
    g = rng.standard_normal((n, 4))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g[:, 0::2] + 1j * g[:, 1::2]


def ball_samples(rng: np.random.Generator, n: int, radius: float = 1.0) -> np.ndarray:
    """``n`` uniform points of the closed ball of the given radius."""
    s = sphere_samples(rng, n)
    r = radius * rng.random(n) ** 0.25
    return s * r[:, None]


def to_points(ctx, arr: np.ndarray) -> list:
    """Convert complex float samples exactly into points of ``ctx``."""
    return [BigComplexPoint(ctx.mpc(complex(z)), ctx.mpc(complex(w))) for z, w in arr]


def ball_contraction_check(seq: ModelSequence, n: int, samples: int, seed: int = 0):
    """Sampled sup of the max norm of ``H_n`` on the closed unit ball.

    Samples lie on the unit sphere (the sup of a holomorphic map's modulus
    over the ball is attained there), plus the origin.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    ctx = nx.default_context()
    m = seq.model_map(n)
    rng = np.random.default_rng(seed)
    best = m.apply(BigComplexPoint(ctx.mpc(0), ctx.mpc(0))).max_norm()
    for P in to_points(ctx, sphere_samples(rng, samples)):
        best = max(best, m.apply(P).max_norm())
    return best


def contraction_bound(seq: ModelSequence, n: int, ctx):
    """Triangle-inequality bound ``a**d_n + eta_n`` on the max norm of ``H_n(B)``."""
    return nx.rational_power(ctx, seq.a, seq.degree(n)) + seq.eta(ctx, n)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_HEADER = ["re_z", "im_z", "re_w", "im_w", "verdict", "k", "psi_tilde"]


def certificate_row(P: BigComplexPoint, cert: BasinCertificate, digits: int = 20) -> list:
    ctx = P.ctx
    psi = "" if cert.psi_tilde is None else ctx.nstr(cert.psi_tilde, digits)
    return [ctx.nstr(P.z.real, digits), ctx.nstr(P.z.imag, digits),
            ctx.nstr(P.w.real, digits), ctx.nstr(P.w.imag, digits),
            cert.verdict, cert.k, psi]


def classification_csv(rows: Sequence[tuple]) -> str:
    """CSV text for ``(point, certificate)`` pairs."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_HEADER)
    for P, cert in rows:
        out.writerow(certificate_row(P, cert))
    return buf.getvalue()
