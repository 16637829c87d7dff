"""Elementary automorphisms of C^2 and finite composition words.

Every factor keeps its structural parameters exactly (``Fraction`` for
``a``, Python ints for degrees and exponents); rounding happens only when a
factor is evaluated, in the context of the point it is evaluated at.

Words apply right to left: ``MapWord((A, B, C))`` is ``A o B o C``, so the
last factor acts first.  This matches the composite ``H_{m,n} = H_m o ... o
H_{n+1}`` and is the only ordering used anywhere in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import ClassVar, Iterator, Union

from . import numerics as nx
from .numerics import BigComplexPoint
from .polynomial import Polynomial


# ---------------------------------------------------------------------------
# 2x2 complex matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Jacobian2:
    """``[[a, b], [c, d]]``; columns are the images of ``e_z`` and ``e_w``."""

    a: object
    b: object
    c: object
    d: object

    @classmethod
    def identity(cls, ctx) -> Jacobian2:
        return cls(ctx.mpc(1), ctx.mpc(0), ctx.mpc(0), ctx.mpc(1))

    @property
    def ctx(self):
        return self.a.context

    def __matmul__(self, other: Jacobian2) -> Jacobian2:
        return Jacobian2(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def det(self):
        return self.a * self.d - self.b * self.c

    def trace(self):
        return self.a + self.d

    def inverse(self) -> Jacobian2:
        det = self.det()
        if not det:
            raise nx.DomainError("singular Jacobian")
        return Jacobian2(self.d / det, -self.b / det, -self.c / det, self.a / det)

    def apply(self, v: BigComplexPoint) -> BigComplexPoint:
        return BigComplexPoint(self.a * v.z + self.b * v.w, self.c * v.z + self.d * v.w)

    def op_norm(self):
        """Largest singular value via the closed 2x2 formula."""
        ctx = self.ctx
        fro2 = sum(abs(x) ** 2 for x in (self.a, self.b, self.c, self.d))
        det2 = abs(self.det()) ** 2
        disc = fro2 * fro2 - 4 * det2
        if disc < 0:
            disc = ctx.zero
        return ctx.sqrt((fro2 + ctx.sqrt(disc)) / 2)

    def eigenvalues(self):
        ctx = self.ctx
        tr, det = self.trace(), self.det()
        root = ctx.sqrt(tr * tr - 4 * det)
        return (tr + root) / 2, (tr - root) / 2

    def spectral_radius(self):
        return max(abs(x) for x in self.eigenvalues())

    def entries(self) -> tuple:
        return (self.a, self.b, self.c, self.d)


# ---------------------------------------------------------------------------
# elementary maps
# ---------------------------------------------------------------------------

def _frac(x) -> Fraction:
    return nx.to_fraction(x)


def _frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


class ElementaryMap:
    """Common surface of the factor kinds.

    Subclasses implement ``apply``, ``apply_inverse``, ``jacobian`` and
    ``inverse``.  ``coupling(ctx)`` returns ``c`` when the factor has the
    shear form ``(g(z) + c*w, c*z)`` and ``None`` otherwise.
    """

    kind: ClassVar[str] = ""

    def apply(self, P: BigComplexPoint) -> BigComplexPoint:
        raise NotImplementedError

    def apply_inverse(self, P: BigComplexPoint) -> BigComplexPoint:
        raise NotImplementedError

    def jacobian(self, P: BigComplexPoint) -> Jacobian2:
        raise NotImplementedError

    def inverse(self) -> ElementaryMap:
        return Inverse(self)

    def coupling(self, ctx):
        return None

    def shear_a(self) -> Fraction | None:
        """Exact ``a`` when the factor is ``(g(z) + a*w, a*z)`` with rational ``a``."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError

    def _param(self, ctx, name, make):
        cache = self.__dict__.setdefault("_pcache", {})
        key = (name, id(ctx), ctx.prec)
        hit = cache.get(key)
        if hit is None or hit[0] is not ctx:
            hit = (ctx, make(ctx))
            cache[key] = hit
        return hit[1]


@dataclass(frozen=True)
class Shear(ElementaryMap):
    """``(z, w) -> (phi(z) + a*w, a*z)``."""

    phi: Polynomial
    a: Fraction
    kind: ClassVar[str] = "shear"

    def __post_init__(self):
        object.__setattr__(self, "a", _frac(self.a))
        if self.a == 0:
            raise ValueError("shear needs a != 0")
        if not isinstance(self.phi, Polynomial):
            object.__setattr__(self, "phi", Polynomial(tuple(self.phi)))

    def _a(self, ctx):
        return self._param(ctx, "a", lambda c: nx.to_real(c, self.a))

    def apply(self, P):
        a = self._a(P.ctx)
        return BigComplexPoint(self.phi(P.z) + a * P.w, a * P.z)

    def apply_inverse(self, P):
        a = self._a(P.ctx)
        z = P.w / a
        return BigComplexPoint(z, (P.z - self.phi(z)) / a)

    def jacobian(self, P):
        ctx = P.ctx
        a = ctx.mpc(self._a(ctx))
        _, dphi = self.phi.value_and_derivative(P.z)
        return Jacobian2(dphi, a, a, ctx.mpc(0))

    def coupling(self, ctx):
        return self._a(ctx)

    def shear_a(self):
        return self.a

    def to_json(self):
        return {"kind": self.kind, "a": _frac_str(self.a), "phi": self.phi.to_json()}


@dataclass(frozen=True)
class Tau(ElementaryMap):
    """``tau**power`` with ``tau(z, w) = (a*w, a*z)``.

    ``tau**m`` is ``a**m * (z, w)`` for even ``m`` and ``a**m * (w, z)`` for
    odd ``m``; powers are stored, never expanded, until :meth:`MapWord.flatten`.
    """

    a: Fraction
    power: int = 1
    kind: ClassVar[str] = "tau"

    def __post_init__(self):
        object.__setattr__(self, "a", _frac(self.a))
        object.__setattr__(self, "power", int(self.power))
        if self.a == 0:
            raise ValueError("tau needs a != 0")

    def _s(self, ctx):
        return self._param(ctx, "s", lambda c: nx.rational_power(c, self.a, self.power))

    def apply(self, P):
        s = self._s(P.ctx)
        if self.power % 2:
            return BigComplexPoint(s * P.w, s * P.z)
        return BigComplexPoint(s * P.z, s * P.w)

    def apply_inverse(self, P):
        s = self._s(P.ctx)
        if self.power % 2:
            return BigComplexPoint(P.w / s, P.z / s)
        return BigComplexPoint(P.z / s, P.w / s)

    def jacobian(self, P):
        ctx = P.ctx
        s, zero = ctx.mpc(self._s(ctx)), ctx.mpc(0)
        if self.power % 2:
            return Jacobian2(zero, s, s, zero)
        return Jacobian2(s, zero, zero, s)

    def inverse(self):
        return Tau(self.a, -self.power)

    def coupling(self, ctx):
        return self._s(ctx) if self.power == 1 else None

    def shear_a(self):
        return self.a if self.power == 1 else None

    def to_json(self):
        return {"kind": self.kind, "a": _frac_str(self.a), "power": self.power}


def TauInverse(a) -> Tau:
    """``tau**-1 (z, w) = (w/a, z/a)``."""
    return Tau(a, -1)


@dataclass(frozen=True)
class Model(ElementaryMap):
    """``(z, w) -> ((a*z)**d + a**E * w, a**E * z)``."""

    a: Fraction
    d: int
    E: int
    kind: ClassVar[str] = "model"

    def __post_init__(self):
        object.__setattr__(self, "a", _frac(self.a))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "E", int(self.E))
        if self.a == 0:
            raise ValueError("model map needs a != 0")
        if self.d < 1:
            raise ValueError("model degree must be positive")
        if self.E < 0:
            raise ValueError("model exponent must be nonnegative")

    def _a(self, ctx):
        return self._param(ctx, "a", lambda c: nx.to_real(c, self.a))

    def _eta(self, ctx):
        return self._param(ctx, "eta", lambda c: nx.rational_power(c, self.a, self.E))

    def apply(self, P):
        ctx = P.ctx
        a, eta = self._a(ctx), self._eta(ctx)
        return BigComplexPoint((a * P.z) ** self.d + eta * P.w, eta * P.z)

    def apply_inverse(self, P):
        ctx = P.ctx
        a, eta = self._a(ctx), self._eta(ctx)
        z = P.w / eta
        return BigComplexPoint(z, (P.z - (a * z) ** self.d) / eta)

    def jacobian(self, P):
        ctx = P.ctx
        a, eta = self._a(ctx), ctx.mpc(self._eta(ctx))
        dz = self.d * a * (a * P.z) ** (self.d - 1)
        return Jacobian2(ctx.mpc(dz), eta, eta, ctx.mpc(0))

    def coupling(self, ctx):
        return self._eta(ctx)

    def to_json(self):
        return {"kind": self.kind, "a": _frac_str(self.a), "d": self.d, "E": str(self.E)}


@dataclass(frozen=True)
class CalH(ElementaryMap):
    """``(z, w) -> (a**e * z**d + a*w, a*z)``; the shear factor split off the model map."""

    a: Fraction
    e: int
    d: int
    kind: ClassVar[str] = "calH"

    def __post_init__(self):
        object.__setattr__(self, "a", _frac(self.a))
        object.__setattr__(self, "e", int(self.e))
        object.__setattr__(self, "d", int(self.d))
        if self.a == 0:
            raise ValueError("a must be nonzero")
        if self.d < 1:
            raise ValueError("degree must be positive")

    def _a(self, ctx):
        return self._param(ctx, "a", lambda c: nx.to_real(c, self.a))

    def _c(self, ctx):
        return self._param(ctx, "c", lambda c: nx.rational_power(c, self.a, self.e))

    def apply(self, P):
        ctx = P.ctx
        a, c = self._a(ctx), self._c(ctx)
        return BigComplexPoint(c * P.z ** self.d + a * P.w, a * P.z)

    def apply_inverse(self, P):
        ctx = P.ctx
        a, c = self._a(ctx), self._c(ctx)
        z = P.w / a
        return BigComplexPoint(z, (P.z - c * z ** self.d) / a)

    def jacobian(self, P):
        ctx = P.ctx
        a, c = ctx.mpc(self._a(ctx)), self._c(ctx)
        return Jacobian2(ctx.mpc(self.d * c * P.z ** (self.d - 1)), a, a, ctx.mpc(0))

    def coupling(self, ctx):
        return self._a(ctx)

    def shear_a(self):
        return self.a

    def as_shear(self) -> Shear:
        return Shear(Polynomial.monomial(self.a ** self.e, self.d), self.a)

    def to_json(self):
        return {"kind": self.kind, "a": _frac_str(self.a), "e": str(self.e), "d": self.d}


@dataclass(frozen=True)
class ConjugatedShear(ElementaryMap):
    """``(z, w) -> (const + phi(z + shift) + a*w, a*z)``.

    A shear conjugated by translations.  Keeping ``phi``, ``shift`` and
    ``const`` apart (rather than expanding ``phi(z + shift)``) avoids the
    cancellation that binomial expansion causes when ``phi`` has large
    coefficients.
    """

    phi: Polynomial
    a: Fraction
    shift: object
    const: object
    kind: ClassVar[str] = "conj_shear"

    def __post_init__(self):
        object.__setattr__(self, "a", _frac(self.a))
        if self.a == 0:
            raise ValueError("shear needs a != 0")

    def _a(self, ctx):
        return self._param(ctx, "a", lambda c: nx.to_real(c, self.a))

    def _sc(self, ctx):
        return self._param(ctx, "sc", lambda c: (nx.to_complex(c, self.shift), nx.to_complex(c, self.const)))

    def g(self, z):
        s, c = self._sc(z.context)
        return c + self.phi(z + s)

    def apply(self, P):
        a = self._a(P.ctx)
        return BigComplexPoint(self.g(P.z) + a * P.w, a * P.z)

    def apply_inverse(self, P):
        a = self._a(P.ctx)
        z = P.w / a
        return BigComplexPoint(z, (P.z - self.g(z)) / a)

    def jacobian(self, P):
        ctx = P.ctx
        a = ctx.mpc(self._a(ctx))
        s, _ = self._sc(ctx)
        _, dphi = self.phi.value_and_derivative(P.z + s)
        return Jacobian2(dphi, a, a, ctx.mpc(0))

    def coupling(self, ctx):
        return self._a(ctx)

    def shear_a(self):
        return self.a

    def polynomial(self, ctx) -> Polynomial:
        """Expanded ``g`` (numeric coefficients in ``ctx``)."""
        s, c = self._sc(ctx)
        return self.phi.shift(s, ctx).add_constant(c)

    def to_json(self):
        ctx = self.shift.context if hasattr(self.shift, "context") else nx.default_context()
        s, c = self._sc(ctx)
        return {"kind": self.kind, "a": _frac_str(self.a), "phi": self.phi.to_json(),
                "shift": nx.complex_to_json(s), "const": nx.complex_to_json(c)}


@dataclass(frozen=True)
class Translation(ElementaryMap):
    """``P -> P + v``."""

    v: BigComplexPoint
    kind: ClassVar[str] = "translation"

    def _v(self, ctx):
        return self._param(ctx, "v", lambda c: self.v.to(c))

    def apply(self, P):
        return P + self._v(P.ctx)

    def apply_inverse(self, P):
        return P - self._v(P.ctx)

    def jacobian(self, P):
        return Jacobian2.identity(P.ctx)

    def inverse(self):
        return Translation(-self.v)

    def to_json(self):
        return {"kind": self.kind, "v": self.v.to_json()}


@dataclass(frozen=True)
class AffineScale(ElementaryMap):
    """``P -> center + beta * P`` with ``beta > 0``."""

    center: BigComplexPoint
    beta: object
    kind: ClassVar[str] = "affine_scale"

    def __post_init__(self):
        beta = self.beta
        if isinstance(beta, (int, str, Fraction)) and not isinstance(beta, bool):
            beta = _frac(beta)
        if not beta > 0:
            raise ValueError("affine scale needs beta > 0")
        object.__setattr__(self, "beta", beta)

    def _b(self, ctx):
        return self._param(ctx, "b", lambda c: nx.to_real(c, self.beta))

    def _c(self, ctx):
        return self._param(ctx, "c", lambda c: self.center.to(c))

    def apply(self, P):
        ctx = P.ctx
        return self._c(ctx) + P.scale(self._b(ctx))

    def apply_inverse(self, P):
        ctx = P.ctx
        return (P - self._c(ctx)).scale(1 / self._b(ctx))

    def jacobian(self, P):
        ctx = P.ctx
        b, zero = ctx.mpc(self._b(ctx)), ctx.mpc(0)
        return Jacobian2(b, zero, zero, b)

    def to_json(self):
        beta = self.beta
        beta = _frac_str(beta) if isinstance(beta, Fraction) else nx.real_to_str(beta)
        return {"kind": self.kind, "center": self.center.to_json(), "beta": beta}


@dataclass(frozen=True)
class Inverse(ElementaryMap):
    """Closed-form inverse of another factor."""

    of: ElementaryMap
    kind: ClassVar[str] = "inverse"

    def apply(self, P):
        return self.of.apply_inverse(P)

    def apply_inverse(self, P):
        return self.of.apply(P)

    def jacobian(self, P):
        return self.of.jacobian(self.of.apply_inverse(P)).inverse()

    def inverse(self):
        return self.of

    def to_json(self):
        return {"kind": self.kind, "of": self.of.to_json()}


# ---------------------------------------------------------------------------
# words
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MapWord:
    """Composition ``factors[0] o factors[1] o ... o factors[-1]``."""

    factors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        flat = []
        for f in self.factors:
            if isinstance(f, MapWord):
                flat.extend(f.factors)
            elif isinstance(f, ElementaryMap):
                flat.append(f)
            else:
                raise TypeError(f"not a map: {f!r}")
        object.__setattr__(self, "factors", tuple(flat))

    def __len__(self) -> int:
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __matmul__(self, other) -> MapWord:
        """``self o other``."""
        return MapWord((self, other))

    def apply(self, P: BigComplexPoint) -> BigComplexPoint:
        for f in reversed(self.factors):
            P = f.apply(P).checked()
        return P

    def apply_inverse(self, P: BigComplexPoint) -> BigComplexPoint:
        for f in self.factors:
            P = f.apply_inverse(P).checked()
        return P

    def jacobian(self, P: BigComplexPoint) -> Jacobian2:
        J = Jacobian2.identity(P.ctx)
        for f in reversed(self.factors):
            J = f.jacobian(P) @ J
            P = f.apply(P).checked()
        return J

    def inverse(self) -> MapWord:
        return MapWord(tuple(f.inverse() for f in reversed(self.factors)))

    def flatten(self) -> Iterator[ElementaryMap]:
        """Factors in application order, with nonnegative tau powers expanded
        into single ``tau`` factors (lazily: powers can be huge)."""
        for f in reversed(self.factors):
            if isinstance(f, Tau) and f.power > 1:
                for _ in range(f.power):
                    yield Tau(f.a, 1)
            elif isinstance(f, Tau) and f.power == 0:
                continue
            else:
                yield f

    def flat_length(self) -> int:
        n = 0
        for f in self.factors:
            if isinstance(f, Tau) and f.power >= 0:
                n += f.power
            else:
                n += 1
        return n

    def to_json(self) -> list:
        return [f.to_json() for f in self.factors]

    @classmethod
    def from_json(cls, data, ctx=None) -> MapWord:
        if not isinstance(data, list):
            raise ValueError("a map word must be a JSON array of factor records")
        return cls(tuple(factor_from_json(rec, ctx, where=f"[{i}]") for i, rec in enumerate(data)))


Map = Union[ElementaryMap, MapWord]


def factor_from_json(rec, ctx=None, where: str = "") -> ElementaryMap:
    if ctx is None:
        ctx = nx.default_context()
    if not isinstance(rec, dict) or "kind" not in rec:
        raise ValueError(f"factor {where}: expected an object with a 'kind' field")
    kind = rec["kind"]
    try:
        if kind == "shear":
            return Shear(Polynomial.from_json(rec["phi"]), _frac(rec["a"]))
        if kind == "tau":
            return Tau(_frac(rec["a"]), int(rec.get("power", 1)))
        if kind == "tau_inverse":
            return TauInverse(_frac(rec["a"]))
        if kind == "model":
            return Model(_frac(rec["a"]), int(rec["d"]), int(rec["E"]))
        if kind == "calH":
            return CalH(_frac(rec["a"]), int(rec["e"]), int(rec["d"]))
        if kind == "conj_shear":
            return ConjugatedShear(Polynomial.from_json(rec["phi"]), _frac(rec["a"]),
                                   nx.to_complex(ctx, rec["shift"]), nx.to_complex(ctx, rec["const"]))
        if kind == "translation":
            return Translation(nx.point_from_json(ctx, rec["v"]))
        if kind == "affine_scale":
            beta = rec["beta"]
            return AffineScale(nx.point_from_json(ctx, rec["center"]), _frac(beta))
        if kind == "inverse":
            return Inverse(factor_from_json(rec["of"], ctx, where + ".of"))
    except KeyError as exc:
        raise ValueError(f"factor {where} ({kind}): missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"factor {where} ({kind}): {exc}") from None
    raise ValueError(f"factor {where}: unknown kind {kind!r}")


def as_word(m: Map) -> MapWord:
    return m if isinstance(m, MapWord) else MapWord((m,))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def apply(m: Map, P: BigComplexPoint) -> BigComplexPoint:
    """Evaluate ``m`` at ``P`` in the context of ``P``."""
    return as_word(m).apply(P)


def apply_inverse(m: Map, P: BigComplexPoint) -> BigComplexPoint:
    return as_word(m).apply_inverse(P)


def differential(m: Map, P: BigComplexPoint) -> Jacobian2:
    """Chain-rule Jacobian of ``m`` at ``P``."""
    return as_word(m).jacobian(P)


def inverse_differential(m: Map, P: BigComplexPoint) -> Jacobian2:
    """Jacobian of ``m**-1`` at ``P``."""
    return as_word(m).inverse().jacobian(P)


def finite_difference_check(m: Map, P: BigComplexPoint, h) -> object:
    """Largest deviation between the Jacobian and centred differences.

    The deviation is ``max |FD_ij - J_ij| / max |J_ij|``.  Differences are
    formed at ``prec + log2(1/h) + 32`` bits so that cancellation in the
    difference quotient does not dominate for small steps.
    """
    ctx = P.ctx
    h_exact = nx.to_fraction(h)
    if h_exact <= 0:
        raise ValueError("finite-difference step must be positive")
    guard = max(0, -math.floor(math.log2(h_exact))) + 32
    work = nx.clone(ctx, min(nx.MAX_PREC, ctx.prec + guard))
    Q = P.to(work)
    hw = nx.to_real(work, h_exact)
    J = differential(m, Q)
    cols = []
    for e in (nx.BigComplexPoint(work.mpc(hw), work.mpc(0)),
              nx.BigComplexPoint(work.mpc(0), work.mpc(hw))):
        fp, fm = apply(m, Q + e), apply(m, Q - e)
        cols.append(((fp.z - fm.z) / (2 * hw), (fp.w - fm.w) / (2 * hw)))
    fd = Jacobian2(cols[0][0], cols[1][0], cols[0][1], cols[1][1])
    scale = max(abs(x) for x in J.entries())
    dev = max(abs(x - y) for x, y in zip(fd.entries(), J.entries()))
    if scale:
        dev = dev / scale
    return ctx.mpf(dev)


def shear_form_residual(m: ElementaryMap, P: BigComplexPoint, w2) -> object:
    """Residual of the structural test for ``(g(z) + c*w, c*z)``.

    Evaluates ``m`` at ``(z, w)`` and ``(z, w2)``; for shear form the first
    coordinates differ by ``c*(w - w2)`` and the second coordinate is ``c*z``.
    Returns the largest relative defect; a factor with no coupling returns
    ``inf``.
    """
    ctx = P.ctx
    c = m.coupling(ctx)
    if c is None:
        return ctx.inf
    Q = BigComplexPoint(P.z, ctx.mpc(w2))
    A, B = m.apply(P), m.apply(Q)
    first = nx.rel_err(A.z - B.z, c * (P.w - Q.w))
    second = nx.rel_err(A.w, c * P.z)
    third = nx.rel_err(B.w, c * P.z)
    return max(first, second, third)
