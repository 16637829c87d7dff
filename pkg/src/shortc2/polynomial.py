"""Univariate polynomials with explicitly stored coefficients.

Coefficients are kept exact (``int``/``Fraction``) whenever they come from
structural parameters; coefficients derived from data points are mpmath
numbers.  Evaluation converts everything into the context of the argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from numbers import Rational
from typing import Iterable, Sequence

from .numerics import complex_to_json, to_complex, to_fraction

MAX_DEGREE = 2**16


def _is_exact(c) -> bool:
    return isinstance(c, Rational)


def _normalize(c):
    if isinstance(c, bool):
        raise TypeError("boolean coefficient")
    if isinstance(c, Rational):
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    if hasattr(c, "_mpc_") or hasattr(c, "_mpf_"):
        return c
    raise TypeError(f"unsupported coefficient {c!r}")


@dataclass(frozen=True)
class Polynomial:
    """``coeffs[i]`` multiplies ``z**i``."""

    coeffs: tuple
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        cs = [_normalize(c) for c in self.coeffs]
        while len(cs) > 1 and _is_exact(cs[-1]) and cs[-1] == 0:
            cs.pop()
        if not cs:
            cs = [Fraction(0)]
        if len(cs) - 1 > MAX_DEGREE:
            raise ValueError(f"degree {len(cs) - 1} exceeds the cap {MAX_DEGREE}")
        object.__setattr__(self, "coeffs", tuple(cs))

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c) -> Polynomial:
        return cls((c,))

    @classmethod
    def monomial(cls, c, d: int) -> Polynomial:
        return cls((0,) * d + (c,))

    @classmethod
    def identity(cls) -> Polynomial:
        return cls((0, 1))

    # -- structure ----------------------------------------------------------
    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_exact(self) -> bool:
        return all(_is_exact(c) for c in self.coeffs)

    def is_zero(self) -> bool:
        return self.degree == 0 and _is_exact(self.coeffs[0]) and self.coeffs[0] == 0

    def _converted(self, ctx):
        key = (id(ctx), ctx.prec)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not ctx:
            hit = (ctx, tuple(to_complex(ctx, c) for c in self.coeffs))
            self._cache[key] = hit
        return hit[1]

    # -- evaluation -------------------------------------------------------------
    def __call__(self, z):
        cs = self._converted(z.context)
        acc = cs[-1]
        for c in reversed(cs[:-1]):
            acc = acc * z + c
        return acc

    def value_and_derivative(self, z):
        cs = self._converted(z.context)
        p = cs[-1]
        dp = z.context.zero
        for c in reversed(cs[:-1]):
            dp = dp * z + p
            p = p * z + c
        return p, dp

    def derivative(self) -> Polynomial:
        if self.degree == 0:
            return Polynomial((0,))
        return Polynomial(tuple(i * c for i, c in enumerate(self.coeffs) if i > 0))

    # -- algebra (exact when inputs are exact) ---------------------------------
    def scale(self, c) -> Polynomial:
        """``c * p(z)``."""
        c = _normalize(c)
        return Polynomial(tuple(c * x for x in self.coeffs))

    def compose_scale(self, c) -> Polynomial:
        """``p(c * z)``."""
        c = _normalize(c)
        out, power = [], Fraction(1) if _is_exact(c) else c ** 0
        for x in self.coeffs:
            out.append(x * power)
            power = power * c
        return Polynomial(tuple(out))

    def __neg__(self) -> Polynomial:
        return Polynomial(tuple(-c for c in self.coeffs))

    def add_constant(self, c) -> Polynomial:
        cs = list(self.coeffs)
        cs[0] = cs[0] + _normalize(c)
        return Polynomial(tuple(cs))

    def shift(self, c, ctx=None) -> Polynomial:
        """``p(z + c)`` by binomial expansion.

        Numeric ``c`` requires ``ctx``; the result then has numeric
        coefficients.
        """
        c = _normalize(c)
        if not _is_exact(c) or not self.is_exact:
            if ctx is None:
                ctx = c.context if hasattr(c, "context") else None
            if ctx is None:
                raise ValueError("numeric shift needs a context")
            cs = self._converted(ctx)
            c = to_complex(ctx, c)
            zero = ctx.mpc(0)
        else:
            cs = self.coeffs
            zero = Fraction(0)
        n = len(cs)
        out = [zero] * n
        powers = [c ** 0 if not isinstance(c, Fraction) else Fraction(1)]
        for _ in range(n - 1):
            powers.append(powers[-1] * c)
        for i, a in enumerate(cs):
            for k in range(i + 1):
                out[k] = out[k] + a * comb(i, k) * powers[i - k]
        return Polynomial(tuple(out))

    # -- serialization -----------------------------------------------------------
    def to_json(self) -> list:
        out = []
        for c in self.coeffs:
            if _is_exact(c):
                q = Fraction(c)
                out.append(str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}")
            else:
                out.append(complex_to_json(c.context.mpc(c)))
        return out

    @classmethod
    def from_json(cls, data: Sequence) -> Polynomial:
        if not isinstance(data, (list, tuple)) or not data:
            raise ValueError("polynomial must be a nonempty coefficient list")
        cs = []
        for c in data:
            if isinstance(c, (list, tuple)):
                re, im = (to_fraction(v) for v in c)
                if im == 0:
                    cs.append(re)
                else:
                    cs.append(_GaussianLiteral(re, im))
            elif isinstance(c, (int, str)) and not isinstance(c, bool):
                cs.append(to_fraction(c))
            else:
                raise ValueError(f"bad coefficient {c!r}")
        if any(isinstance(c, _GaussianLiteral) for c in cs):
            return _gaussian_polynomial(cs)
        return cls(tuple(cs))


@dataclass(frozen=True)
class _GaussianLiteral:
    re: Fraction
    im: Fraction


def _gaussian_polynomial(cs: Iterable) -> Polynomial:
    # complex decimal input is rounded once, at the maximal supported precision
    from .numerics import MAX_PREC, set_precision, to_real

    ctx = set_precision(min(MAX_PREC, 1024))
    out = []
    for c in cs:
        if isinstance(c, _GaussianLiteral):
            out.append(ctx.mpc(to_real(ctx, c.re), to_real(ctx, c.im)))
        else:
            out.append(c)
    return Polynomial(tuple(out))
