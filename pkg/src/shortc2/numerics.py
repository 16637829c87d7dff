"""Configurable-precision complex arithmetic with a wide exponent range.

Values are plain :mod:`mpmath` numbers living in an explicit
``mpmath.MPContext``; every context carries its own mantissa precision and
no module-level state is mutated.  mpmath stores exponents as Python
integers, so quantities such as ``2**-(d_k ... d_1)`` never underflow.  The
range is nevertheless capped at ``|log2 x| < 2**62`` and anything outside is
reported through :class:`ExponentOverflow` instead of being carried along.

Norm conventions
----------------
``BigComplexPoint.max_norm`` (polydisk norm) is used for coordinate-wise
escape tests and recursion checks on ``max(|h1|, |h2|)``.
``BigComplexPoint.norm`` (euclidean) is used for membership in the unit ball
``B`` and for distances between orbit points.  Call sites state which one
they use.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral, Rational
from typing import Callable, Sequence

import mpmath
from mpmath import libmp

MIN_PREC = 64
MAX_PREC = 2**16
DEFAULT_PREC = 256
EXP_LIMIT = 2**62
PRECISION_ENV = "SHORTC2_PRECISION"


class ExponentOverflow(OverflowError):
    """A value left the representable range ``|log2 x| < 2**62``."""


class DomainError(ValueError):
    """Raised instead of producing NaN or -inf (log of zero and the like)."""


def set_precision(p: int) -> mpmath.MPContext:
    """Return a fresh arithmetic context with ``p``-bit mantissas."""
    if isinstance(p, bool) or not isinstance(p, Integral):
        raise TypeError(f"precision must be an integer, got {p!r}")
    if not MIN_PREC <= p <= MAX_PREC:
        raise ValueError(f"precision {p} outside [{MIN_PREC}, {MAX_PREC}]")
    ctx = mpmath.MPContext()
    ctx.prec = int(p)
    return ctx


def default_context() -> mpmath.MPContext:
    """Context at the precision named by ``SHORTC2_PRECISION`` (default 256)."""
    raw = os.environ.get(PRECISION_ENV)
    if raw is None or raw.strip() == "":
        return set_precision(DEFAULT_PREC)
    try:
        p = int(raw)
    except ValueError:
        raise ValueError(f"{PRECISION_ENV}={raw!r} is not an integer") from None
    return set_precision(p)


def clone(ctx: mpmath.MPContext, prec: int | None = None) -> mpmath.MPContext:
    return set_precision(ctx.prec if prec is None else prec)


# ---------------------------------------------------------------------------
# conversion
# ---------------------------------------------------------------------------

def to_fraction(value) -> Fraction:
    """Exact rational value of an int, Fraction, decimal string or mpf."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (Integral, Rational)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value)
    if hasattr(value, "_mpf_"):
        sign, man, exp, _ = value._mpf_
        if not man and exp:
            raise DomainError("non-finite value has no rational form")
        q = Fraction(int(man)) * (Fraction(2) ** int(exp))
        return -q if sign else q
    raise TypeError(f"cannot convert {value!r} to an exact rational")


def to_real(ctx: mpmath.MPContext, value):
    """Correctly rounded real in ``ctx``."""
    if hasattr(value, "_mpf_"):
        return ctx.mpf(value)
    if isinstance(value, float):
        return ctx.mpf(value)
    q = to_fraction(value)
    return ctx.make_mpf(libmp.from_rational(q.numerator, q.denominator, ctx.prec, "n"))


def to_complex(ctx: mpmath.MPContext, value):
    """Correctly rounded complex in ``ctx``.

    Accepts real inputs, Python complex, mpc values and ``[re, im]`` pairs
    (the JSON form, where both parts are decimal strings).
    """
    if hasattr(value, "_mpc_"):
        return ctx.mpc(value)
    if isinstance(value, complex):
        return ctx.mpc(value)
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex pair must have two entries, got {value!r}")
        return ctx.mpc(to_real(ctx, value[0]), to_real(ctx, value[1]))
    return ctx.mpc(to_real(ctx, value))


def complex_to_json(x, digits: int | None = None) -> list[str]:
    """``[re, im]`` as decimal strings carrying the full working precision."""
    ctx = x.context
    if digits is None:
        digits = int(ctx.prec * 0.30103) + 3
    return [ctx.nstr(x.real, digits, min_fixed=-5, max_fixed=30),
            ctx.nstr(x.imag, digits, min_fixed=-5, max_fixed=30)]


def real_to_str(x, digits: int | None = None) -> str:
    ctx = x.context
    if digits is None:
        digits = int(ctx.prec * 0.30103) + 3
    return ctx.nstr(x, digits, min_fixed=-5, max_fixed=30)


# ---------------------------------------------------------------------------
# range control
# ---------------------------------------------------------------------------

def _mpf_log2(t) -> int | None:
    sign, man, exp, bc = t
    if not man:
        if exp:
            raise ExponentOverflow("non-finite value")
        return None
    return exp + bc


def check(x):
    """Return ``x`` unchanged, or raise if its binary exponent is out of range."""
    parts = (x._mpc_) if hasattr(x, "_mpc_") else (x._mpf_,)
    for t in parts:
        e = _mpf_log2(t)
        if e is not None and abs(e) >= EXP_LIMIT:
            raise ExponentOverflow(f"binary exponent {e} outside +/-2**62")
    return x


def exponent(x) -> int | None:
    """Approximate ``log2|x|`` (exact to within one) or ``None`` for zero."""
    if hasattr(x, "_mpc_"):
        es = [e for e in map(_mpf_log2, x._mpc_) if e is not None]
        return max(es) if es else None
    return _mpf_log2(x._mpf_)


def pow2_neg(ctx: mpmath.MPContext, E: int):
    """Exactly ``2**-E``."""
    E = int(E)
    if E < 0:
        raise ValueError("exponent must be nonnegative")
    if E >= EXP_LIMIT - 1:
        raise ExponentOverflow(f"2**-{E} outside the exponent range")
    return ctx.ldexp(ctx.one, -E)


def rational_power(ctx: mpmath.MPContext, a: Fraction, E: int):
    """``a**E`` for rational ``a`` and integer ``E``; exact when ``a`` is a power of two."""
    a = Fraction(a)
    if a == 0:
        if E <= 0:
            raise DomainError("0 raised to a nonpositive power")
        return ctx.zero
    E = int(E)
    num, den = a.numerator, a.denominator
    sign = -1 if (num < 0 and E % 2) else 1
    num = abs(num)
    if num & (num - 1) == 0 and den & (den - 1) == 0:
        shift = (num.bit_length() - den.bit_length()) * E
        if abs(shift) >= EXP_LIMIT - 1:
            raise ExponentOverflow(f"({a})**{E} outside the exponent range")
        return sign * ctx.ldexp(ctx.one, shift)
    guess = E * (num.bit_length() - den.bit_length())
    if abs(guess) >= EXP_LIMIT - 2:
        raise ExponentOverflow(f"({a})**{E} outside the exponent range")
    return check(sign * ctx.power(to_real(ctx, Fraction(num, den)), E))


def log(ctx: mpmath.MPContext, x):
    """Natural logarithm; zero raises :class:`DomainError`."""
    if not x:
        raise DomainError("log of zero")
    return ctx.log(x)


def log2(ctx: mpmath.MPContext, x):
    if not x:
        raise DomainError("log2 of zero")
    return ctx.log(x, 2)


def exp(ctx: mpmath.MPContext, x):
    return check(ctx.exp(x))


def rel_err(x, y):
    """``|x - y| / max(|x|, |y|)``; zero when both vanish."""
    scale = max(abs(x), abs(y))
    if not scale:
        return scale
    return abs(x - y) / scale


# ---------------------------------------------------------------------------
# points of C^2
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BigComplexPoint:
    z: object
    w: object

    @property
    def ctx(self) -> mpmath.MPContext:
        return self.z.context

    def max_norm(self):
        return max(abs(self.z), abs(self.w))

    def norm(self):
        return self.ctx.hypot(abs(self.z), abs(self.w))

    def __add__(self, other: BigComplexPoint) -> BigComplexPoint:
        return BigComplexPoint(self.z + other.z, self.w + other.w)

    def __sub__(self, other: BigComplexPoint) -> BigComplexPoint:
        return BigComplexPoint(self.z - other.z, self.w - other.w)

    def __neg__(self) -> BigComplexPoint:
        return BigComplexPoint(-self.z, -self.w)

    def scale(self, c) -> BigComplexPoint:
        return BigComplexPoint(c * self.z, c * self.w)

    def checked(self) -> BigComplexPoint:
        check(self.z)
        check(self.w)
        return self

    def to(self, ctx: mpmath.MPContext) -> BigComplexPoint:
        return BigComplexPoint(ctx.mpc(self.z), ctx.mpc(self.w))

    def to_json(self) -> list[list[str]]:
        return [complex_to_json(self.z), complex_to_json(self.w)]

    def as_complex(self) -> tuple[complex, complex]:
        return complex(self.z), complex(self.w)


def point(ctx: mpmath.MPContext, z, w) -> BigComplexPoint:
    return BigComplexPoint(to_complex(ctx, z), to_complex(ctx, w))


def point_from_json(ctx: mpmath.MPContext, data: Sequence) -> BigComplexPoint:
    if not isinstance(data, (list, tuple)) or len(data) != 2:
        raise ValueError(f"point must be [z, w], got {data!r}")
    return point(ctx, data[0], data[1])


def distance(p: BigComplexPoint, q: BigComplexPoint):
    return (p - q).norm()


def point_rel_err(p: BigComplexPoint, q: BigComplexPoint):
    """Euclidean ``|p - q| / max(|p|, |q|)``."""
    scale = max(p.norm(), q.norm())
    if not scale:
        return scale
    return (p - q).norm() / scale


def precision_doubling_check(fn: Callable[[mpmath.MPContext], object],
                             ctx: mpmath.MPContext):
    """Relative change of ``fn`` when the precision is doubled.

    ``fn`` may return a scalar or a :class:`BigComplexPoint`.  The result is
    a float-free mpf in ``ctx``.
    """
    lo = fn(ctx)
    hi = fn(clone(ctx, min(2 * ctx.prec, MAX_PREC)))
    if isinstance(lo, BigComplexPoint):
        return ctx.mpf(point_rel_err(lo.to(ctx), hi.to(ctx)))
    return ctx.mpf(rel_err(ctx.mpc(lo), ctx.mpc(hi)))
