"""Exact rational values with a symbolic minus-infinity.

Every quantity in this package (valuations, prices, offers, utilities) is an
exact rational number.  A symbolic ``-inf`` marks technologically infeasible
bundles: it absorbs addition and loses every comparison against a rational.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Union


class NegInf:
    """Singleton minus-infinity. ``NEG_INF + x == NEG_INF``, ``NEG_INF < x``."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __add__(self, other):
        return self

    __radd__ = __add__
    __sub__ = __add__

    def __rsub__(self, other):
        raise ArithmeticError("cannot subtract -inf")

    def __mul__(self, other):
        if isinstance(other, NegInf) or other <= 0:
            raise ArithmeticError("-inf may only be scaled by a positive rational")
        return self

    __rmul__ = __mul__

    def __lt__(self, other):
        return other is not self

    def __le__(self, other):
        return True

    def __gt__(self, other):
        return False

    def __ge__(self, other):
        return other is self

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("tradenet.NEG_INF")

    def __repr__(self):
        return "-inf"

    def __bool__(self):
        return True


NEG_INF = NegInf()

ExtValue = Union[Fraction, NegInf]

Rational = Union[int, Fraction]


def is_finite(x: ExtValue) -> bool:
    return x is not NEG_INF


def as_fraction(x) -> Fraction:
    """Coerce an int, Fraction, or exact decimal string to a Fraction.

    Floats are rejected: they would silently break the exact-arithmetic
    contract of the package.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not rational values")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"expected an exact rational, got {type(x).__name__}: {x!r}")


def parse_value(x) -> ExtValue:
    """Parse a JSON-level value: a number, an exact decimal string, or -inf."""
    if isinstance(x, str) and x.strip().lower() in ("-inf", "neg_inf", "-infinity"):
        return NEG_INF
    return as_fraction(x)


def format_rational(q: ExtValue) -> str:
    """Render exactly: a terminating decimal when possible, else ``num/den``."""
    if q is NEG_INF:
        return "-inf"
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{q.numerator}/{q.denominator}"
    shift = max(twos, fives)
    scaled = q.numerator * 10**shift // q.denominator
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(shift + 1, "0")
    whole, frac = digits[:-shift], digits[-shift:]
    return f"{sign}{whole}.{frac}"
