"""Exact counting in arithmetic progressions and the smooth main term.

The central object is the divisor function restricted to a pair of
congruence classes,

    d(n; r1,q1, r2,q2) = #{ (n1, n2) : n = n1*n2, n1 = r1 (mod q1),
                                                  n2 = r2 (mod q2) },

where the pairs are *ordered*: (a, b) and (b, a) count separately.  Its
summatory function D(x) grows like (x/(q1*q2)) * log(x/(q1*q2)) and the
smooth approximation ("main term") involves the digamma function at the
rational points r1/q1 and r2/q2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

# Euler-Mascheroni constant, 17 significant digits (fixed literal, never
# computed at runtime).
EULER_GAMMA = 0.57721566490153286


@dataclass(frozen=True)
class CongruenceClass:
    """A residue class r (mod q) with 1 <= r <= q and gcd(r, q) = 1."""

    r: int
    q: int

    def __post_init__(self):
        if not (isinstance(self.r, int) and isinstance(self.q, int)):
            raise TypeError("residue and modulus must be integers")
        if self.q < 1:
            raise ValueError(f"modulus must be positive, got q={self.q}")
        if not (1 <= self.r <= self.q):
            raise ValueError(f"residue must satisfy 1 <= r <= q, got r={self.r}, q={self.q}")
        if math.gcd(self.r, self.q) != 1:
            raise ValueError(f"residue and modulus must be coprime, got gcd({self.r},{self.q}) != 1")


@dataclass(frozen=True)
class CongruenceParams:
    """The ordered pair of congruence classes (r1 mod q1, r2 mod q2)."""

    first: CongruenceClass
    second: CongruenceClass

    @classmethod
    def of(cls, r1: int, q1: int, r2: int, q2: int) -> "CongruenceParams":
        return cls(CongruenceClass(r1, q1), CongruenceClass(r2, q2))

    @property
    def modulus_product(self) -> int:
        return self.first.q * self.second.q

    @cached_property
    def digamma_sum(self) -> float:
        """psi(r1/q1) + psi(r2/q2)."""
        return (digamma_rational(self.first.r, self.first.q)
                + digamma_rational(self.second.r, self.second.q))

    @cached_property
    def linear_coeff(self) -> float:
        """Coefficient of the linear part of the main term: psi1 + psi2 + 1."""
        return self.digamma_sum + 1.0

    def main_term_scaled(self, t: float) -> float:
        """Main term in the scaled variable: M(q1*q2*t) = t*log(t) - (psi1+psi2+1)*t."""
        return t * math.log(t) - self.linear_coeff * t

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.first.r, self.first.q, self.second.r, self.second.q)

    def __str__(self) -> str:
        r1, q1, r2, q2 = self.as_tuple()
        return f"({r1} mod {q1}, {r2} mod {q2})"


def count_in_class(y: float, cls: CongruenceClass) -> int:
    """#{ n : 1 <= n <= y, n = r (mod q) }.

    Accepts real y and floors internally; exact integer arithmetic after
    the floor.  Total on y >= 0 (returns 0 when the range is empty).
    """
    m = math.floor(y)
    if m < cls.r:
        return 0
    return (m - cls.r) // cls.q + 1


def _count_floor(m: int, r: int, q: int) -> int:
    # count_in_class for an already-floored integer bound; 1 <= r <= q makes
    # the floor-division form total (result >= 0 automatically).
    return (m - r) // q + 1 if m >= r else 0


def divisor_count(n: int, p: CongruenceParams) -> int:
    """d(n; r1,q1, r2,q2): ordered factorizations n = n1*n2 meeting both classes."""
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    r1, q1 = p.first.r, p.first.q
    r2, q2 = p.second.r, p.second.q
    total = 0
    d = 1
    while d * d <= n:
        if n % d == 0:
            e = n // d
            if d % q1 == r1 % q1 and e % q2 == r2 % q2:
                total += 1
            if d != e and e % q1 == r1 % q1 and d % q2 == r2 % q2:
                total += 1
        d += 1
    return total


@lru_cache(maxsize=None)
def digamma_rational(r: int, q: int) -> float:
    """psi(r/q) for integers 1 <= r <= q, by the closed finite formula.

    For 0 < r < q:

        psi(r/q) = -gamma - log(2q) - (pi/2) * cot(pi r/q)
                   + 2 * sum_{m=1}^{ceil(q/2)-1} cos(2 pi m r / q) * log(sin(pi m / q))

    and psi(1) = -gamma exactly.  Accuracy is limited only by rounding in
    the O(q)-term sum, comfortably below 1e-12 for the small moduli used
    here.  Does not require gcd(r, q) = 1.
    """
    if r <= 0 or r > q:
        raise ValueError(f"digamma_rational requires 1 <= r <= q, got r={r}, q={q}")
    if r == q:
        return -EULER_GAMMA
    acc = -EULER_GAMMA - math.log(2 * q) - 0.5 * math.pi / math.tan(math.pi * r / q)
    for m in range(1, (q + 1) // 2):
        acc += 2.0 * math.cos(2.0 * math.pi * m * r / q) * math.log(math.sin(math.pi * m / q))
    return acc


def main_term(x: float, p: CongruenceParams) -> float:
    """Smooth approximation to D(x; p):

        (x/Q) * log(x/Q) - (psi(r1/q1) + psi(r2/q2) + 1) * (x/Q),   Q = q1*q2.

    Valid as an asymptotic for x >= q1*q2; evaluated as the same formula
    below that (callers decide whether to flag the range).
    """
    if x <= 0:
        raise ValueError(f"main_term requires x > 0, got {x}")
    u = x / p.modulus_product
    return u * math.log(u) - p.linear_coeff * u
