"""Exact evaluation of the summatory function D(x; r1,q1, r2,q2).

Three routes, used to cross-check each other:

  * summatory_bruteforce -- the definition, a single loop over the first
    progression (oracle role, for x up to ~1e6);
  * summatory_hyperbola  -- split the divisor pairs at sqrt(x); exact in
    O(sqrt(x)/q1 + sqrt(x)/q2) progression steps;
  * sieve_divisor_counts -- bulk d(n; p) for a whole range, by marking
    progression products block by block.

All integer arithmetic is exact; real bounds are floored once on entry.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .arith import CongruenceParams, _count_floor

# Marking loops work on blocks of this many entries by default (cache-sized).
DEFAULT_BLOCK_SIZE = 1 << 22
# Default cap for in-memory count arrays (bytes).
DEFAULT_MEM_BUDGET = 2 << 30

_SIEVE_MAGIC = b"CDSIEVE\x01"
_SIEVE_HEADER = struct.Struct("<8sIIIIIQQ")  # magic, version, r1,q1,r2,q2, start, end
_SIEVE_VERSION = 1


class BudgetExceededError(MemoryError):
    """A requested allocation would exceed the configured memory budget."""

    def __init__(self, requested: int, allowed: int, what: str = "sieve"):
        self.requested = requested
        self.allowed = allowed
        super().__init__(
            f"{what} needs {requested} bytes but the budget allows {allowed};"
            f" raise mem_budget or shrink the range"
        )


def summatory_bruteforce(x: float, p: CongruenceParams) -> int:
    """D(x; p) by the definition: sum over n1 <= x in the first progression
    of the count of admissible cofactors n2 <= x/n1.  Oracle role."""
    X = math.floor(x)
    if X < 1:
        return 0
    r1, q1 = p.first.r, p.first.q
    r2, q2 = p.second.r, p.second.q
    total = 0
    for n1 in range(r1, X + 1, q1):
        total += _count_floor(X // n1, r2, q2)
    return total


def summatory_hyperbola(x: float, p: CongruenceParams) -> int:
    """D(x; p) exactly, by counting pairs split at s = floor(sqrt(x)):

        sum_{n1<=s} cnt2(x/n1) + sum_{n2<=s} cnt1(x/n2) - cnt1(s)*cnt2(s).

    Equals summatory_bruteforce(x, p) for every x."""
    X = math.floor(x)
    if X < 1:
        return 0
    r1, q1 = p.first.r, p.first.q
    r2, q2 = p.second.r, p.second.q
    s = math.isqrt(X)
    total = 0
    if s >= r1:
        n1 = np.arange(r1, s + 1, q1, dtype=np.int64)
        total += int(np.sum((X // n1 - r2) // q2 + 1))
    if s >= r2:
        n2 = np.arange(r2, s + 1, q2, dtype=np.int64)
        total += int(np.sum((X // n2 - r1) // q1 + 1))
    total -= _count_floor(s, r1, q1) * _count_floor(s, r2, q2)
    return total


def _first_in_progression(m: int, r: int, q: int) -> int:
    """Smallest member of the progression r (mod q) that is >= m."""
    if m <= r:
        return r
    return r + q * ((m - r + q - 1) // q)


def sieve_block(lo: int, hi: int, p: CongruenceParams) -> np.ndarray:
    """counts[i] = d(lo + i; p) for lo <= n <= hi, as uint32.

    Divisor pairs are split at s = isqrt(hi): pairs with n1 <= s are marked
    from the first progression, pairs with n1 > s (hence n2 <= s) from the
    second.  Each ordered pair is marked exactly once.
    """
    if lo < 1 or hi < lo:
        raise ValueError(f"need 1 <= lo <= hi, got [{lo}, {hi}]")
    r1, q1 = p.first.r, p.first.q
    r2, q2 = p.second.r, p.second.q
    counts = np.zeros(hi - lo + 1, dtype=np.uint32)
    s = math.isqrt(hi)
    for a in range(r1, s + 1, q1):
        b_min = _first_in_progression(-(-lo // a), r2, q2)
        b_max = hi // a
        if b_min <= b_max:
            counts[a * b_min - lo: a * b_max - lo + 1: a * q2] += 1
    for b in range(r2, s + 1, q2):
        a_min = _first_in_progression(max(s + 1, -(-lo // b)), r1, q1)
        a_max = hi // b
        if a_min <= a_max:
            counts[a_min * b - lo: a_max * b - lo + 1: b * q1] += 1
    return counts


@dataclass
class DivisorSieve:
    """Table of d(n; params) for range_start <= n <= range_end."""

    params: CongruenceParams
    range_start: int
    range_end: int
    counts: np.ndarray  # uint32, counts[i] = d(range_start + i; params)

    def __post_init__(self):
        if self.range_start < 1 or self.range_end < self.range_start:
            raise ValueError("need 1 <= range_start <= range_end")
        if len(self.counts) != self.range_end - self.range_start + 1:
            raise ValueError("counts length does not match the declared range")

    def count(self, n: int) -> int:
        if not (self.range_start <= n <= self.range_end):
            raise IndexError(f"n={n} outside sieve range [{self.range_start}, {self.range_end}]")
        return int(self.counts[n - self.range_start])


def sieve_divisor_counts(N: int, p: CongruenceParams, *,
                         block_size: int = DEFAULT_BLOCK_SIZE,
                         mem_budget: int = DEFAULT_MEM_BUDGET) -> DivisorSieve:
    """DivisorSieve over [1, N], built block by block."""
    return sieve_divisor_range(1, N, p, block_size=block_size, mem_budget=mem_budget)


def sieve_divisor_range(lo: int, hi: int, p: CongruenceParams, *,
                        block_size: int = DEFAULT_BLOCK_SIZE,
                        mem_budget: int = DEFAULT_MEM_BUDGET) -> DivisorSieve:
    """DivisorSieve over [lo, hi]; refuses to allocate past mem_budget."""
    need = (hi - lo + 1) * 4
    if need > mem_budget:
        raise BudgetExceededError(need, mem_budget)
    counts = np.empty(hi - lo + 1, dtype=np.uint32)
    for b_lo in range(lo, hi + 1, block_size):
        b_hi = min(b_lo + block_size - 1, hi)
        counts[b_lo - lo: b_hi - lo + 1] = sieve_block(b_lo, b_hi, p)
    return DivisorSieve(p, lo, hi, counts)


def dump_sieve(sieve: DivisorSieve, path: str | os.PathLike) -> None:
    """Write a sieve to disk: fixed header + raw little-endian uint32 counts.

    The write is atomic (temp file + rename)."""
    r1, q1, r2, q2 = sieve.params.as_tuple()
    header = _SIEVE_HEADER.pack(_SIEVE_MAGIC, _SIEVE_VERSION, r1, q1, r2, q2,
                                sieve.range_start, sieve.range_end)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sieve.counts, dtype="<u4").tobytes())
    os.replace(tmp, path)


def load_sieve(path: str | os.PathLike) -> DivisorSieve:
    """Read a sieve written by dump_sieve; validates magic, version and size."""
    with open(path, "rb") as fh:
        raw = fh.read(_SIEVE_HEADER.size)
        if len(raw) != _SIEVE_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, r1, q1, r2, q2, start, end = _SIEVE_HEADER.unpack(raw)
        if magic != _SIEVE_MAGIC:
            raise ValueError(f"{path}: not a sieve file (bad magic)")
        if version != _SIEVE_VERSION:
            raise ValueError(f"{path}: unsupported sieve version {version}")
        n = end - start + 1
        data = fh.read(4 * n)
        if len(data) != 4 * n:
            raise ValueError(f"{path}: truncated count array")
    counts = np.frombuffer(data, dtype="<u4").astype(np.uint32)
    return DivisorSieve(CongruenceParams.of(r1, q1, r2, q2), start, end, counts)
