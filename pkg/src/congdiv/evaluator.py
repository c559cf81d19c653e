"""Point and segment access to the error term Delta(x; r1,q1, r2,q2).

A DeltaEvaluator serves a declared range [1, n_max] of the summatory
function exactly.  Storage is organised in fixed-size blocks: each block
holds the divisor counts plus an int64 prefix array anchored by one
O(sqrt n) hyperbola evaluation, so blocks are independent of each other
(and can be built concurrently) while D(n) lookups inside a materialised
block are O(1).  Recently used blocks are kept in a small LRU cache;
bulk sweeps stream blocks without retaining them.

Delta itself is D(x) minus the smooth main term, with D exact up to the
single final floating subtraction.  That cancellation costs about
log10(D/Delta) digits, which double precision absorbs for x <= 1e12;
ranges beyond that are refused at construction.
"""

from __future__ import annotations

import math
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .arith import CongruenceParams, main_term
from .summatory import (DEFAULT_BLOCK_SIZE, DEFAULT_MEM_BUDGET,
                        BudgetExceededError, DivisorSieve, dump_sieve,
                        load_sieve, sieve_block, summatory_hyperbola)

# Exactness ceiling for the float subtraction in delta (see module docstring).
MAX_EXACT_N = 10 ** 12


class SieveRangeError(ValueError):
    """A query left the evaluator's declared exact range."""

    def __init__(self, requested: float, capacity: int):
        self.requested = requested
        self.capacity = capacity
        super().__init__(
            f"range not cached: query reaches n={requested:.6g} but the evaluator"
            f" covers n <= {capacity}; build it with a larger n_max"
        )


@dataclass(frozen=True)
class Segment:
    """Maximal interval (t_lo, t_hi) on which D(q1*q2*t) is constant.

    d_value is that constant, so Delta(q1*q2*t) = d_value - main_term(q1*q2*t)
    everywhere on the open interval."""

    t_lo: float
    t_hi: float
    d_value: int


@dataclass
class JumpBlock:
    """Jump data for one contiguous n-range [n_lo, n_hi].

    n[i] are the points with d(n; p) > 0, d[i] the jump heights,
    D[i] = D(n[i]) (inclusive), and base_D = D(n_lo - 1)."""

    n_lo: int
    n_hi: int
    n: np.ndarray      # int64
    d: np.ndarray      # int64
    D: np.ndarray      # int64
    base_D: int


class _Block:
    __slots__ = ("lo", "hi", "counts", "prefix")

    def __init__(self, lo: int, hi: int, counts: np.ndarray, base: int):
        self.lo = lo
        self.hi = hi
        self.counts = counts
        self.prefix = np.cumsum(counts, dtype=np.int64)
        self.prefix += base


class DeltaEvaluator:
    """Exact D / Delta queries for one parameter pair over [1, n_max]."""

    def __init__(self, params: CongruenceParams, n_max: int, *,
                 block_size: int = DEFAULT_BLOCK_SIZE,
                 max_cached_blocks: int = 6,
                 mem_budget: int = DEFAULT_MEM_BUDGET,
                 block_cache_dir: str | os.PathLike | None = None):
        if n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {n_max}")
        if n_max > MAX_EXACT_N:
            raise ValueError(f"n_max={n_max} exceeds the {MAX_EXACT_N:.0e} exactness ceiling")
        if block_size < 1024:
            raise ValueError("block_size must be at least 1024")
        resident = max_cached_blocks * block_size * 12
        if resident > mem_budget:
            raise BudgetExceededError(resident, mem_budget, what="evaluator block cache")
        self.params = params
        self.n_max = int(n_max)
        self.block_size = int(block_size)
        self.max_cached_blocks = max_cached_blocks
        self.block_cache_dir = block_cache_dir
        self._blocks: OrderedDict[int, _Block] = OrderedDict()
        self._lock = threading.RLock()

    # -- block plumbing ----------------------------------------------------

    def _block_range(self, bi: int) -> tuple[int, int]:
        lo = bi * self.block_size + 1
        hi = min(lo + self.block_size - 1, self.n_max)
        return lo, hi

    def _block_path(self, bi: int) -> str | None:
        if self.block_cache_dir is None:
            return None
        r1, q1, r2, q2 = self.params.as_tuple()
        name = f"block_r{r1}q{q1}_r{r2}q{q2}_bs{self.block_size}_{bi}.sieve"
        return os.path.join(self.block_cache_dir, name)

    def _build_block(self, bi: int) -> _Block:
        lo, hi = self._block_range(bi)
        counts = None
        path = self._block_path(bi)
        if path is not None and os.path.exists(path):
            cached = load_sieve(path)
            if (cached.params == self.params and cached.range_start == lo
                    and cached.range_end == hi):
                counts = cached.counts
        if counts is None:
            counts = sieve_block(lo, hi, self.params)
            if path is not None:
                os.makedirs(self.block_cache_dir, exist_ok=True)
                dump_sieve(DivisorSieve(self.params, lo, hi, counts), path)
        base = summatory_hyperbola(lo - 1, self.params) if lo > 1 else 0
        return _Block(lo, hi, counts, base)

    def _get_block(self, bi: int) -> _Block:
        with self._lock:
            blk = self._blocks.get(bi)
            if blk is not None:
                self._blocks.move_to_end(bi)
                return blk
        blk = self._build_block(bi)
        with self._lock:
            self._blocks[bi] = blk
            self._blocks.move_to_end(bi)
            while len(self._blocks) > self.max_cached_blocks:
                self._blocks.popitem(last=False)
        return blk

    def _transient_block(self, bi: int) -> _Block:
        # For streaming sweeps: reuse a cached block if present, but do not
        # evict point-query blocks by inserting new ones.
        with self._lock:
            blk = self._blocks.get(bi)
        return blk if blk is not None else self._build_block(bi)

    # -- point queries -------------------------------------------------------

    def summatory(self, x: float) -> int:
        """D(x; params), exact.  Falls back to the hyperbola method above n_max."""
        n = math.floor(x)
        if n < 1:
            return 0
        if n > self.n_max:
            return summatory_hyperbola(n, self.params)
        blk = self._get_block((n - 1) // self.block_size)
        return int(blk.prefix[n - blk.lo])

    def delta(self, x: float) -> float:
        """Delta(x; params) = D(x) - main_term(x)."""
        return self.summatory(x) - main_term(x, self.params)

    def delta_scaled(self, t: float) -> float:
        """Delta(q1*q2*t; params), the scaled form used by every statistic."""
        return self.delta(self.params.modulus_product * t)

    def delta_scaled_many(self, ts: np.ndarray) -> np.ndarray:
        """Vectorised delta_scaled over an array of abscissae."""
        ts = np.asarray(ts, dtype=np.float64)
        Q = self.params.modulus_product
        x = Q * ts
        n = np.floor(x).astype(np.int64)
        D = np.empty(len(ts), dtype=np.float64)
        low = n < 1
        D[low] = 0.0
        over = n > self.n_max
        if np.any(over):
            D[over] = [summatory_hyperbola(int(v), self.params) for v in n[over]]
        mid = ~(low | over)
        if np.any(mid):
            nm = n[mid]
            Dm = np.empty(len(nm), dtype=np.int64)
            for bi in np.unique((nm - 1) // self.block_size):
                blk = self._get_block(int(bi))
                sel = (nm >= blk.lo) & (nm <= blk.hi)
                Dm[sel] = blk.prefix[nm[sel] - blk.lo]
            D[mid] = Dm
        u = x / Q
        return D - (u * np.log(u) - self.params.linear_coeff * u)

    # -- jump access ---------------------------------------------------------

    def _check_range(self, n_hi: float) -> None:
        if n_hi > self.n_max:
            raise SieveRangeError(n_hi, self.n_max)

    def require_range(self, n_hi: float) -> None:
        """Raise SieveRangeError if a query would reach past n_max."""
        self._check_range(n_hi)

    def block_index_range(self, nu_lo: float, nu_hi: float) -> range:
        """Indices of the blocks whose territory intersects (nu_lo, nu_hi)."""
        first = max(int(nu_lo) - 1, 0) // self.block_size
        last = (math.ceil(nu_hi) - 1) // self.block_size
        return range(first, last + 1)

    def block_jump_step(self, bi: int, nu_lo: float, nu_hi: float):
        """Step data of D within block bi's share of the window (nu_lo, nu_hi).

        Returns (lo, hi, jn, jD, D0) where [lo, hi] is the block's clipped
        sub-window in the scaled-by-Q coordinate nu = q1*q2*t, jn/jD are the
        jump positions (strictly inside) and post-jump D values as float64,
        and D0 = D(floor(lo)).  Returns None when the share is empty.
        """
        blk = self._transient_block(bi)
        lo = max(nu_lo, float(blk.lo - 1))
        hi = min(nu_hi, float(blk.hi))
        if not lo < hi:
            return None
        n_first = max(math.floor(lo) + 1, blk.lo)
        n_last = min(math.ceil(hi) - 1, blk.hi)
        if n_last >= n_first:
            i0, i1 = n_first - blk.lo, n_last - blk.lo
            counts = blk.counts[i0:i1 + 1]
            nz = np.nonzero(counts)[0]
            jn = (n_first + nz).astype(np.float64)
            jD = blk.prefix[i0 + nz].astype(np.float64)
        else:
            jn = np.empty(0)
            jD = np.empty(0)
        m = math.floor(lo)
        if m >= blk.lo:
            D0 = float(blk.prefix[m - blk.lo])
        else:
            D0 = float(blk.prefix[0] - blk.counts[0])
        return lo, hi, jn, jD, D0

    def jump_block(self, n_lo: int, n_hi: int) -> JumpBlock:
        """Jump arrays for [n_lo, n_hi] (materialises every covering block)."""
        if n_lo < 1 or n_hi < n_lo:
            raise ValueError(f"need 1 <= n_lo <= n_hi, got [{n_lo}, {n_hi}]")
        self._check_range(n_hi)
        parts = list(self.iter_jump_blocks(n_lo, n_hi, transient=False))
        base = parts[0].base_D
        return JumpBlock(n_lo, n_hi,
                         np.concatenate([p.n for p in parts]),
                         np.concatenate([p.d for p in parts]),
                         np.concatenate([p.D for p in parts]),
                         base)

    def iter_jump_blocks(self, n_lo: int, n_hi: int, *,
                         transient: bool = True) -> Iterator[JumpBlock]:
        """Yield per-block jump arrays covering [n_lo, n_hi], in order."""
        if n_lo < 1 or n_hi < n_lo:
            raise ValueError(f"need 1 <= n_lo <= n_hi, got [{n_lo}, {n_hi}]")
        self._check_range(n_hi)
        first = (n_lo - 1) // self.block_size
        last = (n_hi - 1) // self.block_size
        for bi in range(first, last + 1):
            yield self._jump_block_of(bi, n_lo, n_hi, transient)

    def _jump_block_of(self, bi: int, n_lo: int, n_hi: int,
                       transient: bool = True) -> JumpBlock:
        blk = self._transient_block(bi) if transient else self._get_block(bi)
        lo = max(blk.lo, n_lo)
        hi = min(blk.hi, n_hi)
        i0, i1 = lo - blk.lo, hi - blk.lo
        counts = blk.counts[i0:i1 + 1]
        nz = np.nonzero(counts)[0]
        base = int(blk.prefix[i0 - 1]) if i0 > 0 else int(blk.prefix[0] - blk.counts[0])
        return JumpBlock(lo, hi,
                         (lo + nz).astype(np.int64),
                         counts[nz].astype(np.int64),
                         blk.prefix[i0 + nz].copy(),
                         base)

    # -- segments -------------------------------------------------------------

    def segment_arrays(self, t_lo: float, t_hi: float):
        """Constant-D pieces tiling [t_lo, t_hi] as arrays (a, b, D).

        Pieces may be split at internal block edges (harmless for
        integration and threshold scans); iter_segments merges them."""
        if not 0 < t_lo < t_hi:
            raise ValueError(f"need 0 < t_lo < t_hi, got [{t_lo}, {t_hi}]")
        Q = self.params.modulus_product
        self._check_range(Q * t_hi)
        a_parts, b_parts, d_parts = [], [], []
        for bi in self.block_index_range(Q * t_lo, Q * t_hi):
            step = self.block_jump_step(bi, Q * t_lo, Q * t_hi)
            if step is None:
                continue
            lo, hi, jn, jD, D0 = step
            bounds = np.concatenate([[lo], jn, [hi]]) / Q
            a_parts.append(bounds[:-1])
            b_parts.append(bounds[1:])
            d_parts.append(np.concatenate([[D0], jD]))
        a = np.concatenate(a_parts)
        b = np.concatenate(b_parts)
        D = np.concatenate(d_parts)
        keep = b > a
        return a[keep], b[keep], D[keep]

    def iter_segments(self, t_lo: float, t_hi: float) -> Iterator[Segment]:
        """Maximal constant-D segments tiling [t_lo, t_hi] in the scaled variable.

        Jumps fall at t = n/(q1*q2) for every n with d(n; params) > 0; runs of
        n with d = 0 produce no boundary."""
        if not t_lo < t_hi:
            raise ValueError(f"need t_lo < t_hi, got [{t_lo}, {t_hi}]")
        if t_lo <= 0:
            raise ValueError(f"need t_lo > 0, got {t_lo}")
        Q = self.params.modulus_product
        self._check_range(Q * t_hi)
        n_start = math.floor(Q * t_lo)
        cur_t = t_lo
        cur_D = summatory_hyperbola(n_start, self.params) if n_start >= 1 else 0
        n_lo = max(n_start + 1, 1)
        n_hi = math.ceil(Q * t_hi) - 1
        if n_hi >= n_lo:
            for jb in self.iter_jump_blocks(n_lo, n_hi):
                for n, D in zip(jb.n.tolist(), jb.D.tolist()):
                    t = n / Q
                    if t <= t_lo:
                        cur_D = D
                        continue
                    if t >= t_hi:
                        continue
                    if t > cur_t:
                        yield Segment(cur_t, t, cur_D)
                    cur_t, cur_D = t, D
        if t_hi > cur_t:
            yield Segment(cur_t, t_hi, cur_D)
