"""Moment integrals, mean values and short-interval variance of Delta.

Everything is built on one streaming sweep: the integration range is cut
at every divisor jump (where the integrand is discontinuous), wide
jump-free stretches are subdivided, and an order-8 Gauss-Legendre rule is
applied piece by piece.  Between jumps the integrand is analytic, so the
quadrature error is negligible next to the statistical content.

The sweep works in the coordinate nu = q1*q2*t, where jump positions are
exact integers; results are scaled back by 1/(q1*q2) at the end.  Piece
sums are accumulated in fixed chunks with compensated addition, and
blocks are combined in index order, so results are identical no matter
how many threads run the block tasks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .arith import CongruenceParams
from .evaluator import DeltaEvaluator
from .quadrature import GL8_NODES, GL8_WEIGHTS, SUM_CHUNK, NeumaierVector, subdivide_pieces

# Supported integrand shapes: Delta^k, |Delta|^k, and the one-sided squares.
_MODES = ("signed", "abs", "pos", "neg")


@dataclass(frozen=True)
class PowerSpec:
    """One integrand: power k of Delta in the given mode."""

    power: int
    mode: str = "signed"

    def __post_init__(self):
        if self.power < 1:
            raise ValueError(f"power must be >= 1, got {self.power}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")


@dataclass
class MomentReport:
    """Grid of T values with the k-th moment integrals and the fitted growth."""

    k: int
    params: CongruenceParams
    grid: list[float]
    integrals: list[float]
    fitted_Ck: float
    fitted_exponent: float
    residuals: list[float]


@dataclass
class ExcursionReport:
    """Largest positive excursion of the k-th moment remainder on [T, 2T]."""

    k: int
    T: float
    X_star: float
    F_k_value: float
    normalized: float


def _split_at_roots(a, b, D, va, vb, params):
    """Split pieces where Delta changes sign, so each piece is single-signed.

    Delta(q1*q2*t) is strictly decreasing between jumps (the main term's
    derivative dominates), so there is at most one root per piece and
    bisection brackets it safely."""
    cross = (va > 0) & (vb < 0)
    if not np.any(cross):
        return a, b, D
    Q = params.modulus_product
    coeff = params.linear_coeff
    lo = a[cross].copy()
    hi = b[cross].copy()
    Dc = D[cross]
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        t = mid / Q
        pos = Dc - (t * np.log(t) - coeff * t) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.max(hi - lo) < 1e-9:
            break
    root = 0.5 * (lo + hi)
    croot = np.empty(len(a))
    croot[cross] = root
    m = np.where(cross, 2, 1)
    idx = np.repeat(np.arange(len(a)), m)
    k = np.arange(len(idx)) - np.repeat(np.cumsum(m) - m, m)
    a2, b2, D2 = a[idx].copy(), b[idx].copy(), D[idx]
    first_of_pair = (k == 0) & cross[idx]
    b2[first_of_pair] = croot[idx][first_of_pair]
    a2[k == 1] = croot[idx][k == 1]
    return a2, b2, D2


def _block_task(ev, bi, nu_lo, nu_hi, cps_nu, specs, max_piece_nu, chunk):
    """Integrate all specs over block bi's share; returns [n_specs, n_intervals]."""
    n_spec, n_int = len(specs), len(cps_nu)
    out = np.zeros((n_spec, n_int))
    step = ev.block_jump_step(bi, nu_lo, nu_hi)
    if step is None:
        return out
    lo, hi, jn, jD, D0 = step
    inner = cps_nu[(cps_nu > lo) & (cps_nu < hi)]
    bounds = np.unique(np.concatenate([[lo, hi], jn, inner]))
    a, b = bounds[:-1], bounds[1:]
    pos = np.searchsorted(jn, a, side="right")
    D = np.where(pos == 0, D0, jD[np.maximum(pos, 1) - 1])
    a, b, D = subdivide_pieces(a, b, max_piece_nu, D)

    Q = ev.params.modulus_product
    coeff = ev.params.linear_coeff
    need_split = any(s.mode != "signed" for s in specs)
    if need_split:
        ta, tb = a / Q, b / Q
        va = D - (ta * np.log(ta) - coeff * ta)
        vb = D - (tb * np.log(tb) - coeff * tb)
        a, b, D = _split_at_roots(a, b, D, va, vb, ev.params)

    interval = np.searchsorted(cps_nu, 0.5 * (a + b), side="left")
    max_pow = max(s.power for s in specs)
    acc = NeumaierVector((n_spec, n_int))
    for i0 in range(0, len(a), chunk):
        sl = slice(i0, i0 + chunk)
        ac, bc, Dc, ic = a[sl], b[sl], D[sl], interval[sl]
        mid = 0.5 * (ac + bc)
        half = 0.5 * (bc - ac)
        t = (mid[:, None] + half[:, None] * GL8_NODES[None, :]) / Q
        vals = Dc[:, None] - (t * np.log(t) - coeff * t)
        powers = {1: vals}
        for p in range(2, max_pow + 1):
            powers[p] = powers[p - 1] * vals
        piece_sign = None
        contrib = np.zeros((n_spec, n_int))
        for si, spec in enumerate(specs):
            v = powers[spec.power]
            if spec.mode == "signed":
                w = v
            elif spec.mode == "abs":
                w = np.abs(v)
            else:
                if piece_sign is None:
                    tm = mid / Q
                    piece_sign = Dc - (tm * np.log(tm) - coeff * tm) > 0
                keep = piece_sign if spec.mode == "pos" else ~piece_sign
                w = np.where(keep[:, None], v, 0.0)
            piece = half * (w @ GL8_WEIGHTS)
            contrib[si] = np.bincount(ic, weights=piece, minlength=n_int)
        acc.add(contrib)
    return acc.value


def sweep_power_integrals(ev: DeltaEvaluator, t_lo: float, t_hi: float,
                          specs: list[PowerSpec], checkpoints=None, *,
                          threads: int = 1, max_piece: float = 1.0,
                          chunk: int = SUM_CHUNK) -> np.ndarray:
    """integral of each spec'd power of Delta(q1*q2*x) dx from t_lo to each checkpoint.

    checkpoints must be ascending and end at t_hi (default: just [t_hi]).
    Returns an array of shape [len(specs), len(checkpoints)].
    """
    if not t_lo > 0:
        raise ValueError(f"need t_lo > 0, got {t_lo}")
    if not t_lo < t_hi:
        raise ValueError(f"need t_lo < t_hi, got [{t_lo}, {t_hi}]")
    if checkpoints is None:
        checkpoints = [t_hi]
    cps = np.asarray(checkpoints, dtype=np.float64)
    if len(cps) == 0 or np.any(np.diff(cps) <= 0):
        raise ValueError("checkpoints must be strictly ascending")
    if not math.isclose(cps[-1], t_hi):
        raise ValueError("last checkpoint must equal t_hi")
    Q = ev.params.modulus_product
    ev.require_range(Q * t_hi)
    nu_lo, nu_hi = Q * t_lo, Q * t_hi
    cps_nu = cps * Q
    cps_nu[-1] = nu_hi
    max_piece_nu = max_piece * Q
    blocks = list(ev.block_index_range(nu_lo, nu_hi))

    def task(bi):
        return _block_task(ev, bi, nu_lo, nu_hi, cps_nu, specs, max_piece_nu, chunk)

    acc = NeumaierVector((len(specs), len(cps)))
    if threads <= 1 or len(blocks) == 1:
        for bi in blocks:
            acc.add(task(bi))
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for part in ex.map(task, blocks):
                acc.add(part)
    return np.cumsum(acc.value, axis=1) / Q


def integrate_delta_power(T: float, k: int, ev: DeltaEvaluator,
                          tol: float = 1e-9, *, threads: int = 1) -> float:
    """integral from 1 to T of Delta^k(q1*q2*x) dx, exact between jumps."""
    if k < 1:
        raise ValueError(f"power k must be a positive integer, got {k}")
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    if T == 1:
        return 0.0
    max_piece = 1.0 if tol >= 1e-12 else 0.5
    out = sweep_power_integrals(ev, 1.0, T, [PowerSpec(k)],
                                threads=threads, max_piece=max_piece)
    return float(out[0, -1])


def integrate_abs_delta_power(T: float, k: int, ev: DeltaEvaluator, *,
                              threads: int = 1) -> float:
    """integral from 1 to T of |Delta(q1*q2*x)|^k dx."""
    if k < 1:
        raise ValueError(f"power k must be a positive integer, got {k}")
    if T <= 1:
        return 0.0
    out = sweep_power_integrals(ev, 1.0, T, [PowerSpec(k, "abs")], threads=threads)
    return float(out[0, -1])


def mean_value_check(T: float, ev: DeltaEvaluator, *,
                     threads: int = 1) -> tuple[float, float]:
    """Empirical slope and normalised remainder of the unscaled mean value.

    integral from 1 to T of Delta(x; p) dx has main term
    (r1/q1 - 1/2)(r2/q2 - 1/2) * T with remainder O((q1*q2)^(1/4) T^(3/4));
    returns (integral/T, remainder / ((q1*q2)^(1/4) T^(3/4))).

    Note the argument convention: this integrates Delta(x) dx, not
    Delta(q1*q2*x) dx; internally it is the scaled sweep over [1/Q, T/Q]
    times Q."""
    if T <= 1:
        raise ValueError(f"need T > 1, got {T}")
    p = ev.params
    Q = p.modulus_product
    out = sweep_power_integrals(ev, 1.0 / Q, T / Q, [PowerSpec(1)], threads=threads)
    integral = Q * float(out[0, -1])
    target = (p.first.r / p.first.q - 0.5) * (p.second.r / p.second.q - 0.5)
    residual = integral - target * T
    return integral / T, residual / (Q ** 0.25 * T ** 0.75)


def moment_denominator(T: float, k: int) -> float:
    """integral from 1 to T of x^(k/4) dx, in closed form."""
    e = 1.0 + k / 4.0
    return (T ** e - 1.0) / e


def estimate_Ck(k: int, grid, ev: DeltaEvaluator, *, threads: int = 1,
                tol: float = 1e-9) -> MomentReport:
    """Fit the k-th moment constant and growth exponent over a T grid.

    For each T the raw integral of Delta^k(q1*q2*x) is divided by the
    closed-form integral of x^(k/4); the reported constant is the median
    of those ratios (robust against the slowly decaying oscillation) and
    the exponent comes from a log-log fit of the raw integral (target
    1 + k/4)."""
    if not (1 <= k <= 9):
        raise ValueError(f"k must be within [1, 9], got {k}")
    grid = sorted(float(T) for T in grid)
    if len(grid) < 2 or grid[0] < 1:
        raise ValueError("grid must contain at least two T values >= 1")
    if grid[-1] < 10 * grid[0]:
        raise ValueError("degenerate grid: must span at least one decade")
    max_piece = 1.0 if tol >= 1e-12 else 0.5
    out = sweep_power_integrals(ev, 1.0, grid[-1], [PowerSpec(k)],
                                checkpoints=grid, threads=threads,
                                max_piece=max_piece)
    integrals = out[0]
    ratios = np.array([I / moment_denominator(T, k) for I, T in zip(integrals, grid)])
    fitted_Ck = float(np.median(ratios))
    mask = integrals != 0
    slope = float(np.polyfit(np.log(np.array(grid)[mask]),
                             np.log(np.abs(integrals[mask])), 1)[0])
    return MomentReport(k=k, params=ev.params, grid=list(grid),
                        integrals=[float(v) for v in integrals],
                        fitted_Ck=fitted_Ck, fitted_exponent=slope,
                        residuals=[float(r - fitted_Ck) for r in ratios])


# -- short-interval variance -------------------------------------------------

def short_interval_envelope(T: float, h0: float) -> float:
    """Comparison envelope T*h0*log^3(sqrt(T)/h0) + T*log^6(T)."""
    L = math.log(T)
    return T * h0 * math.log(math.sqrt(T) / h0) ** 3 + T * L ** 6


def lemma_h0_range_ok(T: float, h0: float) -> bool:
    """Whether h0 sits in the uniform range 1 <= h0 <= sqrt(T)/2."""
    return 1.0 <= h0 <= 0.5 * math.sqrt(T)


def _variance_integral(t_lo: float, t_hi: float, h0: float, ev: DeltaEvaluator,
                       *, threads: int = 1, chunk: int = SUM_CHUNK) -> float:
    """integral over [t_lo, t_hi] of (Delta(Q(x+h0)) - Delta(Qx))^2 dx."""
    p = ev.params
    Q = p.modulus_product
    coeff = p.linear_coeff
    ev.require_range(Q * (t_hi + h0))
    n_hi = math.ceil(Q * (t_hi + h0))
    jb = ev.jump_block(1, max(n_hi, 1))
    jt = jb.n / Q
    jD = jb.D.astype(np.float64)

    inner1 = jt[(jt > t_lo) & (jt < t_hi)]
    shifted = jt - h0
    inner2 = shifted[(shifted > t_lo) & (shifted < t_hi)]
    bounds = np.unique(np.concatenate([[t_lo, t_hi], inner1, inner2]))
    a, b = bounds[:-1], bounds[1:]
    a, b = subdivide_pieces(a, b, 1.0)
    mid = 0.5 * (a + b)
    i1 = np.searchsorted(jb.n, Q * mid, side="right")
    i2 = np.searchsorted(jb.n, Q * (mid + h0), side="right")
    D1 = np.where(i1 == 0, 0.0, jD[np.maximum(i1, 1) - 1])
    D2 = np.where(i2 == 0, 0.0, jD[np.maximum(i2, 1) - 1])
    dD = D2 - D1

    def task(i0):
        sl = slice(i0, i0 + chunk)
        ac, bc, dc = a[sl], b[sl], dD[sl]
        m = 0.5 * (ac + bc)
        half = 0.5 * (bc - ac)
        x = m[:, None] + half[:, None] * GL8_NODES[None, :]
        xs = x + h0
        dM = (xs * np.log(xs) - coeff * xs) - (x * np.log(x) - coeff * x)
        piece = half * ((dc[:, None] - dM) ** 2 @ GL8_WEIGHTS)
        return float(np.sum(piece))

    starts = range(0, len(a), chunk)
    acc = 0.0
    comp = 0.0
    if threads <= 1:
        results = map(task, starts)
    else:
        ex = ThreadPoolExecutor(max_workers=threads)
        results = ex.map(task, starts)
    for s in results:
        t = acc + s
        comp += (acc - t) + s if abs(acc) >= abs(s) else (s - t) + acc
        acc = t
    if threads > 1:
        ex.shutdown()
    return acc + comp


def short_interval_variance(T: float, h0: float, ev: DeltaEvaluator, *,
                            threads: int = 1) -> float:
    """I(T, h0) = integral from 1 to T of (Delta(Q(x+h0)) - Delta(Qx))^2 dx.

    h0 outside [1, sqrt(T)/2] is still computed; callers can consult
    lemma_h0_range_ok to flag it."""
    if h0 < 0:
        raise ValueError(f"need h0 >= 0, got {h0}")
    if T <= 1 or h0 == 0:
        return 0.0
    return _variance_integral(1.0, T, h0, ev, threads=threads)


def f_k_excursion(k: int, T: float, Ck: float, ev: DeltaEvaluator, *,
                  grid_points: int = 64, threads: int = 1) -> ExcursionReport:
    """Scan [T, 2T] for the largest moment-remainder excursion.

    F_k(X) = integral from 1 to X of Delta^k(q1*q2*x) dx - Ck * X^(1+k/4);
    returns the X maximising F_k together with the value normalised by
    X^(1/2 + k/4) * log^-7(X).  Ck is an empirical input (from estimate_Ck)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be odd, got {k}")
    if grid_points < 2:
        raise ValueError("degenerate grid: need at least two scan points")
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    grid = np.linspace(T, 2.0 * T, grid_points)
    out = sweep_power_integrals(ev, 1.0, 2.0 * T, [PowerSpec(k)],
                                checkpoints=grid, threads=threads)
    F = out[0] - Ck * grid ** (1.0 + k / 4.0)
    j = int(np.argmax(F))
    X = float(grid[j])
    norm = float(F[j] / (X ** (0.5 + k / 4.0) * math.log(X) ** -7.0))
    return ExcursionReport(k=k, T=float(T), X_star=X,
                           F_k_value=float(F[j]), normalized=norm)
