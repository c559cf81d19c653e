"""Fixed-order Gauss-Legendre quadrature and order-stable accumulation.

Integrands in this package are piecewise analytic between divisor jumps,
so a fixed order-8 rule per (sub)piece is spectrally accurate; pieces are
optionally subdivided to a maximum width first.  Sums over millions of
pieces are accumulated chunk-wise in a fixed order with a Neumaier
compensation term, so results do not depend on thread count.
"""

from __future__ import annotations

import numpy as np

# Order-8 Gauss-Legendre rule on [-1, 1].
GL8_NODES, GL8_WEIGHTS = np.polynomial.legendre.leggauss(8)
# Lower-order embedded rule used only for cheap error estimates.
GL4_NODES, GL4_WEIGHTS = np.polynomial.legendre.leggauss(4)

# Pieces are summed in fixed chunks of this many entries (determinism).
SUM_CHUNK = 1 << 18


class NeumaierSum:
    """Compensated scalar accumulator (Kahan-Neumaier)."""

    __slots__ = ("s", "c")

    def __init__(self, value: float = 0.0):
        self.s = float(value)
        self.c = 0.0

    def add(self, x: float) -> None:
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def value(self) -> float:
        return self.s + self.c


class NeumaierVector:
    """Elementwise compensated accumulator for fixed-shape arrays."""

    __slots__ = ("s", "c")

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, x: np.ndarray) -> None:
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def value(self) -> np.ndarray:
        return self.s + self.c


def chunked_sum(values: np.ndarray, chunk: int = SUM_CHUNK) -> float:
    """Sum in fixed ascending chunks with compensation across chunks."""
    acc = NeumaierSum()
    for i in range(0, len(values), chunk):
        acc.add(float(np.sum(values[i:i + chunk])))
    return acc.value


def subdivide_pieces(a: np.ndarray, b: np.ndarray, max_width: float,
                     *payloads: np.ndarray) -> tuple[np.ndarray, ...]:
    """Split [a_i, b_i] into equal parts no wider than max_width.

    Returns (a', b', *payloads') where payload rows are repeated along
    with their piece.  Pieces already narrow enough pass through intact.
    """
    w = b - a
    m = np.maximum(np.ceil(w / max_width).astype(np.int64), 1)
    if np.all(m == 1):
        return (a, b) + payloads
    idx = np.repeat(np.arange(len(a)), m)
    offsets = np.arange(len(idx)) - np.repeat(np.cumsum(m) - m, m)
    step = (w / m)[idx]
    a2 = a[idx] + offsets * step
    b2 = a2 + step
    return (a2, b2) + tuple(payload[idx] for payload in payloads)


def gl8_piece_integrals(f, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Order-8 Gauss-Legendre on every [a_i, b_i]; f maps node arrays to values."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * GL8_NODES[None, :]
    return half * (f(nodes) @ GL8_WEIGHTS)


def gl4_piece_integrals(f, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * GL4_NODES[None, :]
    return half * (f(nodes) @ GL4_WEIGHTS)
