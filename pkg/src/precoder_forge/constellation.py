"""Unit-energy QAM alphabets and enumeration of transmit symbol vectors.

Symbol vectors are indexed little-endian in radix ``M``: vector ``k`` carries
``points[(k // M**i) % M]`` on antenna ``i``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, UnsupportedOrder

SUPPORTED_ORDERS = (4, 16, 32, 64)


@dataclass(frozen=True)
class Constellation:
    order: int
    points: np.ndarray

    @property
    def bits_per_symbol(self):
        return float(np.log2(self.order))

    def energy(self):
        return float(np.mean(np.abs(self.points) ** 2))


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def make_qam(M):
    """Square QAM for M in {4, 16, 64}, cross QAM (6x6 grid minus corners) for 32.

    Points are ordered row-major over the I/Q grid: quadrature level outer,
    in-phase level inner, both ascending.
    """
    if M not in SUPPORTED_ORDERS:
        raise UnsupportedOrder(f"QAM order {M} not in {SUPPORTED_ORDERS}")
    if M == 32:
        levels = np.arange(-5, 6, 2)
        grid = [complex(i, q) for q in levels for i in levels
                if not (abs(i) == 5 and abs(q) == 5)]
    else:
        side = int(round(np.sqrt(M)))
        levels = np.arange(-(side - 1), side, 2)
        grid = [complex(i, q) for q in levels for i in levels]
    pts = np.array(grid, dtype=complex)
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return Constellation(order=M, points=_readonly(pts))


def digits(c, n_t, k):
    """Per-antenna symbol indices of vector ``k`` (little-endian radix M)."""
    total = c.order ** n_t
    if not 0 <= k < total:
        raise IndexOutOfRange(f"symbol vector index {k} outside [0, {total})")
    out = []
    for _ in range(n_t):
        k, d = divmod(k, c.order)
        out.append(d)
    return out


def symbol_vector(c, n_t, k):
    return c.points[digits(c, n_t, k)]


def symbol_table(c, n_t):
    """All ``M**n_t`` symbol vectors as a ``(M**n_t, n_t)`` array, row ``k`` = x_k."""
    idx = np.arange(c.order ** n_t)
    cols = [(idx // c.order ** i) % c.order for i in range(n_t)]
    return c.points[np.stack(cols, axis=1)]


def difference_vectors(c, n_t, k):
    """Row ``m`` holds ``x_k - x_m``."""
    xk = symbol_vector(c, n_t, k)
    return xk[None, :] - symbol_table(c, n_t)
