"""Gauss-Hermite rules for the weight exp(-x^2) and their tensor grids.

Nodes are the roots of the physicists' Hermite polynomial H_L, found from the
symmetric Jacobi matrix (Golub-Welsch) and polished with one Newton step.
Weights use the closed form

    c(l) = 2^(L-1) L! sqrt(pi) / (L^2 H_{L-1}(v_l)^2),

normalized so that sum(c) = sqrt(pi).
"""
from dataclasses import dataclass
from math import factorial, pi, sqrt

import numpy as np

from .errors import QuadratureOverflow, UnsupportedOrder

MAX_ORDER = 20
DEFAULT_GRID_CAP = 10**9


@dataclass(frozen=True)
class QuadratureRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


def hermite_poly(n, x):
    """H_n(x) and H_{n-1}(x) via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    h_prev = np.zeros_like(x)
    h = np.ones_like(x)
    for j in range(n):
        h_prev, h = h, 2.0 * x * h - 2.0 * j * h_prev
    return h, h_prev


def hermite_rule(L):
    if not isinstance(L, (int, np.integer)) or not 1 <= L <= MAX_ORDER:
        raise UnsupportedOrder(f"Gauss-Hermite order must be in [1, {MAX_ORDER}], got {L}")
    L = int(L)
    off = np.sqrt(np.arange(1, L) / 2.0)
    jacobi = np.diag(off, 1) + np.diag(off, -1)
    x = np.linalg.eigvalsh(jacobi)
    # Newton polish, H_L' = 2 L H_{L-1}
    hl, hlm1 = hermite_poly(L, x)
    x = x - hl / (2.0 * L * hlm1)
    # exact symmetry about zero
    x = 0.5 * (x - x[::-1])
    _, hlm1 = hermite_poly(L, x)
    w = 2.0 ** (L - 1) * factorial(L) * sqrt(pi) / (L**2 * hlm1**2)
    w = 0.5 * (w + w[::-1])
    for a in (x, w):
        a.setflags(write=False)
    return QuadratureRule(order=L, nodes=x, weights=w)


def _check_grid(L, dims, cap):
    if dims < 1:
        raise ValueError("tensor grid needs at least one dimension")
    size = L**dims
    if size > cap:
        raise QuadratureOverflow(f"{L}^{dims} = {size} grid points exceeds cap {cap}")
    return size


def tensor_iter(rule, dims, start=0, stop=None, cap=DEFAULT_GRID_CAP):
    """Yield ``(coords, weight_product, node_vector)`` in odometer order.

    Coordinate 0 varies fastest. ``start``/``stop`` select a contiguous slice
    of the flat index range so callers can split the grid into chunks.
    """
    L = rule.order
    size = _check_grid(L, dims, cap)
    stop = size if stop is None else min(stop, size)
    for flat in range(start, stop):
        coords = []
        rem = flat
        for _ in range(dims):
            rem, d = divmod(rem, L)
            coords.append(d)
        w = 1.0
        for d in coords:
            w *= rule.weights[d]
        yield tuple(coords), w, rule.nodes[coords]


def tensor_grid(rule, dims, cap=DEFAULT_GRID_CAP):
    """Vectorized tensor grid: ``(coords, weights, nodes)`` arrays in odometer order."""
    L = rule.order
    size = _check_grid(L, dims, cap)
    flat = np.arange(size)
    coords = np.stack([(flat // L**d) % L for d in range(dims)], axis=1)
    weights = np.prod(rule.weights[coords], axis=1)
    return coords, weights, rule.nodes[coords]


def complex_noise_grid(rule, n_rx, sigma, cap=DEFAULT_GRID_CAP):
    """Quadrature points for a CN(0, sigma^2 I) vector of length ``n_rx``.

    Real dims are interleaved (re_1, im_1, re_2, ...). Returned weights
    include the (1/pi)^n_rx factor so they sum to one.
    """
    _, w, v = tensor_grid(rule, 2 * n_rx, cap)
    nodes = sigma * (v[:, 0::2] + 1j * v[:, 1::2])
    return np.ascontiguousarray(nodes), w / pi**n_rx
