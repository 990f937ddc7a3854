"""Pure-numpy quadrature kernels (fallback when the compiled module is absent).

Both kernels work on a contiguous range ``[k_lo, k_hi)`` of transmit vectors.
For every quadrature node ``n_p`` and vector ``k`` they evaluate

    lse[k, p] = ln sum_m exp(-|n_p - s_k + s_m|^2 / sigma^2),   s_k = A x_k

and return ``sum_p w_p lse[k, p]`` per k plus ``sum_k lse[k, p]`` per node.
``prune`` is accepted for signature parity with the compiled kernels and ignored.
"""
import numpy as np
from scipy.special import logsumexp

_BLOCK_ELEMS = 4_000_000


def _block(P, K, R):
    return max(1, _BLOCK_ELEMS // (P * K * R))


def _exponents(S, nodes, inv_s2, ks):
    z = nodes[None, :, :] - S[ks, None, :]
    diff = z[:, :, None, :] + S[None, None, :, :]
    d2 = (diff.real**2 + diff.imag**2).sum(-1)
    return z, -d2 * inv_s2


def gh_lse(S, nodes, weights, inv_s2, k_lo, k_hi, prune=None):
    K, R = S.shape
    P = nodes.shape[0]
    k_sums = np.empty(k_hi - k_lo)
    node_sums = np.zeros(P)
    step = _block(P, K, R)
    for b0 in range(k_lo, k_hi, step):
        ks = slice(b0, min(b0 + step, k_hi))
        _, e = _exponents(S, nodes, inv_s2, ks)
        lse = logsumexp(e, axis=2)
        k_sums[ks.start - k_lo:ks.stop - k_lo] = lse @ weights
        node_sums += lse.sum(axis=0)
    return k_sums, node_sums


def gh_grad(S, X, nodes, weights, inv_s2, k_lo, k_hi, prune=None):
    """Also returns the accumulators needed for the gradient in A.

    zx  = sum w_p (n_p - s_k) x_k^H
    xb  = sum w_p xbar_kp x_k^H
    zxb = sum w_p (n_p - s_k) xbar_kp^H
    q_m = sum w_p post_kp(m)
    where post_kp is the softmax over m and xbar_kp = sum_m post_kp(m) x_m.
    """
    K, R = S.shape
    n_t = X.shape[1]
    P = nodes.shape[0]
    k_sums = np.empty(k_hi - k_lo)
    node_sums = np.zeros(P)
    zx = np.zeros((R, n_t), complex)
    xb = np.zeros((n_t, n_t), complex)
    zxb = np.zeros((R, n_t), complex)
    q = np.zeros(K)
    step = _block(P, K, max(R, n_t))
    for b0 in range(k_lo, k_hi, step):
        ks = slice(b0, min(b0 + step, k_hi))
        z, e = _exponents(S, nodes, inv_s2, ks)
        lse = logsumexp(e, axis=2)
        k_sums[ks.start - k_lo:ks.stop - k_lo] = lse @ weights
        node_sums += lse.sum(axis=0)
        post = np.exp(e - lse[:, :, None])
        xbar = post @ X
        xk = X[ks].conj()
        q += np.einsum("bpk,p->k", post, weights)
        zx += np.einsum("bpr,p,bt->rt", z, weights, xk)
        xb += np.einsum("bpt,p,bu->tu", xbar, weights, xk)
        zxb += np.einsum("bpr,p,bpt->rt", z, weights, xbar.conj())
    return k_sums, node_sums, zx, xb, zxb, q
