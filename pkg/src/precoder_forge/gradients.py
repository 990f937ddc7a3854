"""Closed-form gradients of the Gauss-Hermite mutual information.

Conventions: for a real function I of a complex matrix A, ``grad`` is the
matrix G with dI = Re tr(G^H dA). For Hermitian arguments (M, W) the gradient
is the Hermitian part, so dI = tr(G dM). Values are in bits.
"""
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, DimensionMismatch, NotSquare, NumericalFailure, SingularSystem
from .mi import (LN2, PRUNE, EffectiveChannel, _bits_from_sum, _kernels, _setup,
                 hermitian_part, run_chunks)
from .constellation import symbol_table

EIGEN_FLOOR = 1e-8
MMSE_MC_MAX_K = 10**6


@dataclass(frozen=True)
class Gradients:
    mi_bits: float
    grad_m: np.ndarray
    grad_w: np.ndarray
    grad_sigma_g2: np.ndarray | None
    mmse_cov: np.ndarray


def mi_and_grad_a(eff, c, noise, rule, *, frame=None, budget=None, workers=1, backend=None):
    """One quadrature pass returning (mi_bits, dI/dA) for the effective channel A."""
    st = _setup(eff, c, noise, rule, frame, budget)
    kern = _kernels(backend)
    parts = run_chunks(
        lambda lo, hi: kern.gh_grad(st.S, st.X, st.nodes, st.weights, st.inv_s2, lo, hi, PRUNE),
        st.K, workers)
    total = float(np.sum(np.concatenate([p[0] for p in parts])))
    zx, xb, zxb, q = (sum(p[i] for p in parts) for i in (2, 3, 4, 5))
    A, X = st.A, st.X
    second = (X.T * q) @ X.conj()
    acc = zx + A @ xb - zxb - A @ second
    grad = -(2.0 * st.inv_s2 / LN2) / st.K * acc
    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("gradient has non-finite entries")
    return _bits_from_sum(total, st, eff.n_r), grad


def grad_m(eff, c, noise, rule, **kw):
    """Hermitian gradient of I with respect to M = W^(1/2) (requires square M)."""
    return mi_and_grad_m(eff, c, noise, rule, **kw)[1]


def mi_and_grad_m(eff, c, noise, rule, **kw):
    if eff.n_r != eff.n_t:
        raise NotSquare(f"grad_m needs a square effective channel, got {eff.matrix.shape}")
    bits, g = mi_and_grad_a(eff, c, noise, rule, **kw)
    return bits, hermitian_part(g)


def grad_w(m_matrix, gm, method="eig", floor=EIGEN_FLOOR):
    """Solve M G_W + G_W M = G_M for the gradient with respect to W = M^2.

    ``method="eig"`` diagonalizes M and scales by 1/(lambda_i + lambda_j);
    entries coupling two eigenvalues at or below ``floor`` are set to zero.
    ``method="kron"`` solves (conj(M) (x) I + I (x) M) vec(G_W) = vec(G_M)
    with column-stacking vec and raises SingularSystem for a singular M.
    """
    m_matrix = np.asarray(m_matrix, dtype=complex)
    gm = np.asarray(gm, dtype=complex)
    n = m_matrix.shape[0]
    if m_matrix.shape != (n, n) or gm.shape != (n, n):
        raise DimensionMismatch("grad_w needs square matrices of equal size")
    if method == "kron":
        lam = np.linalg.eigvalsh(hermitian_part(m_matrix))
        if lam.min() <= floor:
            raise SingularSystem(f"smallest eigenvalue {lam.min():.3g} of M is below floor {floor}")
        eye = np.eye(n)
        ksum = np.kron(m_matrix.conj(), eye) + np.kron(eye, m_matrix)
        vec = np.linalg.solve(ksum, gm.reshape(-1, order="F"))
        return hermitian_part(vec.reshape(n, n, order="F"))
    if method != "eig":
        raise ValueError(f"unknown method {method!r}")
    lam, q = np.linalg.eigh(hermitian_part(m_matrix))
    lam = np.clip(lam, 0.0, None)
    g_t = q.conj().T @ gm @ q
    denom = lam[:, None] + lam[None, :]
    null = (lam[:, None] <= floor) & (lam[None, :] <= floor)
    g_t = np.where(null, 0.0, g_t / np.where(null, 1.0, denom))
    return hermitian_part(q @ g_t @ q.conj().T)


def grad_sigma_g2(v_g, gw, sigma_h):
    """diag(V_G^H grad_W V_G Sigma_H^2) as a real vector."""
    v_g = np.asarray(v_g)
    gw = np.asarray(gw)
    sigma_h = np.asarray(sigma_h, dtype=float)
    n = v_g.shape[0]
    if v_g.shape != (n, n) or gw.shape != (n, n) or sigma_h.shape != (n,):
        raise DimensionMismatch("grad_sigma_g2 needs V_G, grad_W (n x n) and sigma_h (n,)")
    d = np.diag(v_g.conj().T @ gw @ v_g) * sigma_h**2
    if np.abs(d.imag).max() > 1e-8 * max(1.0, np.abs(d).max()):
        raise NumericalFailure("grad_sigma_g2 has a non-negligible imaginary part")
    return d.real.copy()


def mmse_from_grad_w(gw, sigma2):
    """MMSE covariance from the W-gradient: Phi = sigma^2 ln2 grad_W (bits, unnormalized noise)."""
    return sigma2 * LN2 * np.asarray(gw)


def gradients(m_matrix, c, noise, rule, v_g=None, sigma_h=None, **kw):
    """All gradients at M (Hermitian PSD) from a single quadrature pass."""
    eff = EffectiveChannel(m_matrix, "sqrt_w")
    bits, gm = mi_and_grad_m(eff, c, noise, rule, **kw)
    gw = grad_w(eff.matrix, gm)
    gs = None
    if v_g is not None and sigma_h is not None:
        gs = grad_sigma_g2(v_g, gw, sigma_h)
    return Gradients(bits, gm, gw, gs, mmse_from_grad_w(gw, noise.sigma2))


def mmse_mc(h, g, c, noise, n_samples, seed=0):
    """Monte-Carlo MMSE covariance E[(x - E[x|y])(x - E[x|y])^H] for y = H G x + n.

    The posterior mean is computed by exact enumeration over all M^N_t
    transmit vectors. Returns ``(phi, std_err)`` with an elementwise std_err.
    """
    h = np.asarray(h, dtype=complex)
    A = h if g is None else h @ np.asarray(g, dtype=complex)
    n_r, n_t = A.shape
    K = c.order**n_t
    if K > MMSE_MC_MAX_K:
        raise BudgetExceeded(f"M^N_t = {K} exceeds {MMSE_MC_MAX_K} for exact posterior enumeration")
    X = symbol_table(c, n_t)
    S = X @ A.T
    sigma = np.sqrt(noise.sigma2)
    block = max(64, 2_000_000 // (K * n_r))
    n_blocks = -(-n_samples // block)
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)
    s1 = np.zeros((n_t, n_t), complex)
    s2 = np.zeros((n_t, n_t))
    for b, ss in enumerate(seqs):
        lo, hi = b * block, min((b + 1) * block, n_samples)
        rng = np.random.default_rng(ss)
        k = rng.integers(K, size=hi - lo)
        n = sigma * (rng.standard_normal((hi - lo, n_r)) + 1j * rng.standard_normal((hi - lo, n_r))) / np.sqrt(2)
        y = S[k] + n
        diff = y[:, None, :] - S[None, :, :]
        e = -(diff.real**2 + diff.imag**2).sum(-1) / noise.sigma2
        e -= e.max(axis=1, keepdims=True)
        post = np.exp(e)
        post /= post.sum(axis=1, keepdims=True)
        err = X[k] - post @ X
        outer = err[:, :, None] * err.conj()[:, None, :]
        s1 += outer.sum(axis=0)
        s2 += (np.abs(outer) ** 2).sum(axis=0)
    phi = s1 / n_samples
    var = np.clip(s2 / n_samples - np.abs(phi) ** 2, 0.0, None)
    return phi, np.sqrt(var / n_samples)
