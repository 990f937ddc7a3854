"""Mutual information of y = A x + n for a QAM input vector x.

``mi_gh`` is the Gauss-Hermite approximation

    I ~= N_t log2 M - N_r / ln 2 - (1/M^N_t) sum_k fhat_k,

where fhat_k is the tensor quadrature of log2 sum_m exp(-|n - A(x_k - x_m)|^2 / sigma^2)
over the 2 N_r real noise dimensions at n = sigma * v. ``mi_mc`` is the
independent Monte-Carlo estimate of the same expectation.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log, pi

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .channels import as_channel
from .constellation import symbol_table
from .errors import BudgetExceeded, DimensionMismatch, NonFinite, QuadratureOverflow
from .quadrature import complex_noise_grid

LN2 = log(2.0)
DEFAULT_BUDGET = 10**10
K_CHUNK = 256
PRUNE = 50.0
_INT64_MAX = 2**63 - 1


def term_budget():
    """Cap on L^(2 N_r) * M^N_t; ``PRECODER_FORGE_BUDGET`` overrides the default."""
    raw = os.environ.get("PRECODER_FORGE_BUDGET")
    return int(float(raw)) if raw else DEFAULT_BUDGET


def hermitian_part(a):
    return 0.5 * (a + a.conj().T)


def psd_sqrt(w):
    """Hermitian square root; negative and round-off-sized eigenvalues become zero."""
    lam, q = np.linalg.eigh(hermitian_part(w))
    # without this, eps * |W| noise turns into sqrt(eps) entries of M
    tiny = len(lam) * np.finfo(float).eps * max(abs(lam).max(initial=0.0), 1e-300)
    lam = np.where(lam <= tiny, 0.0, lam)
    return hermitian_part((q * np.sqrt(lam)) @ q.conj().T)


@dataclass(frozen=True)
class EffectiveChannel:
    """The matrix multiplying x: either a product H G or the Hermitian M = W^(1/2)."""

    matrix: np.ndarray
    origin: str = "product"

    def __post_init__(self):
        a = as_channel(self.matrix)
        object.__setattr__(self, "matrix", a)
        if self.origin not in ("product", "sqrt_w"):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.origin == "sqrt_w":
            if a.shape[0] != a.shape[1]:
                raise DimensionMismatch("sqrt_w channel must be square")
            scale = max(1.0, np.abs(a).max())
            if np.abs(a - a.conj().T).max() > 1e-9 * scale:
                raise ValueError("sqrt_w channel must be Hermitian")
            if np.linalg.eigvalsh(hermitian_part(a)).min() < -1e-9 * scale:
                raise ValueError("sqrt_w channel must be positive semidefinite")

    @classmethod
    def product(cls, h, g=None):
        h = as_channel(h)
        return cls(h if g is None else h @ np.asarray(g, dtype=complex), "product")

    @classmethod
    def from_w(cls, w):
        return cls(psd_sqrt(w), "sqrt_w")

    def sufficient_statistic(self):
        """M = (A^H A)^(1/2): same mutual information, N_t receive dimensions."""
        if self.origin == "sqrt_w":
            return self
        a = self.matrix
        return EffectiveChannel.from_w(a.conj().T @ a)

    @property
    def n_r(self):
        return self.matrix.shape[0]

    @property
    def n_t(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class MiEstimate:
    bits: float
    method: str
    std_err: float | None = None
    op_count: int | None = None


class OpCounter:
    """Operation tally for the quadrature path: each processed transmit vector x_k is charged
    (2L-1)^(2 N_r) contraction steps, each costing L^4 N_r (2 N_t + N_r - 1)."""

    def __init__(self):
        self.ops = 0
        self.k_terms = 0

    def charge(self, n_k, M, n_t, n_r, L):
        self.k_terms += n_k
        self.ops += n_k * (2 * L - 1) ** (2 * n_r) * L**4 * n_r * (2 * n_t + n_r - 1)


def op_count_formula(M, n_t, n_r, L):
    """M^N_t (2L-1)^(2 N_r) L^4 N_r (2 N_t + N_r - 1)."""
    for v in (M, n_t, n_r, L):
        if int(v) < 1:
            raise ValueError("op_count_formula arguments must be positive")
    n = M**n_t * (2 * L - 1) ** (2 * n_r) * L**4 * n_r * (2 * n_t + n_r - 1)
    if n > _INT64_MAX:
        raise QuadratureOverflow(f"operation count {n} does not fit in 64 bits")
    return n


def check_budget(n_r, K, L, budget=None):
    budget = term_budget() if budget is None else budget
    terms = L ** (2 * n_r) * K
    if terms > budget:
        raise BudgetExceeded(
            f"L^(2N_r) * M^N_t = {L}^{2 * n_r} * {K} = {terms} exceeds budget {budget}; "
            "use per-group processing for large arrays")
    return terms


@dataclass
class _Setup:
    A: np.ndarray
    X: np.ndarray
    S: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    inv_s2: float
    M: int
    K: int


def _setup(eff, c, noise, rule, frame=None, budget=None):
    A = eff.matrix
    n_r, n_t = A.shape
    K = c.order**n_t
    check_budget(n_r, K, rule.order, budget)
    X = symbol_table(c, n_t)
    S = np.ascontiguousarray(X @ A.T)
    nodes, w = complex_noise_grid(rule, n_r, np.sqrt(noise.sigma2))
    if frame is not None:
        frame = np.asarray(frame, dtype=complex)
        if frame.shape != (n_r, n_r):
            raise DimensionMismatch(f"frame must be {n_r}x{n_r}")
        nodes = np.ascontiguousarray(nodes @ frame.T)
    return _Setup(A, X, S, nodes, w, 1.0 / noise.sigma2, c.order, K)


def run_chunks(fn, K, workers=1):
    """Apply ``fn(k_lo, k_hi)`` over fixed-size k chunks; results in chunk order."""
    bounds = [(lo, min(lo + K_CHUNK, K)) for lo in range(0, K, K_CHUNK)]
    if workers and workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda b: fn(*b), bounds))
    return [fn(*b) for b in bounds]


def _kernels(backend):
    return _backend.kernels if backend is None else _backend.get(backend)


def _bits_from_sum(total, st, n_r):
    n_t = st.X.shape[1]
    bits = n_t * np.log2(st.M) - n_r / LN2 - total / (st.K * LN2)
    if not np.isfinite(bits):
        raise NonFinite("mutual information evaluated to a non-finite value")
    return float(bits)


def mi_gh(eff, c, noise, rule, *, frame=None, budget=None, workers=1, backend=None, counter=None):
    """Gauss-Hermite mutual information in bits; N_r = 2 uses the bilinear form.

    ``frame`` (unitary, N_r x N_r) rotates the quadrature nodes, n -> frame @ n.
    """
    if eff.n_r == 2:
        return mi_gh_bilinear(eff, c, noise, rule, frame=frame, budget=budget,
                              workers=workers, backend=backend, counter=counter)
    return mi_gh_general(eff, c, noise, rule, frame=frame, budget=budget,
                         workers=workers, backend=backend, counter=counter)


def mi_gh_general(eff, c, noise, rule, *, frame=None, budget=None, workers=1, backend=None, counter=None):
    """Reference nested-sum evaluation for any N_r."""
    st = _setup(eff, c, noise, rule, frame, budget)
    kern = _kernels(backend)
    parts = run_chunks(lambda lo, hi: kern.gh_lse(st.S, st.nodes, st.weights, st.inv_s2, lo, hi, PRUNE),
                       st.K, workers)
    total = float(np.sum(np.concatenate([p[0] for p in parts])))
    if counter is not None:
        counter.charge(st.K, st.M, eff.n_t, eff.n_r, rule.order)
    ops = counter.ops if counter is not None else None
    return MiEstimate(_bits_from_sum(total, st, eff.n_r), "gauss_hermite", op_count=ops)


def bilinear_tensor(eff, c, noise, rule, *, frame=None, budget=None, workers=1, backend=None):
    """V = sum_k V_k as an L x L x L x L array indexed [k_r1, k_i1, k_r2, k_i2] (natural log)."""
    if eff.n_r != 2:
        raise DimensionMismatch(f"bilinear form needs N_r = 2, got {eff.n_r}")
    st = _setup(eff, c, noise, rule, frame, budget)
    kern = _kernels(backend)
    parts = run_chunks(lambda lo, hi: kern.gh_lse(st.S, st.nodes, st.weights, st.inv_s2, lo, hi, PRUNE),
                       st.K, workers)
    node_sums = np.zeros_like(parts[0][1])
    for p in parts:
        node_sums += p[1]
    L = rule.order
    # odometer order: coordinate 0 fastest, so C-order reshape reverses the axes
    return node_sums.reshape(L, L, L, L).transpose(3, 2, 1, 0), st


def mi_gh_bilinear(eff, c, noise, rule, *, frame=None, budget=None, workers=1, backend=None, counter=None):
    """N_r = 2 evaluation as nested bilinear forms c^T F c, F[a, b] = c^T V[a, b] c."""
    V, st = bilinear_tensor(eff, c, noise, rule, frame=frame, budget=budget,
                            workers=workers, backend=backend)
    cw = rule.weights
    F = np.einsum("abij,i,j->ab", V, cw, cw)
    total = float(cw @ F @ cw) / pi**2
    if counter is not None:
        counter.charge(st.K, st.M, eff.n_t, 2, rule.order)
    ops = counter.ops if counter is not None else None
    return MiEstimate(_bits_from_sum(total, st, 2), "gauss_hermite", op_count=ops)


def _mc_block(K, n_r):
    return max(64, 2_000_000 // (K * n_r))


def mi_mc(eff, c, noise, n_samples, seed=0):
    """Monte-Carlo estimate with std_err = std(terms) / sqrt(n_samples).

    Each sample draws k uniformly and n ~ CN(0, sigma^2 I); the per-sample term
    is log2 sum_m exp(-(|n - A(x_k - x_m)|^2 - |n|^2) / sigma^2).
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    A = eff.matrix
    n_r, n_t = A.shape
    X = symbol_table(c, n_t)
    S = X @ A.T
    K = len(X)
    sigma = np.sqrt(noise.sigma2)
    block = _mc_block(K, n_r)
    n_blocks = -(-n_samples // block)
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)
    terms = np.empty(n_samples)
    for b, ss in enumerate(seqs):
        lo, hi = b * block, min((b + 1) * block, n_samples)
        rng = np.random.default_rng(ss)
        k = rng.integers(K, size=hi - lo)
        n = sigma * (rng.standard_normal((hi - lo, n_r)) + 1j * rng.standard_normal((hi - lo, n_r))) / np.sqrt(2)
        diff = (n - S[k])[:, None, :] + S[None, :, :]
        d2 = (diff.real**2 + diff.imag**2).sum(-1)
        nn = (n.real**2 + n.imag**2).sum(-1)
        terms[lo:hi] = logsumexp((nn[:, None] - d2) / noise.sigma2, axis=1) / LN2
    bits = n_t * np.log2(c.order) - terms.mean()
    return MiEstimate(float(bits), "monte_carlo", std_err=float(terms.std(ddof=1) / np.sqrt(n_samples)))


def ergodic_mi(channels, g, c, noise, rule, **kw):
    """Sample mean of ``mi_gh`` over channel draws; std_err across draws."""
    vals = []
    for h in channels:
        eff = EffectiveChannel.product(h, g)
        vals.append(mi_gh(eff, c, noise, rule, **kw).bits)
    if not vals:
        raise ValueError("ergodic_mi needs at least one channel draw")
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return MiEstimate(float(vals.mean()), "gauss_hermite", std_err=se)
