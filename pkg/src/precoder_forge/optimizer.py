"""Block coordinate gradient ascent over (W, Sigma_G^2) with Armijo backtracking.

The search runs on the virtual channel y = Sigma_H Sigma_G V_G^H x + n, where
Sigma_H holds the channel singular values padded (or truncated) to N_t. The
state is W = V_G diag(sigma_h^2 * s) V_G^H with s = diag(Sigma_G^2), and the
objective I(W) is the quadrature mutual information of the sufficient
statistic W^(1/2). The returned precoder is G = V_H Sigma_G V_G^H.
"""
import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .channels import as_channel, svd_factor, virtual_sigma
from .errors import NumericalFailure
from .gradients import grad_sigma_g2, grad_w, mi_and_grad_m
from .mi import EffectiveChannel, MiEstimate, hermitian_part, mi_gh, psd_sqrt

TRAJECTORY_FIELDS = ("iter", "mi_bits", "t1", "t2", "accepted_w", "accepted_sigma")
_MONO_TOL = 1e-12
START_ANGLES = (0.0, np.pi / 16, np.pi / 8, 3 * np.pi / 16, np.pi / 4)


@dataclass(frozen=True)
class OptimizerParams:
    alpha1: float = 0.1
    alpha2: float = 0.1
    beta1: float = 0.5
    beta2: float = 0.5
    n1: int = 20
    n2: int = 20
    max_iters: int = 20
    tol: float = 1e-4

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not 0 < v <= 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5], got {v}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("n1", "n2", "max_iters"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.tol >= 0:
            raise ValueError("tol must be non-negative")


@dataclass(frozen=True)
class PrecoderState:
    v_g: np.ndarray
    sigma_g2: np.ndarray
    sigma_h: np.ndarray
    mi_bits: float = float("nan")

    @property
    def w(self):
        return build_w(self.v_g, self.sigma_h, self.sigma_g2)


@dataclass
class PrecoderResult:
    g: np.ndarray
    state: PrecoderState
    trajectory: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False

    @property
    def mi_bits(self):
        return self.state.mi_bits

    @property
    def iterations(self):
        return max(0, len(self.trajectory) - 1)

    def trajectory_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TRAJECTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rec in self.trajectory:
            writer.writerow({k: _fmt(rec[k]) for k in TRAJECTORY_FIELDS})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def build_w(v_g, sigma_h, sigma_g2):
    d = np.asarray(sigma_h, dtype=float) ** 2 * np.asarray(sigma_g2, dtype=float)
    return hermitian_part((v_g * d) @ v_g.conj().T)


def _sorted_eigvecs(w):
    lam, q = np.linalg.eigh(hermitian_part(w))
    order = np.argsort(lam, kind="stable")[::-1]
    return lam[order], q[:, order]


def _psd_floor(w):
    lam, q = np.linalg.eigh(hermitian_part(w))
    return hermitian_part((q * np.clip(lam, 0.0, None)) @ q.conj().T)


def _backtrack(trial, f0, slope, alpha, beta, max_attempts):
    """Try t = 1, beta, beta^2, ... ; ``trial(t)`` returns (value, payload, ok)."""
    if not slope > 0:
        return 0.0, False, f0, None
    t = 1.0
    for _ in range(int(max_attempts)):
        val, payload, ok = trial(t)
        if ok and val > f0 + alpha * t * slope:
            return t, True, val, payload
        t *= beta
    return 0.0, False, f0, None


def armijo_search(objective, x0, grad, alpha, beta, max_attempts, f0=None):
    """Largest t in {1, beta, beta^2, ...} with f(x0 + t g) > f(x0) + alpha t |g|_F^2.

    Returns ``(step, accepted)``; ``step`` is 0 when nothing is accepted.
    """
    x0 = np.asarray(x0)
    grad = np.asarray(grad)
    f0 = objective(x0) if f0 is None else f0
    slope = float(np.sum(np.abs(grad) ** 2))
    t, ok, _, _ = _backtrack(lambda t: (objective(x0 + t * grad), None, True),
                             f0, slope, alpha, beta, max_attempts)
    return t, ok


class _Objective:
    """I(W) with the quadrature settings bound; counts evaluations."""

    def __init__(self, c, noise, rule, workers=1, backend=None):
        self.c, self.noise, self.rule = c, noise, rule
        self.kw = dict(workers=workers, backend=backend)
        self.evals = 0

    def __call__(self, w):
        self.evals += 1
        return mi_gh(EffectiveChannel.from_w(w), self.c, self.noise, self.rule, **self.kw).bits

    def with_grad(self, w):
        self.evals += 1
        m = psd_sqrt(w)
        bits, gm = mi_and_grad_m(EffectiveChannel(m, "sqrt_w"), self.c, self.noise, self.rule, **self.kw)
        return bits, grad_w(m, gm)


def _project_direction(s, g):
    """Trace-preserving ascent direction; coordinates pinned at zero and pushed down stay put."""
    free = np.ones(len(s), bool)
    while True:
        d = np.zeros_like(g)
        d[free] = g[free] - g[free].mean()
        blocked = free & (s <= 0) & (d < 0)
        if not blocked.any():
            return d
        free &= ~blocked


def _renormalize(s, power):
    s = np.clip(s, 0.0, None)
    tot = s.sum()
    if tot <= 0:
        raise NumericalFailure("power allocation collapsed to zero")
    return s * (power / tot)


def start_rotations(n):
    """Deterministic starting rotations expm(theta (J - J^T)), J the upper shift matrix.

    theta = 0 (V_G = I) is a stationary point of the rotation step for
    independent symmetric inputs, so the family also mixes neighbouring streams.
    """
    j = np.eye(n, k=1)
    gen = j - j.T
    return [expm(th * gen).astype(complex) for th in START_ANGLES]


def _random_unitary(n, rng):
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _optimize_virtual(sigma_h, c, noise, rule, params, power=None, init=None, starts=2,
                      restarts=0, seed=None, workers=1, backend=None):
    """Optimize on the diagonal virtual channel ``sigma_h``.

    Without ``init`` the starting rotations are screened by I(W) at uniform
    power and the ascent runs from the ``starts`` best of them (plus
    ``restarts`` seeded random unitaries); the best final state wins.
    """
    sigma_h = np.asarray(sigma_h, dtype=float)
    n = len(sigma_h)
    power = float(n if power is None else power)
    f = _Objective(c, noise, rule, workers, backend)
    if init is not None:
        return _ascend(f, sigma_h, np.asarray(init.v_g, dtype=complex),
                       np.asarray(init.sigma_g2, dtype=float), power, params)
    s0 = np.full(n, power / n)
    if not np.any(sigma_h > 0):
        return _ascend(f, sigma_h, np.eye(n, dtype=complex), s0, power, params)
    cands = start_rotations(n)
    screened = [f(build_w(v, sigma_h, s0)) for v in cands]
    order = np.argsort(-np.array(screened), kind="stable")[:max(1, int(starts))]
    chosen = [cands[i] for i in order]
    if restarts:
        rng = np.random.default_rng(seed)
        chosen += [_random_unitary(n, rng) for _ in range(int(restarts))]
    best = None
    for v in chosen:
        out = _ascend(f, sigma_h, v, s0, power, params)
        if best is None or out[0].mi_bits > best[0].mi_bits:
            best = out
    return best


def _ascend(f, sigma_h, v_g, s, power, params):
    n = len(sigma_h)
    if v_g.shape != (n, n) or s.shape != (n,):
        raise ValueError("starting state does not match the virtual dimension")
    w = build_w(v_g, sigma_h, s)
    if not np.any(sigma_h > 0):
        rec = dict(iter=0, mi_bits=0.0, t1=0.0, t2=0.0, accepted_w=False, accepted_sigma=False)
        return PrecoderState(v_g, s, sigma_h, 0.0), [rec], True, False

    mi, gw = f.with_grad(w)
    traj = [dict(iter=0, mi_bits=mi, t1=0.0, t2=0.0, accepted_w=False, accepted_sigma=False)]
    converged = stalled = False
    for it in range(1, params.max_iters + 1):
        mi_start = mi

        # W-search: Armijo on W + t grad, then keep the eigenvectors of the accepted point
        def w_trial(t, w=w, gw=gw, s=s, mi=mi):
            w_new = _psd_floor(w + t * gw)
            val = f(w_new)
            if val <= mi + params.alpha1 * t * np.sum(np.abs(gw) ** 2):
                return val, None, False
            _, q = _sorted_eigvecs(w_new)
            w_rebuilt = build_w(q, sigma_h, s)
            val_rebuilt = f(w_rebuilt)
            return val, (q, w_rebuilt, val_rebuilt), val_rebuilt >= mi - _MONO_TOL

        slope_w = float(np.sum(np.abs(gw) ** 2))
        t1, ok_w, _, payload = _backtrack(w_trial, mi, slope_w, params.alpha1, params.beta1, params.n1)
        if ok_w:
            v_g, w, _ = payload
            mi, gw = f.with_grad(w)
        # Sigma-search along the trace-preserving projected gradient
        gs = grad_sigma_g2(v_g, gw, sigma_h)
        d = _project_direction(s, gs)
        slope_s = float(np.sum(d ** 2))

        def s_trial(t, s=s, d=d, v_g=v_g):
            s_new = _renormalize(s + t * d, power)
            w_new = build_w(v_g, sigma_h, s_new)
            return f(w_new), (s_new, w_new), True

        t2, ok_s, _, payload = _backtrack(s_trial, mi, slope_s, params.alpha2, params.beta2, params.n2)
        if ok_s:
            s, w = payload
            mi, gw = f.with_grad(w)
        if mi < mi_start - 1e-9:
            raise NumericalFailure(f"objective decreased from {mi_start} to {mi}")
        traj.append(dict(iter=it, mi_bits=mi, t1=t1, t2=t2, accepted_w=ok_w, accepted_sigma=ok_s))
        if not ok_w and not ok_s:
            stalled = True
            break
        if mi - mi_start < params.tol:
            converged = True
            break
    return PrecoderState(v_g, s, sigma_h, mi), traj, converged, stalled


def virtual_precoder(factors, state):
    """G = V_H diag(sqrt(s)) V_G^H."""
    return factors.v_h @ (np.sqrt(state.sigma_g2)[:, None] * state.v_g.conj().T)


def no_precoding_state(h):
    """State whose precoder is G = I: V_G = V_H, uniform power."""
    factors = svd_factor(h)
    n_t = factors.v_h.shape[0]
    sig = virtual_sigma(factors.sigma_h, n_t)
    return PrecoderState(factors.v_h.astype(complex), np.ones(n_t), sig)


def optimize(h, c, noise, rule, params=None, init=None, *, power=None, starts=2, restarts=0,
             seed=None, workers=1, backend=None):
    """Optimize the precoder for channel ``h``; trace(G G^H) equals ``power`` (default N_t)."""
    params = OptimizerParams() if params is None else params
    h = as_channel(h)
    factors = svd_factor(h)
    n_t = h.shape[1]
    sig = virtual_sigma(factors.sigma_h, n_t)
    state, traj, converged, stalled = _optimize_virtual(
        sig, c, noise, rule, params, power=power, init=init, starts=starts, restarts=restarts,
        seed=seed, workers=workers, backend=backend)
    g = virtual_precoder(factors, state)
    return PrecoderResult(g, state, traj, converged, stalled)


def precoded_mi(h, g, c, noise, rule, **kw):
    """I(x; y) for y = H G x + n evaluated through the sufficient statistic (G^H H^H H G)^(1/2)."""
    eff = EffectiveChannel.product(h, g).sufficient_statistic()
    return mi_gh(eff, c, noise, rule, **kw)


def no_precoding_baseline(h, c, noise, rule, **kw):
    """Mutual information with G = I."""
    h = as_channel(h)
    if not np.any(h):
        return MiEstimate(0.0, "gauss_hermite")
    return mi_gh(EffectiveChannel.product(h), c, noise, rule, **kw)


def with_mi(state, c, noise, rule, **kw):
    """Return ``state`` with its mi_bits filled in from I(W)."""
    return replace(state, mi_bits=mi_gh(EffectiveChannel.from_w(state.w), c, noise, rule, **kw).bits)
