"""Channel matrices: built-in test channels, random ensembles, SVD and file I/O.

A channel is a plain 2-D complex ndarray of shape ``(n_r, n_t)``.
"""
import json
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, InvalidCorrelation, NumericalFailure,
                     ParseError, UnknownChannel)

_BUILTIN = {
    "h1": [[2, 1],
           [1, 1]],
    "h2": [[1.98 + 0.12j, 0.0124 - 0.0016j],
           [-0.2487 - 0.0314j, 0.0992 - 0.1j]],
    "h4x4": [
        [-1.5362 + 0.3151j, 0.5714 + 0.9123j, 0.1394 - 0.3407j, -0.0085 + 0.0081j],
        [-1.5571 + 1.0171j, -0.3071 + 0.3765j, -0.3073 + 0.5680j, -0.0035 + 0.0041j],
        [0.4550 - 0.2484j, 0.7266 - 1.2195j, 0.0780 + 0.1645j, -0.0131 + 0.0008j],
        [-0.2278 + 3.1243j, -0.6890 - 0.3397j, 0.0175 - 0.2322j, -0.0045 - 0.0064j],
    ],
}
BUILTIN_NAMES = tuple(_BUILTIN)


@dataclass(frozen=True)
class ChannelFactors:
    u: np.ndarray
    sigma_h: np.ndarray
    v_h: np.ndarray

    def reconstruct(self):
        n_r, n_t = self.u.shape[0], self.v_h.shape[0]
        s = np.zeros((n_r, n_t))
        r = len(self.sigma_h)
        s[:r, :r] = np.diag(self.sigma_h)
        return self.u @ s @ self.v_h.conj().T


@dataclass(frozen=True)
class NoiseModel:
    """Complex AWGN with variance ``sigma2`` per receive antenna (sigma2 = 1/SNR)."""

    sigma2: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError(f"noise variance must be positive and finite, got {self.sigma2}")

    @property
    def snr(self):
        return 1.0 / self.sigma2

    @classmethod
    def from_snr_db(cls, snr_db):
        return cls(10.0 ** (-snr_db / 10.0))

    @classmethod
    def from_snrb_db(cls, snrb_db, M):
        """Per-bit SNR: SNR = SNR_b * log2(M) in linear scale."""
        return cls(1.0 / (10.0 ** (snrb_db / 10.0) * np.log2(M)))


def as_channel(h):
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    if h.ndim != 2 or 0 in h.shape:
        raise DimensionMismatch(f"channel must be a non-empty 2-D matrix, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericalFailure("channel has non-finite entries")
    return h


def svd_factor(h):
    h = as_channel(h)
    try:
        u, s, vh = np.linalg.svd(h, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return ChannelFactors(u=u, sigma_h=s, v_h=vh.conj().T)


def virtual_sigma(sigma_h, n_t):
    """Singular values padded with zeros (or truncated) to length ``n_t``."""
    out = np.zeros(n_t)
    r = min(n_t, len(sigma_h))
    out[:r] = sigma_h[:r]
    return out


def builtin(name):
    try:
        return np.array(_BUILTIN[name], dtype=complex)
    except KeyError:
        raise UnknownChannel(f"unknown built-in channel {name!r}; choose from {BUILTIN_NAMES}") from None


def random_gaussian(n_r, n_t, seed=None):
    """i.i.d. CN(0, 1) entries."""
    if n_r < 1 or n_t < 1:
        raise DimensionMismatch("channel dimensions must be positive")
    rng = np.random.default_rng(seed)
    re = rng.standard_normal((n_r, n_t))
    im = rng.standard_normal((n_r, n_t))
    return (re + 1j * im) / np.sqrt(2.0)


def exp_correlation(n, rho):
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def _sqrt_psd(r):
    lam, q = np.linalg.eigh(r)
    return (q * np.sqrt(np.clip(lam, 0.0, None))) @ q.conj().T


def kronecker_correlated(n_r, n_t, rho_r, rho_t, seed=None):
    """H = R_r^{1/2} H_w R_t^{1/2} with exponential correlation rho^|i-j|.

    H_w is drawn exactly as :func:`random_gaussian` with the same seed.
    """
    for rho in (rho_r, rho_t):
        if not 0.0 <= rho < 1.0:
            raise InvalidCorrelation(f"correlation must lie in [0, 1), got {rho}")
    h = random_gaussian(n_r, n_t, seed)
    if rho_r > 0:
        h = _sqrt_psd(exp_correlation(n_r, rho_r)) @ h
    if rho_t > 0:
        h = h @ _sqrt_psd(exp_correlation(n_t, rho_t))
    return h


def ensemble(kind, n_r, n_t, draws, seed=0, rho_r=0.0, rho_t=0.0, fixed=None):
    """List of ``draws`` channel realizations with per-draw seeds spawned from ``seed``.

    ``kind`` is ``"gaussian"``, ``"kronecker"`` or ``"fixed"`` (the matrix
    ``fixed`` repeated, a degenerate ensemble).
    """
    if draws < 1:
        raise ValueError("ensemble needs at least one draw")
    if kind == "fixed":
        h = as_channel(fixed)
        return [h.copy() for _ in range(draws)]
    seeds = np.random.SeedSequence(seed).spawn(draws)
    if kind == "gaussian":
        return [random_gaussian(n_r, n_t, s) for s in seeds]
    if kind == "kronecker":
        return [kronecker_correlated(n_r, n_t, rho_r, rho_t, s) for s in seeds]
    raise UnknownChannel(f"unknown ensemble kind {kind!r}")


def channel_to_dict(h):
    h = as_channel(h)
    return {
        "n_r": h.shape[0],
        "n_t": h.shape[1],
        "entries": [[float(z.real), float(z.imag)] for z in h.ravel()],
    }


def channel_from_dict(d):
    try:
        n_r, n_t, entries = int(d["n_r"]), int(d["n_t"]), d["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"channel object missing or invalid field: {exc}") from exc
    if n_r < 1 or n_t < 1:
        raise DimensionMismatch("n_r and n_t must be positive")
    if len(entries) != n_r * n_t:
        raise DimensionMismatch(f"expected {n_r * n_t} entries for a {n_r}x{n_t} channel, got {len(entries)}")
    vals = []
    for i, e in enumerate(entries):
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise DimensionMismatch(f"entry {i} must be an [re, im] pair, got {e!r}")
        vals.append(complex(float(e[0]), float(e[1])))
    return as_channel(np.array(vals).reshape(n_r, n_t))


def save_channel(h, path):
    with open(path, "w") as fh:
        json.dump(channel_to_dict(h), fh, indent=1)
        fh.write("\n")


def load_channel(path):
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError(f"{path}: empty channel file", line=1, column=1)
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
    return channel_from_dict(d)
