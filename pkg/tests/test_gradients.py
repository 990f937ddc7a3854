import numpy as np
import pytest

from conftest import random_psd
from precoder_forge.channels import NoiseModel, builtin, svd_factor
from precoder_forge.errors import BudgetExceeded, DimensionMismatch, NotSquare, SingularSystem
from precoder_forge.gradients import (gradients, grad_m, grad_sigma_g2, grad_w, mi_and_grad_m,
                                      mmse_from_grad_w, mmse_mc)
from precoder_forge.constellation import make_qam
from precoder_forge.mi import EffectiveChannel, hermitian_part, mi_gh, psd_sqrt
from precoder_forge.optimizer import build_w

STEP = 1e-4


def hermitian_basis(n):
    for i in range(n):
        for j in range(i, n):
            for part in ((1.0,) if i == j else (1.0, 1j)):
                e = np.zeros((n, n), complex)
                e[i, j] = part
                e[j, i] = np.conj(part)
                yield e


def rel_err(fd, an):
    fd, an = np.asarray(fd), np.asarray(an)
    return np.abs(fd - an).max() / np.abs(an).max()


def fd_hermitian(f, x, grad):
    fd, an = [], []
    for e in hermitian_basis(x.shape[0]):
        fd.append((f(x + STEP * e) - f(x - STEP * e)) / (2 * STEP))
        an.append(np.real(np.vdot(grad, e)))
    return rel_err(fd, an)


def unitary(rng, n=2):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q


@pytest.fixture
def noise0():
    return NoiseModel.from_snr_db(0.0)


@pytest.mark.parametrize("seed", range(5))
def test_grad_m_finite_difference(seed, qam16, rule3, noise0):
    m = psd_sqrt(random_psd(np.random.default_rng(seed)))
    gm = grad_m(EffectiveChannel(m, "sqrt_w"), qam16, noise0, rule3)
    f = lambda x: mi_gh(EffectiveChannel(hermitian_part(x), "sqrt_w"), qam16, noise0, rule3).bits
    assert fd_hermitian(f, m, gm) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_grad_w_finite_difference(seed, qam16, rule3, noise0):
    w = random_psd(np.random.default_rng(100 + seed))
    g = gradients(psd_sqrt(w), qam16, noise0, rule3)
    f = lambda x: mi_gh(EffectiveChannel.from_w(x), qam16, noise0, rule3).bits
    assert fd_hermitian(f, w, g.grad_w) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_grad_sigma_g2_finite_difference(seed, qam16, rule3, noise0):
    rng = np.random.default_rng(200 + seed)
    sigma_h = svd_factor(builtin("h1")).sigma_h
    v_g = unitary(rng)
    s = rng.uniform(0.3, 1.0, 2)
    s *= 2 / s.sum()
    w = build_w(v_g, sigma_h, s)
    g = gradients(psd_sqrt(w), qam16, noise0, rule3, v_g=v_g, sigma_h=sigma_h)
    f = lambda x: mi_gh(EffectiveChannel.from_w(build_w(v_g, sigma_h, x)), qam16, noise0, rule3).bits
    fd = [(f(s + STEP * e) - f(s - STEP * e)) / (2 * STEP) for e in np.eye(2)]
    assert rel_err(fd, g.grad_sigma_g2) <= 1e-3


def test_grad_m_hermitian_and_vanishes(qam16, rule3):
    m = psd_sqrt(random_psd(np.random.default_rng(9)))
    gm = grad_m(EffectiveChannel(m, "sqrt_w"), qam16, NoiseModel.from_snr_db(0), rule3)
    np.testing.assert_array_equal(gm, gm.conj().T)
    g0 = grad_m(EffectiveChannel(m, "sqrt_w"), qam16, NoiseModel.from_snr_db(-80), rule3)
    assert np.abs(g0).max() <= 1e-6


def test_grad_m_needs_square(qam4, rule3):
    with pytest.raises(NotSquare):
        grad_m(EffectiveChannel.product(np.ones((3, 2))), qam4, NoiseModel.from_snr_db(0), rule3)


def test_eig_and_kron_agree(qam16, rule3, noise0):
    for seed in range(5):
        m = psd_sqrt(random_psd(np.random.default_rng(300 + seed)))
        gm = grad_m(EffectiveChannel(m, "sqrt_w"), qam16, noise0, rule3)
        assert np.abs(grad_w(m, gm, "eig") - grad_w(m, gm, "kron")).max() <= 1e-9


def test_grad_w_reshape_relation(qam16, rule3, noise0):
    m = psd_sqrt(random_psd(np.random.default_rng(7)))
    gm = grad_m(EffectiveChannel(m, "sqrt_w"), qam16, noise0, rule3)
    gw = grad_w(m, gm)
    assert np.abs(m @ gw + gw @ m - gm).max() <= 1e-8


def test_identity_collapse(qam16, rule3, noise0):
    gm = grad_m(EffectiveChannel(np.eye(2), "sqrt_w"), qam16, noise0, rule3)
    for method in ("eig", "kron"):
        assert np.abs(grad_w(np.eye(2), gm, method) - gm / 2).max() <= 1e-10


def test_singular_system():
    m = np.diag([1.0, 0.0])
    gm = np.eye(2)
    with pytest.raises(SingularSystem):
        grad_w(m, gm, "kron")
    gw = grad_w(m, gm, "eig")
    assert gw[1, 1] == 0 and gw[0, 0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        grad_w(np.eye(2), gm, "lu")
    with pytest.raises(DimensionMismatch):
        grad_w(np.eye(2), np.eye(3))


def test_mmse_cov_hermitian_psd(qam16, rule3):
    for snr in (-5, 0, 10):
        g = gradients(psd_sqrt(builtin("h1").T @ builtin("h1")), qam16, NoiseModel.from_snr_db(snr), rule3)
        phi = g.mmse_cov
        assert np.abs(phi - phi.conj().T).max() <= 1e-8
        assert np.linalg.eigvalsh(phi).min() >= -1e-6


def test_mmse_scaling(qam16, rule3):
    g = gradients(np.eye(2), qam16, NoiseModel(0.5), rule3)
    np.testing.assert_allclose(g.mmse_cov, mmse_from_grad_w(g.grad_w, 0.5))
    np.testing.assert_allclose(g.mmse_cov, 0.5 * np.log(2) * g.grad_w)


def test_grad_sigma_g2_examples():
    gw = np.diag([0.3, 0.7]).astype(complex)
    np.testing.assert_allclose(grad_sigma_g2(np.eye(2), gw, np.array([2.0, 0.5])), [1.2, 0.175])
    np.testing.assert_array_equal(grad_sigma_g2(np.eye(2), gw, np.zeros(2)), [0, 0])
    with pytest.raises(DimensionMismatch):
        grad_sigma_g2(np.eye(2), gw, np.zeros(3))


def test_mmse_mc_limits(qam16):
    phi, _ = mmse_mc(builtin("h1"), None, qam16, NoiseModel.from_snr_db(-60), 20_000, seed=1)
    assert np.abs(phi - np.eye(2)).max() <= 0.03
    phi, se = mmse_mc(builtin("h1"), None, qam16, NoiseModel.from_snr_db(40), 20_000, seed=1)
    assert np.all(np.abs(phi) <= 3 * se + 1e-12)


def test_mmse_mc_guard_and_determinism(qam16):
    with pytest.raises(BudgetExceeded):
        mmse_mc(np.eye(5), None, make_qam(64), NoiseModel(1.0), 10_000)
    a = mmse_mc(builtin("h1"), None, qam16, NoiseModel(1.0), 10_000, seed=3)
    b = mmse_mc(builtin("h1"), None, qam16, NoiseModel(1.0), 10_000, seed=3)
    np.testing.assert_array_equal(a[0], b[0])


def test_mi_and_grad_consistent_with_mi(qam16, rule3, noise0):
    m = psd_sqrt(random_psd(np.random.default_rng(1)))
    bits, _ = mi_and_grad_m(EffectiveChannel(m, "sqrt_w"), qam16, noise0, rule3)
    assert abs(bits - mi_gh(EffectiveChannel(m, "sqrt_w"), qam16, noise0, rule3).bits) <= 1e-10
