import numpy as np
import pytest

from precoder_forge import _backend
from precoder_forge.channels import NoiseModel, builtin, ensemble, random_gaussian, svd_factor
from precoder_forge.constellation import make_qam
from precoder_forge.errors import BudgetExceeded, DimensionMismatch, QuadratureOverflow
from precoder_forge.mi import (EffectiveChannel, OpCounter, bilinear_tensor, check_budget,
                               ergodic_mi, mi_gh, mi_gh_bilinear, mi_gh_general, mi_mc,
                               op_count_formula)
from precoder_forge.quadrature import hermite_rule

# MC(1e5, seed 0) on H1, M=16, SNR_b = 4 dB, frozen before the GH tests were written
H1_4DB_MC = 6.8492607782878
H1_4DB_SE = 0.004775641336212


def prod(h, g=None):
    return EffectiveChannel.product(h, g)


def test_low_snr_limit(qam16, rule3):
    assert abs(mi_gh(prod(builtin("h1")), qam16, NoiseModel.from_snr_db(-40), rule3).bits) <= 0.01


def test_high_snr_limit(qam16, rule3):
    bits = mi_gh(prod(np.eye(2), np.eye(2)), qam16, NoiseModel.from_snr_db(40), rule3).bits
    assert abs(bits - 8.0) <= 0.01


def test_mc_low_snr(qam16):
    est = mi_mc(prod(builtin("h2")), qam16, NoiseModel.from_snr_db(-40), 4000, seed=1)
    assert abs(est.bits) <= 3 * est.std_err + 1e-12


def test_mc_stderr_scaling(qam16):
    n = NoiseModel.from_snrb_db(0, 16)
    a = mi_mc(prod(builtin("h1")), qam16, n, 20_000, seed=2).std_err
    b = mi_mc(prod(builtin("h1")), qam16, n, 40_000, seed=2).std_err
    assert abs(a / b / np.sqrt(2) - 1) <= 0.1


def test_mc_oracle_reproducible(qam16):
    est = mi_mc(prod(builtin("h1")), qam16, NoiseModel.from_snrb_db(4, 16), 100_000, seed=0)
    assert est.bits == H1_4DB_MC
    assert est.std_err == H1_4DB_SE


@pytest.mark.xfail(strict=True, reason="L=3 tensor rule truncation error near 4-5 dB on H1 (see ledger)")
def test_gh_matches_mc_oracle_at_l3(qam16, rule3):
    bits = mi_gh(prod(builtin("h1")), qam16, NoiseModel.from_snrb_db(4, 16), rule3).bits
    assert abs(bits - H1_4DB_MC) <= max(0.05, 3 * H1_4DB_SE)


def test_gh_approaches_mc_oracle_with_order(qam16):
    n = NoiseModel.from_snrb_db(4, 16)
    err3 = abs(mi_gh(prod(builtin("h1")), qam16, n, hermite_rule(3)).bits - H1_4DB_MC)
    err10 = abs(mi_gh(prod(builtin("h1")), qam16, n, hermite_rule(10)).bits - H1_4DB_MC)
    assert err10 < err3 and err10 <= 0.05


def test_scalar_channel_against_mc():
    c = make_qam(4)
    n = NoiseModel.from_snr_db(10)
    mc = mi_mc(prod([[1.0]]), c, n, 10**6, seed=0)
    gh = mi_gh(prod([[1.0]]), c, n, hermite_rule(20))
    assert abs(gh.bits - mc.bits) <= 2 * mc.std_err


@pytest.mark.parametrize("name,M,snrb", [("h1", 16, 0.0), ("h2", 32, 5.0)])
def test_bilinear_equals_general(name, M, snrb, rule3):
    c = make_qam(M)
    n = NoiseModel.from_snrb_db(snrb, M)
    a = mi_gh_bilinear(prod(builtin(name)), c, n, rule3).bits
    b = mi_gh_general(prod(builtin(name)), c, n, rule3).bits
    assert abs(a - b) <= 1e-10


def test_bilinear_rejects_three_receivers(qam4, rule3):
    eff = prod(random_gaussian(3, 2, seed=0))
    with pytest.raises(DimensionMismatch):
        mi_gh_bilinear(eff, qam4, NoiseModel.from_snr_db(0), rule3)
    with pytest.raises(DimensionMismatch):
        bilinear_tensor(eff, qam4, NoiseModel.from_snr_db(0), rule3)


def test_bilinear_tensor_shape(qam4, rule3):
    V, _ = bilinear_tensor(prod(builtin("h1")), qam4, NoiseModel.from_snr_db(0), rule3)
    assert V.shape == (3, 3, 3, 3)


def test_unitary_noise_invariance(qam16, rule3):
    rng = np.random.default_rng(11)
    h = random_gaussian(2, 2, seed=11)
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    n = NoiseModel.from_snrb_db(2, 16)
    a = mi_gh(prod(h), qam16, n, rule3).bits
    b = mi_gh(prod(q @ h), qam16, n, rule3, frame=q).bits
    assert abs(a - b) <= 1e-9


def test_sufficient_statistic_invariance(qam16, rule3):
    rng = np.random.default_rng(5)
    h = random_gaussian(2, 2, seed=5)
    f = svd_factor(h)
    v_g, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    s = np.array([1.4, 0.6])
    g = f.v_h @ np.diag(np.sqrt(s)) @ v_g.conj().T
    m = v_g @ np.diag(f.sigma_h * np.sqrt(s)) @ v_g.conj().T
    n = NoiseModel.from_snrb_db(3, 16)
    a = mi_gh(prod(h, g), qam16, n, rule3, frame=f.u @ v_g.conj().T).bits
    b = mi_gh(EffectiveChannel(m, "sqrt_w"), qam16, n, rule3).bits
    assert abs(a - b) <= 1e-9
    # M built from the product itself gives the same value
    c = mi_gh(prod(h, g).sufficient_statistic(), qam16, n, rule3).bits
    assert abs(c - b) <= 1e-9


@pytest.mark.parametrize("name,M", [("h1", 16), ("h2", 32), ("h1", 4)])
def test_bounds_and_monotone(name, M, rule3):
    c = make_qam(M)
    vals = [mi_gh(prod(builtin(name)), c, NoiseModel.from_snrb_db(s, M), rule3).bits
            for s in np.linspace(-10, 25, 8)]
    assert all(-1e-6 <= v <= 2 * np.log2(M) + 1e-6 for v in vals)
    assert all(b - a >= -1e-6 for a, b in zip(vals, vals[1:]))


def test_op_count_examples():
    assert op_count_formula(16, 2, 2, 3) == 129_600_000
    assert op_count_formula(32, 2, 2, 3) == 4 * op_count_formula(16, 2, 2, 3)
    assert op_count_formula(16, 2, 3, 3) / op_count_formula(16, 2, 2, 3) == 45
    with pytest.raises(ValueError):
        op_count_formula(0, 2, 2, 3)
    with pytest.raises(QuadratureOverflow):
        op_count_formula(64, 20, 20, 10)


def test_instrumented_counter_tracks_formula(rule3):
    for M in (4, 16, 32):
        ctr = OpCounter()
        mi_gh(prod(builtin("h1")), make_qam(M), NoiseModel.from_snr_db(10), rule3, counter=ctr)
        assert ctr.ops == op_count_formula(M, 2, 2, 3)


def test_budget_guard(monkeypatch, qam16, rule3):
    with pytest.raises(BudgetExceeded):
        mi_gh(prod(builtin("h1")), qam16, NoiseModel.from_snr_db(0), rule3, budget=1000)
    monkeypatch.setenv("PRECODER_FORGE_BUDGET", "100")
    with pytest.raises(BudgetExceeded):
        check_budget(2, 16, 3)
    monkeypatch.delenv("PRECODER_FORGE_BUDGET")
    assert check_budget(2, 16, 3) == 3**4 * 16


def test_ergodic_single_and_fixed(qam16, rule3):
    n = NoiseModel.from_snrb_db(0, 16)
    h = random_gaussian(2, 2, seed=3)
    assert ergodic_mi([h], None, qam16, n, rule3).bits == mi_gh(prod(h), qam16, n, rule3).bits
    fixed = ensemble("fixed", 2, 2, 4, fixed=builtin("h1"))
    assert ergodic_mi(fixed, None, qam16, n, rule3).bits == mi_gh(prod(builtin("h1")), qam16, n, rule3).bits
    with pytest.raises(ValueError):
        ergodic_mi([], None, qam16, n, rule3)


def test_ergodic_gaussian_deterministic(qam16, rule3):
    n = NoiseModel.from_snrb_db(0, 16)
    a = ergodic_mi(ensemble("gaussian", 2, 2, 50, seed=4), np.eye(2), qam16, n, rule3)
    b = ergodic_mi(ensemble("gaussian", 2, 2, 50, seed=4), np.eye(2), qam16, n, rule3)
    assert a == b and a.std_err > 0


def test_workers_are_deterministic(rule3):
    c = make_qam(32)
    n = NoiseModel.from_snrb_db(5, 32)
    a = mi_gh(prod(builtin("h2")), c, n, rule3, workers=1).bits
    b = mi_gh(prod(builtin("h2")), c, n, rule3, workers=3).bits
    assert a == b


@pytest.mark.skipif("cython" not in _backend.available(), reason="compiled kernels not built")
@pytest.mark.parametrize("shape", [(2, 2), (3, 2), (1, 1)])
def test_backends_agree(shape, qam16, rule3):
    h = random_gaussian(*shape, seed=8)
    n = NoiseModel.from_snrb_db(6, 16)
    a = mi_gh(prod(h), qam16, n, rule3, backend="cython").bits
    b = mi_gh(prod(h), qam16, n, rule3, backend="numpy").bits
    assert abs(a - b) <= 1e-10


def test_effective_channel_validation():
    with pytest.raises(ValueError):
        EffectiveChannel(np.array([[1, 2], [0, 1]]), "sqrt_w")
    with pytest.raises(ValueError):
        EffectiveChannel(np.array([[-1.0, 0], [0, 1]]), "sqrt_w")
    with pytest.raises(DimensionMismatch):
        EffectiveChannel(np.ones((2, 3)), "sqrt_w")
