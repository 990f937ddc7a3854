import csv
import io

import numpy as np
import pytest
from scipy.linalg import expm

from precoder_forge.channels import NoiseModel, builtin, random_gaussian, svd_factor
from precoder_forge.constellation import make_qam
from precoder_forge.errors import NumericalFailure
from precoder_forge.mi import EffectiveChannel, mi_gh
from precoder_forge.optimizer import (TRAJECTORY_FIELDS, OptimizerParams, PrecoderState, _project_direction,
                                      _renormalize, armijo_search, build_w, no_precoding_baseline,
                                      no_precoding_state, optimize, precoded_mi, start_rotations,
                                      with_mi)


@pytest.fixture(scope="module")
def h1_result():
    c = make_qam(16)
    noise = NoiseModel.from_snrb_db(-4, 16)
    from precoder_forge.quadrature import hermite_rule
    rule = hermite_rule(3)
    return optimize(builtin("h1"), c, noise, rule), c, noise, rule


def test_armijo_quadratic():
    xs = np.array([[1.0, -2.0], [0.5, 3.0]])
    d = np.array([[0.3, 0.1], [-0.2, 0.4]])
    f = lambda x: -np.sum((x - xs) ** 2)
    x0 = xs + d
    g = -2 * d
    # gain at step t is |d|^2 (1 - (1 - 2t)^2), threshold 4 alpha t |d|^2:
    # t = 1 gains nothing, t = 1/2 gains |d|^2 > 0.2 |d|^2
    t, ok = armijo_search(f, x0, g, alpha=0.1, beta=0.5, max_attempts=10)
    assert ok and t == 0.5
    f2 = lambda x: -0.25 * np.sum((x - xs) ** 2)
    # flatter bowl: t = 1 gains 0.1875 |d|^2 > 0.025 |d|^2
    t, ok = armijo_search(f2, x0, -0.5 * d, alpha=0.1, beta=0.5, max_attempts=10)
    assert ok and t == 1.0


def test_armijo_degenerate():
    f = lambda x: -np.sum(x**2)
    assert armijo_search(f, np.ones(2), np.zeros(2), 0.1, 0.5, 10) == (0.0, False)
    assert armijo_search(f, np.ones(2), -np.ones(2), 0.1, 0.5, 0) == (0.0, False)
    # ascent direction that never satisfies the test
    assert armijo_search(f, np.ones(2), np.ones(2), 0.1, 0.5, 5) == (0.0, False)


def test_params_validation():
    with pytest.raises(ValueError):
        OptimizerParams(alpha1=0.6)
    with pytest.raises(ValueError):
        OptimizerParams(beta2=1.0)
    with pytest.raises(ValueError):
        OptimizerParams(n1=-1)
    with pytest.raises(ValueError):
        OptimizerParams(tol=-1)


def test_zero_iterations_is_noop(qam16, rule3):
    h = builtin("h1")
    init = no_precoding_state(h)
    res = optimize(h, qam16, NoiseModel.from_snrb_db(0, 16), rule3, OptimizerParams(max_iters=0), init=init)
    np.testing.assert_array_equal(res.state.v_g, init.v_g)
    np.testing.assert_array_equal(res.state.sigma_g2, init.sigma_g2)
    np.testing.assert_allclose(res.g, np.eye(2), atol=1e-12)
    assert abs(np.trace(res.g @ res.g.conj().T).real - 2) <= 1e-9
    assert res.iterations == 0


def test_h1_gain(h1_result):
    res, c, noise, rule = h1_result
    base = no_precoding_baseline(builtin("h1"), c, noise, rule).bits
    assert res.mi_bits >= base + 0.4
    assert res.iterations <= 8 and res.converged


def test_monotone_and_constraints(h1_result):
    res = h1_result[0]
    mis = [r["mi_bits"] for r in res.trajectory]
    assert all(b - a >= -1e-9 for a, b in zip(mis, mis[1:]))
    st = res.state
    assert abs(st.sigma_g2.sum() - 2) <= 1e-9 and np.all(st.sigma_g2 >= 0)
    assert np.abs(st.v_g.conj().T @ st.v_g - np.eye(2)).max() <= 1e-9
    assert abs(np.trace(res.g @ res.g.conj().T).real - 2) <= 1e-9
    d = st.sigma_h**2 * st.sigma_g2
    np.testing.assert_allclose(st.w, st.v_g @ np.diag(d) @ st.v_g.conj().T, atol=1e-8)


def test_virtual_original_equivalence(h1_result):
    res, c, noise, rule = h1_result
    assert abs(precoded_mi(builtin("h1"), res.g, c, noise, rule).bits - res.mi_bits) <= 1e-8
    assert abs(with_mi(res.state, c, noise, rule).mi_bits - res.mi_bits) <= 1e-12


def test_equivalence_complex_channel(qam16, rule3):
    h = random_gaussian(2, 2, seed=21)
    noise = NoiseModel.from_snrb_db(2, 16)
    res = optimize(h, qam16, noise, rule3)
    assert abs(precoded_mi(h, res.g, qam16, noise, rule3).bits - res.mi_bits) <= 1e-8
    assert res.mi_bits >= no_precoding_baseline(h, qam16, noise, rule3).bits - 1e-9


def test_concavity_sanity(h1_result):
    res, c, noise, rule = h1_result
    st = res.state
    rng = np.random.default_rng(0)
    f = lambda v, s: mi_gh(EffectiveChannel.from_w(build_w(v, st.sigma_h, s)), c, noise, rule).bits
    eps = 1e-4
    for _ in range(10):
        k = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        k = (k + k.conj().T) / 2
        k /= np.linalg.norm(k)
        d = rng.standard_normal(2)
        d -= d.mean()
        d /= np.linalg.norm(d)
        for sign in (1, -1):
            s = st.sigma_g2 + sign * eps * d
            if np.any(s < 0):
                continue
            assert f(expm(1j * sign * eps * k) @ st.v_g, s) <= res.mi_bits + 1e-6


def test_zero_channel(qam16, rule3):
    h = np.zeros((2, 2))
    noise = NoiseModel.from_snr_db(0)
    assert no_precoding_baseline(h, qam16, noise, rule3).bits == 0.0
    res = optimize(h, qam16, noise, rule3)
    assert res.mi_bits == 0.0
    assert abs(np.trace(res.g @ res.g.conj().T).real - 2) <= 1e-9


def test_no_precoding_baseline_definition(qam16, rule3):
    noise = NoiseModel.from_snrb_db(3, 16)
    a = no_precoding_baseline(builtin("h2"), qam16, noise, rule3).bits
    assert a == mi_gh(EffectiveChannel.product(builtin("h2")), qam16, noise, rule3).bits


def test_baseline_curve_monotone_to_full(qam16, rule3):
    vals = [no_precoding_baseline(builtin("h1"), qam16, NoiseModel.from_snrb_db(s, 16), rule3).bits
            for s in (-10, -5, 0, 5, 10, 15, 20, 30)]
    assert all(b >= a - 1e-6 for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 8) <= 0.01


def test_trajectory_csv(h1_result):
    res = h1_result[0]
    rows = list(csv.DictReader(io.StringIO(res.trajectory_csv())))
    assert tuple(rows[0]) == TRAJECTORY_FIELDS
    assert len(rows) == len(res.trajectory)
    assert float(rows[-1]["mi_bits"]) == res.mi_bits
    assert res.trajectory_csv() == res.trajectory_csv()


def test_power_budget_and_restarts(qam4, rule3):
    noise = NoiseModel.from_snr_db(5)
    res = optimize(builtin("h2"), qam4, noise, rule3, power=3.0, restarts=2, seed=4)
    assert abs(res.state.sigma_g2.sum() - 3) <= 1e-9
    again = optimize(builtin("h2"), qam4, noise, rule3, power=3.0, restarts=2, seed=4)
    assert again.mi_bits == res.mi_bits


def test_helpers():
    np.testing.assert_allclose(_renormalize(np.array([1.0, -1.0, 3.0]), 2.0), [0.5, 0, 1.5])
    with pytest.raises(NumericalFailure):
        _renormalize(np.array([-1.0, 0.0]), 2.0)
    d = _project_direction(np.array([0.0, 2.0]), np.array([-1.0, 1.0]))
    np.testing.assert_array_equal(d, [0.0, 0.0])
    d = _project_direction(np.array([1.0, 1.0]), np.array([1.0, 3.0]))
    np.testing.assert_array_equal(d, [-1.0, 1.0])
    for q in start_rotations(3):
        assert np.abs(q.conj().T @ q - np.eye(3)).max() <= 1e-12


def test_state_w_property():
    st = PrecoderState(np.eye(2, dtype=complex), np.array([1.5, 0.5]), np.array([2.0, 1.0]))
    np.testing.assert_allclose(st.w, np.diag([6.0, 0.5]))
