"""EKF prediction, linearization, gain, and the two update forms."""

from __future__ import annotations

import math

import numpy as np
import pytest

from beamtrack.ekf import (jacobian, kalman_gain, planning_posterior,
                           position_marginal, predict_mse, prepare_bundle,
                           update)
from beamtrack.motion import (meas_noise_vars, measure, measurement_mean,
                              transition_matrix)

from helpers import random_psd


def test_predict_mse_identity(cfg16):
    cfg = cfg16.replace(slot_s=1.0, process_noise_intensity=0.0)
    out = predict_mse(np.eye(4), cfg)
    assert np.allclose(np.diag(out), [2.0, 1.0, 2.0, 1.0], atol=1e-14)
    g = transition_matrix(1.0)
    assert np.allclose(out, g @ g.T, atol=1e-14)


def test_predict_mse_adds_process_noise(cfg16):
    cfg = cfg16.replace(process_noise_intensity=1e-4)
    m = random_psd(np.random.default_rng(3), 4)
    out = predict_mse(m, cfg)
    assert np.allclose(out, out.T, atol=1e-15)
    base = predict_mse(m, cfg.replace(process_noise_intensity=0.0))
    assert np.all(np.linalg.eigvalsh(out - base) >= -1e-15)


def test_jacobian_broadside(cfg16):
    jac = jacobian(np.array([0.0, 0.0, 10.0, 0.0]), cfg16)
    assert np.allclose(jac[0], [-0.1, 0.0, 0.0, 0.0], atol=1e-15)
    assert np.allclose(jac[1], [0.0, 0.0, 10.0 / math.sqrt(2600.0), 0.0],
                       atol=1e-15)
    # the same position passed as a bare (x, y) pair gives the same rows
    assert np.allclose(jacobian(np.array([0.0, 10.0]), cfg16), jac, atol=0)


def test_jacobian_matches_finite_differences(cfg16):
    rng = np.random.default_rng(11)
    for _ in range(25):
        x = rng.uniform(-30, 30)
        y = rng.uniform(1.0, 30)
        jac = jacobian(np.array([x, 0.0, y, 0.0]), cfg16)
        assert np.allclose(jac[:, [1, 3]], 0.0, atol=0)
        h = 1e-5
        for row, fn in enumerate((lambda p: measurement_mean(p, cfg16)[0],
                                  lambda p: measurement_mean(p, cfg16)[1])):
            for col, axis in ((0, 0), (2, 1)):
                dp = np.array([x, y], dtype=float)
                dm = dp.copy()
                dp[axis] += h
                dm[axis] -= h
                fd = (fn(dp) - fn(dm)) / (2 * h)
                assert jac[row, col] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_kalman_gain_scalar_reduction():
    m_val, h_val, q_val = 0.7, 1.3, 0.2
    prior = np.diag([m_val, 0.0, 0.0, 0.0])
    jac = np.array([[h_val, 0.0, 0.0, 0.0], [0.0, 0.0, 1e-12, 0.0]])
    meas_cov = np.diag([q_val, 1.0])
    gain = kalman_gain(prior, jac, meas_cov)
    assert gain[0, 0] == pytest.approx(m_val * h_val / (q_val + h_val ** 2 * m_val),
                                       rel=1e-12)


def _random_instance(rng, cfg):
    pos = np.array([rng.uniform(-20, 20), rng.uniform(2.0, 25.0)])
    state = np.array([pos[0], rng.uniform(-1, 1), pos[1], rng.uniform(-1, 1)])
    prior = random_psd(rng, 4, scale=rng.uniform(0.005, 0.1))
    nv = meas_noise_vars(pos, cfg.w_max, cfg)
    meas_cov = np.diag([nv.var_angle, nv.var_range])
    return state, prior, meas_cov


def test_update_forms_agree(cfg16):
    rng = np.random.default_rng(5)
    for _ in range(1000):
        state, prior, meas_cov = _random_instance(rng, cfg16)
        bundle = prepare_bundle(state, prior, meas_cov, cfg16)
        meas = measure(state, cfg16.w_max, cfg16, rng)
        a = update(bundle, meas, cfg16, form="covariance")
        b = update(bundle, meas, cfg16, form="information")
        scale = max(1.0, float(np.max(np.abs(a.mse))))
        assert np.max(np.abs(a.mse - b.mse)) / scale < 1e-8
        est_scale = max(1.0, float(np.max(np.abs(a.estimate))))
        assert np.max(np.abs(a.estimate - b.estimate)) / est_scale < 1e-8


def test_update_unknown_form(cfg16):
    rng = np.random.default_rng(6)
    state, prior, meas_cov = _random_instance(rng, cfg16)
    bundle = prepare_bundle(state, prior, meas_cov, cfg16)
    meas = measure(state, cfg16.w_max, cfg16, rng)
    with pytest.raises(ValueError):
        update(bundle, meas, cfg16, form="square-root")


def test_update_never_inflates(cfg16):
    rng = np.random.default_rng(7)
    for _ in range(200):
        state, prior, meas_cov = _random_instance(rng, cfg16)
        bundle = prepare_bundle(state, prior, meas_cov, cfg16)
        meas = measure(state, cfg16.w_max, cfg16, rng)
        post = update(bundle, meas, cfg16)
        assert np.min(np.linalg.eigvalsh(prior - post.mse)) >= -1e-10
        assert np.min(np.linalg.eigvalsh(post.mse)) >= -1e-12


def test_one_step_consistency(cfg16):
    # empirical one-step estimation MSE tracks the filter's reported trace
    rng = np.random.default_rng(12)
    planned = np.array([3.0, 0.2, 12.0, -0.1])
    prior = np.diag([0.05, 0.02, 0.05, 0.02])
    chol = np.sqrt(np.diag(prior))
    sq_err = 0.0
    tr = 0.0
    n = 10_000
    for _ in range(n):
        truth = planned + chol * rng.standard_normal(4)
        nv = meas_noise_vars(truth[[0, 2]], cfg16.w_max, cfg16)
        meas_cov = np.diag([nv.var_angle, nv.var_range])
        bundle = prepare_bundle(planned, prior, meas_cov, cfg16)
        meas = measure(truth, cfg16.w_max, cfg16, rng)
        post = update(bundle, meas, cfg16)
        sq_err += float(np.sum((post.estimate - truth) ** 2))
        tr += float(np.trace(post.mse))
    assert sq_err / n == pytest.approx(tr / n, rel=0.15)


def test_position_marginal():
    m = random_psd(np.random.default_rng(8), 4)
    lam = position_marginal(m)
    assert lam.shape == (2, 2)
    assert lam[0, 0] == pytest.approx(m[0, 0])
    assert lam[1, 1] == pytest.approx(m[2, 2])
    assert lam[0, 1] == pytest.approx(lam[1, 0])
    assert lam[0, 1] == pytest.approx(0.5 * (m[0, 2] + m[2, 0]))


def test_planning_posterior_matches_explicit(cfg16):
    rng = np.random.default_rng(9)
    for _ in range(50):
        beam = np.array([rng.uniform(-15, 15), rng.uniform(2.0, 20.0)])
        prior = random_psd(rng, 4, scale=0.05)
        w = rng.uniform(cfg16.w_min, cfg16.w_max)
        planned = planning_posterior(beam, w, prior, cfg16)

        state = np.array([beam[0], 0.0, beam[1], 0.0])
        nv = meas_noise_vars(beam, w, cfg16)
        jac = jacobian(state, cfg16)
        gain = kalman_gain(prior, jac, np.diag([nv.var_angle, nv.var_range]))
        post = (np.eye(4) - gain @ jac) @ prior
        post = 0.5 * (post + post.T)
        assert np.allclose(planned, post, rtol=1e-9, atol=1e-14)
