"""Extended Kalman filter for the controlled constant-velocity UAV model.

The measurement is (azimuth, slant range) with state-dependent noise, so the
measurement covariance is rebuilt every slot.  During simulation it is
evaluated at the ground-truth position (the noise the receiver actually
sees); the planning helpers evaluate it at the predicted position instead,
because that is all the optimizer knows ahead of time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .motion import (Measurement, MotionState, meas_noise_vars, measurement_mean,
                     process_noise_cov, transition_matrix)


@dataclass
class EkfState:
    estimate: np.ndarray   # posterior state (4,)
    mse: np.ndarray        # posterior MSE matrix (4, 4)


@dataclass
class PredictionBundle:
    predicted: np.ndarray  # predicted state (4,)
    prior_mse: np.ndarray  # one-step prediction MSE (4, 4)
    jac: np.ndarray        # measurement Jacobian at the predicted state (2, 4)
    meas_cov: np.ndarray   # measurement noise covariance (2, 2)


def predict_mse(prev_mse: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """One-step prediction MSE: G M G^T + Q_p, symmetrized."""
    g = transition_matrix(cfg.slot_s)
    mp = g @ np.asarray(prev_mse, float) @ g.T + process_noise_cov(
        cfg.slot_s, cfg.process_noise_intensity)
    return 0.5 * (mp + mp.T)


def jacobian(state, cfg: ScenarioConfig) -> np.ndarray:
    """Measurement Jacobian rows (d azimuth, d range) wrt the 4-state.

    Accepts a 4-state or a bare (x, y) position; velocity columns are zero.
    """
    arr = np.asarray(state, float)
    if arr.shape == (2,):
        x, y = arr[0], arr[1]
    else:
        x, y = arr[0], arr[2]
    r2 = x * x + y * y
    slant = math.sqrt(r2 + cfg.altitude_m ** 2)
    jac = np.zeros((2, 4))
    jac[0, 0] = -y / r2
    jac[0, 2] = x / r2
    jac[1, 0] = x / slant
    jac[1, 2] = y / slant
    return jac


def kalman_gain(prior_mse: np.ndarray, jac: np.ndarray, meas_cov: np.ndarray) -> np.ndarray:
    """K = M H^T (Q_m + H M H^T)^{-1}; raises LinAlgError when the inner 2x2 is singular."""
    mp = np.asarray(prior_mse, float)
    cross = mp @ jac.T                         # (4, 2)
    inner = meas_cov + jac @ cross             # (2, 2)
    return np.linalg.solve(inner.T, cross.T).T


def prepare_bundle(predicted: np.ndarray, prior_mse: np.ndarray, meas_cov: np.ndarray,
                   cfg: ScenarioConfig) -> PredictionBundle:
    return PredictionBundle(
        predicted=np.asarray(predicted, float),
        prior_mse=np.asarray(prior_mse, float),
        jac=jacobian(predicted, cfg),
        meas_cov=np.asarray(meas_cov, float),
    )


def update(bundle: PredictionBundle, meas: Measurement, cfg: ScenarioConfig,
           form: str = "covariance") -> EkfState:
    """Measurement update in covariance or information form.

    Both forms compute the same posterior; the information form needs an
    invertible prior MSE and falls back to the covariance form (with a
    warning) when the prior is singular.
    """
    azimuth, slant = measurement_mean((bundle.predicted[0], bundle.predicted[2]), cfg)
    innovation = np.array([meas.azimuth_rad - azimuth, meas.range_m - slant])
    if form == "information":
        try:
            mp_inv = np.linalg.inv(bundle.prior_mse)
            qm_inv = np.linalg.inv(bundle.meas_cov)
            post = np.linalg.inv(bundle.jac.T @ qm_inv @ bundle.jac + mp_inv)
            post = 0.5 * (post + post.T)
            gain = post @ bundle.jac.T @ qm_inv
            est = bundle.predicted + gain @ innovation
            return EkfState(estimate=est, mse=post)
        except np.linalg.LinAlgError:
            warnings.warn("singular prior MSE; falling back to covariance form")
    elif form != "covariance":
        raise ValueError(f"unknown update form {form!r}")
    gain = kalman_gain(bundle.prior_mse, bundle.jac, bundle.meas_cov)
    est = bundle.predicted + gain @ innovation
    post = (np.eye(4) - gain @ bundle.jac) @ bundle.prior_mse
    return EkfState(estimate=est, mse=0.5 * (post + post.T))


def position_marginal(mse: np.ndarray) -> np.ndarray:
    """2x2 ground-position block of a 4x4 state MSE matrix."""
    m = np.asarray(mse, float)
    out = np.array([[m[0, 0], m[0, 2]], [m[2, 0], m[2, 2]]])
    return 0.5 * (out + out.T)


def planning_posterior(beam_pos, w: float, prior_mse: np.ndarray,
                       cfg: ScenarioConfig) -> np.ndarray:
    """Posterior MSE the filter would reach if the UAV sat at the predicted point.

    Used ahead of the measurement, so the noise covariance is evaluated at
    the beam position itself.
    """
    x, y = float(beam_pos[0]), float(beam_pos[1])
    noise = meas_noise_vars((x, y), w, cfg)
    mp = np.asarray(prior_mse, float)
    r2 = x * x + y * y
    slant = math.sqrt(r2 + cfg.altitude_m ** 2)
    # inline 2x4 Jacobian contraction; this sits on the optimizer hot path
    h0 = (-y / r2, x / r2)
    h1 = (x / slant, y / slant)
    c0 = mp[:, 0] * h0[0] + mp[:, 2] * h0[1]       # M H^T columns (4,)
    c1 = mp[:, 0] * h1[0] + mp[:, 2] * h1[1]
    s00 = noise.var_angle + h0[0] * c0[0] + h0[1] * c0[2]
    s01 = h0[0] * c1[0] + h0[1] * c1[2]
    s11 = noise.var_range + h1[0] * c1[0] + h1[1] * c1[2]
    det = s00 * s11 - s01 * s01
    k0 = (c0 * s11 - c1 * s01) / det               # gain columns (4,)
    k1 = (c1 * s00 - c0 * s01) / det
    post = mp - np.outer(k0, c0) - np.outer(k1, c1)
    return 0.5 * (post + post.T)
