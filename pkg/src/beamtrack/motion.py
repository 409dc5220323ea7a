"""UAV kinematics and the monostatic sensing measurement model.

State vector convention: ``[x, vx, y, vy]`` in meters and meters/second,
expressed in BS-centered coordinates.  The ULA lies on the x axis, so the
served half-plane is y > 0.  Azimuth is the two-argument arctangent of
(y, x); slant range includes the fixed flight altitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import FOUR_PI, SINGULAR_Y, ScenarioConfig, SingularGeometryError


@dataclass
class MotionState:
    x_m: float
    vx_mps: float
    y_m: float
    vy_mps: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_m, self.vx_mps, self.y_m, self.vy_mps], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "MotionState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2], arr[3])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m], dtype=float)


@dataclass
class Measurement:
    azimuth_rad: float
    range_m: float


@dataclass
class NoiseVariances:
    var_angle: float   # rad^2
    var_range: float   # m^2


# ----------------------------------------------------------------------
# constant-velocity kinematics
# ----------------------------------------------------------------------

def transition_matrix(slot_s: float) -> np.ndarray:
    """Constant-velocity transition over one slot, block diagonal per axis."""
    block = np.array([[1.0, slot_s], [0.0, 1.0]])
    return np.kron(np.eye(2), block)


def process_noise_cov(slot_s: float, intensity: float) -> np.ndarray:
    """Integrated white-acceleration covariance over one slot."""
    dt = slot_s
    block = np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                      [dt ** 2 / 2.0, dt]])
    return intensity * np.kron(np.eye(2), block)


def process_noise_chol(slot_s: float, intensity: float) -> np.ndarray:
    """Lower Cholesky factor of the process noise covariance.

    Factored as sqrt(intensity) times the factor of the unit-intensity kernel
    so a zero intensity yields an exactly zero factor.
    """
    dt = slot_s
    if dt <= 0.0:
        return np.zeros((4, 4))
    block = np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                      [dt ** 2 / 2.0, dt]])
    unit = np.kron(np.eye(2), block)
    return math.sqrt(intensity) * np.linalg.cholesky(unit)


def control_input(predicted: np.ndarray, prev_estimate: np.ndarray,
                  cfg: ScenarioConfig) -> np.ndarray:
    """Control that steers the previous estimate onto the predicted state."""
    g = transition_matrix(cfg.slot_s)
    return np.asarray(predicted, float) - g @ np.asarray(prev_estimate, float)


def evolve_state(prev: np.ndarray, control: np.ndarray, cfg: ScenarioConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """One slot of true motion: transition + control + process noise."""
    g = transition_matrix(cfg.slot_s)
    chol = process_noise_chol(cfg.slot_s, cfg.process_noise_intensity)
    noise = chol @ rng.standard_normal(4)
    return g @ np.asarray(prev, float) + np.asarray(control, float) + noise


# ----------------------------------------------------------------------
# sensing link budget
# ----------------------------------------------------------------------

def sensing_gain(cfg: ScenarioConfig) -> float:
    """Matched-filter echo processing gain of the monostatic sensing receiver."""
    array_factor = (cfg.transmit_power_W * cfg.matched_filter_gain
                    * cfg.n_tx * cfg.n_rx / cfg.noise_power_W)
    reflect_factor = cfg.rcs_m2 * cfg.wavelength_m ** 2 / FOUR_PI ** 3
    return array_factor * reflect_factor


def gamma_max(cfg: ScenarioConfig) -> float:
    """Largest meaningful SNR target: full beam gain at the closest allowed point."""
    return cfg.p_tilde * cfg.n_tx / (cfg.y_min_m ** 2 + cfg.altitude_m ** 2)


# ----------------------------------------------------------------------
# measurement model
# ----------------------------------------------------------------------

def measurement_mean(position, cfg: ScenarioConfig) -> tuple[float, float]:
    """Noiseless azimuth / slant range at a ground position (x, y)."""
    x, y = float(position[0]), float(position[1])
    azimuth = math.atan2(y, x)
    slant = math.sqrt(x * x + y * y + cfg.altitude_m ** 2)
    return azimuth, slant


def meas_noise_vars(position, w: float, cfg: ScenarioConfig) -> NoiseVariances:
    """CRLB-style azimuth and range noise variances at a ground position.

    Raises SingularGeometryError on the array axis, where the azimuth
    variance diverges.
    """
    x, y = float(position[0]), float(position[1])
    if abs(y) < SINGULAR_Y:
        raise SingularGeometryError(f"position ({x}, {y}) sits on the array axis")
    r2 = x * x + y * y
    slant2 = r2 + cfg.altitude_m ** 2
    rho = sensing_gain(cfg) * w
    var_angle = cfg.meas_coeff_angle ** 2 * slant2 ** 2 * r2 / (rho * y * y)
    var_range = cfg.meas_coeff_range ** 2 * slant2 ** 2 / rho
    return NoiseVariances(var_angle=var_angle, var_range=var_range)


def measure(true_state: np.ndarray, w: float, cfg: ScenarioConfig,
            rng: np.random.Generator) -> Measurement:
    """Draw one noisy (azimuth, range) measurement at the true position."""
    state = np.asarray(true_state, float)
    pos = (state[0], state[2])
    azimuth, slant = measurement_mean(pos, cfg)
    noise = meas_noise_vars(pos, w, cfg)
    z = rng.standard_normal(2)
    return Measurement(
        azimuth_rad=azimuth + math.sqrt(noise.var_angle) * z[0],
        range_m=slant + math.sqrt(noise.var_range) * z[1],
    )


def measurement_flags(meas: Measurement, cfg: ScenarioConfig) -> dict:
    """Plausibility flags; noisy measurements may violate these, which is fine."""
    return {
        "range_below_altitude": meas.range_m < cfg.altitude_m,
        "azimuth_outside_halfplane": not (0.0 < meas.azimuth_rad < math.pi),
    }
