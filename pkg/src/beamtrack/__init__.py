"""Sensing-assisted beam tracking for a cellular-connected rotary UAV.

Simulator and per-slot optimizer for a ground station that senses the UAV
with radar echoes while serving it data: extended Kalman tracking with
state-dependent measurement noise, an analytic outage-probability surrogate
over the predicted position uncertainty, and joint optimization of the
commanded waypoint, the sensing/communication duration split, and the
per-stage SNR targets.
"""

from .config import ConfigError, OptimizerConfig, ScenarioConfig, load_config_file
from .ekf import EkfState, planning_posterior, position_marginal, predict_mse, update
from .motion import MotionState, gamma_max, sensing_gain
from .optimizer import (SlotDecision, SlotInputs, ao_solve, search_based_solve,
                        solve_p22_sca, solve_p31)
from .outage import PositionGaussian, SnrTargets, approx_op, mc_op, stage_ops

__all__ = [
    "ConfigError",
    "OptimizerConfig",
    "ScenarioConfig",
    "load_config_file",
    "EkfState",
    "planning_posterior",
    "position_marginal",
    "predict_mse",
    "update",
    "MotionState",
    "gamma_max",
    "sensing_gain",
    "PositionGaussian",
    "SnrTargets",
    "approx_op",
    "mc_op",
    "stage_ops",
    "ao_solve",
    "search_based_solve",
    "solve_p22_sca",
    "solve_p31",
    "SlotDecision",
    "SlotInputs",
]

__version__ = "0.1.0"
