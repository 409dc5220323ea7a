"""Benchmark trajectory policies: straight flight, trace-of-MSE, angle-noise.

Each policy picks the per-slot waypoint under the same kinematic constraint
as the proposed scheme but from a different objective; the duration split is
pinned to w_max and the SNR targets come from the identical capacity
subproblem (solve_p31 with fixed w), so capacity comparisons isolate the
trajectory choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig, SingularGeometryError
from .ekf import planning_posterior
from .motion import meas_noise_vars
from .optimizer import SlotInputs, project_disk_halfspace

# mpcrb searches the full disk; the angle-noise variance diverges on the
# array axis, so its objective clamps |y| to this floor (the K -> 0 limit
# in the angle row; the argmin never sits there).
_AXIS_FLOOR = 1e-7


@dataclass
class BenchmarkPolicy:
    kind: str                           # "sfh" | "mpcrb" | "msigma1"
    hover_target: np.ndarray | None = None   # sfh only


def sfh_step(prev_estimate_pos, q_f, cfg: ScenarioConfig) -> np.ndarray:
    """Fly straight toward the fixed destination, then hover there."""
    pos = np.asarray(prev_estimate_pos, float)
    q_f = np.asarray(q_f, float)
    d = q_f - pos
    dist = math.hypot(d[0], d[1])
    step = cfg.v_max_mps * cfg.slot_s
    if dist <= step:
        return q_f.copy()
    return pos + d * (step / dist)


def grid_refine_minimize(objective, center, radius: float,
                         y_min: float | None = None,
                         tol: float = 1e-3) -> np.ndarray:
    """Deterministic global-ish minimizer over the reachability disk.

    64 seeds on 8 rings x 8 angles (outer ring on the boundary), then a
    shrinking axis-aligned pattern search from the best seed; every candidate
    is projected back into the feasible set.
    """
    center = np.asarray(center, float)

    def feasible(q: np.ndarray) -> np.ndarray:
        if y_min is not None:
            return project_disk_halfspace(q, center, radius, y_min)
        d = q - center
        dist = math.hypot(d[0], d[1])
        if dist > radius:
            return center + d * (radius / dist)
        return q

    best_q = None
    best_val = math.inf
    for ring in range(8):
        r = radius * (ring + 1) / 8.0
        for k in range(8):
            ang = 2.0 * math.pi * (k + 0.5 * (ring % 2)) / 8.0
            q = feasible(center + r * np.array([math.cos(ang), math.sin(ang)]))
            val = objective(q)
            if val < best_val:
                best_q, best_val = q, val

    h = radius / 8.0
    while h > tol:
        moved = False
        for delta in ((h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)):
            q = feasible(best_q + delta)
            val = objective(q)
            if val < best_val - 1e-15:
                best_q, best_val = q, val
                moved = True
        if not moved:
            h *= 0.5
    return best_q


def mpcrb_step(inputs: SlotInputs, cfg: ScenarioConfig) -> np.ndarray:
    """Waypoint minimizing the planned posterior-MSE trace over the disk."""

    def objective(q: np.ndarray) -> float:
        y = q[1]
        if abs(y) < _AXIS_FLOOR:
            y = _AXIS_FLOOR if y >= 0.0 else -_AXIS_FLOOR
        post = planning_posterior(np.array([q[0], y]), cfg.w_max,
                                  inputs.prior_mse, cfg)
        return float(np.trace(post))

    radius = cfg.v_max_mps * cfg.slot_s
    return grid_refine_minimize(objective, inputs.prev_estimate[[0, 2]], radius)


def msigma1_step(inputs: SlotInputs, cfg: ScenarioConfig) -> np.ndarray:
    """Waypoint minimizing the planned azimuth measurement variance."""

    def objective(q: np.ndarray) -> float:
        try:
            return meas_noise_vars(q, cfg.w_max, cfg).var_angle
        except SingularGeometryError:
            return math.inf

    radius = cfg.v_max_mps * cfg.slot_s
    return grid_refine_minimize(objective, inputs.prev_estimate[[0, 2]], radius,
                                y_min=cfg.y_min_m)
