"""Scenario configuration: physical parameters, validation, JSON loading.

All quantities are SI: watts, meters, seconds, radians.  Noise power may be
given in dBm in scenario files; it is converted to watts exactly once, at
load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

FOUR_PI = 4.0 * math.pi

# |y| below this counts as sitting on the array axis (azimuth variance diverges).
SINGULAR_Y = 1e-9


class ConfigError(ValueError):
    """A scenario document failed schema or invariant checks."""


POLICY_NAMES = ("proposed-ao", "proposed-search", "sfh", "mpcrb", "msigma1")


class SingularGeometryError(ValueError):
    """A position sits on the ULA axis (y = 0), where the azimuth noise model diverges."""


def dbm_to_watt(value_dbm: float) -> float:
    """Convert a power in dBm to watts."""
    return 10.0 ** (value_dbm / 10.0) * 1e-3


@dataclass
class OptimizerConfig:
    """Tolerances and iteration caps for the per-slot decision solvers."""

    tol_w: float = 1e-3          # bisection tolerance on the sensing duration ratio w
    tol_c: float = 1e-3          # per-stage capacity bisection tolerance [bps/Hz]
    tol_obj: float = 1e-3        # outer objective tolerance [bps/Hz]
    sca_max_iters: int = 40
    sca_curvature: float | None = None   # fixed surrogate curvature; None = scaled from first gradient
    sca_step_tol: float = 1e-5   # stop when the trajectory step falls below this [m]
    fd_step: float = 1e-4        # central finite-difference step for OP gradients [m]
    max_outer_iters: int = 30    # cap on alternating rounds / outer bisection rounds
    golden_tol: float = 1e-3     # golden-section interval tolerance on w
    w_grid_points: int = 9       # coarse w grid guarding the golden section
    quad_nodes: int = 96         # Gauss-Legendre nodes for the OP quadrature
    inner_branch_rule: str = "op-threshold"   # "op-threshold" | "stage-compare"

    def validate(self) -> None:
        for name in ("tol_w", "tol_c", "tol_obj", "sca_step_tol", "fd_step", "golden_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"optimizer.{name} must be positive")
        for name in ("sca_max_iters", "max_outer_iters", "w_grid_points", "quad_nodes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"optimizer.{name} must be a positive integer")
        if self.sca_curvature is not None and self.sca_curvature <= 0.0:
            raise ConfigError("optimizer.sca_curvature must be positive when set")
        if self.inner_branch_rule not in ("op-threshold", "stage-compare"):
            raise ConfigError("optimizer.inner_branch_rule must be 'op-threshold' or 'stage-compare'")


@dataclass
class ScenarioConfig:
    """One complete scenario: link budget, geometry, noise model, protocol knobs.

    Fields mirror the JSON schema one-to-one.  ``noise_power_W`` is canonical;
    scenario files may instead carry ``noise_power_dbm``.
    """

    transmit_power_W: float = 0.1       # per-antenna transmit power P_A
    noise_power_W: float = 1e-11        # receiver noise power
    wavelength_m: float = 0.01
    rcs_m2: float = 0.2                 # target radar cross section
    altitude_m: float = 50.0            # fixed UAV flight altitude H
    slot_s: float = 0.02                # slot duration
    n_tx: int = 64
    n_rx: int = 64
    matched_filter_gain: float = 1e4    # symbols accumulated by the sensing matched filter
    meas_coeff_angle: float = 0.1       # azimuth measurement capability coefficient
    meas_coeff_range: float = 0.1       # range measurement capability coefficient
    process_noise_intensity: float = 1e-5
    outage_threshold: float = 1e-2      # per-stage outage probability budget
    y_min_m: float = 1.0                # closest allowed approach to the array axis
    v_max_mps: float = 30.0
    w_min: float = 0.1
    w_max: float = 1.0
    initial_state: np.ndarray = field(default_factory=lambda: np.zeros(4))
    initial_estimate: np.ndarray | None = None          # verbatim x-hat at slot 0
    initial_estimate_offset: np.ndarray | None = None   # x-hat = x0 + offset
    init_noise: bool = False            # draw the slot-0 estimate error from M0 instead
    initial_mse_scale: np.ndarray = field(default_factory=lambda: np.full(4, 1e-3))
    rng_seed: int = 0
    n_slots: int = 1000
    mc_trials: int = 100_000            # Monte Carlo draws for OP validation
    n_runs: int = 20                    # seeded runs aggregated by `compare`
    hover_target: np.ndarray | None = None              # fly-and-hover destination
    map_x_min: float = -15.0            # OP map grid bounds / resolution
    map_x_max: float = 15.0
    map_y_min: float = 3.0
    map_y_max: float = 20.0
    map_resolution_m: float = 0.2
    map_gamma_frac: float = 0.975       # OP-map SNR target as a fraction of gamma_max
    sweep_points: int = 20              # length of the OP-validation gamma sweep
    sweep_op_min: float = 1e-3          # OP range the gamma sweep must span
    sweep_op_max: float = 0.9
    sweep_w_points: int = 19            # w grid for the duration-split sweep
    sweep_states: tuple | None = None   # extra initial states for the w sweep
    policies: tuple = ("proposed-ao", "sfh", "mpcrb", "msigma1")
    w_hint_refresh: int = 32            # slots between full w re-searches while tracking
    gate_outage: bool = False           # fail the CLI when realized outage exceeds budget
    gate_geometry: bool = False         # fail the CLI when trajectory shapes drift
    gate_capacity_margin: float | None = None   # required capacity lead over benchmarks
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    # ------------------------------------------------------------------
    # derived quantities
    # ------------------------------------------------------------------

    @property
    def beta0(self) -> float:
        """Channel power gain at unit distance, (lambda / 4 pi)^2."""
        return (self.wavelength_m / FOUR_PI) ** 2

    @property
    def p_tilde(self) -> float:
        """Noise-normalized per-antenna received power factor."""
        return self.transmit_power_W * self.beta0 / self.noise_power_W

    def m0_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.initial_mse_scale, dtype=float))

    def validate(self) -> None:
        positive = (
            "transmit_power_W", "noise_power_W", "wavelength_m", "rcs_m2",
            "altitude_m", "slot_s", "matched_filter_gain", "y_min_m", "v_max_mps",
        )
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        for name in ("meas_coeff_angle", "meas_coeff_range", "process_noise_intensity"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.n_tx < 2 or self.n_rx < 1:
            raise ConfigError("n_tx must be >= 2 and n_rx >= 1")
        if not 0.0 < self.outage_threshold < 1.0:
            raise ConfigError("outage_threshold must sit strictly inside (0, 1)")
        if not 0.0 < self.w_min <= self.w_max <= 1.0:
            raise ConfigError("need 0 < w_min <= w_max <= 1")
        for name in ("n_slots", "mc_trials", "n_runs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.initial_state.shape != (4,):
            raise ConfigError("initial_state must have 4 entries (x, vx, y, vy)")
        if self.initial_estimate is not None and self.initial_estimate_offset is not None:
            raise ConfigError("give at most one of initial_estimate / initial_estimate_offset")
        if np.any(np.asarray(self.initial_mse_scale) < 0.0):
            raise ConfigError("initial_mse_scale entries must be nonnegative")
        if self.map_resolution_m <= 0.0 or self.map_x_max <= self.map_x_min \
                or self.map_y_max <= self.map_y_min:
            raise ConfigError("OP map bounds are inconsistent")
        if not 0.0 < self.map_gamma_frac <= 1.0:
            raise ConfigError("map_gamma_frac must sit in (0, 1]")
        if int(self.sweep_points) < 1:
            raise ConfigError("sweep_points must be positive (the gamma sweep is empty)")
        if not 0.0 < self.sweep_op_min < self.sweep_op_max < 1.0:
            raise ConfigError("need 0 < sweep_op_min < sweep_op_max < 1")
        if int(self.sweep_w_points) < 2:
            raise ConfigError("sweep_w_points must be at least 2")
        if int(self.w_hint_refresh) < 1:
            raise ConfigError("w_hint_refresh must be a positive integer")
        if not self.policies:
            raise ConfigError("policies must not be empty")
        bad = sorted(set(self.policies) - set(POLICY_NAMES))
        if bad:
            raise ConfigError(f"unknown policies: {', '.join(bad)}")
        if self.hover_target is not None and self.hover_target[1] < self.y_min_m:
            raise ConfigError("hover_target must respect the half-plane bound")
        if self.gate_capacity_margin is not None and not math.isfinite(self.gate_capacity_margin):
            raise ConfigError("gate_capacity_margin must be finite when set")
        if not np.isfinite(self.p_tilde) or self.p_tilde <= 0.0:
            raise ConfigError("derived normalized power is not a positive finite number")
        self.optimizer.validate()

    # ------------------------------------------------------------------
    # (de)serialization
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        if "noise_power_dbm" in doc:
            if "noise_power_W" in doc:
                raise ConfigError("give exactly one of noise_power_W / noise_power_dbm")
            dbm = float(doc.pop("noise_power_dbm"))
            watts = dbm_to_watt(dbm)
            # spot check the conversion helper itself
            assert abs(dbm_to_watt(-80.0) - 1e-11) <= 1e-23
            doc["noise_power_W"] = watts
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

        if "optimizer" in doc:
            opt_doc = doc["optimizer"]
            if isinstance(opt_doc, OptimizerConfig):
                pass
            elif isinstance(opt_doc, dict):
                opt_known = {f.name for f in fields(OptimizerConfig)}
                opt_unknown = sorted(set(opt_doc) - opt_known)
                if opt_unknown:
                    raise ConfigError(f"unknown optimizer keys: {', '.join(opt_unknown)}")
                doc["optimizer"] = OptimizerConfig(**opt_doc)
            else:
                raise ConfigError("optimizer must be an object")

        for name in ("initial_state", "initial_estimate", "initial_estimate_offset"):
            if doc.get(name) is not None:
                arr = np.asarray(doc[name], dtype=float)
                if arr.shape != (4,):
                    raise ConfigError(f"{name} must have 4 entries")
                doc[name] = arr
        if doc.get("hover_target") is not None:
            arr = np.asarray(doc["hover_target"], dtype=float)
            if arr.shape != (2,):
                raise ConfigError("hover_target must have 2 entries")
            doc["hover_target"] = arr
        if "initial_mse_scale" in doc:
            raw = doc["initial_mse_scale"]
            arr = np.full(4, float(raw)) if np.isscalar(raw) else np.asarray(raw, dtype=float)
            if arr.shape != (4,):
                raise ConfigError("initial_mse_scale must be a scalar or 4 entries")
            doc["initial_mse_scale"] = arr
        if "policies" in doc:
            raw = doc["policies"]
            if isinstance(raw, str):
                raw = [p for p in raw.split(",") if p]
            doc["policies"] = tuple(str(p) for p in raw)
        if doc.get("sweep_states") is not None:
            states = []
            for entry in doc["sweep_states"]:
                arr = np.asarray(entry, dtype=float)
                if arr.shape != (4,):
                    raise ConfigError("each sweep_states entry must have 4 entries")
                states.append(arr)
            doc["sweep_states"] = tuple(states)

        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        def _plain(v):
            if isinstance(v, np.ndarray):
                return [float(x) for x in v]
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, tuple):
                return [_plain(x) for x in v]
            return v

        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "optimizer":
                doc[f.name] = {g.name: getattr(v, g.name) for g in fields(OptimizerConfig)}
            else:
                doc[f.name] = _plain(v)
        return doc

    def replace(self, **updates) -> "ScenarioConfig":
        doc = self.to_dict()
        opt_updates = {}
        for key in list(updates):
            if key.startswith("optimizer."):
                opt_updates[key.split(".", 1)[1]] = updates.pop(key)
        doc.update(updates)
        doc["optimizer"].update(opt_updates)
        return ScenarioConfig.from_dict(doc)


def load_config_file(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario JSON document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ScenarioConfig.from_dict(doc)


# Value coercion for command-line key=value overrides.  Keys follow the
# JSON schema; nested optimizer fields use an "optimizer." prefix.
def coerce_override(key: str, raw: str):
    bool_keys = {"init_noise", "gate_outage", "gate_geometry"}
    int_keys = {"n_tx", "n_rx", "rng_seed", "n_slots", "mc_trials", "n_runs",
                "sweep_points", "sweep_w_points", "w_hint_refresh",
                "optimizer.sca_max_iters", "optimizer.max_outer_iters",
                "optimizer.w_grid_points", "optimizer.quad_nodes"}
    str_keys = {"optimizer.inner_branch_rule"}
    if key == "policies":
        return tuple(p for p in raw.split(",") if p)
    vector_keys = {"initial_state", "initial_estimate", "initial_estimate_offset",
                   "initial_mse_scale", "hover_target"}
    if key in bool_keys:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    if key in int_keys:
        return int(raw)
    if key in str_keys:
        return raw
    if key in vector_keys:
        return json.loads(raw)
    return float(raw)
