"""Closed-loop simulation: decide, command, evolve, measure, filter, log.

Each slot runs the full cycle: the active policy picks the waypoint, duration
split, and SNR targets; the control input re-centers the truth dynamics on
the commanded state; a noisy (azimuth, range) measurement feeds the EKF; the
record keeps both the planned quantities and the realized ones.

Randomness comes from three counter-based streams (process, measurement,
init) keyed off the run seed, so runs replay exactly and Monte Carlo
aggregation is order-independent.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .benchmarks import mpcrb_step, msigma1_step, sfh_step
from .config import POLICY_NAMES, ConfigError, ScenarioConfig, SingularGeometryError
from .ekf import EkfState, predict_mse, prepare_bundle, update
from .motion import (control_input, evolve_state, meas_noise_vars, measure,
                     process_noise_chol, transition_matrix)
from .optimizer import (InfeasibleRegionError, SlotDecision, SlotInputs,
                        ao_solve, search_based_solve, solve_p31)
from .outage import SnrTargets, snr_at

_U64 = (1 << 64) - 1
# stream labels ("proc", "meas", "init" in ASCII) XORed into the run seed
STREAM_PROCESS = 0x70726F63
STREAM_MEASURE = 0x6D656173
STREAM_INIT = 0x696E6974


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([(seed ^ stream) & _U64, stream & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class SlotRecord:
    run: int
    policy: str
    slot: int
    time_s: float
    true_x: float
    true_vx: float
    true_y: float
    true_vy: float
    pred_x: float
    pred_vx: float
    pred_y: float
    pred_vy: float
    meas_azimuth: float
    meas_range: float
    est_x: float
    est_vx: float
    est_y: float
    est_vy: float
    w: float
    gamma_pred: float
    gamma_est: float
    op_pred: float
    op_est: float
    snr_pred: float
    snr_est: float
    outage_pred: int
    outage_est: int
    capacity: float
    trace_mse_prior: float
    trace_mse_post: float
    feasible: int
    valid: int


SLOT_COLUMNS = tuple(f.name for f in fields(SlotRecord))


@dataclass
class RunResult:
    records: list
    seed: int
    policy: str
    config: dict
    mean_capacity: float = 0.0
    outage_rate_pred: float = 0.0
    outage_rate_est: float = 0.0
    n_feasible: int = 0
    n_valid: int = 0
    outage_k_pred: int = 0
    outage_k_est: int = 0


def wilson_halfwidth(k: int, n: int, z: float = 1.96) -> float:
    """Half-width of the Wilson 95% score interval for a binomial rate."""
    if n == 0:
        return 0.0
    phat = k / n
    denom = 1.0 + z * z / n
    return z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom


def initial_filter_state(cfg: ScenarioConfig) -> np.ndarray:
    """Slot-0 estimate: explicit value, truth plus offset, or truth itself."""
    if cfg.initial_estimate is not None:
        return np.asarray(cfg.initial_estimate, float).copy()
    est = np.asarray(cfg.initial_state, float).copy()
    if cfg.initial_estimate_offset is not None:
        est = est + np.asarray(cfg.initial_estimate_offset, float)
    return est


def _pick_policy(name: str, cfg: ScenarioConfig):
    if name not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {name!r}")
    if name == "sfh" and cfg.hover_target is None:
        raise ConfigError("the sfh policy needs hover_target in the config")


def run(cfg: ScenarioConfig, policy: str, run_index: int = 0,
        base_seed: int | None = None) -> RunResult:
    """Simulate one seeded N-slot episode under the given policy."""
    _pick_policy(policy, cfg)
    base = cfg.rng_seed if base_seed is None else base_seed
    seed = (int(base) + run_index) & _U64
    rng_proc = stream_rng(seed, STREAM_PROCESS)
    rng_meas = stream_rng(seed, STREAM_MEASURE)
    rng_init = stream_rng(seed, STREAM_INIT)

    g = transition_matrix(cfg.slot_s)
    m0 = cfg.m0_matrix()
    x_hat = initial_filter_state(cfg)
    radius = cfg.v_max_mps * cfg.slot_s
    if x_hat[2] + radius < cfg.y_min_m - 1e-12:
        raise ConfigError(
            f"initial estimate y = {x_hat[2]:g} cannot reach the served "
            f"half-plane y >= {cfg.y_min_m:g} within one slot")
    if cfg.init_noise:
        # m0 is diagonal by construction, so elementwise sqrt is its factor
        truth = x_hat + np.sqrt(np.diag(m0)) * rng_init.standard_normal(4)
    else:
        truth = np.asarray(cfg.initial_state, float).copy()
    mse = m0

    prev_beam = x_hat[[0, 2]] + cfg.slot_s * x_hat[[1, 3]]
    w_hint = None
    records = []

    for n in range(1, cfg.n_slots + 1):
        prior = predict_mse(mse, cfg)
        inputs = SlotInputs(cfg=cfg, prev_estimate=x_hat, prior_mse=prior,
                            start_point=prev_beam)

        lost = False
        try:
            if policy == "proposed-ao":
                decision, _ = ao_solve(inputs, hint_w=w_hint)
                w_hint = None if n % cfg.w_hint_refresh == 0 else decision.w
            elif policy == "proposed-search":
                decision, _ = search_based_solve(inputs)
            else:
                if policy == "sfh":
                    beam = sfh_step(x_hat[[0, 2]], cfg.hover_target, cfg)
                elif policy == "mpcrb":
                    beam = mpcrb_step(inputs, cfg)
                else:
                    beam = msigma1_step(inputs, cfg)
                w, targets, capacity, op_pred, op_est, feasible, _ = solve_p31(
                    beam, prior, cfg, fixed_w=cfg.w_max)
                decision = SlotDecision(np.asarray(beam, float), w, targets,
                                        capacity, op_pred, op_est, feasible)
        except InfeasibleRegionError:
            # estimate drifted below the served half-plane: climb straight
            # back, transmit nothing, and mark the slot unusable
            lost = True
            beam = np.array([x_hat[0], x_hat[2] + radius])
            decision = SlotDecision(beam, cfg.w_max, SnrTargets(0.0, 0.0),
                                    0.0, 1.0, 1.0, False)

        beam = decision.beam_pos
        v_des = (beam - x_hat[[0, 2]]) / cfg.slot_s
        commanded = np.array([beam[0], v_des[0], beam[1], v_des[1]])
        u = control_input(commanded, x_hat, cfg)
        truth = evolve_state(truth, u, cfg, rng_proc)

        valid = not lost
        meas = None
        try:
            if valid:
                noise_truth = meas_noise_vars(truth[[0, 2]], decision.w, cfg)
                meas = measure(truth, decision.w, cfg, rng_meas)
        except SingularGeometryError:
            valid = False

        if valid:
            meas_cov = np.diag([noise_truth.var_angle, noise_truth.var_range])
            bundle = prepare_bundle(commanded, prior, meas_cov, cfg)
            try:
                post = update(bundle, meas, cfg)
            except np.linalg.LinAlgError:
                valid = False
        if not valid:
            post = EkfState(estimate=commanded.copy(), mse=prior.copy())

        snr_pred = snr_at(truth[[0, 2]], beam, cfg)
        est_pos = post.estimate[[0, 2]]
        snr_est = snr_at(truth[[0, 2]], est_pos, cfg) \
            if math.hypot(est_pos[0], est_pos[1]) > 1e-12 else 0.0

        records.append(SlotRecord(
            run=run_index,
            policy=policy,
            slot=n,
            time_s=n * cfg.slot_s,
            true_x=truth[0], true_vx=truth[1], true_y=truth[2], true_vy=truth[3],
            pred_x=commanded[0], pred_vx=commanded[1],
            pred_y=commanded[2], pred_vy=commanded[3],
            meas_azimuth=meas.azimuth_rad if meas is not None else math.nan,
            meas_range=meas.range_m if meas is not None else math.nan,
            est_x=post.estimate[0], est_vx=post.estimate[1],
            est_y=post.estimate[2], est_vy=post.estimate[3],
            w=decision.w,
            gamma_pred=decision.targets.gamma_pred,
            gamma_est=decision.targets.gamma_est,
            op_pred=decision.op_pred,
            op_est=decision.op_est,
            snr_pred=snr_pred,
            snr_est=snr_est,
            outage_pred=int(snr_pred < decision.targets.gamma_pred),
            outage_est=int(snr_est < decision.targets.gamma_est),
            capacity=decision.capacity,
            trace_mse_prior=float(np.trace(prior)),
            trace_mse_post=float(np.trace(post.mse)),
            feasible=int(decision.feasible),
            valid=int(valid),
        ))

        x_hat, mse = post.estimate, post.mse
        prev_beam = beam

    result = RunResult(records=records, seed=seed, policy=policy,
                       config=cfg.to_dict())
    _fill_aggregates(result)
    return result


def _fill_aggregates(result: RunResult) -> None:
    usable = [r for r in result.records if r.feasible and r.valid]
    result.n_feasible = len(usable)
    result.n_valid = sum(r.valid for r in result.records)
    if usable:
        result.mean_capacity = sum(r.capacity for r in usable) / len(usable)
        result.outage_k_pred = sum(r.outage_pred for r in usable)
        result.outage_k_est = sum(r.outage_est for r in usable)
        result.outage_rate_pred = result.outage_k_pred / len(usable)
        result.outage_rate_est = result.outage_k_est / len(usable)


def _run_one(args) -> RunResult:
    cfg_doc, policy, idx, base = args
    return run(ScenarioConfig.from_dict(cfg_doc), policy, run_index=idx,
               base_seed=base)


def monte_carlo_runs(cfg: ScenarioConfig, policy: str, n_runs: int,
                     workers: int = 1) -> list[RunResult]:
    """Independent seeded runs, returned in run-index order regardless of
    scheduling, so downstream aggregation is reproducible."""
    if n_runs < 1:
        raise ConfigError("n_runs must be positive")
    tasks = [(cfg.to_dict(), policy, i, cfg.rng_seed) for i in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    return results


# ----------------------------------------------------------------------
# output files
# ----------------------------------------------------------------------

def format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.9g}"


def write_csv_atomic(path: str | Path, header, rows) -> None:
    """Write whole-file CSV via a temp file and rename; never appends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    os.replace(tmp, path)


def write_json_atomic(path: str | Path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def records_rows(results: list) -> list:
    rows = []
    for res in results:
        for r in res.records:
            rows.append([getattr(r, c) for c in SLOT_COLUMNS])
    return rows


def write_slot_csv(path: str | Path, results: list) -> None:
    write_csv_atomic(path, SLOT_COLUMNS, records_rows(results))
