"""Command-line workflows: OP validation, OP maps, solver studies, tracking runs.

Every subcommand writes its CSV/JSON artifacts into --out and prints one
PASS/FAIL line per built-in check.  Exit code 0 means all checks passed,
1 means a check failed, 2 means the invocation or configuration was bad.
Outputs are deterministic for a given (config, seed, overrides).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, ScenarioConfig, SingularGeometryError,
                     coerce_override)
from .ekf import (jacobian, planning_posterior, position_marginal,
                  predict_mse, prepare_bundle, update)
from .motion import (Measurement, gamma_max, meas_noise_vars, measurement_mean,
                     process_noise_chol, sensing_gain, transition_matrix)
from .optimizer import (SlotInputs, ao_solve, project_disk_halfspace, solve_p31,
                        search_based_solve)
from .outage import (PositionGaussian, acor_bounds, acor_quadratic, approx_op,
                     beam_gain_kappa, kappa, mc_op)
from .presets import PRESET_NAMES, resolve_config
from .sim import (STREAM_INIT, STREAM_MEASURE, STREAM_PROCESS,
                  initial_filter_state, monte_carlo_runs, run, stream_rng,
                  wilson_halfwidth, write_csv_atomic, write_json_atomic,
                  write_slot_csv)

# Positions probed by validate-op; the smallest-y one is reported but not
# gated because the elliptical approximation degrades close to the array.
VALIDATE_POSITIONS = ((0.0, 3.0), (0.0, 7.0), (0.0, 15.0))
DEGRADED_POSITIONS = {(0.0, 3.0)}
OP_ACCURACY_TOL = 0.03
SOLVER_AGREEMENT_TOL = 1e-2       # bps/Hz
ARGMIN_ABS_X = (5.3, 6.3)         # expected off-axis optimum band on the map
SYMMETRY_TOL = 1e-9


def _workers() -> int:
    raw = os.environ.get("SIMCLI_WORKERS", "")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SIMCLI_WORKERS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError("SIMCLI_WORKERS must be >= 1")
    return value


class Checks:
    """Accumulates named pass/fail results and renders the exit code."""

    def __init__(self):
        self.items = []

    def add(self, name: str, ok, detail: str = "") -> None:
        self.items.append({"name": name, "passed": bool(ok), "detail": detail,
                           "gating": True})

    def info(self, name: str, detail: str = "") -> None:
        self.items.append({"name": name, "passed": None, "detail": detail,
                           "gating": False})

    def report(self) -> int:
        for item in self.items:
            if not item["gating"]:
                tag = "INFO"
            else:
                tag = "PASS" if item["passed"] else "FAIL"
            line = f"{tag:4s}  {item['name']}"
            if item["detail"]:
                line += f"  ({item['detail']})"
            print(line)
        failed = [i for i in self.items if i["gating"] and not i["passed"]]
        return 1 if failed else 0

    def doc(self) -> list:
        return self.items


# ----------------------------------------------------------------------
# validate-op: approximated OP against a closed-chain Monte Carlo oracle
# ----------------------------------------------------------------------

def _chain_snrs(cfg: ScenarioConfig, x_hat0: np.ndarray, w: float):
    """Realized per-stage SNR samples from one full closed-loop slot.

    Draws the initial estimation error, the process noise, and the
    measurement noise, runs the filter update per trial, and returns the
    exact-kernel SNR delivered by the prediction-stage beam and by the
    per-trial estimation-stage beam.  The three noise streams match the
    simulator's so the oracle is reproducible from the scenario seed.
    """
    n = cfg.mc_trials
    seed = cfg.rng_seed
    g = transition_matrix(cfg.slot_s)
    m0 = cfg.m0_matrix()
    x_breve = g @ np.asarray(x_hat0, float)
    beam = x_breve[[0, 2]]
    prior = predict_mse(m0, cfg)

    rng_init = stream_rng(seed, STREAM_INIT)
    rng_proc = stream_rng(seed, STREAM_PROCESS)
    rng_meas = stream_rng(seed, STREAM_MEASURE)
    e0 = rng_init.standard_normal((n, 4)) * np.sqrt(np.diag(m0))
    chol = process_noise_chol(cfg.slot_s, cfg.process_noise_intensity)
    zp = rng_proc.standard_normal((n, 4)) @ chol.T
    truth = x_breve + e0 @ g.T + zp

    tx, ty = truth[:, 0], truth[:, 2]
    r2 = tx * tx + ty * ty
    slant2 = r2 + cfg.altitude_m ** 2
    snr_pred = cfg.p_tilde * beam_gain_kappa(kappa(truth[:, [0, 2]], beam),
                                             cfg.n_tx) / slant2

    # per-trial measurement noise evaluated at the realized position
    rho = sensing_gain(cfg) * w
    y2 = np.maximum(ty * ty, 1e-18)   # the array axis is a null event here
    var_angle = cfg.meas_coeff_angle ** 2 * slant2 ** 2 * r2 / (rho * y2)
    var_range = cfg.meas_coeff_range ** 2 * slant2 ** 2 / rho
    zm = rng_meas.standard_normal((n, 2))
    meas_az = np.arctan2(ty, tx) + np.sqrt(var_angle) * zm[:, 0]
    meas_rng = np.sqrt(slant2) + np.sqrt(var_range) * zm[:, 1]

    az0, slant0 = measurement_mean(beam, cfg)
    jac = jacobian(x_breve, cfg)
    pht = prior @ jac.T
    s0 = jac @ pht
    s11 = s0[0, 0] + var_angle
    s12 = s0[0, 1]
    s22 = s0[1, 1] + var_range
    det = s11 * s22 - s12 * s12
    i1 = meas_az - az0
    i2 = meas_rng - slant0
    a1 = (s22 * i1 - s12 * i2) / det
    a2 = (s11 * i2 - s12 * i1) / det
    est_x = x_breve[0] + a1 * pht[0, 0] + a2 * pht[0, 1]
    est_y = x_breve[2] + a1 * pht[2, 0] + a2 * pht[2, 1]

    rb = np.hypot(est_x, est_y)
    rb_safe = np.maximum(rb, 1e-300)
    kap_est = est_x / rb_safe - tx / np.sqrt(r2)
    snr_est = cfg.p_tilde * beam_gain_kappa(kap_est, cfg.n_tx) / slant2
    snr_est = np.where(rb > 1e-12, snr_est, 0.0)
    return snr_pred, snr_est


def _gamma_at_op(op_of, target: float, hi: float) -> float:
    """Smallest SNR target whose approximated OP reaches `target`."""
    if op_of(hi) < target:
        return hi
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if op_of(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _gamma_sweep(op_of, cfg: ScenarioConfig) -> np.ndarray:
    cap = gamma_max(cfg) * (1.0 - 1e-9)
    lo = _gamma_at_op(op_of, cfg.sweep_op_min, cap)
    hi = _gamma_at_op(op_of, cfg.sweep_op_max, cap)
    if not lo < hi:
        lo, hi = 0.5 * cap, cap
    return np.linspace(lo, hi, cfg.sweep_points)


def cmd_validate_op(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    w = cfg.w_max
    prior = predict_mse(cfg.m0_matrix(), cfg)
    lam_pred = position_marginal(prior)
    rows = []
    summary = {"positions": []}

    for px, py in VALIDATE_POSITIONS:
        x_hat0 = np.array([px, 0.0, py, 0.0])
        beam = np.array([px, py])
        gated = (px, py) not in DEGRADED_POSITIONS
        lam_est = position_marginal(planning_posterior(beam, w, prior, cfg))
        snr_pred, snr_est = _chain_snrs(cfg, x_hat0, w)

        pos_doc = {"position": [px, py], "gated": gated, "stages": {}}
        for stage, lam, snrs in (("prediction", lam_pred, snr_pred),
                                 ("estimation", lam_est, snr_est)):
            gaussian = PositionGaussian(beam, lam)

            def op_of(gamma):
                return approx_op(beam, gamma, gaussian, cfg)

            sweep = _gamma_sweep(op_of, cfg)
            max_err = 0.0
            max_chain = 0.0
            for gamma in sweep:
                op_a = op_of(float(gamma))
                op_m = mc_op(beam, float(gamma), gaussian, cfg,
                             cfg.mc_trials, cfg.rng_seed)
                op_c = float(np.mean(snrs < gamma))
                err = abs(op_a - op_m)
                max_err = max(max_err, err)
                max_chain = max(max_chain, abs(op_a - op_c))
                rows.append([px, py, stage, float(gamma), op_a, op_m, err,
                             op_c, cfg.mc_trials, int(gated), int(not gated)])
            pos_doc["stages"][stage] = {
                "gamma_lo": float(sweep[0]), "gamma_hi": float(sweep[-1]),
                "max_abs_err": max_err, "max_chain_err": max_chain,
            }
            name = f"op accuracy at ({px:g},{py:g}) {stage}"
            detail = f"max|err| = {max_err:.4f} vs {OP_ACCURACY_TOL}"
            if gated:
                checks.add(name, max_err <= OP_ACCURACY_TOL, detail)
            else:
                checks.info(name, detail + ", known-degraded, not gated")
            checks.info(f"closed-loop deviation at ({px:g},{py:g}) {stage}",
                        f"max|approx - loop| = {max_chain:.4f}, diagnostic only")
        summary["positions"].append(pos_doc)

    write_csv_atomic(out / "op_accuracy.csv",
                     ["pos_x", "pos_y", "stage", "gamma", "op_approx", "op_mc",
                      "abs_err", "op_chain", "trials", "gated", "degraded"], rows)
    code = checks.report()
    summary["checks"] = checks.doc()
    write_json_atomic(out / "summary.json", summary)
    return code


# ----------------------------------------------------------------------
# op-map: prediction-stage OP over a beam-position grid, two array sizes
# ----------------------------------------------------------------------

def _grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


def cmd_op_map(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    xs = _grid_axis(cfg.map_x_min, cfg.map_x_max, cfg.map_resolution_m)
    ys = _grid_axis(cfg.map_y_min, cfg.map_y_max, cfg.map_resolution_m)
    lam = position_marginal(predict_mse(cfg.m0_matrix(), cfg))
    symmetric_axis = abs(xs[0] + xs[-1]) < 1e-12

    rows = []
    summary = {"grids": []}
    low_counts = {}
    for n_tx in (32, 64):
        sub = cfg.replace(n_tx=n_tx)
        # ceiling referenced to the overhead range H, not the y_min ring
        gamma = sub.map_gamma_frac * sub.p_tilde * n_tx / sub.altitude_m ** 2
        grid = np.empty((len(ys), len(xs)))
        for iy, yv in enumerate(ys):
            for ix, xv in enumerate(xs):
                beam = np.array([xv, yv])
                grid[iy, ix] = approx_op(beam, gamma,
                                         PositionGaussian(beam, lam), sub)
        for iy, yv in enumerate(ys):
            for ix, xv in enumerate(xs):
                rows.append([n_tx, float(xv), float(yv), grid[iy, ix]])

        iy, ix = np.unravel_index(int(np.argmin(grid)), grid.shape)
        x_star, y_star = float(xs[ix]), float(ys[iy])
        low = int(np.count_nonzero(grid < 0.5 * sub.outage_threshold))
        low_counts[n_tx] = low
        sym_err = float(np.max(np.abs(grid - grid[:, ::-1]))) \
            if symmetric_axis else math.nan
        summary["grids"].append({
            "n_tx": n_tx, "gamma": gamma, "argmin_x": x_star,
            "argmin_y": y_star, "min_op": float(grid[iy, ix]),
            "low_op_cells": low, "symmetry_err": sym_err,
        })

        checks.add(f"N={n_tx} optimum on the closest allowed line",
                   abs(y_star - ys[0]) < 1e-12, f"argmin y = {y_star:g}")
        checks.add(f"N={n_tx} optimum off-axis band",
                   ARGMIN_ABS_X[0] <= abs(x_star) <= ARGMIN_ABS_X[1],
                   f"argmin |x| = {abs(x_star):g} vs {ARGMIN_ABS_X}")
        ring_gamma = sub.map_gamma_frac * gamma_max(sub)
        row = [approx_op(np.array([xv, ys[0]]), ring_gamma,
                         PositionGaussian(np.array([xv, ys[0]]), lam), sub)
               for xv in xs]
        checks.info(f"N={n_tx} ring-referenced ceiling",
                    f"row argmin |x| = {abs(float(xs[int(np.argmin(row))])):g},"
                    " diagnostic only")
        if symmetric_axis:
            checks.add(f"N={n_tx} mirror symmetry", sym_err <= SYMMETRY_TOL,
                       f"max asymmetry = {sym_err:.2e}")
        else:
            checks.info(f"N={n_tx} mirror symmetry",
                        "grid not centered on the axis, skipped")

    checks.add("larger array concentrates the low-OP region",
               low_counts[64] < low_counts[32],
               f"cells below 0.5*eps: N64 = {low_counts[64]}, N32 = {low_counts[32]}")

    write_csv_atomic(out / "op_map.csv", ["n_tx", "x", "y", "op"], rows)
    code = checks.report()
    summary["checks"] = checks.doc()
    write_json_atomic(out / "summary.json", summary)
    return code


# ----------------------------------------------------------------------
# convergence: both per-slot solvers on the same single-slot problem
# ----------------------------------------------------------------------

def _slot_zero_inputs(cfg: ScenarioConfig, state=None) -> SlotInputs:
    x_hat = initial_filter_state(cfg) if state is None else _estimate_for(cfg, state)
    prior = predict_mse(cfg.m0_matrix(), cfg)
    start = x_hat[[0, 2]] + cfg.slot_s * x_hat[[1, 3]]
    return SlotInputs(cfg=cfg, prev_estimate=x_hat, prior_mse=prior,
                      start_point=start)


def _estimate_for(cfg: ScenarioConfig, state) -> np.ndarray:
    """Slot-0 estimate for an arbitrary start state (mirrors the simulator)."""
    if cfg.initial_estimate is not None:
        return np.asarray(cfg.initial_estimate, float).copy()
    est = np.asarray(state, float).copy()
    if cfg.initial_estimate_offset is not None:
        est = est + np.asarray(cfg.initial_estimate_offset, float)
    return est


def cmd_convergence(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    inputs = _slot_zero_inputs(cfg)
    dec_search, st_search = search_based_solve(inputs)
    dec_ao, st_ao = ao_solve(inputs)

    rows = []
    certified = [h["certified"] for h in st_search.history]
    for h in st_search.history:
        rows.append(["search", h["iteration"], h["certified"], h["probe"],
                     int(h["feasible"]), h["p22_solves"]])
    for h in st_ao.history:
        rows.append(["ao", h["iteration"], h["objective"], h["objective"],
                     int(h["feasible"]), h["p22_solves"]])
    write_csv_atomic(out / "convergence.csv",
                     ["solver", "iteration", "objective", "probe", "feasible",
                      "p22_solves"], rows)

    gap = abs(dec_search.capacity - dec_ao.capacity)
    checks.add("solver agreement", gap <= SOLVER_AGREEMENT_TOL,
               f"|search - ao| = {gap:.4g} bps/Hz vs {SOLVER_AGREEMENT_TOL}")
    monotone = all(b >= a for a, b in zip(certified, certified[1:]))
    checks.add("search objective monotone", monotone,
               f"{len(certified)} outer iterations")
    checks.add("ao uses fewer trajectory solves",
               st_ao.p22_solves < st_search.p22_solves,
               f"ao = {st_ao.p22_solves}, search = {st_search.p22_solves}")
    checks.add("both solutions feasible", dec_search.feasible and dec_ao.feasible)

    code = checks.report()
    write_json_atomic(out / "summary.json", {
        "search": _decision_doc(dec_search, st_search),
        "ao": _decision_doc(dec_ao, st_ao),
        "agreement_bps": gap,
        "checks": checks.doc(),
    })
    return code


def _decision_doc(dec, stats) -> dict:
    return {
        "capacity": dec.capacity, "w": dec.w,
        "gamma_pred": dec.targets.gamma_pred, "gamma_est": dec.targets.gamma_est,
        "op_pred": dec.op_pred, "op_est": dec.op_est,
        "beam": [float(dec.beam_pos[0]), float(dec.beam_pos[1])],
        "feasible": dec.feasible, "p22_solves": stats.p22_solves,
        "op_evals": stats.op_evals, "outer_iters": stats.outer_iters,
    }


# ----------------------------------------------------------------------
# sweep-w: capacity against the sensing duration ratio, fixed per solve
# ----------------------------------------------------------------------

def cmd_sweep_w(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    states = cfg.sweep_states if cfg.sweep_states is not None \
        else (np.asarray(cfg.initial_state, float),)
    ws = np.linspace(cfg.w_min, cfg.w_max, cfg.sweep_w_points)

    columns = ["w"]
    series = []
    summary = {"starts": []}
    for state in states:
        label = f"capacity_x{state[0]:g}_y{state[2]:g}"
        columns.append(label)
        inputs = _slot_zero_inputs(cfg, state)
        # beam fixed at the slot decision; the curve is the inner problem's
        # objective as the sensing ratio deviates from the chosen one
        dec, _ = ao_solve(inputs)
        caps = []
        for wv in ws:
            _, _, cap, _, _, _, _ = solve_p31(
                dec.beam_pos, inputs.prior_mse, cfg, fixed_w=float(wv))
            caps.append(cap)
        series.append(caps)
        caps = np.asarray(caps)
        best = int(np.argmax(caps))
        if caps.max() > 0.0:
            end_gains = [100.0 * (caps[best] - caps[i]) / caps[i] for i in (0, -1)]
            variation = 100.0 * (caps.max() - caps.min()) / caps.max()
        else:
            # infeasible at every w: flat zero curve
            end_gains = [0.0, 0.0]
            variation = 0.0
        summary["starts"].append({
            "state": [float(v) for v in state], "label": label,
            "beam": [float(v) for v in dec.beam_pos],
            "w_best": float(ws[best]), "capacity_best": float(caps[best]),
            "capacity_w_min": float(caps[0]), "capacity_w_max": float(caps[-1]),
            "interior_gain_pct": min(end_gains), "variation_pct": variation,
        })
        checks.info(f"start ({state[0]:g},{state[2]:g})",
                    f"best w = {ws[best]:.3f}, interior gain {min(end_gains):.2f}%, "
                    f"variation {variation:.2f}%")

    rows = [[float(ws[i])] + [s[i] for s in series] for i in range(len(ws))]
    write_csv_atomic(out / "sweep_w.csv", columns, rows)
    code = checks.report()
    summary["checks"] = checks.doc()
    write_json_atomic(out / "summary.json", summary)
    return code


# ----------------------------------------------------------------------
# track / compare: closed-loop episodes per policy
# ----------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "policy", "n_runs", "seed", "n_slots", "n_valid", "n_usable",
    "mean_capacity", "final500_mean_capacity",
    "outage_k_pred", "outage_k_est", "outage_rate_pred", "outage_rate_est",
    "wilson_pred", "wilson_est",
    "final100_mean_pred_y", "final100_max_pred_y",
    "final100_hover_dist_mean", "final100_hover_dist_max",
    "final500_radius_mean", "final500_radius_min", "final500_radius_max",
    "final500_radius_var_pct", "min_pred_y",
)


def _policy_stats(cfg: ScenarioConfig, results: list) -> dict:
    """Aggregate trajectory and outage statistics over a list of runs."""
    usable = [r for res in results for r in res.records if r.feasible and r.valid]
    all_recs = [r for res in results for r in res.records]
    n_slots = len(results[0].records)
    last100 = [r for res in results for r in res.records[-min(100, n_slots):]]
    last500 = [r for res in results for r in res.records[-min(500, n_slots):]]

    k_pred = sum(r.outage_pred for r in usable)
    k_est = sum(r.outage_est for r in usable)
    n_us = len(usable)
    hov_x, hov_y = 0.0, cfg.y_min_m
    hover_d = [math.hypot(r.pred_x - hov_x, r.pred_y - hov_y) for r in last100]
    radius = [math.hypot(r.pred_x, r.pred_y) for r in last500]
    r_mean = sum(radius) / len(radius)
    return {
        "policy": results[0].policy,
        "n_runs": len(results),
        "seed": results[0].seed,
        "n_slots": n_slots,
        "n_valid": sum(res.n_valid for res in results),
        "n_usable": n_us,
        "mean_capacity": sum(r.capacity for r in usable) / n_us if n_us else math.nan,
        "final500_mean_capacity": sum(r.capacity for r in last500) / len(last500),
        "outage_k_pred": k_pred,
        "outage_k_est": k_est,
        "outage_rate_pred": k_pred / n_us if n_us else math.nan,
        "outage_rate_est": k_est / n_us if n_us else math.nan,
        "wilson_pred": wilson_halfwidth(k_pred, n_us),
        "wilson_est": wilson_halfwidth(k_est, n_us),
        "final100_mean_pred_y": sum(r.pred_y for r in last100) / len(last100),
        "final100_max_pred_y": max(r.pred_y for r in last100),
        "final100_hover_dist_mean": sum(hover_d) / len(hover_d),
        "final100_hover_dist_max": max(hover_d),
        "final500_radius_mean": r_mean,
        "final500_radius_min": min(radius),
        "final500_radius_max": max(radius),
        "final500_radius_var_pct": 100.0 * (max(radius) - min(radius)) / r_mean,
        "min_pred_y": min(r.pred_y for r in all_recs),
    }


def _outage_checks(cfg: ScenarioConfig, checks: Checks, stats: dict) -> None:
    """Realized outage must stay within the budget plus sampling noise.

    The per-slot OP pin is a property of the elliptical surrogate, so the
    realized rate only tracks the budget where that surrogate is accurate.
    Scenarios set ``gate_outage`` when their tracking regime keeps the
    planner inside the surrogate's validity region (small position
    uncertainty); in high-noise regimes the optimized trajectory rides the
    minimum-distance line toward grazing beam geometry, where the surrogate
    understates the true OP severalfold, and the rates are reported without
    gating.  Benchmark policies park the UAV wherever their own objective
    says and their unreliability is a reported finding, never gated.
    """
    policy = stats["policy"]
    gated = (cfg.gate_outage and policy.startswith("proposed")
             and stats["min_pred_y"] >= cfg.y_min_m - 1e-9)
    for stage in ("pred", "est"):
        rate = stats[f"outage_rate_{stage}"]
        bound = cfg.outage_threshold + 2.0 * stats[f"wilson_{stage}"]
        name = f"{policy} {stage}-stage outage within budget"
        detail = f"rate = {rate:.4g} vs {bound:.4g}"
        if gated:
            checks.add(name, rate <= bound, detail)
        elif not policy.startswith("proposed"):
            checks.info(name, detail + ", benchmark policy, not gated")
        elif not cfg.gate_outage:
            checks.info(name, detail + ", reported, not gated")
        else:
            checks.info(name, detail + ", trajectory leaves y >= y_min, not gated")


def _geometry_checks(cfg: ScenarioConfig, checks: Checks, stats: dict) -> None:
    """Long-run trajectory shape per policy: the proposed scheme settles on
    the minimum-distance line, the angle-noise minimizer hovers at its
    optimum, and the MSE-trace minimizer orbits at near-constant radius."""
    policy = stats["policy"]
    if policy.startswith("proposed"):
        val, limit = stats["final100_max_pred_y"], cfg.y_min_m + 0.5
        name = f"{policy} settles on the minimum-distance line"
        detail = f"final-100 max waypoint y = {val:.3f} vs {limit:.3f}"
        ok = val <= limit
    elif policy == "msigma1":
        val, limit = stats["final100_hover_dist_max"], 0.5
        name = "msigma1 hovers at the angle-noise optimum"
        detail = (f"final-100 max distance from (0,{cfg.y_min_m:g}) "
                  f"= {val:.3f} vs {limit}")
        ok = val <= limit
    elif policy == "mpcrb":
        val, limit = stats["final500_radius_var_pct"], 10.0
        name = "mpcrb orbit stays near-circular"
        detail = f"final-500 radius variation = {val:.2f}% vs {limit}%"
        ok = val < limit
    else:
        return
    if cfg.gate_geometry:
        checks.add(name, ok, detail)
    else:
        checks.info(name, detail)


def cmd_track(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    results = [run(cfg, policy) for policy in cfg.policies]
    write_slot_csv(out / "slots.csv", results)

    stat_rows = []
    stats_by_policy = {}
    for res in results:
        stats = _policy_stats(cfg, [res])
        stats_by_policy[res.policy] = stats
        stat_rows.append([stats[c] for c in SUMMARY_COLUMNS])
        _outage_checks(cfg, checks, stats)
        _geometry_checks(cfg, checks, stats)
    write_csv_atomic(out / "summary.csv", SUMMARY_COLUMNS, stat_rows)

    code = checks.report()
    write_json_atomic(out / "summary.json", {
        "policies": stats_by_policy, "checks": checks.doc(),
    })
    return code


def cmd_compare(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    results = {policy: monte_carlo_runs(cfg, policy, cfg.n_runs, workers=workers)
               for policy in cfg.policies}

    n_slots = cfg.n_slots
    columns = ["slot", "time_s"]
    for policy in cfg.policies:
        columns += [f"{policy}_capacity_mean", f"{policy}_capacity_run0"]
    rows = []
    for n in range(n_slots):
        row = [n + 1, (n + 1) * cfg.slot_s]
        for policy in cfg.policies:
            runs = results[policy]
            row.append(sum(res.records[n].capacity for res in runs) / len(runs))
            row.append(runs[0].records[n].capacity)
        rows.append(row)
    write_csv_atomic(out / "perslot.csv", columns, rows)

    stat_rows = []
    stats_by_policy = {}
    for policy in cfg.policies:
        stats = _policy_stats(cfg, results[policy])
        stats_by_policy[policy] = stats
        stat_rows.append([stats[c] for c in SUMMARY_COLUMNS])
        _outage_checks(cfg, checks, stats)
    write_csv_atomic(out / "summary.csv", SUMMARY_COLUMNS, stat_rows)

    proposed = [p for p in cfg.policies if p.startswith("proposed")]
    benchmarks = [p for p in cfg.policies if not p.startswith("proposed")]
    margins = {}
    for p in proposed:
        for b in benchmarks:
            margins[f"{p}_vs_{b}"] = (stats_by_policy[p]["final500_mean_capacity"]
                                      - stats_by_policy[b]["final500_mean_capacity"])
    if cfg.gate_capacity_margin is not None and margins:
        worst = min(margins, key=margins.get)
        checks.add("capacity margin over benchmarks",
                   margins[worst] >= cfg.gate_capacity_margin,
                   f"min margin {worst} = {margins[worst]:.3f} bps/Hz "
                   f"vs {cfg.gate_capacity_margin}")

    code = checks.report()
    write_json_atomic(out / "summary.json", {
        "policies": stats_by_policy, "margins": margins, "checks": checks.doc(),
    })
    return code


# ----------------------------------------------------------------------
# selftest: fast invariant and regression sweep
# ----------------------------------------------------------------------

def _selftest_fixtures(checks: Checks, fdir=None) -> None:
    if fdir is None:
        fdir = resources.files("beamtrack") / "fixtures"
    files = sorted((p for p in fdir.iterdir() if p.name.endswith(".json")),
                   key=lambda p: p.name) if fdir.is_dir() else []
    if not files:
        checks.add("regression fixtures present", False, "no fixture files found")
        return
    for ref in files:
        try:
            doc = json.loads(ref.read_text())
            for case in doc["cases"]:
                sub = ScenarioConfig.from_dict(case["config"])
                pos = PositionGaussian(np.asarray(case["mean"], float),
                                       np.asarray(case["cov"], float))
                got_a = approx_op(case["beam"], case["gamma"], pos, sub)
                got_m = mc_op(case["beam"], case["gamma"], pos, sub,
                              case["n_trials"], case["seed"])
                if abs(got_a - case["approx_op"]) > 1e-12:
                    raise AssertionError(
                        f"case {case['name']}: approx_op {got_a!r} != "
                        f"stored {case['approx_op']!r}")
                if abs(got_m - case["mc_op"]) > 1e-12:
                    raise AssertionError(
                        f"case {case['name']}: mc_op {got_m!r} != "
                        f"stored {case['mc_op']!r}")
            checks.add(f"fixture {ref.name}", True, f"{len(doc['cases'])} cases")
        except Exception as exc:
            checks.add(f"fixture {ref.name}", False, str(exc))


def cmd_selftest(cfg: ScenarioConfig, out: Path, workers: int) -> int:
    checks = Checks()
    rng = np.random.default_rng(0)

    _selftest_fixtures(checks)

    # array response basics
    peak_ok = float(beam_gain_kappa(0.0, 16)) == 16.0
    null_ok = abs(float(beam_gain_kappa(2.0 / 16.0, 16))) <= 1e-9
    checks.add("array response peak and first null", peak_ok and null_ok)

    # OP monotone in the SNR target on random feasible geometries
    worst = 0.0
    for _ in range(20):
        beam = np.array([rng.uniform(-10, 10), rng.uniform(2, 20)])
        a = rng.standard_normal((2, 2))
        cov = 1e-3 * (a @ a.T + 0.1 * np.eye(2))
        pos = PositionGaussian(beam, cov)
        peak = cfg.p_tilde * cfg.n_tx / (beam @ beam + cfg.altitude_m ** 2)
        gammas = np.linspace(1e-3 * peak, 1.3 * peak, 25)
        ops = [approx_op(beam, float(g), pos, cfg) for g in gammas]
        worst = max(worst, float(np.max(-np.diff(ops), initial=0.0)))
    checks.add("OP nondecreasing in the SNR target", worst <= 1e-9,
               f"max decrease = {worst:.2e}")

    # boundary curves satisfy the quadratic within rounding
    worst = 0.0
    for _ in range(10):
        beam = np.array([rng.uniform(-10, 10), rng.uniform(2, 20)])
        peak = cfg.p_tilde * cfg.n_tx / (beam @ beam + cfg.altitude_m ** 2)
        gamma = 0.6 * peak
        bounds = acor_bounds(beam, gamma, cfg)
        if bounds.empty:
            continue
        quad = acor_quadratic(beam, gamma, cfg)
        ts = np.linspace(bounds.x_lower, bounds.x_upper, 9)[1:-1]
        for t in ts:
            resid = abs(quad.evaluate((float(t), float(bounds.y_upper(t)))))
            worst = max(worst, resid)
    checks.add("elliptical boundary consistency", worst <= 1e-8,
               f"max residual = {worst:.2e}")

    # filter update forms agree
    worst = 0.0
    for _ in range(20):
        b = rng.standard_normal((4, 4))
        prior = 1e-3 * (b @ b.T) + 1e-6 * np.eye(4)
        state = np.array([rng.uniform(-10, 10), rng.uniform(-3, 3),
                          rng.uniform(1, 20), rng.uniform(-3, 3)])
        nv = meas_noise_vars(state[[0, 2]], 0.7, cfg)
        bundle = prepare_bundle(state, prior,
                                np.diag([nv.var_angle, nv.var_range]), cfg)
        az, slant = measurement_mean(state[[0, 2]], cfg)
        meas = Measurement(azimuth_rad=az + 1e-3 * rng.standard_normal(),
                           range_m=slant + 0.1 * rng.standard_normal())
        post_c = update(bundle, meas, cfg, form="covariance")
        post_i = update(bundle, meas, cfg, form="information")
        scale = max(1.0, float(np.max(np.abs(post_c.mse))))
        worst = max(worst,
                    float(np.max(np.abs(post_c.estimate - post_i.estimate))),
                    float(np.max(np.abs(post_c.mse - post_i.mse))) / scale)
    checks.add("filter update forms agree", worst <= 1e-8,
               f"max deviation = {worst:.2e}")

    # feasible-set projection lands inside and is idempotent
    worst = 0.0
    for _ in range(50):
        center = np.array([rng.uniform(-5, 5), rng.uniform(1, 10)])
        radius = rng.uniform(0.1, 2.0)
        y_min = center[1] - radius * rng.uniform(0.0, 0.9)
        point = center + rng.standard_normal(2) * 3.0
        proj = project_disk_halfspace(point, center, radius, y_min)
        again = project_disk_halfspace(proj, center, radius, y_min)
        worst = max(worst,
                    float(np.hypot(*(proj - center))) - radius,
                    y_min - float(proj[1]),
                    float(np.max(np.abs(again - proj))))
    checks.add("projection feasibility and idempotence", worst <= 1e-9,
               f"max violation = {worst:.2e}")

    # closed loop replays byte-identically; start inside the served region
    small = cfg.replace(n_slots=8, n_runs=1,
                        initial_state=[0.0, 0.0, 7.0, 0.0])
    res_a = run(small, "proposed-ao")
    res_b = run(small, "proposed-ao")
    write_slot_csv(out / "selftest_run_a.csv", [res_a])
    write_slot_csv(out / "selftest_run_b.csv", [res_b])
    same = (out / "selftest_run_a.csv").read_bytes() \
        == (out / "selftest_run_b.csv").read_bytes()
    checks.add("closed-loop determinism", same, "8 slots, identical bytes")

    code = checks.report()
    write_json_atomic(out / "summary.json", {"checks": checks.doc()})
    return code


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

HANDLERS = {
    "validate-op": (cmd_validate_op,
                    "compare approximated OPs against a closed-chain Monte Carlo"),
    "op-map": (cmd_op_map,
               "prediction-stage OP over a beam-position grid for two array sizes"),
    "convergence": (cmd_convergence,
                    "iteration traces of the search-based and AO solvers"),
    "sweep-w": (cmd_sweep_w,
                "capacity against a fixed sensing duration ratio"),
    "track": (cmd_track,
              "one closed-loop episode per policy"),
    "compare": (cmd_compare,
                "seeded Monte Carlo episodes per policy with per-slot capacity"),
    "selftest": (cmd_selftest,
                 "fast invariant and fixture-regression sweep"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simcli",
        description="Predictive-beamforming simulator workflows.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in HANDLERS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None,
                        help=f"preset name ({', '.join(PRESET_NAMES)}) or a "
                             "scenario JSON path")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a configuration key")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scenario RNG seed (u64)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        workers = _workers()
        config_ref = args.config or ("fig3" if args.command == "selftest" else None)
        if config_ref is None:
            print("error: --config is required", file=sys.stderr)
            return 2
        cfg = resolve_config(config_ref)
        overrides = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                overrides[key] = coerce_override(key, raw)
            except (ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must fit an unsigned 64-bit integer")
            overrides["rng_seed"] = args.seed
        if overrides:
            cfg = cfg.replace(**overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json_atomic(out / "metadata.json", {
            "tool": "simcli",
            "version": __version__,
            "subcommand": args.command,
            "config_ref": config_ref,
            "overrides": overrides,
            "workers": workers,
            "config": cfg.to_dict(),
        })
        handler = HANDLERS[args.command][0]
        return handler(cfg, out, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
