"""Per-slot decision solvers: trajectory, duration split, and SNR targets.

Two routes solve the same slot problem (maximize outage capacity subject to
reachability, the half-plane bound, and the per-stage OP budget):

* ``search_based_solve``: outer bisection on the achievable objective value,
  with a nested two-layer feasibility search over (w, per-stage capacity
  split) that calls the trajectory subproblem at every probe.
* ``ao_solve``: alternate between the duration/target subproblem at a fixed
  trajectory point (exact thanks to OP monotonicity in the SNR target) and
  one successive-convex-approximation pass on the trajectory.

Both share the trajectory subproblem: minimize the worst-stage OP over the
intersection of the reachability disk and the half-plane, via linearization
plus a proximal quadratic whose curvature doubles until it majorizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig, OptimizerConfig
from .ekf import planning_posterior, position_marginal
from .motion import gamma_max
from .outage import (PositionGaussian, SnrTargets, approx_op, outage_capacity,
                     stage_ops)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_TINY_GAMMA_FRAC = 1e-12


class InfeasibleRegionError(ValueError):
    """The reachability disk does not intersect the served half-plane."""


@dataclass
class SlotInputs:
    cfg: ScenarioConfig
    prev_estimate: np.ndarray       # posterior state estimate of the previous slot (4,)
    prior_mse: np.ndarray           # predicted MSE for the current slot (4, 4)
    start_point: np.ndarray         # warm-start beam position (2,)


@dataclass
class SlotDecision:
    beam_pos: np.ndarray
    w: float
    targets: SnrTargets
    capacity: float
    op_pred: float
    op_est: float
    feasible: bool


@dataclass
class SolveStats:
    p22_solves: int = 0
    sca_iters: int = 0
    op_evals: int = 0
    outer_iters: int = 0
    history: list = field(default_factory=list)


# ----------------------------------------------------------------------
# feasible-set geometry
# ----------------------------------------------------------------------

def project_disk_halfspace(point, center, radius: float, y_min: float,
                           tol: float = 1e-10, max_iters: int = 500) -> np.ndarray:
    """Euclidean projection onto disk(center, radius) intersected with y >= y_min.

    Dykstra's alternating projections; both sets are convex, so the iterates
    converge to the true projection.
    """
    center = np.asarray(center, float)
    if center[1] + radius < y_min - 1e-12:
        raise InfeasibleRegionError(
            f"disk around ({center[0]:.3f}, {center[1]:.3f}) r={radius:.3f} "
            f"never reaches y >= {y_min}")
    x = np.asarray(point, float).copy()
    p = np.zeros(2)
    q = np.zeros(2)
    for _ in range(max_iters):
        x_prev = x
        v = x + p
        d = v - center
        dist = math.hypot(d[0], d[1])
        on_disk = center + d * (radius / dist) if dist > radius else v
        p = v - on_disk
        v = on_disk + q
        x = np.array([v[0], max(v[1], y_min)])
        q = v - x
        if max(abs(x[0] - x_prev[0]), abs(x[1] - x_prev[1])) < tol:
            break
    # final cleanup keeps the result inside both sets up to roundoff
    d = x - center
    dist = math.hypot(d[0], d[1])
    if dist > radius:
        x = center + d * (radius / dist)
    if x[1] < y_min:
        # both constraints active: the projection is the circle/boundary corner
        chord = radius * radius - (y_min - center[1]) ** 2
        half = math.sqrt(chord) if chord > 0.0 else 0.0
        corner_x = center[0] + half if x[0] >= center[0] else center[0] - half
        x = np.array([corner_x, y_min])
    return x


# ----------------------------------------------------------------------
# trajectory subproblem
# ----------------------------------------------------------------------

def surrogate_minimizer(grad, expansion_point, curvature: float, disk_center,
                        disk_radius: float, y_min: float) -> np.ndarray:
    """Minimizer of the tangent-plus-proximal surrogate over disk and halfplane.

    The surrogate f(p) + g.(q - p) + Q*|q - p|^2 has its unconstrained
    minimum at p - g/(2Q); the feasible minimizer is its projection.
    """
    if curvature <= 0.0:
        raise ValueError("curvature must be positive")
    p = np.asarray(expansion_point, float)
    g = np.asarray(grad, float)
    return project_disk_halfspace(p - g / (2.0 * curvature), disk_center,
                                  disk_radius, y_min)


def grad_max_op(beam_pos, w: float, targets: SnrTargets, prior_mse: np.ndarray,
                cfg: ScenarioConfig, opt: OptimizerConfig,
                known_ops: tuple[float, float] | None = None) -> np.ndarray:
    """Finite-difference gradient of the worst-stage OP wrt the beam position.

    The max is differentiated through its active branch; exact ties resolve
    to the prediction stage.  Steps that would cross the half-plane bound
    switch to a one-sided difference.
    """
    op_pred, op_est = known_ops if known_ops is not None \
        else stage_ops(beam_pos, w, targets, prior_mse, cfg)
    use_pred = op_pred >= op_est - 1e-12

    lam_pred = position_marginal(prior_mse)

    def branch(q) -> float:
        if use_pred:
            return approx_op(q, targets.gamma_pred,
                             PositionGaussian(np.asarray(q, float), lam_pred), cfg)
        lam_est = position_marginal(planning_posterior(q, w, prior_mse, cfg))
        return approx_op(q, targets.gamma_est,
                         PositionGaussian(np.asarray(q, float), lam_est), cfg)

    h = opt.fd_step
    bx, by = float(beam_pos[0]), float(beam_pos[1])
    gx = (branch((bx + h, by)) - branch((bx - h, by))) / (2.0 * h)
    if by - h < cfg.y_min_m:
        center_val = op_pred if use_pred else op_est
        gy = (branch((bx, by + h)) - center_val) / h
    else:
        gy = (branch((bx, by + h)) - branch((bx, by - h))) / (2.0 * h)
    return np.array([gx, gy])


def solve_p22_sca(w: float, targets: SnrTargets, prev_estimate_pos, start_point,
                  prior_mse: np.ndarray, cfg: ScenarioConfig,
                  opt: OptimizerConfig | None = None,
                  stop_when_negative: bool = False):
    """Minimize the worst-stage OP margin over the reachable region.

    Linearize-and-prox iterations: each step minimizes the tangent plane plus
    a quadratic around the current iterate, which is a projection in closed
    form.  The curvature doubles whenever a step fails to descend, so the
    accepted value sequence is nonincreasing.

    Returns (beam position, constraint value, stats); the constraint value is
    max(stage OPs) minus the outage budget, negative when feasible.
    """
    opt = opt or cfg.optimizer
    stats = SolveStats()
    center = np.asarray(prev_estimate_pos, float)
    radius = cfg.v_max_mps * cfg.slot_s

    def value(q) -> tuple[float, tuple[float, float]]:
        ops = stage_ops(q, w, targets, prior_mse, cfg)
        stats.op_evals += 1
        return max(ops) - cfg.outage_threshold, ops

    q = project_disk_halfspace(start_point, center, radius, cfg.y_min_m)
    f, ops = value(q)
    best_q, best_f, best_ops = q, f, ops
    if stop_when_negative and f < 0.0:
        return best_q, best_f, _finish(stats, best_ops)

    g = grad_max_op(q, w, targets, prior_mse, cfg, opt, known_ops=ops)
    gnorm = math.hypot(g[0], g[1])
    curvature = opt.sca_curvature if opt.sca_curvature is not None \
        else max(10.0 * gnorm / radius, 1e-9 / radius ** 2)

    for _ in range(opt.sca_max_iters):
        stats.sca_iters += 1
        accepted = False
        for _attempt in range(64):
            proposal = surrogate_minimizer(g, q, curvature, center, radius,
                                           cfg.y_min_m)
            step = math.hypot(proposal[0] - q[0], proposal[1] - q[1])
            if step < opt.sca_step_tol:
                break
            f_new, ops_new = value(proposal)
            if f_new <= f + 1e-15:
                accepted = True
                break
            curvature *= 2.0
        if not accepted:
            break
        q, f, ops = proposal, f_new, ops_new
        if f < best_f:
            best_q, best_f, best_ops = q, f, ops
        if stop_when_negative and f < 0.0:
            break
        g = grad_max_op(q, w, targets, prior_mse, cfg, opt, known_ops=ops)

    return best_q, best_f, _finish(stats, best_ops)


def _finish(stats: SolveStats, ops: tuple[float, float]) -> SolveStats:
    stats.history.append({"op_pred": ops[0], "op_est": ops[1]})
    return stats


def _solution_ops(stats: SolveStats) -> tuple[float, float]:
    last = stats.history[-1]
    return last["op_pred"], last["op_est"]


# ----------------------------------------------------------------------
# duration / target subproblem at a fixed trajectory point
# ----------------------------------------------------------------------

def _bisect_capacity(op_of_gamma, cap_hi: float, tol_c: float, budget: float):
    """Largest per-stage capacity whose SNR target keeps the OP within budget.

    Relies on the OP being nondecreasing in the target.  Returns None when
    even a vanishing target overshoots the budget.
    """
    gamma_hi = 2.0 ** cap_hi - 1.0
    if op_of_gamma(gamma_hi) <= budget:
        return cap_hi
    if op_of_gamma(gamma_hi * _TINY_GAMMA_FRAC) > budget:
        return None
    lo, hi = math.log2(1.0 + gamma_hi * _TINY_GAMMA_FRAC), cap_hi
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        if op_of_gamma(2.0 ** mid - 1.0) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def solve_p31(beam_pos, prior_mse: np.ndarray, cfg: ScenarioConfig,
              opt: OptimizerConfig | None = None, fixed_w: float | None = None,
              hint_w: float | None = None):
    """Best (w, SNR targets) at a fixed beam position.

    The per-stage targets decouple given w: each is the largest value whose
    OP stays within budget (bisection, monotone OP).  The prediction-stage
    target does not depend on w at all, so it is solved once; w is then
    chosen by a golden-section search cross-checked against a coarse grid.
    A hint narrows the search to a window around a known-good w (endpoints
    still probed), which the alternating solver uses on later rounds.

    Returns (w, targets, capacity, op_pred, op_est, feasible, stats).
    """
    opt = opt or cfg.optimizer
    stats = SolveStats()
    beam = np.asarray(beam_pos, float)
    budget = cfg.outage_threshold
    cap_hi = math.log2(1.0 + gamma_max(cfg) * (1.0 - 1e-9))
    lam_pred = position_marginal(prior_mse)

    def op_pred_of(gamma: float) -> float:
        stats.op_evals += 1
        return approx_op(beam, gamma, PositionGaussian(beam, lam_pred), cfg)

    cap_pred = _bisect_capacity(op_pred_of, cap_hi, opt.tol_c, budget)
    cap_pred_val = cap_pred if cap_pred is not None else 0.0

    cache: dict[float, tuple[float, float | None]] = {}

    def eval_w(w: float) -> float:
        if w in cache:
            return cache[w][0]
        lam_est = position_marginal(planning_posterior(beam, w, prior_mse, cfg))

        def op_est_of(gamma: float) -> float:
            stats.op_evals += 1
            return approx_op(beam, gamma, PositionGaussian(beam, lam_est), cfg)

        cap_est = _bisect_capacity(op_est_of, cap_hi, opt.tol_c, budget)
        cap_est_val = cap_est if cap_est is not None else 0.0
        total = w * cap_pred_val + (1.0 - w) * cap_est_val
        cache[w] = (total, cap_est)
        return total

    if fixed_w is not None:
        eval_w(float(fixed_w))
        w_best = float(fixed_w)
    elif hint_w is not None:
        eval_w(cfg.w_min)
        eval_w(cfg.w_max)
        _golden_max(eval_w,
                    max(cfg.w_min, hint_w - 0.15),
                    min(cfg.w_max, hint_w + 0.15),
                    opt.golden_tol)
        w_best = max(cache, key=lambda w: (cache[w][0], -w))
    else:
        grid = np.linspace(cfg.w_min, cfg.w_max, opt.w_grid_points)
        for w in grid:
            eval_w(float(w))
        _golden_max(eval_w, cfg.w_min, cfg.w_max, opt.golden_tol)
        idx = int(np.argmax([cache[float(w)][0] for w in grid]))
        _golden_max(eval_w,
                    float(grid[max(idx - 1, 0)]),
                    float(grid[min(idx + 1, len(grid) - 1)]),
                    opt.golden_tol)
        w_best = max(cache, key=lambda w: (cache[w][0], -w))

    cap_est = cache[w_best][1]
    targets = SnrTargets(
        gamma_pred=2.0 ** cap_pred - 1.0 if cap_pred is not None else 0.0,
        gamma_est=2.0 ** cap_est - 1.0 if cap_est is not None else 0.0,
    )
    op_pred, op_est = stage_ops(beam, w_best, targets, prior_mse, cfg)
    stats.op_evals += 2
    capacity = outage_capacity(targets, w_best)
    feasible = max(op_pred, op_est) - budget < 0.0
    return w_best, targets, capacity, op_pred, op_est, feasible, stats


def _golden_max(f, a: float, b: float, tol: float) -> None:
    """Golden-section maximization; results land in the caller's cache."""
    if b - a <= tol:
        f(a)
        f(b)
        return
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)


# ----------------------------------------------------------------------
# full slot solvers
# ----------------------------------------------------------------------

def _decision(beam, w, targets, prior_mse, cfg) -> SlotDecision:
    op_pred, op_est = stage_ops(beam, w, targets, prior_mse, cfg)
    return SlotDecision(
        beam_pos=np.asarray(beam, float),
        w=w,
        targets=targets,
        capacity=outage_capacity(targets, w),
        op_pred=op_pred,
        op_est=op_est,
        feasible=max(op_pred, op_est) - cfg.outage_threshold < 0.0,
    )


def _fallback_decision(inputs: SlotInputs, stats: SolveStats) -> SlotDecision:
    """No positive targets fit the budget: point the beam at the least-outage
    reachable spot anyway and transmit nothing."""
    cfg = inputs.cfg
    tiny = gamma_max(cfg) * 1e-6
    beam, _, sca_stats = solve_p22_sca(
        cfg.w_max, SnrTargets(tiny, tiny), inputs.prev_estimate[[0, 2]],
        inputs.start_point, inputs.prior_mse, cfg)
    stats.p22_solves += 1
    stats.op_evals += sca_stats.op_evals
    dec = _decision(beam, cfg.w_max, SnrTargets(0.0, 0.0), inputs.prior_mse, cfg)
    dec.feasible = False
    return dec


def search_based_solve(inputs: SlotInputs) -> tuple[SlotDecision, SolveStats]:
    """Outer bisection on the objective with a nested (w, split) search.

    Each objective probe C asks: does some (trajectory, w, per-stage split)
    achieve capacity C within the OP budget?  The probe walks w by bisection
    (direction set by which stage carries more rate) and, inside, bisects the
    prediction-stage capacity share, moving against whichever stage's OP
    blocks feasibility.  Feasible probes raise the certified objective.
    """
    cfg = inputs.cfg
    opt = cfg.optimizer
    stats = SolveStats()
    budget = cfg.outage_threshold
    cap_hi = math.log2(1.0 + gamma_max(cfg) * (1.0 - 1e-9))
    center = inputs.prev_estimate[[0, 2]]
    start = project_disk_halfspace(inputs.start_point, center,
                                   cfg.v_max_mps * cfg.slot_s, cfg.y_min_m)

    def attempt(w: float, cap_pred: float, cap_est: float):
        targets = SnrTargets(2.0 ** cap_pred - 1.0, 2.0 ** cap_est - 1.0)
        beam, val, sca_stats = solve_p22_sca(
            w, targets, center, start, inputs.prior_mse, cfg, opt,
            stop_when_negative=True)
        stats.p22_solves += 1
        stats.sca_iters += sca_stats.sca_iters
        stats.op_evals += sca_stats.op_evals
        return beam, val, _solution_ops(sca_stats), targets

    def feasible_for(objective: float):
        for case_pred_heavy in (True, False):
            w_lo, w_hi = cfg.w_min, cfg.w_max
            while True:
                w = 0.5 * (w_lo + w_hi)
                found = inner_split_search(objective, w, case_pred_heavy)
                if found is not None:
                    return found
                if case_pred_heavy:
                    w_lo = w
                else:
                    w_hi = w
                if w_hi - w_lo <= opt.tol_w:
                    break
        return None

    def inner_split_search(objective: float, w: float, case_pred_heavy: bool):
        if w >= 1.0 - 1e-12:
            lo = hi = objective
        elif case_pred_heavy:
            lo, hi = objective, min(cap_hi, objective / w)
        else:
            lo = max(0.0, (objective - (1.0 - w) * cap_hi) / w)
            hi = objective
        if lo > hi + 1e-15:
            return None
        while True:
            cap_pred = 0.5 * (lo + hi)
            if w >= 1.0 - 1e-12:
                cap_est = cap_pred
            else:
                cap_est = (objective - w * cap_pred) / (1.0 - w)
            cap_est = min(max(cap_est, 1e-12), cap_hi)
            beam, val, ops, targets = attempt(w, cap_pred, cap_est)
            if val < 0.0:
                return beam, w, targets
            if opt.inner_branch_rule == "op-threshold":
                pred_blocks = ops[0] > budget
            else:
                pred_blocks = ops[0] >= ops[1]
            if pred_blocks:
                hi = cap_pred
            else:
                lo = cap_pred
            if hi - lo <= opt.tol_c:
                return None

    lo_obj, hi_obj = 0.0, cap_hi
    best = None
    best_obj = 0.0
    for _ in range(64):
        if hi_obj - lo_obj <= opt.tol_obj:
            break
        stats.outer_iters += 1
        probe = 0.5 * (lo_obj + hi_obj)
        found = feasible_for(probe)
        if found is not None:
            lo_obj = probe
            best = found
            best_obj = probe
        else:
            hi_obj = probe
        stats.history.append({
            "iteration": stats.outer_iters,
            "probe": probe,
            "feasible": found is not None,
            "certified": best_obj,
            "p22_solves": stats.p22_solves,
        })

    if best is None:
        return _fallback_decision(inputs, stats), stats
    beam, w, targets = best
    return _decision(beam, w, targets, inputs.prior_mse, cfg), stats


def ao_solve(inputs: SlotInputs, fixed_w: float | None = None,
             hint_w: float | None = None) -> tuple[SlotDecision, SolveStats]:
    """Alternate exact (w, targets) updates with one trajectory descent pass.

    Every iterate stays feasible: targets are pinned to the OP budget at the
    current trajectory point, and the trajectory pass only decreases the
    worst-stage OP, creating slack the next target update converts into
    capacity.  The best feasible candidate across rounds is returned, so
    late-round fluctuation never degrades the output.

    hint_w seeds the first round's duration search with a window around a
    known-good split (e.g. the previous slot's); later rounds always window
    around the latest optimum.
    """
    cfg = inputs.cfg
    opt = cfg.optimizer
    stats = SolveStats()
    center = inputs.prev_estimate[[0, 2]]
    q = project_disk_halfspace(inputs.start_point, center,
                               cfg.v_max_mps * cfg.slot_s, cfg.y_min_m)
    best: SlotDecision | None = None
    prev_capacity = None
    hint = hint_w
    for round_idx in range(opt.max_outer_iters):
        w, targets, capacity, op_pred, op_est, feasible, sub = solve_p31(
            q, inputs.prior_mse, cfg, opt, fixed_w=fixed_w, hint_w=hint)
        if fixed_w is None:
            hint = w
        stats.op_evals += sub.op_evals
        stats.outer_iters += 1
        candidate = SlotDecision(np.asarray(q, float), w, targets, capacity,
                                 op_pred, op_est, feasible)
        stats.history.append({
            "iteration": round_idx + 1,
            "objective": capacity,
            "feasible": feasible,
            "p22_solves": stats.p22_solves,
        })
        if best is None or (candidate.feasible and not best.feasible) \
                or (candidate.feasible == best.feasible
                    and candidate.capacity > best.capacity):
            best = candidate
        if prev_capacity is not None and abs(capacity - prev_capacity) < opt.tol_obj:
            break
        prev_capacity = capacity
        if targets.gamma_pred <= 0.0 and targets.gamma_est <= 0.0:
            break
        q, _, sca_stats = solve_p22_sca(w, targets, center, q,
                                        inputs.prior_mse, cfg, opt)
        stats.p22_solves += 1
        stats.sca_iters += sca_stats.sca_iters
        stats.op_evals += sca_stats.op_evals

    if best is None or (not best.feasible and best.capacity <= 0.0):
        best = _fallback_decision(inputs, stats)
    return best, stats
