"""Feasible-set geometry, SCA subproblem, and the two per-slot solvers."""

from __future__ import annotations

import math
from dataclasses import replace as dc_replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import beamtrack.optimizer as optimizer
from beamtrack.ekf import position_marginal, predict_mse
from beamtrack.optimizer import (InfeasibleRegionError, SlotInputs, ao_solve,
                                 grad_max_op, project_disk_halfspace,
                                 search_based_solve, solve_p22_sca, solve_p31,
                                 surrogate_minimizer)
from beamtrack.outage import (PositionGaussian, SnrTargets, approx_op,
                              max_op_constraint, outage_capacity, stage_ops)
from beamtrack.motion import gamma_max


def exact_projection(target, center, radius, y_min):
    """Closed-form Euclidean projection onto disk intersect halfplane.

    The candidates are the target itself, the disk projection, the halfplane
    projection, and the two circle/boundary-line intersection points; the
    nearest feasible candidate is the projection (both sets convex).
    """
    t = np.asarray(target, float)
    c = np.asarray(center, float)
    cands = []

    def feasible(q):
        return q[1] >= y_min - 1e-12 and np.hypot(*(q - c)) <= radius + 1e-12

    if feasible(t):
        return t
    d = t - c
    dist = np.hypot(*d)
    if dist > 1e-9:   # candidate only matters when t is outside the disk
        cands.append(c + d * (radius / dist))
    cands.append(np.array([t[0], y_min]))
    gap = radius ** 2 - (y_min - c[1]) ** 2
    if gap >= 0.0:
        for sign in (-1.0, 1.0):
            cands.append(np.array([c[0] + sign * math.sqrt(gap), y_min]))
    best, best_d = None, math.inf
    for q in cands:
        if feasible(q):
            dd = float(np.hypot(*(q - t)))
            if dd < best_d:
                best, best_d = q, dd
    return best


center_strategy = st.tuples(st.floats(-10, 10), st.floats(0.0, 10.0))
point_strategy = st.tuples(st.floats(-12, 12), st.floats(-3.0, 12.0))


@given(point_strategy, center_strategy, st.floats(0.2, 3.0), st.floats(0.2, 4.0))
@settings(max_examples=200, deadline=None)
def test_projection_matches_exact_geometry(point, center, radius, y_min):
    center = np.asarray(center, float)
    margin = center[1] + radius - y_min
    assume(abs(margin) > 1e-6)   # skip the degenerate tangency sliver
    if margin < 0:
        with pytest.raises(InfeasibleRegionError):
            project_disk_halfspace(np.asarray(point, float), center, radius, y_min)
        return
    got = project_disk_halfspace(np.asarray(point, float), center, radius, y_min)
    assert got[1] >= y_min - 1e-9
    assert np.hypot(*(got - center)) <= radius + 1e-9
    want = exact_projection(point, center, radius, y_min)
    assert np.hypot(*(got - want)) <= 1e-7
    again = project_disk_halfspace(got, center, radius, y_min)
    assert np.hypot(*(again - got)) <= 1e-8


def test_surrogate_minimizer_basics():
    center = np.array([0.0, 2.0])
    inside = np.array([0.2, 2.1])
    out = surrogate_minimizer(np.zeros(2), inside, 1.0, center, 0.6, 1.0)
    assert np.allclose(out, inside, atol=1e-10)
    # a gradient pushing outward lands on the projected boundary point
    grad = np.array([0.0, 4.0])
    out = surrogate_minimizer(grad, inside, 1.0, center, 0.6, 1.0)
    want = exact_projection(inside - grad / 2.0, center, 0.6, 1.0)
    assert np.hypot(*(out - want)) <= 1e-7
    with pytest.raises(ValueError):
        surrogate_minimizer(grad, inside, 0.0, center, 0.6, 1.0)


def _smooth_case(cfg):
    prior = np.diag([2e-3, 1e-3, 3e-3, 1e-3])
    beam = np.array([1.7, 6.4])
    lam = position_marginal(prior)
    gamma = 0.6 * cfg.p_tilde * cfg.n_tx / float(beam @ beam + cfg.altitude_m ** 2)
    targets = SnrTargets(gamma, gamma * 1.1)
    return beam, targets, prior


def test_grad_matches_higher_order_fd(cfg16):
    beam, targets, prior = _smooth_case(cfg16)
    opt = cfg16.optimizer
    grad = grad_max_op(beam, 0.5, targets, prior, cfg16, opt)

    def f(q):
        return max_op_constraint(q, 0.5, targets, prior, cfg16)

    for axis in range(2):
        for h in (2e-4, 1e-4):
            e = np.zeros(2)
            e[axis] = 1.0
            stencil = (-f(beam + 2 * h * e) + 8 * f(beam + h * e)
                       - 8 * f(beam - h * e) + f(beam - 2 * h * e)) / (12 * h)
            assert grad[axis] == pytest.approx(stencil, rel=1e-4, abs=1e-7)


def test_grad_richardson_error_small(cfg16):
    beam, targets, prior = _smooth_case(cfg16)

    def f(q):
        return max_op_constraint(q, 0.5, targets, prior, cfg16)

    for axis in range(2):
        e = np.zeros(2)
        e[axis] = 1.0

        def central(h):
            return (f(beam + h * e) - f(beam - h * e)) / (2 * h)

        g_h, g_h2 = central(2e-4), central(1e-4)
        assert abs(g_h2 - g_h) / 3.0 < 1e-5


def test_grad_symmetric_x_component(cfg16):
    prior = np.diag([2e-3, 1e-3, 2e-3, 1e-3])
    beam = np.array([0.0, 7.0])
    gamma = 0.6 * cfg16.p_tilde * cfg16.n_tx / (49.0 + cfg16.altitude_m ** 2)
    targets = SnrTargets(gamma, gamma)
    grad = grad_max_op(beam, 0.5, targets, prior, cfg16, cfg16.optimizer)
    assert abs(grad[0]) < 1e-6


def _patch_quadratic_landscape(monkeypatch, target, curvature):
    # swap the OP surface for a known convex quadratic; the prediction stage
    # stays the active branch so grad_max_op differentiates the same surface
    target = np.asarray(target, float)

    def quad_value(q):
        q = np.asarray(q, float)
        return curvature * float((q - target) @ (q - target)) + 0.001

    def fake_stage_ops(beam_pos, w, targets, prior_mse, cfg, nodes=None):
        val = quad_value(beam_pos)
        return val, val - 0.5

    def fake_approx_op(beam_pos, gamma, pos, cfg, nodes=None):
        return quad_value(beam_pos)

    monkeypatch.setattr(optimizer, "stage_ops", fake_stage_ops)
    monkeypatch.setattr(optimizer, "approx_op", fake_approx_op)


@pytest.mark.parametrize("target", [(0.45, 1.75), (1.5, 0.2), (-0.9, 2.4)])
def test_sca_on_synthetic_quadratic(cfg16, monkeypatch, target):
    curvature = 0.05
    _patch_quadratic_landscape(monkeypatch, target, curvature)
    opt = dc_replace(cfg16.optimizer, sca_curvature=2.0 * curvature,
                     sca_max_iters=80)
    center = np.array([0.0, 2.0])
    cfg = cfg16.replace(v_max_mps=30.0, slot_s=0.02)    # radius 0.6
    targets = SnrTargets(1.0, 1.0)
    prior = np.eye(4)
    start = np.array([-0.3, 2.2])
    q, value, stats = solve_p22_sca(0.5, targets, center, start, prior, cfg, opt)
    want = exact_projection(np.asarray(target, float), center, 0.6, cfg.y_min_m)
    assert np.hypot(*(q - want)) <= 1e-3
    want_val = curvature * float((q - np.asarray(target)) @ (q - np.asarray(target))) \
        + 0.001 - cfg.outage_threshold
    assert value == pytest.approx(want_val, abs=1e-12)
    assert stats.sca_iters <= 80


def test_sca_fixed_point(cfg16, monkeypatch):
    target = np.array([0.2, 2.1])   # interior point of the feasible set
    _patch_quadratic_landscape(monkeypatch, target, 0.05)
    opt = dc_replace(cfg16.optimizer, sca_curvature=0.1)
    center = np.array([0.0, 2.0])
    q, _, stats = solve_p22_sca(0.5, SnrTargets(1.0, 1.0), center, target,
                                np.eye(4), cfg16, opt)
    # starting at the optimum, the first surrogate step is below step_tol
    assert np.hypot(*(q - target)) <= 1e-6
    assert stats.sca_iters <= 1


def test_sca_descends_on_real_objective(cfg16):
    beam, targets, prior = _smooth_case(cfg16)
    start = np.array([1.2, 6.0])
    q, value, _ = solve_p22_sca(0.5, targets, np.array([1.5, 6.3]), start,
                                prior, cfg16)
    start_val = max_op_constraint(
        project_disk_halfspace(start, np.array([1.5, 6.3]),
                               cfg16.v_max_mps * cfg16.slot_s, cfg16.y_min_m),
        0.5, targets, prior, cfg16)
    assert value <= start_val + 1e-15
    assert value == pytest.approx(
        max_op_constraint(q, 0.5, targets, prior, cfg16), abs=1e-12)


def test_sca_infeasible_geometry(cfg16):
    with pytest.raises(InfeasibleRegionError):
        solve_p22_sca(0.5, SnrTargets(1.0, 1.0), np.array([0.0, 0.0]),
                      np.array([0.0, 1.0]), np.eye(4), cfg16)


def _slot_inputs(cfg, estimate=None):
    x_hat = np.asarray(estimate if estimate is not None
                       else [1.0, 0.0, 7.0, 0.0], float)
    prior = predict_mse(cfg.m0_matrix(), cfg)
    return SlotInputs(cfg=cfg, prev_estimate=x_hat, prior_mse=prior,
                      start_point=x_hat[[0, 2]])


def test_solve_p31_caps_at_gamma_max(cfg16):
    beam = np.array([0.0, cfg16.y_min_m])
    prior = 1e-12 * np.eye(4)
    w, targets, capacity, op_pred, op_est, feasible, _ = solve_p31(beam, prior, cfg16)
    cap_hi = math.log2(1.0 + gamma_max(cfg16) * (1.0 - 1e-9))
    assert capacity == pytest.approx(cap_hi, abs=1e-9)
    assert targets.gamma_pred == pytest.approx(gamma_max(cfg16), rel=1e-6)
    assert targets.gamma_est == pytest.approx(gamma_max(cfg16), rel=1e-6)
    assert feasible and op_pred == 0.0 and op_est == 0.0
    assert cfg16.w_min <= w <= cfg16.w_max


def test_solve_p31_bisection_tightness(cfg16):
    beam = np.array([0.0, 7.0])
    prior = np.diag([4e-3, 1e-3, 4e-3, 1e-3])
    w, targets, capacity, op_pred, op_est, feasible, _ = solve_p31(beam, prior, cfg16)
    assert feasible
    assert capacity == pytest.approx(outage_capacity(targets, w), rel=1e-12)
    lam = position_marginal(prior)
    budget = cfg16.outage_threshold
    tol_c = cfg16.optimizer.tol_c

    def op_pred_of(gamma):
        return approx_op(beam, gamma, PositionGaussian(beam.copy(), lam), cfg16)

    assert op_pred_of(targets.gamma_pred) <= budget
    assert op_pred <= budget
    cap_pred = math.log2(1.0 + targets.gamma_pred)
    cap_hi = math.log2(1.0 + gamma_max(cfg16) * (1.0 - 1e-9))
    if cap_pred < cap_hi - 2 * tol_c:   # the constraint, not the cap, binds
        bumped = 2.0 ** (cap_pred + 2 * tol_c) - 1.0
        assert op_pred_of(bumped) > budget


def test_solve_p31_fixed_w(cfg16):
    beam = np.array([0.0, 7.0])
    prior = np.diag([4e-3, 1e-3, 4e-3, 1e-3])
    w, _, _, _, _, _, _ = solve_p31(beam, prior, cfg16, fixed_w=cfg16.w_max)
    assert w == cfg16.w_max


def test_solve_p31_diffuse_prior_cuts_capacity(cfg16):
    # the quadratic coverage region saturates as the target vanishes, so a
    # prior this diffuse makes the prediction stage unservable: its target
    # drops to zero (no outage risk, no capacity) while the estimation
    # stage, sharpened by the in-slot measurement, still carries capacity
    beam = np.array([0.0, 7.0])
    diffuse = np.diag([5.0, 1.0, 5.0, 1.0])
    tight = np.diag([4e-3, 1e-3, 4e-3, 1e-3])
    w, targets, capacity, op_pred, op_est, feasible, _ = solve_p31(beam, diffuse, cfg16)
    out_t = solve_p31(beam, tight, cfg16)
    assert feasible and out_t[5]
    assert targets.gamma_pred == 0.0 and targets.gamma_est > 0.0
    assert op_pred == 0.0 and op_est <= cfg16.outage_threshold
    assert capacity == pytest.approx((1.0 - w) * math.log2(1.0 + targets.gamma_est))
    assert capacity < 0.5 * out_t[2]


def test_search_vacuous_budget_hits_cap(cfg16):
    # with the budget this loose the binding constraint degenerates to
    # "some coverage mass remains", so targets climb to within a whisker
    # of the hard SNR cap instead of stopping at the usual budget boundary
    cfg = cfg16.replace(outage_threshold=0.999999)
    inputs = _slot_inputs(cfg)
    decision, _ = search_based_solve(inputs)
    cap_hi = math.log2(1.0 + gamma_max(cfg) * (1.0 - 1e-9))
    assert decision.feasible
    assert cap_hi - 0.05 <= decision.capacity <= cap_hi + 1e-9
    assert max(decision.op_pred, decision.op_est) <= cfg.outage_threshold


def test_search_monotone_and_bounded(cfg16):
    inputs = _slot_inputs(cfg16)
    decision, stats = search_based_solve(inputs)
    assert decision.feasible
    certified = [h["certified"] for h in stats.history]
    assert len(certified) >= 1
    assert all(b >= a - 1e-12 for a, b in zip(certified, certified[1:]))
    opt = cfg16.optimizer
    w_range = max(cfg16.w_max - cfg16.w_min, opt.tol_w)
    i_w = max(1, math.ceil(math.log2(w_range / opt.tol_w)))
    cap_hi = math.log2(1.0 + gamma_max(cfg16) * (1.0 - 1e-9))
    i_c = math.ceil(math.log2(cap_hi / opt.tol_c))
    assert stats.p22_solves <= 2 * i_w * i_c * i_c


def test_solvers_agree_and_ao_is_cheaper(cfg16):
    inputs = _slot_inputs(cfg16)
    dec_search, st_search = search_based_solve(inputs)
    dec_ao, st_ao = ao_solve(inputs)
    assert abs(dec_search.capacity - dec_ao.capacity) <= 1e-2
    assert st_ao.p22_solves < st_search.p22_solves


def test_ao_feasible_decision_recheck(cfg16):
    inputs = _slot_inputs(cfg16)
    decision, _ = ao_solve(inputs)
    assert decision.feasible
    value = max_op_constraint(decision.beam_pos, decision.w, decision.targets,
                              inputs.prior_mse, cfg16)
    assert value < 1e-12
    assert decision.beam_pos[1] >= cfg16.y_min_m - 1e-9
    step = np.hypot(*(decision.beam_pos - inputs.prev_estimate[[0, 2]]))
    assert step <= cfg16.v_max_mps * cfg16.slot_s + 1e-9
    assert 0.0 < decision.targets.gamma_pred < gamma_max(cfg16) + 1e-9
    assert decision.capacity == pytest.approx(
        outage_capacity(decision.targets, decision.w), rel=1e-12)


def test_ao_fixed_point_rerun(cfg16):
    inputs = _slot_inputs(cfg16)
    first, _ = ao_solve(inputs)
    again = SlotInputs(cfg=cfg16, prev_estimate=inputs.prev_estimate,
                       prior_mse=inputs.prior_mse,
                       start_point=first.beam_pos.copy())
    second, _ = ao_solve(again)
    assert second.capacity == pytest.approx(first.capacity,
                                            abs=2 * cfg16.optimizer.tol_obj)


def test_ao_hint_matches_full_search(cfg_conv):
    inputs = _slot_inputs(cfg_conv, estimate=[4.0, 0.0, 0.5, 0.1])
    full, _ = ao_solve(inputs)
    hinted, _ = ao_solve(inputs, hint_w=full.w)
    assert hinted.capacity == pytest.approx(full.capacity, abs=5e-3)


def test_solvers_raise_on_unreachable_halfplane(cfg16):
    inputs = _slot_inputs(cfg16, estimate=[0.0, 0.0, -2.0, 0.0])
    with pytest.raises(InfeasibleRegionError):
        ao_solve(inputs)
    with pytest.raises(InfeasibleRegionError):
        search_based_solve(inputs)
