"""Acceptance gate: one test per stated criterion, at the stated tolerance.

Each CLI-backed criterion runs its subcommand once through a session-scoped
fixture and asserts on the exit code plus the recorded summary, so a failed
criterion points at the exact gated check that broke.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from beamtrack.cli import main
from beamtrack.ekf import (jacobian, planning_posterior, position_marginal,
                           predict_mse, prepare_bundle, update)
from beamtrack.motion import Measurement, meas_noise_vars, measurement_mean
from beamtrack.outage import PositionGaussian, approx_op

from helpers import random_psd


class CliRun:
    def __init__(self, argv, outdir: Path):
        outdir.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        self.rc = main(argv + ["--out", str(outdir)])
        self.seconds = time.time() - t0
        self.out = outdir
        summary = outdir / "summary.json"
        self.summary = json.loads(summary.read_text()) if summary.exists() else {}

    def failed_gates(self):
        return [c for c in self.summary.get("checks", [])
                if c["gating"] and not c["passed"]]


@pytest.fixture(scope="session")
def acceptance_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def a1_run(acceptance_dir):
    return CliRun(["validate-op", "--config", "fig3"], acceptance_dir / "a1")


@pytest.fixture(scope="session")
def a2_run(acceptance_dir):
    return CliRun(["op-map", "--config", "fig4"], acceptance_dir / "a2")


@pytest.fixture(scope="session")
def a5_run(acceptance_dir):
    return CliRun(["convergence", "--config", "fig5a"], acceptance_dir / "a5")


@pytest.fixture(scope="session")
def a6_run(acceptance_dir):
    return CliRun(["sweep-w", "--config", "fig5b"], acceptance_dir / "a6")


@pytest.fixture(scope="session")
def a7_run(acceptance_dir):
    return CliRun(["track", "--config", "fig6-pmd"], acceptance_dir / "a7")


@pytest.fixture(scope="session")
def a8_run(acceptance_dir):
    return CliRun(["compare", "--config", "fig7-pmd"], acceptance_dir / "a8")


@pytest.fixture(scope="session")
def a9_run(acceptance_dir):
    return CliRun(["compare", "--config", "fig7-pmnd"], acceptance_dir / "a9")


# ----------------------------------------------------------------------
# A1: OP approximation accuracy against Monte Carlo
# ----------------------------------------------------------------------

def test_a01_op_approximation_accuracy(a1_run):
    assert a1_run.rc == 0, a1_run.failed_gates()
    gated = ungated = 0
    for pos in a1_run.summary["positions"]:
        for stage, doc in pos["stages"].items():
            if pos["gated"]:
                gated += 1
                assert doc["max_abs_err"] <= 0.03, (pos["position"], stage, doc)
            else:
                ungated += 1
    assert gated == 4      # both stages at the two accurate geometries
    assert ungated == 2    # the known-degraded geometry is reported, not gated
    assert a1_run.seconds <= 120.0


# ----------------------------------------------------------------------
# A2: OP-map optimum location for both array sizes
# ----------------------------------------------------------------------

def test_a02_op_map_optimum(a2_run):
    assert a2_run.rc == 0, a2_run.failed_gates()
    grids = {g["n_tx"]: g for g in a2_run.summary["grids"]}
    assert set(grids) == {32, 64}
    for n_tx, g in grids.items():
        assert g["argmin_y"] == pytest.approx(3.0, abs=1e-12), n_tx
        assert 5.3 <= abs(g["argmin_x"]) <= 6.3, (n_tx, g["argmin_x"])
    assert a2_run.seconds <= 300.0


# ----------------------------------------------------------------------
# A3: OP nondecreasing in the SNR target
# ----------------------------------------------------------------------

def test_a03_op_monotone_in_snr_target(cfg16):
    t0 = time.time()
    rng = np.random.default_rng(3)
    prior = predict_mse(cfg16.m0_matrix(), cfg16)
    worst = 0.0
    for k in range(1000):
        beam = np.array([rng.uniform(-10.0, 10.0), rng.uniform(1.5, 20.0)])
        if k % 2 == 0:
            lam = random_psd(rng, 2, scale=10.0 ** rng.uniform(-4.0, -1.0))
        else:
            w = rng.uniform(cfg16.w_min, cfg16.w_max)
            lam = position_marginal(planning_posterior(beam, w, prior, cfg16))
        pos = PositionGaussian(beam, lam)
        peak = cfg16.p_tilde * cfg16.n_tx / float(beam @ beam
                                                  + cfg16.altitude_m ** 2)
        gammas = np.linspace(1e-3 * peak, 1.3 * peak, 50)
        ops = np.array([approx_op(beam, float(g), pos, cfg16) for g in gammas])
        worst = max(worst, float(np.max(-np.diff(ops), initial=0.0)))
    assert worst <= 1e-9, f"max OP decrease on a target grid = {worst:.3e}"
    assert time.time() - t0 <= 60.0


# ----------------------------------------------------------------------
# A4: EKF algebraic identities
# ----------------------------------------------------------------------

def test_a04_ekf_algebraic_identities(cfg16):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        prior = random_psd(rng, 4, scale=10.0 ** rng.uniform(-4.0, 0.0))
        state = np.array([rng.uniform(-10, 10), rng.uniform(-3, 3),
                          rng.uniform(1, 20), rng.uniform(-3, 3)])
        nv = meas_noise_vars(state[[0, 2]], rng.uniform(0.1, 1.0), cfg16)
        bundle = prepare_bundle(state, prior,
                                np.diag([nv.var_angle, nv.var_range]), cfg16)
        az, slant = measurement_mean(state[[0, 2]], cfg16)
        meas = Measurement(azimuth_rad=az + 1e-3 * rng.standard_normal(),
                           range_m=slant + 0.1 * rng.standard_normal())
        post_c = update(bundle, meas, cfg16, form="covariance")
        post_i = update(bundle, meas, cfg16, form="information")
        scale = max(float(np.max(np.abs(post_c.mse))), 1e-300)
        worst = max(worst,
                    float(np.max(np.abs(post_c.mse - post_i.mse))) / scale,
                    float(np.max(np.abs(post_c.estimate - post_i.estimate)))
                    / max(1.0, float(np.max(np.abs(post_c.estimate)))))
    assert worst <= 1e-8, f"update forms disagree by {worst:.3e} relative"

    worst = 0.0
    for _ in range(200):
        state = np.array([rng.uniform(-10, 10), rng.uniform(-3, 3),
                          rng.uniform(1, 20), rng.uniform(-3, 3)])
        jac = jacobian(state, cfg16)
        assert np.all(jac[:, [1, 3]] == 0.0)
        fd = np.zeros((2, 4))
        for col, idx in ((0, 0), (2, 2)):
            h = 1e-6 * max(1.0, abs(state[col]))
            hi, lo = state.copy(), state.copy()
            hi[col] += h
            lo[col] -= h
            fa, fr = measurement_mean(hi[[0, 2]], cfg16)
            ga, gr = measurement_mean(lo[[0, 2]], cfg16)
            fd[0, col] = (fa - ga) / (2 * h)
            fd[1, col] = (fr - gr) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(jac))))
        worst = max(worst, float(np.max(np.abs(jac - fd))) / scale)
    assert worst <= 1e-6, f"jacobian vs finite differences = {worst:.3e}"


# ----------------------------------------------------------------------
# A5: per-slot solver agreement and cost ordering
# ----------------------------------------------------------------------

def test_a05_solver_agreement_and_cost(a5_run):
    assert a5_run.rc == 0, a5_run.failed_gates()
    assert a5_run.summary["agreement_bps"] <= 1e-2
    assert a5_run.summary["ao"]["p22_solves"] \
        < a5_run.summary["search"]["p22_solves"]
    assert a5_run.summary["search"]["feasible"] and a5_run.summary["ao"]["feasible"]
    assert a5_run.seconds <= 180.0


# ----------------------------------------------------------------------
# A6: sensing/communication trade-off of the duration split
# ----------------------------------------------------------------------

def _start(run, label):
    for doc in run.summary["starts"]:
        if doc["label"] == label:
            return doc
    raise AssertionError(f"missing sweep start {label}")


def test_a06_tradeoff_interior_maximizer(a6_run):
    doc = _start(a6_run, "capacity_x0_y4")
    assert doc["interior_gain_pct"] >= 1.0, (
        f"interior gain {doc['interior_gain_pct']:.2f}% < 1% at start (0,4): "
        "with this scenario's pinned constants the capacity curve does peak "
        "in the interior (w near 0.5) but clears both endpoints by well "
        "under the 1% bar; see the analysis ledger (notes/decisions.md, "
        "trade-off section) for the measured curve and constant-scan evidence")


def test_a06_tradeoff_flat_curve_on_axis_start(a6_run):
    assert a6_run.rc == 0
    doc = _start(a6_run, "capacity_x4_y0")
    assert doc["variation_pct"] <= 5.0, doc


# ----------------------------------------------------------------------
# A7: long-run trajectory geometry per policy
# ----------------------------------------------------------------------

def test_a07_trajectory_geometry(a7_run):
    assert a7_run.rc == 0, a7_run.failed_gates()
    names = {c["name"]: c for c in a7_run.summary["checks"] if c["gating"]}
    for key in ("proposed-ao settles on the minimum-distance line",
                "msigma1 hovers at the angle-noise optimum",
                "mpcrb orbit stays near-circular"):
        assert key in names, sorted(names)
        assert names[key]["passed"], names[key]
    assert a7_run.seconds <= 600.0 * len(a7_run.summary["policies"])


# ----------------------------------------------------------------------
# A8: capacity superiority with position-dependent measurement noise
# ----------------------------------------------------------------------

def test_a08_capacity_superiority_pmd(a8_run):
    assert a8_run.rc == 0, a8_run.failed_gates()
    margins = a8_run.summary["margins"]
    assert margins, "no proposed-vs-benchmark margins recorded"
    for pair, value in margins.items():
        assert value >= 0.2, f"{pair} margin {value:.3f} bps/Hz < 0.2"
    stats = a8_run.summary["policies"]["proposed-ao"]
    assert stats["n_runs"] >= 20


def test_a08_pmnd_margins_reported_without_gate(a9_run):
    # the same comparison under position-independent noise only reports
    # margins; no superiority gate applies there
    margins = a9_run.summary["margins"]
    assert margins
    assert not any("capacity margin" in c["name"]
                   for c in a9_run.summary["checks"] if c["gating"])


# ----------------------------------------------------------------------
# A9: realized outage within budget in gated scenarios
# ----------------------------------------------------------------------

def test_a09_outage_compliance_gated_scenarios(a9_run):
    assert a9_run.rc == 0, a9_run.failed_gates()
    gated = [c for c in a9_run.summary["checks"]
             if c["gating"] and "outage within budget" in c["name"]]
    assert len(gated) >= 2   # both stages of the proposed policy
    for c in gated:
        assert c["passed"], c
    stats = a9_run.summary["policies"]["proposed-ao"]
    bound = 0.01 + 2.0 * stats["wilson_pred"]
    assert stats["outage_rate_pred"] <= bound


# ----------------------------------------------------------------------
# A10: seeded reruns are byte-identical
# ----------------------------------------------------------------------

def test_a10_seeded_rerun_byte_identical(acceptance_dir):
    cheap = ["--set", "mc_trials=20000", "--set", "sweep_points=5"]
    r1 = CliRun(["validate-op", "--config", "fig3"] + cheap,
                acceptance_dir / "a10v1")
    r2 = CliRun(["validate-op", "--config", "fig3"] + cheap,
                acceptance_dir / "a10v2")
    assert r1.rc == 0 and r2.rc == 0
    assert (r1.out / "op_accuracy.csv").read_bytes() \
        == (r2.out / "op_accuracy.csv").read_bytes()

    short = ["--set", "n_slots=50", "--set", "policies=proposed-ao,msigma1",
             "--set", "gate_geometry=false"]
    t1 = CliRun(["track", "--config", "fig6-pmd"] + short,
                acceptance_dir / "a10t1")
    t2 = CliRun(["track", "--config", "fig6-pmd"] + short,
                acceptance_dir / "a10t2")
    assert t1.rc == 0 and t2.rc == 0
    for name in ("slots.csv", "summary.csv"):
        assert (t1.out / name).read_bytes() == (t2.out / name).read_bytes(), name
