"""Regenerate the packaged OP regression fixtures.

Each case freezes the approximated and the Monte Carlo outage probability
for one (config, beam, gamma, position Gaussian) tuple.  The selftest
subcommand recomputes both and demands bitwise-stable agreement, so any
numerical drift in the OP chain is caught immediately.

Run from the repository root:

    python3 scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from beamtrack.config import ScenarioConfig
from beamtrack.outage import PositionGaussian, approx_op, mc_op

OUT = Path(__file__).resolve().parents[1] / "src" / "beamtrack" / "fixtures" / "op_fixtures.json"

BASE = {
    "transmit_power_W": 0.1,
    "noise_power_dbm": -80,
    "wavelength_m": 0.01,
    "rcs_m2": 0.2,
    "altitude_m": 50,
    "slot_s": 0.02,
    "matched_filter_gain": 10000,
    "v_max_mps": 30,
    "meas_coeff_angle": 0.1,
    "meas_coeff_range": 0.1,
    "process_noise_intensity": 1e-5,
    "outage_threshold": 0.01,
    "y_min_m": 1.0,
}


def _cfg(n_tx: int) -> ScenarioConfig:
    doc = dict(BASE)
    doc["n_tx"] = n_tx
    doc["n_rx"] = n_tx
    return ScenarioConfig.from_dict(doc)


def _peak(cfg: ScenarioConfig, beam) -> float:
    return cfg.p_tilde * cfg.n_tx / (beam[0] ** 2 + beam[1] ** 2 + cfg.altitude_m ** 2)


def _gamma_for_op(cfg, beam, pos, target: float) -> float:
    # smallest target SNR whose approximated OP reaches `target`
    hi = _peak(cfg, beam) * (1.0 - 1e-12)
    if approx_op(beam, hi, pos, cfg) < target:
        return hi
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if approx_op(beam, mid, pos, cfg) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def build_cases():
    cases = []

    def add(name, cfg, beam, op_level, cov, mean=None, n_trials=262144, seed=1):
        beam = np.asarray(beam, float)
        mean = beam if mean is None else np.asarray(mean, float)
        pos = PositionGaussian(mean, np.asarray(cov, float))
        gamma = _gamma_for_op(cfg, beam, pos, op_level)
        op_a = approx_op(beam, gamma, pos, cfg)
        op_m = mc_op(beam, gamma, pos, cfg, n_trials, seed)
        cases.append({
            "name": name,
            "config": cfg.to_dict(),
            "beam": [float(beam[0]), float(beam[1])],
            "gamma": float(gamma),
            "mean": [float(mean[0]), float(mean[1])],
            "cov": [[float(v) for v in row] for row in np.asarray(cov, float)],
            "approx_op": op_a,
            "mc_op": op_m,
            "n_trials": n_trials,
            "seed": seed,
        })
        print(f"{name:26s} approx {op_a:.6f}  mc {op_m:.6f}")

    c16 = _cfg(16)
    c32 = _cfg(32)
    c64 = _cfg(64)

    add("broadside-midrange", c16, (0.0, 7.0), 0.01,
        [[4e-3, 5e-4], [5e-4, 8e-3]], seed=11)
    add("broadside-far", c16, (0.0, 15.0), 0.35,
        [[6e-3, 0.0], [0.0, 6e-3]], seed=12)
    add("offaxis-low-line", c64, (5.8, 3.0), 0.08,
        [[2e-4, 1e-5], [1e-5, 3e-4]], seed=13)
    add("grazing-line", c64, (9.5, 1.0), 0.05,
        [[2e-2, 1e-3], [1e-3, 2.5e-1]], seed=14)
    add("tight-uncertainty", c64, (15.0, 1.0), 0.75,
        [[1e-6, 0.0], [0.0, 1e-6]], seed=15)
    add("shifted-mean", c32, (-6.0, 4.0), 0.20,
        [[3e-3, -8e-4], [-8e-4, 2e-3]], mean=(-6.03, 4.05), seed=16)

    return cases


def main():
    cases = build_cases()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"cases": cases}, indent=1) + "\n")
    print(f"wrote {OUT} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
