"""Run every preset through the CLI and regenerate the figures.

Full runs take a while on one core (the 20-run compare presets dominate);
--quick shrinks the Monte Carlo knobs for a fast smoke pass.
"""

import argparse
import sys
import time
from pathlib import Path

from beamtrack.cli import main as simcli

# preset -> (subcommand, quick-mode overrides)
RUNS = (
    ("fig3", "validate-op", ("mc_trials=20000", "sweep_points=5")),
    ("fig4", "op-map", ("map_resolution=1.0",)),
    ("fig5a", "convergence", ()),
    ("fig5b", "sweep-w", ("sweep_w_points=7",)),
    ("fig6-pmd", "track", ("n_slots=200",)),
    ("fig6-pmnd", "track", ("n_slots=200",)),
    ("fig7-pmd", "compare", ("n_runs=3", "n_slots=200")),
    ("fig7-pmnd", "compare", ("n_runs=3", "n_slots=200")),
)


def run_preset(preset: str, subcommand: str, out_root: Path, overrides) -> int:
    out = out_root / preset
    argv = [subcommand, "--config", preset, "--out", str(out)]
    for kv in overrides:
        argv += ["--set", kv]
    t0 = time.monotonic()
    code = simcli(argv)
    print(f"[{preset}] {subcommand} -> exit {code} "
          f"({time.monotonic() - t0:.1f}s)")
    return code


def render(out_root: Path) -> None:
    try:
        from beamplots import plot_all
    except ImportError:
        print("beamplots not installed; skipping figure regeneration")
        return
    for run_dir in sorted(p for p in out_root.iterdir() if p.is_dir()):
        images = plot_all(run_dir)
        print(f"[{run_dir.name}] rendered {', '.join(sorted(images))}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results", help="output root directory")
    parser.add_argument("--quick", action="store_true",
                        help="shrink trial counts for a smoke pass")
    parser.add_argument("--only", nargs="*", metavar="PRESET",
                        help="subset of presets to run")
    args = parser.parse_args()

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    failures = []
    for preset, subcommand, quick_overrides in RUNS:
        if args.only and preset not in args.only:
            continue
        overrides = quick_overrides if args.quick else ()
        # quick gate margins are not meaningful at shrunk trial counts
        if args.quick and subcommand in ("track", "compare"):
            overrides = overrides + ("gate_outage=false", "gate_geometry=false")
        if run_preset(preset, subcommand, out_root, overrides) != 0:
            failures.append(preset)
    render(out_root)
    if failures:
        print(f"failed presets: {', '.join(failures)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
