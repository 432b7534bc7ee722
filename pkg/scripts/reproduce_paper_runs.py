#!/usr/bin/env python3
"""Drive the full set of paper-style experiments through the CLI.

Produces, under --out:
  run-<scenario>/   trajectory CSVs + safety reports (all layers)
  verify-<scenario>/ verification.json per scenario
  sweep/            the sequential (mu, a, omega) tuning table
  fig-<scenario>.png figures, when the safe-esc-plot package is installed

The 2D scenarios integrate ~2M model-free steps each; expect a few minutes
for the whole script.
"""

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

from safe_esc.cli import main as cli_main
from safe_esc.scenarios import BUILTIN_NAMES, builtin, save

RUN_LAYERS = {
    "paper-1d": "model-free,averaged,model-based,unconstrained-baseline",
    "paper-2d-trig": "model-free,averaged,model-based",
    "paper-2d-corridor": "model-free,averaged,model-based",
    "interior-ball": "model-free,averaged,model-based",
}

TUNING_SCHEDULE = "0.4,0.2,50;0.2,0.1,100;0.1,0.05,200"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="output root directory")
    parser.add_argument(
        "--quick", action="store_true", help="short horizons (smoke test)"
    )
    args = parser.parse_args()
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)

    for name in BUILTIN_NAMES:
        run_dir = root / f"run-{name}"
        argv = ["run", name, "--layers", RUN_LAYERS[name], "--out", str(run_dir)]
        if args.quick:
            argv += ["--horizon", "30"]
        print(f"== run {name}")
        code = cli_main(argv)
        if code != 0:
            print(f"run {name} exited {code}", file=sys.stderr)
            return code
        save(builtin(name), run_dir / "scenario.json")

        print(f"== verify {name}")
        code = cli_main(["verify", name, "--out", str(root / f"verify-{name}")])
        if code != 0:
            print(f"verify {name} exited {code}", file=sys.stderr)
            return code

    print("== sweep interior-ball")
    code = cli_main(
        ["sweep", "interior-ball", "--schedule", TUNING_SCHEDULE,
         "--out", str(root / "sweep")]
    )
    if code != 0:
        return code

    plot = shutil.which("safe-esc-plot")
    if plot is None:
        print("safe-esc-plot not installed; skipping figures")
        return 0
    for name in BUILTIN_NAMES:
        run_dir = root / f"run-{name}"
        result = subprocess.run(
            [plot, str(run_dir), "--scenario", str(run_dir / "scenario.json"),
             "--out", str(root / f"fig-{name}.png")]
        )
        if result.returncode != 0:
            return result.returncode
    return 0


if __name__ == "__main__":
    sys.exit(main())
