"""Run every shipped scenario config through the CLI.

Usage: python scripts/run_all_scenarios.py [OUT_DIR]
"""

import sys
from pathlib import Path

from frictionchan.cli import SCENARIOS, main

CONFIGS = Path(__file__).resolve().parent / "configs"
FILES = {
    "diffusion-compare": "diffusion.ini",
    "charfunc-iterate": "charfunc.ini",
}


def config_for(scenario: str) -> Path:
    return CONFIGS / FILES.get(scenario, scenario.replace("-", "_") + ".ini")


def run_all(out: Path) -> int:
    status = 0
    for sc in SCENARIOS:
        code = main([sc, "--config", str(config_for(sc)), "--out", str(out / sc)])
        print(f"{sc:18s} exit {code}")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(run_all(Path(sys.argv[1] if len(sys.argv) > 1 else "results")))
