"""Run every shipped config under configs/ and report exit codes."""

import argparse
import sys
import time
from pathlib import Path

from neumann_bmo.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--configs", default=str(ROOT / "configs"))
    parser.add_argument("--out", default="runs")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    codes = {}
    for cfg in sorted(Path(args.configs).glob("*.yaml")):
        start = time.perf_counter()
        codes[cfg.name] = cli(["run", str(cfg), "--out", args.out, "--threads", str(args.threads)])
        print(f"{cfg.name:<32} exit {codes[cfg.name]}  {time.perf_counter() - start:6.1f}s", flush=True)
    return max(codes.values(), default=0)


if __name__ == "__main__":
    sys.exit(main())
