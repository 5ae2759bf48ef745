"""Run the full command chain on the bundled toy data.

calibrate -> alpha -> simulate (replay) -> train -> evaluate -> sensitivity,
each writing under runs/toy/<command>.
"""
import argparse
import sys
import time

from pandemic_econ.cli import main as cli_main

STEPS = ["calibrate", "alpha", "simulate", "train", "evaluate", "sensitivity"]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/toy.yaml")
    parser.add_argument("--root", default="runs/toy")
    parser.add_argument("--skip", nargs="*", default=[], choices=STEPS)
    args = parser.parse_args()
    for step in STEPS:
        if step in args.skip:
            continue
        start = time.time()
        code = cli_main([step, "--config", args.config, "--out", f"{args.root}/{step}", "-v"])
        print(f"{step}: exit {code} in {time.time() - start:.1f}s")
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
