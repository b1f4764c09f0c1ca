"""Tail win rate and mid-strata change for each fixed alpha on the grid.

    python3 scripts/alpha_sweep.py --seeds 0 10
"""

import argparse

from riskbal.cli import WORLDS
from riskbal.experiments import run_world, summarize
from riskbal.validation import ALPHA_GRID


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--seeds", nargs=2, type=int, default=(0, 20), metavar=("START", "STOP"))
    p.add_argument("--world", choices=WORLDS, default="paper-like")
    p.add_argument("--grid", type=int, nargs="+", default=list(ALPHA_GRID))
    args = p.parse_args()
    print("alpha  win_rate  cells  mid_delta")
    for a in args.grid:
        s = summarize(r for seed in range(*args.seeds)
                      for r in run_world(seed, WORLDS[args.world], alpha=a))
        print(f"{a:5d}  {s.tail_win_rate:8.3f}  {s.tail_cells:5d}  {s.mean_mid_delta:+9.4f}",
              flush=True)


if __name__ == "__main__":
    main()
