"""Loopy BP against the exact optimum on random single-cycle graphs, per damping.

    python3 scripts/lbp_loop_study.py --graphs 200
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from graphs import random_graph, random_single_cycle  # noqa: E402

from landmark_gate.mrf import LbpParams, brute_force_map, energy, lbp_map  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=200)
    ap.add_argument("--max-L", type=int, default=7)
    ap.add_argument("--max-k", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'damping':>7s} {'exact':>6s} {'>=99%':>6s} {'min ratio':>9s} {'converged':>9s} {'mean iters':>10s}")
    for damping in (0.0, 0.25, 0.5, 0.75, 0.9):
        rng = np.random.default_rng(args.seed)
        params = LbpParams(damping=damping)
        exact = near = conv = 0
        ratios, iters = [], []
        for _ in range(args.graphs):
            L = int(rng.integers(3, args.max_L + 1))
            g = random_graph(rng, random_single_cycle(rng, L), L, args.max_k)
            lab = lbp_map(g, params)
            r = energy(g, lab) / energy(g, brute_force_map(g))
            ratios.append(r)
            exact += r >= 1 - 1e-12
            near += r >= 0.99
            conv += lab.converged
            iters.append(lab.iterations)
        n = args.graphs
        print(f"{damping:7.2f} {exact / n:6.3f} {near / n:6.3f} {min(ratios):9.4f} {conv / n:9.3f} {np.mean(iters):10.1f}")


if __name__ == "__main__":
    main()
