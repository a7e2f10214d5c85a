"""Gate acceptance rates on synthetic fixtures, per corruption and topology.

    python3 scripts/acceptance_rate_experiment.py --n 200 --variation 1.0
"""

import argparse
import time

import numpy as np

from landmark_gate.core import NormalizationSpec
from landmark_gate.pipeline import (
    CORRUPTIONS,
    FIXTURE_MM_PER_PX,
    FIXTURE_WRIST_PAIR,
    PipelineConfig,
    assess,
    fixture_gate_config,
    summarize,
    synth_fixture,
    training_shapes,
)
from landmark_gate.shapestats import default_topology, delaunay_topology, fit_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200, help="images per corruption")
    ap.add_argument("--train", type=int, default=100, help="training shapes")
    ap.add_argument("--variation", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train = synth_fixture(args.train, "none", seed=args.seed + 1, variation=args.variation)
    shapes = training_shapes(train.annotations, FIXTURE_MM_PER_PX, NormalizationSpec(*FIXTURE_WRIST_PAIR))
    means = np.mean([s.points for s in shapes], axis=0)
    cfg = PipelineConfig(None, None, FIXTURE_MM_PER_PX, fixture_gate_config())

    print(f"{'topology':10s} {'corruption':11s} {'accept':>7s} {'coinc':>6s} {'wrist':>6s} {'failed':>6s} {'s/img':>6s}")
    for name, topo in (("emst", default_topology(means)), ("delaunay", delaunay_topology(means))):
        stats = fit_stats(shapes, topo)
        for k, corruption in enumerate(CORRUPTIONS):
            fx = synth_fixture(args.n, corruption, seed=args.seed + 100 + k, variation=args.variation)
            t0 = time.perf_counter()
            verdicts = [assess(i, h, stats, cfg) for i, h in zip(fx.annotations.ids, fx.heatmaps)]
            dt = (time.perf_counter() - t0) / args.n
            s = summarize(verdicts)
            v = s["violations"]
            print(
                f"{name:10s} {corruption:11s} {s['acceptance_rate']:7.3f} {v['coincidence']:6d} "
                f"{v['wrist_distance']:6d} {v['match_failed']:6d} {dt:6.3f}"
            )


if __name__ == "__main__":
    main()
