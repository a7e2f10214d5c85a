"""Moments of reverse-diffusion samples under the exact Gaussian noise predictor.

Compares sample mean/covariance with the target for several chain lengths and
both reverse-variance choices.

    python3 scripts/diffusion_moments.py --count 10000
"""

import argparse

import numpy as np

from landmark_gate import diffusion as dm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mu = np.array([0.3, -0.2])
    cov = np.array([[0.25, 0.1], [0.1, 0.2]])
    print(f"{'T':>5s} {'variance':>10s} {'mean err':>9s} {'cov err':>8s}")
    for T in (10, 50, 200, 800):
        sched = dm.make_schedule(T, dm.DEFAULT_BETA_START, dm.DEFAULT_BETA_END)
        pred = dm.analytic_gaussian_predictor(mu, cov, sched)
        for variance in ("beta", "beta_tilde"):
            xs = dm.sample(pred, 2, sched, np.random.default_rng(args.seed), args.count, variance)
            m_err = np.abs(xs.mean(axis=0) - mu).max()
            c_err = np.abs(np.cov(xs, rowvar=False) - cov).max()
            print(f"{T:5d} {variance:>10s} {m_err:9.4f} {c_err:8.4f}")


if __name__ == "__main__":
    main()
