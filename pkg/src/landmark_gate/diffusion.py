"""DDPM mathematics: linear variance schedule, forward noising, ancestral
sampling with a pluggable noise predictor, and the noise-prediction loss.

Arrays are treated as ``(..., dim)``; every leading axis is a batch axis.
A noise predictor is any callable ``predictor(x_t, t) -> eps_hat`` with the
same shape as ``x_t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

NoisePredictor = Callable[[np.ndarray, int], np.ndarray]

DEFAULT_T = 800
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
RIDGE = 1e-12


@dataclass(frozen=True, eq=False)
class Schedule:
    """Arrays are 0-based: ``betas[t - 1]`` is beta_t."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.size

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to ``t``; ``alpha_bar(0) == 1``."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def posterior_variance(self, t: int) -> float:
        """beta-tilde: variance of q(x_{t-1} | x_t, x_0)."""
        return (1 - self.alpha_bar(t - 1)) / (1 - self.alpha_bar(t)) * self.beta(t)


def make_schedule(
    T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START, beta_end: float = DEFAULT_BETA_END
) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for a in (betas, alphas, alpha_bars):
        a.setflags(write=False)
    return Schedule(betas, alphas, alpha_bars)


def forward_sample(x0, t: int, eps, sched: Schedule) -> np.ndarray:
    """Closed-form draw from q(x_t | x_0) given the noise ``eps``."""
    sched.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps


def forward_step(x_prev, t: int, sched: Schedule, rng: np.random.Generator) -> np.ndarray:
    """One Markov step x_{t-1} -> x_t."""
    sched.check_t(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    b = sched.beta(t)
    return np.sqrt(1 - b) * x_prev + np.sqrt(b) * rng.standard_normal(x_prev.shape)


def reverse_step(
    pred: NoisePredictor,
    x_t,
    t: int,
    sched: Schedule,
    rng: np.random.Generator,
    variance: str = "beta",
) -> np.ndarray:
    """Ancestral step x_t -> x_{t-1}; the final step (t = 1) adds no noise."""
    sched.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(pred(x_t, t), dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"predictor returned shape {eps_hat.shape}, expected {x_t.shape}")
    b, a, ab = sched.beta(t), sched.alpha(t), sched.alpha_bar(t)
    mean = (x_t - b / np.sqrt(1 - ab) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mean
    if variance == "beta":
        var = b
    elif variance == "beta_tilde":
        var = sched.posterior_variance(t)
    else:
        raise ValueError(f"unknown reverse variance {variance!r}")
    return mean + np.sqrt(var) * rng.standard_normal(x_t.shape)


def sample(
    pred: NoisePredictor,
    dim: int,
    sched: Schedule,
    rng: np.random.Generator,
    count: int | None = None,
    variance: str = "beta",
) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I); ``count`` adds a batch axis."""
    shape = (dim,) if count is None else (count, dim)
    x = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        x = reverse_step(pred, x, t, sched, rng, variance)
    return x


def ddpm_loss(pred: NoisePredictor, x0, t: int, eps, sched: Schedule) -> np.ndarray:
    """Squared error of the noise prediction, summed over the last axis."""
    x_t = forward_sample(x0, t, eps, sched)
    eps_hat = np.asarray(pred(x_t, t), dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"predictor returned shape {eps_hat.shape}, expected {x_t.shape}")
    return np.sum((np.asarray(eps) - eps_hat) ** 2, axis=-1)


def zero_predictor(x_t, t):
    return np.zeros_like(np.asarray(x_t, dtype=np.float64))


class AnalyticGaussianPredictor:
    """Exact MMSE noise predictor when x_0 ~ N(mu, cov).

    With x_t = sqrt(ab) x_0 + sqrt(1 - ab) eps the pair (x_0, x_t) is jointly
    Gaussian, so

        E[x_0 | x_t] = mu + sqrt(ab) cov (ab cov + (1 - ab) I)^-1 (x_t - sqrt(ab) mu)
        E[eps | x_t] = (x_t - sqrt(ab) E[x_0 | x_t]) / sqrt(1 - ab)
    """

    def __init__(self, mu, cov, sched: Schedule):
        self.mu = np.asarray(mu, dtype=np.float64).reshape(-1)
        d = self.mu.size
        self.cov = np.asarray(cov, dtype=np.float64).reshape(d, d)
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("cov must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-10:
            raise ValueError("cov must be positive semidefinite")
        self.sched = sched
        self._gain: dict[int, np.ndarray] = {}

    def gain(self, t: int) -> np.ndarray:
        """Matrix ``G`` with ``E[x_0 | x_t] = mu + G (x_t - sqrt(ab) mu)``."""
        if t not in self._gain:
            ab = self.sched.alpha_bar(t)
            d = self.mu.size
            M = ab * self.cov + (1 - ab) * np.eye(d) + RIDGE * np.eye(d)
            # cov M^-1 == (M^-1 cov)^T since both are symmetric
            self._gain[t] = np.sqrt(ab) * np.linalg.solve(M, self.cov).T
        return self._gain[t]

    def posterior_mean(self, x_t, t: int) -> np.ndarray:
        ab = self.sched.alpha_bar(t)
        x_t = np.asarray(x_t, dtype=np.float64)
        return self.mu + (x_t - np.sqrt(ab) * self.mu) @ self.gain(t).T

    def __call__(self, x_t, t: int) -> np.ndarray:
        self.sched.check_t(t)
        ab = self.sched.alpha_bar(t)
        x_t = np.asarray(x_t, dtype=np.float64)
        return (x_t - np.sqrt(ab) * self.posterior_mean(x_t, t)) / np.sqrt(1 - ab)


def analytic_gaussian_predictor(mu, cov, sched: Schedule) -> AnalyticGaussianPredictor:
    return AnalyticGaussianPredictor(mu, cov, sched)


def read_gaussian(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``mu`` (first line) and ``cov`` (next ``dim`` lines) from text."""
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty Gaussian file")
    mu = np.array([float(v) for v in rows[0]])
    d = mu.size
    if len(rows) != d + 1 or any(len(r) != d for r in rows[1:]):
        raise ValueError(f"expected a {d}x{d} covariance after the mean line")
    cov = np.array([[float(v) for v in r] for r in rows[1:]])
    return mu, cov
