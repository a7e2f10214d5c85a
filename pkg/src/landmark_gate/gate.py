"""Accept/reject gating of labeled configurations and localization metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Shape, pairwise_distances
from .ssm import MatchFailed, MatchResult

DEFAULT_RADII = (2.0, 4.0, 10.0, 20.0)

COINCIDENCE = "coincidence"
WRIST_DISTANCE = "wrist_distance"
MATCH_FAILED = "match_failed"


@dataclass(frozen=True)
class GateConfig:
    """``coincidence_tolerance`` is usually one heatmap pixel in mm, see :meth:`for_scale`."""

    wrist_region_indices: frozenset[int]
    coincidence_tolerance: float
    coincidence_exempt_pair: tuple[int, int] = (2, 3)
    wrist_distance_limit: float = 16.0

    def __post_init__(self):
        object.__setattr__(self, "wrist_region_indices", frozenset(int(i) for i in self.wrist_region_indices))
        a, b = self.coincidence_exempt_pair
        if a == b:
            raise ValueError("exempt pair indices must be distinct")
        object.__setattr__(self, "coincidence_exempt_pair", (min(a, b), max(a, b)))
        if not self.coincidence_tolerance > 0 or not self.wrist_distance_limit > 0:
            raise ValueError("tolerances must be positive")

    @classmethod
    def for_scale(cls, mm_per_px: float, wrist_region_indices, **kw) -> GateConfig:
        return cls(frozenset(wrist_region_indices), float(mm_per_px), **kw)

    def check(self, L: int) -> None:
        if max(self.coincidence_exempt_pair) >= L:
            raise ValueError("exempt pair out of range")
        if any(not 0 <= i < L for i in self.wrist_region_indices):
            raise ValueError("wrist region index out of range")


@dataclass(frozen=True)
class Violation:
    constraint: str
    indices: tuple[int, ...]
    value: float

    def to_dict(self) -> dict:
        return {"constraint": self.constraint, "indices": list(self.indices), "value": self.value}


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    violations: tuple[Violation, ...] = ()

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "violations": [v.to_dict() for v in self.violations]}


def check_constraints(
    labeled: Shape, match: MatchResult | MatchFailed | None, cfg: GateConfig
) -> GateDecision:
    """Rejects on (i) coinciding landmarks other than the exempt pair and (ii)
    wrist-region landmarks further than the limit from the posed mean shape."""
    L = labeled.L
    cfg.check(L)
    violations = []

    dist = pairwise_distances(labeled.points)
    ii, jj = np.triu_indices(L, k=1)
    close = dist[ii, jj] < cfg.coincidence_tolerance
    for i, j in zip(ii[close], jj[close]):
        if (int(i), int(j)) != cfg.coincidence_exempt_pair:
            violations.append(Violation(COINCIDENCE, (int(i), int(j)), float(dist[i, j])))

    if isinstance(match, MatchResult):
        if match.transformed_mean.L != L:
            raise ValueError("match result does not belong to this configuration")
        for i in sorted(cfg.wrist_region_indices):
            r = float(match.residuals[i])
            if r > cfg.wrist_distance_limit:
                violations.append(Violation(WRIST_DISTANCE, (i,), r))
    else:
        best = float(match.best_inliers) if isinstance(match, MatchFailed) else 0.0
        violations.append(Violation(MATCH_FAILED, (), best))

    return GateDecision(not violations, tuple(violations))


def acceptance_rate(decisions: Sequence[GateDecision]) -> float:
    if not decisions:
        raise ValueError("no decisions")
    return sum(d.accepted for d in decisions) / len(decisions)


def violation_histogram(decisions: Sequence[GateDecision]) -> dict[str, int]:
    """Number of images that violated each constraint at least once."""
    hist = {COINCIDENCE: 0, WRIST_DISTANCE: 0, MATCH_FAILED: 0}
    for d in decisions:
        for name in {v.constraint for v in d.violations}:
            hist[name] += 1
    return hist


@dataclass(frozen=True)
class EvalReport:
    pe_mean: float
    pe_sd: float
    outliers: dict[float, int] = field(default_factory=dict)
    n_landmarks: int = 0

    def to_text(self) -> str:
        lines = [f"pe_mean_mm: {self.pe_mean!r}", f"pe_sd_mm: {self.pe_sd!r}", f"landmarks: {self.n_landmarks}"]
        for r, c in sorted(self.outliers.items()):
            lines.append(f"outliers_r{r:g}mm: {c}")
        return "\n".join(lines) + "\n"


def landmark_errors(predictions: Sequence[Shape], ground_truth: Sequence[Shape]) -> np.ndarray:
    if len(predictions) != len(ground_truth):
        raise ValueError("prediction and ground-truth counts differ")
    errs = []
    for p, g in zip(predictions, ground_truth):
        if p.L != g.L:
            raise ValueError("landmark counts differ")
        errs.append(np.hypot(*(p.points - g.points).T))
    return np.concatenate(errs) if errs else np.zeros(0)


def evaluate(
    predictions: Sequence[Shape], ground_truth: Sequence[Shape], radii: Sequence[float] = DEFAULT_RADII
) -> EvalReport:
    """Point-to-point error pooled over every landmark of every image, plus
    the total count of predictions further than ``r`` from the truth."""
    e = landmark_errors(predictions, ground_truth)
    if e.size == 0:
        raise ValueError("nothing to evaluate")
    outliers = {float(r): int(np.sum(e > r)) for r in radii}
    return EvalReport(float(e.mean()), float(e.std()), outliers, int(e.size))
