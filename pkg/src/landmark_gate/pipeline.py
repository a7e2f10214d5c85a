"""End-to-end gating of heatmap directories and synthetic hand-like fixtures."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import heatmap as hm
from .core import Dataset, NormalizationSpec, Shape, normalize_to_wrist, pixels_to_mm, write_annotations
from .gate import GateConfig, GateDecision, acceptance_rate, check_constraints, violation_histogram
from .mrf import Labeling, LbpParams, build_graph, energy, lbp_map
from .shapestats import TrainStats, load_stats
from .ssm import MatchFailed, MatchResult, RansacParams, ransac_match

CORRUPTIONS = ("none", "displaced", "coincident", "missing")


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    stats_path: Path
    heatmap_dir: Path
    mm_per_px: float
    gate: GateConfig
    lbp: LbpParams = LbpParams()
    ransac: RansacParams = RansacParams()
    seed: int = 0
    window: int = 3
    min_value: float = 0.05
    jobs: int = 1

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise ValueError("mm_per_px must be positive")


@dataclass
class ImageVerdict:
    image_id: str
    labeling: Labeling | None = None
    labeled: Shape | None = None
    energy: float | None = None
    match: MatchResult | MatchFailed | None = None
    decision: GateDecision | None = None
    error: str | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self, with_timings: bool = False) -> dict:
        out: dict = {"id": self.image_id}
        if self.error is not None:
            out["error"] = self.error
            return out
        lab = self.labeling
        out["assignment"] = list(lab.assignment)
        out["converged"] = lab.converged
        out["iterations"] = lab.iterations
        out["energy"] = self.energy
        out["labeled_mm"] = self.labeled.points.tolist()
        if isinstance(self.match, MatchResult):
            tr = self.match.transform
            out["match"] = {
                "scale": tr.scale,
                "rotation": tr.rotation,
                "translation": list(tr.translation),
                "inliers": self.match.n_inliers,
            }
        else:
            out["match"] = {"failed": str(self.match)}
        out["decision"] = self.decision.to_dict()
        if with_timings:
            out["timings_ms"] = self.timings
        return out


def label_heatmap(
    h: hm.Heatmap,
    stats: TrainStats,
    mm_per_px: float,
    lbp: LbpParams = LbpParams(),
    window: int = 3,
    min_value: float = 0.05,
    timings: dict | None = None,
) -> tuple[Labeling, Shape, float]:
    """Candidates -> factor graph -> LBP; returns the labeling, labeled shape in mm and its energy."""
    t0 = time.perf_counter()
    cands = hm.extract_candidates(h, stats.L, window, min_value)
    if not cands:
        raise ValueError("no landmark candidates in heatmap")
    pos, peaks = hm.candidate_arrays(cands, mm_per_px)
    t1 = time.perf_counter()
    graph = build_graph(pos, peaks, stats)
    labeling = lbp_map(graph, lbp)
    t2 = time.perf_counter()
    if timings is not None:
        timings["candidates"] = (t1 - t0) * 1e3
        timings["mrf"] = (t2 - t1) * 1e3
    return labeling, Shape(pos[list(labeling.assignment)], "mm"), energy(graph, labeling)


def assess(image_id: str, h: hm.Heatmap, stats: TrainStats, cfg: PipelineConfig) -> ImageVerdict:
    v = ImageVerdict(image_id)
    try:
        v.labeling, v.labeled, v.energy = label_heatmap(
            h, stats, cfg.mm_per_px, cfg.lbp, cfg.window, cfg.min_value, v.timings
        )
    except ValueError as exc:
        v.error = f"labeling failed: {exc}"
        return v
    t0 = time.perf_counter()
    try:
        v.match = ransac_match(stats.ssm.mean_shape, v.labeled, cfg.ransac)
    except MatchFailed as exc:
        v.match = exc
    t1 = time.perf_counter()
    v.decision = check_constraints(v.labeled, v.match, cfg.gate)
    t2 = time.perf_counter()
    v.timings["ssm"] = (t1 - t0) * 1e3
    v.timings["gate"] = (t2 - t1) * 1e3
    return v


def _assess_path(path: Path, stats: TrainStats, cfg: PipelineConfig) -> ImageVerdict:
    try:
        h = hm.read_pgm(path)
    except (OSError, ValueError) as exc:
        return ImageVerdict(path.stem, error=f"unreadable heatmap: {exc}")
    return assess(path.stem, h, stats, cfg)


_worker_state: dict = {}


def _init_worker(stats_path, cfg):
    _worker_state["stats"] = load_stats(stats_path)
    _worker_state["cfg"] = cfg


def _worker(path):
    return _assess_path(path, _worker_state["stats"], _worker_state["cfg"])


def summarize(verdicts: list[ImageVerdict]) -> dict:
    decisions = [v.decision for v in verdicts if v.decision is not None]
    summary = {
        "images": len(verdicts),
        "errors": sum(v.error is not None for v in verdicts),
        "accepted": sum(d.accepted for d in decisions),
    }
    if not verdicts:
        summary["error"] = "EmptyInput"
        return summary
    # an unlabeled image counts as rejected
    summary["acceptance_rate"] = summary["accepted"] / len(verdicts)
    summary["violations"] = violation_histogram(decisions)
    return summary


def gate_directory(cfg: PipelineConfig, stats: TrainStats | None = None) -> tuple[list[ImageVerdict], dict]:
    """Gate every ``*.pgm`` under ``cfg.heatmap_dir`` in file-name order."""
    if stats is None:
        stats = load_stats(cfg.stats_path)
    if stats.ssm is None:
        raise ValueError("stats file has no shape model")
    cfg.gate.check(stats.L)
    paths = sorted(Path(cfg.heatmap_dir).glob("*.pgm"))
    if cfg.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(cfg.stats_path, cfg)) as ex:
            verdicts = list(ex.map(_worker, paths))
    else:
        verdicts = [_assess_path(p, stats, cfg) for p in paths]
    return verdicts, summarize(verdicts)


# ---------------------------------------------------------------------------
# synthetic fixtures
#
# A 37-landmark hand-like template in mm (y grows downwards like image rows).
# 0/1 are the wrist pair (50 mm apart), 2/3 a deliberately close pair, 4-6 more
# carpal points; 7-36 are five rays of six points each.

FIXTURE_L = 37
FIXTURE_WRIST_PAIR = (0, 1)
FIXTURE_WRIST_REGION = (0, 1, 2, 3, 4, 5, 6)
FIXTURE_EXEMPT_PAIR = (2, 3)
FIXTURE_SIZE = (256, 256)
FIXTURE_MM_PER_PX = 0.75

_CARPALS = np.array([[-25.0, 0.0], [25.0, 0.0], [6.0, -12.0], [7.2, -12.4], [-12.0, -10.0], [-3.0, -22.0], [17.0, -21.0]])
# (base x, base y, angle from +x in degrees measured upwards, offsets along the ray)
_RAYS = (
    (24.0, -24.0, 50.0, (0.0, 14.0, 26.0, 38.0, 48.0, 57.0)),
    (10.0, -32.0, 82.0, (0.0, 22.0, 44.0, 60.0, 72.0, 82.0)),
    (0.0, -33.0, 90.0, (0.0, 22.0, 46.0, 64.0, 77.0, 88.0)),
    (-11.0, -30.0, 101.0, (0.0, 19.0, 38.0, 53.0, 63.0, 71.0)),
    (-20.0, -27.0, 108.0, (0.0, 19.0, 37.0, 51.0, 61.0, 69.0)),
)
_ORIGIN_MM = np.array([96.0, 150.0])


def _hand(rng: np.random.Generator, variation: float) -> np.ndarray:
    """One template instance; ``variation`` scales every standard deviation."""
    v = variation
    pts = [_CARPALS + v * rng.normal(0, 0.2, _CARPALS.shape)]
    for bx, by, ang, offs in _RAYS:
        ang = np.deg2rad(ang + v * rng.normal(0, 0.6))
        stretch = 1 + v * rng.normal(0, 0.006)
        direction = np.array([np.cos(ang), -np.sin(ang)])
        base = np.array([bx, by]) + v * rng.normal(0, 0.2, 2)
        pts.append(base + stretch * np.outer(offs, direction))
    pts = np.concatenate(pts)
    pts = pts + v * rng.normal(0, 0.1, pts.shape)
    rot = np.deg2rad(v * rng.normal(0, 0.8))
    s = 1 + v * rng.normal(0, 0.004)
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    shift = v * rng.normal(0, 0.6, 2)
    return s * pts @ R.T + _ORIGIN_MM + shift


@dataclass(frozen=True)
class Fixture:
    annotations: Dataset  # true landmark positions in px, as rendered (corruption applied)
    heatmaps: tuple[hm.Heatmap, ...]
    corruption: str
    mm_per_px: float = FIXTURE_MM_PER_PX

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "heatmaps").mkdir(parents=True, exist_ok=True)
        write_annotations(out / "annotations.txt", self.annotations)
        for rec_id, h in zip(self.annotations.ids, self.heatmaps):
            hm.write_pgm(out / "heatmaps" / f"{rec_id}.pgm", h)


def synth_fixture(
    n: int,
    corruption: str = "none",
    seed: int = 0,
    sigma: float = 1.0,
    variation: float = 1.0,
    displacement_mm: float = 30.0,
) -> Fixture:
    """Deterministic hand-like shapes rendered to heatmaps, optionally corrupted.

    ``displaced`` moves one wrist-region landmark (outside the exempt pair)
    by ``displacement_mm``;
    ``coincident`` puts one landmark on top of another (never the exempt 2/3
    pair); ``missing`` leaves one landmark out of the heatmap only.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if corruption not in CORRUPTIONS:
        raise ValueError(f"corruption must be one of {CORRUPTIONS}")
    rng = np.random.default_rng(seed)
    w, h = FIXTURE_SIZE
    shapes, maps, ids = [], [], []
    for k in range(n):
        mm = _hand(rng, variation)
        rendered = None
        if corruption == "displaced":
            # a displaced member of the exempt pair is absorbed by its partner's
            # blob and is invisible to both constraints, so it is not planted here
            i = int(rng.choice([k for k in FIXTURE_WRIST_REGION if k not in FIXTURE_EXEMPT_PAIR]))
            phi = rng.uniform(0, 2 * np.pi)
            mm[i] += displacement_mm * np.array([np.cos(phi), np.sin(phi)])
        elif corruption == "coincident":
            while True:
                i, j = (int(v) for v in rng.choice(FIXTURE_L, size=2, replace=False))
                if {i, j} != set(FIXTURE_EXEMPT_PAIR):
                    break
            mm[j] = mm[i]
        elif corruption == "missing":
            i = int(rng.integers(FIXTURE_L))
            rendered = np.delete(mm, i, axis=0)
        # landmarks sit on pixel centres so every peak renders at exactly 1.0
        px = np.round(mm / FIXTURE_MM_PER_PX)
        if corruption == "coincident":
            px[j] = px[i]
        draw = px if rendered is None else np.round(rendered / FIXTURE_MM_PER_PX)
        maps.append(hm.render(draw, w, h, sigma))
        shapes.append(Shape(px, "px"))
        ids.append(f"{corruption}_{k:04d}")
    return Fixture(Dataset(tuple(shapes), FIXTURE_L, tuple(ids), (w, h), "px"), tuple(maps), corruption)


def training_shapes(ds: Dataset, mm_per_px: float | None, norm: NormalizationSpec) -> list[Shape]:
    """Annotation shapes converted to mm (if in px) and wrist-normalized."""
    out = []
    for s in ds.shapes:
        if s.unit == "px":
            if mm_per_px is None:
                raise ValueError("pixel annotations need a mm-per-pixel scale")
            s = pixels_to_mm(s, mm_per_px)
        out.append(normalize_to_wrist(s, norm)[0])
    return out


def fixture_gate_config(mm_per_px: float = FIXTURE_MM_PER_PX) -> GateConfig:
    return GateConfig.for_scale(mm_per_px, FIXTURE_WRIST_REGION)
