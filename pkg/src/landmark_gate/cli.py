"""Command line interface: ``landmark-gate <subcommand> ...``.

Exit codes: 0 success, 1 fatal input error, 2 finished with per-image failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffusion as dm
from . import heatmap as hm
from .core import AnnotationError, NormalizationSpec, Shape, format_annotations, parse_annotations, pixels_to_mm
from .gate import DEFAULT_RADII, GateConfig, evaluate
from .mrf import LbpParams
from .pipeline import (
    CORRUPTIONS,
    PipelineConfig,
    gate_directory,
    label_heatmap,
    synth_fixture,
    training_shapes,
)
from .shapestats import (
    StatsFormatError,
    Topology,
    default_topology,
    delaunay_topology,
    dump_versioned,
    fit_stats,
    load_stats,
    load_versioned,
    save_stats,
)
from .ssm import RansacParams

CONFIG_MAGIC = "landmark-gate-config v1"

# PipelineConfig field -> argparse dest
_CONFIG_KEYS = {
    "stats_path": "stats",
    "heatmap_dir": "heatmaps",
    "mm_per_px": "scale",
    "seed": "seed",
    "jobs": "jobs",
    "window": "window",
    "min_value": "min_value",
}
_CONFIG_SECTIONS = {
    "gate": {
        "wrist_region_indices": "wrist_region",
        "coincidence_tolerance": "coincidence_tol",
        "coincidence_exempt_pair": "exempt_pair",
        "wrist_distance_limit": "wrist_limit",
    },
    "lbp": {"max_iterations": "max_iter", "damping": "damping", "tolerance": "tol"},
    "ransac": {"iterations": "ransac_iters", "inlier_threshold": "ransac_thresh_mm", "min_inliers": "min_inliers"},
}


class InputError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def config_defaults(path: str | Path) -> dict:
    """Flatten a pipeline config file into argparse defaults."""
    doc = load_versioned(Path(path).read_text(), CONFIG_MAGIC)
    out = {}
    for key, dest in _CONFIG_KEYS.items():
        if key in doc:
            out[dest] = doc[key]
    for section, keys in _CONFIG_SECTIONS.items():
        for key, dest in keys.items():
            if key in doc.get(section, {}):
                value = doc[section][key]
                out[dest] = tuple(value) if isinstance(value, list) else value
    return out


def config_document(cfg: PipelineConfig) -> str:
    g, l, r = cfg.gate, cfg.lbp, cfg.ransac
    doc = {
        "stats_path": str(cfg.stats_path),
        "heatmap_dir": str(cfg.heatmap_dir),
        "mm_per_px": cfg.mm_per_px,
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "window": cfg.window,
        "min_value": cfg.min_value,
        "gate": {
            "wrist_region_indices": sorted(g.wrist_region_indices),
            "coincidence_tolerance": g.coincidence_tolerance,
            "coincidence_exempt_pair": list(g.coincidence_exempt_pair),
            "wrist_distance_limit": g.wrist_distance_limit,
        },
        "lbp": {"max_iterations": l.max_iterations, "damping": l.damping, "tolerance": l.tolerance},
        "ransac": {"iterations": r.iterations, "inlier_threshold": r.inlier_threshold, "min_inliers": r.min_inliers},
    }
    return dump_versioned(CONFIG_MAGIC, doc)


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    ds = parse_annotations(args.annotations)
    norm = NormalizationSpec(*args.wrist, target_width=args.target_width)
    shapes = training_shapes(ds, args.scale, norm)
    means = np.mean([s.points for s in shapes], axis=0)
    if args.topology == "auto":
        topo = default_topology(means)
    elif args.topology == "delaunay":
        topo = delaunay_topology(means)
    else:
        topo = Topology.from_text(Path(args.topology).read_text())
    stats = fit_stats(shapes, topo, args.unary_sigma, norm, args.variance_fraction)
    save_stats(args.out, stats)
    return 0


def cmd_render(args) -> int:
    ds = parse_annotations(args.annotations)
    if ds.unit != "px":
        raise InputError("render needs annotations in pixel units")
    width, height = args.width, args.height
    if width is None or height is None:
        if ds.image_size is None:
            raise InputError("no --width/--height given and no size= in the annotation header")
        width, height = ds.image_size
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec_id, shape in zip(ds.ids, ds.shapes):
        hm.write_pgm(out / f"{rec_id}.pgm", hm.render(shape, width, height, args.sigma))
    return 0


def _lbp(args) -> LbpParams:
    return LbpParams(args.max_iter, args.damping, args.tol)


def cmd_match(args) -> int:
    stats = load_stats(args.stats)
    h = hm.read_pgm(args.heatmap)
    labeling, labeled, energy = label_heatmap(h, stats, args.scale, _lbp(args), args.window, args.min_value)
    rec_id = Path(args.heatmap).stem
    _write_text(args.out, format_annotations([labeled], [rec_id]))
    diag = {
        "id": rec_id,
        "energy": energy,
        "converged": labeling.converged,
        "iterations": labeling.iterations,
        "assignment": list(labeling.assignment),
    }
    line = _dumps(diag) + "\n"
    if args.diag:
        Path(args.diag).write_text(line)
    else:
        sys.stderr.write(line)
    return 0


def cmd_gate(args) -> int:
    if args.scale is None or args.wrist_region is None or args.stats is None or args.heatmaps is None:
        raise InputError("gate needs --stats, --heatmaps, --scale and --wrist-region (flags or --config)")
    gate = GateConfig(
        frozenset(args.wrist_region),
        args.coincidence_tol if args.coincidence_tol is not None else args.scale,
        tuple(args.exempt_pair),
        args.wrist_limit,
    )
    cfg = PipelineConfig(
        Path(args.stats),
        Path(args.heatmaps),
        args.scale,
        gate,
        _lbp(args),
        RansacParams(args.ransac_iters, args.ransac_thresh_mm, args.min_inliers, args.seed),
        args.seed,
        args.window,
        args.min_value,
        args.jobs,
    )
    verdicts, summary = gate_directory(cfg)
    lines = [_dumps(v.to_dict(with_timings=args.timings)) for v in verdicts]
    lines.append(_dumps({"summary": summary}))
    _write_text(args.out, "\n".join(lines) + "\n")
    if not verdicts:
        sys.stderr.write(f"no heatmaps in {args.heatmaps}\n")
        return 1
    return 2 if summary["errors"] else 0


def _to_mm(shapes, scale):
    out = []
    for s in shapes:
        if s.unit == "px":
            if scale is None:
                raise InputError("pixel annotations need --scale")
            s = pixels_to_mm(s, scale)
        out.append(s)
    return out


def cmd_eval(args) -> int:
    pred = parse_annotations(args.pred)
    gt = parse_annotations(args.gt, pred.L)
    report = evaluate(_to_mm(pred.shapes, args.scale), _to_mm(gt.shapes, args.scale), args.radii)
    _write_text(args.out, report.to_text())
    return 0


def _schedule(args) -> dm.Schedule:
    return dm.make_schedule(args.timesteps, args.beta_start, args.beta_end)


def cmd_sample(args) -> int:
    sched = _schedule(args)
    mu, cov = dm.read_gaussian(Path(args.oracle_gaussian).read_text())
    if args.dim is not None and args.dim != mu.size:
        raise InputError(f"--dim {args.dim} does not match the oracle dimension {mu.size}")
    pred = dm.analytic_gaussian_predictor(mu, cov, sched)
    rng = np.random.default_rng(args.seed)
    xs = dm.sample(pred, mu.size, sched, rng, count=args.count, variance=args.variance)
    _write_text(args.out, "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in xs))
    return 0


def cmd_diffuse(args) -> int:
    sched = _schedule(args)
    h = hm.read_pgm(args.input)
    rng = np.random.default_rng(args.seed)
    x0 = hm.to_model_range(h)
    xt = dm.forward_sample(x0, args.t, rng.standard_normal(x0.shape), sched)
    hm.write_pgm(args.output, hm.Heatmap(hm.from_model_range(np.clip(xt, -1.0, 1.0))))
    return 0


def cmd_fixture(args) -> int:
    fx = synth_fixture(args.n, args.corruption, args.seed, args.sigma, args.variation, args.displacement_mm)
    fx.write(args.out_dir)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_lbp(p):
    p.add_argument("--max-iter", dest="max_iter", type=int, default=LbpParams.max_iterations)
    p.add_argument("--damping", type=float, default=LbpParams.damping)
    p.add_argument("--tol", type=float, default=LbpParams.tolerance)


def _add_candidates(p):
    p.add_argument("--window", type=int, default=3, help="maximum-filter radius in px")
    p.add_argument("--min-value", dest="min_value", type=float, default=0.05)


def _add_schedule(p):
    p.add_argument("--timesteps", type=int, default=dm.DEFAULT_T)
    p.add_argument("--beta-start", dest="beta_start", type=float, default=dm.DEFAULT_BETA_START)
    p.add_argument("--beta-end", dest="beta_end", type=float, default=dm.DEFAULT_BETA_END)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config file")

    parser = argparse.ArgumentParser(prog="landmark-gate", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--config", default=None, help="pipeline config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit training statistics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--topology", default="auto", help="edge-list file, 'auto' (EMST) or 'delaunay'")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=None, help="mm per px for pixel annotations")
    p.add_argument("--wrist", type=_int_list, default=(0, 1), help="wrist landmark pair, e.g. 0,1")
    p.add_argument("--target-width", dest="target_width", type=float, default=50.0)
    p.add_argument("--unary-sigma", dest="unary_sigma", type=float, default=25.0)
    p.add_argument("--variance-fraction", dest="variance_fraction", type=float, default=0.95)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", parents=[common], help="render heatmaps from pixel annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("match", parents=[common], help="label one heatmap with the MRF")
    p.add_argument("--stats", required=True)
    p.add_argument("--heatmap", required=True)
    p.add_argument("--scale", type=float, required=True, help="mm per px")
    p.add_argument("--out", default="-", help="labeled shape (annotation format)")
    p.add_argument("--diag", default=None, help="JSON-lines diagnostics (default: stderr)")
    _add_lbp(p)
    _add_candidates(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("gate", parents=[common], help="accept/reject a directory of heatmaps")
    p.add_argument("--stats", default=None)
    p.add_argument("--heatmaps", default=None)
    p.add_argument("--scale", type=float, default=None, help="mm per px")
    p.add_argument("--wrist-region", dest="wrist_region", type=_int_list, default=None)
    p.add_argument("--out", default="-")
    p.add_argument("--coincidence-tol", dest="coincidence_tol", type=float, default=None, help="mm; default one pixel")
    p.add_argument("--exempt-pair", dest="exempt_pair", type=_int_list, default=(2, 3))
    p.add_argument("--wrist-limit", dest="wrist_limit", type=float, default=16.0)
    p.add_argument("--ransac-iters", dest="ransac_iters", type=int, default=RansacParams.iterations)
    p.add_argument("--ransac-thresh-mm", dest="ransac_thresh_mm", type=float, default=RansacParams.inlier_threshold)
    p.add_argument("--min-inliers", dest="min_inliers", type=int, default=None)
    p.add_argument("--timings", action="store_true", help="include per-stage timings (non-deterministic)")
    _add_lbp(p)
    _add_candidates(p)
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("eval", parents=[common], help="point-to-point error and outlier counts")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--radii", type=_float_list, default=DEFAULT_RADII)
    p.add_argument("--scale", type=float, default=None, help="mm per px for pixel annotations")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", parents=[common], help="reverse diffusion with the analytic Gaussian oracle")
    _add_schedule(p)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--oracle-gaussian", dest="oracle_gaussian", required=True, help="file: mean line, then covariance rows")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--variance", choices=("beta", "beta_tilde"), default="beta")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diffuse", parents=[common], help="forward-noise a heatmap to timestep t")
    _add_schedule(p)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("fixture", parents=[common], help="write a synthetic annotation + heatmap fixture")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--corruption", choices=CORRUPTIONS, default="none")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--variation", type=float, default=1.0)
    p.add_argument("--displacement-mm", dest="displacement_mm", type=float, default=30.0)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            defaults = config_defaults(args.config)
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            subparser.set_defaults(**defaults)
            parser.set_defaults(**{k: v for k, v in defaults.items() if k in ("seed", "jobs")})
            args = parser.parse_args(argv)
        return args.func(args)
    except (InputError, AnnotationError, StatsFormatError, hm.HeatmapFormatError, OSError, ValueError) as exc:
        sys.stderr.write(f"landmark-gate {args.command}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
