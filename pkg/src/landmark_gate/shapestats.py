"""Training-set statistics consumed by the MRF and the gate.

Per-landmark mean coordinates, a Student-t fit of every topology edge's length,
the graph topology itself and the embedded shape model, plus the versioned
text file they are stored in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, spatial, special

from .core import Dataset, NormalizationSpec, Shape
from .ssm import SsmModel, fit_ssm

STATS_MAGIC = "landmark-gate-stats v1"
DOF_BOUNDS = (1.0, 100.0)
SCALE_FLOOR = 1e-3


class StatsFormatError(ValueError):
    pass


class UnsupportedFormat(StatsFormatError):
    pass


class SchemaViolation(StatsFormatError):
    pass


class TruncatedFile(StatsFormatError):
    pass


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Topology:
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if i > j:
                raise ValueError(f"edge ({i}, {j}) must be ordered i < j")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", edges)

    def validate(self, L: int) -> None:
        """Raise unless the edges are in range and connect all ``L`` nodes."""
        if any(j >= L or i < 0 for i, j in self.edges):
            raise ValueError(f"edge index out of range for L={L}")
        parent = list(range(L))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            parent[find(i)] = find(j)
        if len({find(i) for i in range(L)}) != 1:
            raise ValueError("topology is not connected")

    @classmethod
    def from_text(cls, text: str) -> Topology:
        edges = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'i j'")
            i, j = sorted(int(p) for p in parts)
            edges.append((i, j))
        return cls(tuple(edges))

    def to_text(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.edges)


def default_topology(landmark_means) -> Topology:
    """Euclidean minimum spanning tree (Kruskal, ties broken by index pair)."""
    pts = np.asarray(landmark_means, dtype=np.float64).reshape(-1, 2)
    L = len(pts)
    if L < 2:
        raise ValueError("need at least 2 landmarks")
    cand = sorted(
        (float(np.hypot(*(pts[i] - pts[j]))), i, j) for i in range(L) for j in range(i + 1, L)
    )
    parent = list(range(L))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == L - 1:
                break
    return Topology(tuple(sorted(edges)))


def delaunay_topology(landmark_means) -> Topology:
    """Edges of the Delaunay triangulation of the mean landmarks.

    Unlike a tree, the triangles tie neighbouring chains to each other, which
    keeps a chain from folding back onto itself during labeling.
    """
    pts = np.asarray(landmark_means, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        return default_topology(pts)
    try:
        tri = spatial.Delaunay(pts)
    except spatial.QhullError:  # collinear means
        return default_topology(pts)
    edges = set()
    for simplex in tri.simplices:
        a, b, c = sorted(int(v) for v in simplex)
        edges.update({(a, b), (b, c), (a, c)})
    return Topology(tuple(sorted(edges)))


# ---------------------------------------------------------------------------
# Student-t maximum likelihood


def t_logpdf(x, dof: float, loc: float, scale: float) -> np.ndarray:
    z = (np.asarray(x, dtype=np.float64) - loc) / scale
    return (
        special.gammaln((dof + 1) / 2)
        - special.gammaln(dof / 2)
        - 0.5 * math.log(dof * math.pi)
        - math.log(scale)
        - (dof + 1) / 2 * np.log1p(z * z / dof)
    )


def t_pdf(x, dof: float, loc: float, scale: float) -> np.ndarray:
    return np.exp(t_logpdf(x, dof, loc, scale))


def _em_loc_scale(x: np.ndarray, dof: float, loc: float, scale: float) -> tuple[float, float]:
    z2 = ((x - loc) / scale) ** 2
    w = (dof + 1) / (dof + z2)
    loc = float(np.sum(w * x) / np.sum(w))
    scale = float(math.sqrt(np.mean(w * (x - loc) ** 2)))
    return loc, max(scale, SCALE_FLOOR)


def fit_t(
    data, tol: float = 1e-8, max_iter: int = 500, dof_bounds: tuple[float, float] = DOF_BOUNDS
) -> tuple[float, float, float]:
    """ML fit of a location-scale Student-t; returns ``(dof, loc, scale)``.

    Alternates one EM update of (loc, scale) at fixed dof with a bounded 1-D
    maximisation of the log-likelihood over dof (ECME). A dof that runs into the
    upper bound is reported as exactly the bound.
    """
    # sorted so the result does not depend on observation order
    x = np.sort(np.asarray(data, dtype=np.float64).reshape(-1))
    if x.size < 3:
        raise ValueError("t fit needs at least 3 observations")
    lo, hi = dof_bounds
    if np.ptp(x) == 0:
        return hi, float(x[0]), SCALE_FLOOR
    loc = float(np.median(x))
    mad = float(np.median(np.abs(x - loc))) * 1.4826
    scale = max(mad or float(x.std()), SCALE_FLOOR)

    dof = 10.0
    prev = -np.inf
    for _ in range(max_iter):
        loc, scale = _em_loc_scale(x, dof, loc, scale)
        res = optimize.minimize_scalar(
            lambda v: -np.sum(t_logpdf(x, v, loc, scale)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-6},
        )
        dof = float(res.x)
        ll = -float(res.fun)
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
    if dof > hi - 1e-3:
        dof = hi
    return dof, loc, scale


# ---------------------------------------------------------------------------
# training statistics


@dataclass(frozen=True)
class EdgeStats:
    edge: tuple[int, int]
    t_dof: float
    t_loc: float
    t_scale: float
    mean_distance: float

    def __post_init__(self):
        object.__setattr__(self, "edge", (int(self.edge[0]), int(self.edge[1])))
        if not self.t_dof > 0 or not self.t_scale > 0:
            raise ValueError(f"edge {self.edge}: t_dof and t_scale must be positive")
        if not self.mean_distance > 0:
            raise ValueError(f"edge {self.edge}: mean_distance must be positive")

    def pdf(self, d) -> np.ndarray:
        return t_pdf(d, self.t_dof, self.t_loc, self.t_scale)

    @property
    def reference_distance(self) -> float:
        """Distance the binary term's deviation penalty is measured against.

        Generated images carry no ground truth, so the training mean stands in.
        """
        return self.mean_distance


@dataclass(frozen=True, eq=False)
class TrainStats:
    L: int
    landmark_means: np.ndarray
    edge_stats: tuple[EdgeStats, ...]
    topology: Topology
    unary_sigma: float = 25.0
    ssm: SsmModel | None = None
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)

    def __post_init__(self):
        means = np.array(self.landmark_means, dtype=np.float64).reshape(-1, 2)
        means.setflags(write=False)
        object.__setattr__(self, "landmark_means", means)
        object.__setattr__(self, "edge_stats", tuple(self.edge_stats))
        if means.shape[0] != self.L:
            raise SchemaViolation(f"{means.shape[0]} landmark means for L={self.L}")
        if not self.unary_sigma > 0:
            raise SchemaViolation("unary_sigma must be positive")
        covered = [e.edge for e in self.edge_stats]
        if sorted(covered) != sorted(self.topology.edges) or len(set(covered)) != len(covered):
            raise SchemaViolation("edge_stats must cover exactly the topology edges")
        try:
            self.topology.validate(self.L)
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from None
        if self.ssm is not None and self.ssm.mean_shape.L != self.L:
            raise SchemaViolation("embedded shape model has the wrong landmark count")

    def edge(self, i: int, j: int) -> EdgeStats:
        for e in self.edge_stats:
            if e.edge == (i, j):
                return e
        raise KeyError((i, j))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainStats):
            return NotImplemented
        return (
            self.L == other.L
            and np.array_equal(self.landmark_means, other.landmark_means)
            and self.edge_stats == other.edge_stats
            and self.topology == other.topology
            and self.unary_sigma == other.unary_sigma
            and self.ssm == other.ssm
            and self.normalization == other.normalization
        )


def fit_edge(distances, edge: tuple[int, int]) -> EdgeStats:
    d = np.sort(np.asarray(distances, dtype=np.float64))
    dof, loc, scale = fit_t(d)
    return EdgeStats(edge, dof, loc, scale, float(d.mean()))


def fit_stats(
    train: Dataset | list[Shape],
    topology: Topology | None = None,
    unary_sigma: float = 25.0,
    normalization: NormalizationSpec | None = None,
    variance_fraction: float = 0.95,
) -> TrainStats:
    """Fit all statistics from wrist-normalized training shapes in mm.

    ``topology=None`` uses the minimum spanning tree over the landmark means.
    """
    shapes = list(train.shapes if isinstance(train, Dataset) else train)
    if len(shapes) < 3:
        raise ValueError("need at least 3 training shapes")
    X = np.stack([s.points for s in shapes])
    L = X.shape[1]
    means = X.mean(axis=0)
    if topology is None:
        topology = default_topology(means)
    topology.validate(L)
    edge_stats = []
    for i, j in topology.edges:
        d = np.hypot(*(X[:, i] - X[:, j]).T)
        edge_stats.append(fit_edge(d, (i, j)))
    ssm = fit_ssm(X, variance_fraction)
    return TrainStats(
        L,
        means,
        tuple(edge_stats),
        topology,
        unary_sigma,
        ssm,
        normalization or NormalizationSpec(),
    )


# ---------------------------------------------------------------------------
# stats file: magic line followed by a JSON document


def _stats_to_dict(stats: TrainStats) -> dict:
    ssm = None
    if stats.ssm is not None:
        m = stats.ssm
        ssm = {
            "mean_shape": m.mean_shape.points.tolist(),
            "eigenvectors": m.eigenvectors.T.tolist(),
            "eigenvalues": m.eigenvalues.tolist(),
            "total_variance": m.total_variance,
        }
    n = stats.normalization
    return {
        "L": stats.L,
        "unary_sigma": stats.unary_sigma,
        "landmark_means": stats.landmark_means.tolist(),
        "topology": [list(e) for e in stats.topology.edges],
        "edge_stats": [
            {
                "edge": list(e.edge),
                "t_dof": e.t_dof,
                "t_loc": e.t_loc,
                "t_scale": e.t_scale,
                "mean_distance": e.mean_distance,
            }
            for e in stats.edge_stats
        ],
        "normalization": {
            "wrist_index_a": n.wrist_index_a,
            "wrist_index_b": n.wrist_index_b,
            "target_width": n.target_width,
        },
        "ssm": ssm,
    }


def _stats_from_dict(doc: dict) -> TrainStats:
    try:
        L = int(doc["L"])
        topo = Topology(tuple(tuple(e) for e in doc["topology"]))
        edges = tuple(
            EdgeStats(tuple(e["edge"]), e["t_dof"], e["t_loc"], e["t_scale"], e["mean_distance"])
            for e in doc["edge_stats"]
        )
        ssm = None
        if doc.get("ssm") is not None:
            s = doc["ssm"]
            mean = Shape(np.array(s["mean_shape"], dtype=np.float64), "mm")
            vecs = np.array(s["eigenvectors"], dtype=np.float64).reshape(-1, 2 * L).T
            ssm = SsmModel(mean, vecs, np.array(s["eigenvalues"], dtype=np.float64), float(s["total_variance"]))
        n = doc["normalization"]
        norm = NormalizationSpec(n["wrist_index_a"], n["wrist_index_b"], n["target_width"])
        return TrainStats(
            L,
            np.array(doc["landmark_means"], dtype=np.float64),
            edges,
            topo,
            float(doc["unary_sigma"]),
            ssm,
            norm,
        )
    except SchemaViolation:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"invalid stats document: {exc}") from None


def dump_versioned(magic: str, doc: dict) -> str:
    return magic + "\n" + json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_versioned(text: str, magic: str) -> dict:
    head, _, body = text.partition("\n")
    if head.strip() != magic:
        raise UnsupportedFormat(f"expected header {magic!r}, got {head.strip()[:60]!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TruncatedFile(f"unreadable body: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("body must be a key/value document")
    return doc


def save_stats(path: str | Path, stats: TrainStats) -> None:
    Path(path).write_text(dump_versioned(STATS_MAGIC, _stats_to_dict(stats)))


def load_stats(path: str | Path) -> TrainStats:
    return _stats_from_dict(load_versioned(Path(path).read_text(), STATS_MAGIC))
