"""Landmark labeling as MAP inference on a pairwise factor graph.

The objective is the plain sum of unary and pairwise scores. Max-product
belief propagation over potentials ``exp(score)`` is max-sum over the scores
themselves, so messages are computed on the raw scores: no logarithm of a
(possibly zero) score is ever taken.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .shapestats import EdgeStats, Topology, TrainStats

# stands in for -inf on padded candidate slots; finite so sums never turn into nan
_PAD = -1e100


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LbpParams:
    max_iterations: int = 200
    damping: float = 0.5
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must be in [0, 1)")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class Labeling:
    assignment: tuple[int, ...]
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class FactorGraph:
    unary: tuple[np.ndarray, ...]
    pairwise: dict[tuple[int, int], np.ndarray]
    topology: Topology
    positions: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        unary = tuple(np.asarray(u, dtype=np.float64).reshape(-1) for u in self.unary)
        if not unary:
            raise ValueError("graph has no nodes")
        for n, u in enumerate(unary):
            if u.size == 0:
                raise ValueError(f"node {n} has no candidates")
            if not np.all(np.isfinite(u)):
                raise ValueError(f"node {n} has non-finite unary scores")
        pairwise = {}
        if sorted(self.pairwise) != sorted(self.topology.edges):
            raise ValueError("pairwise tables must match the topology edges")
        for (i, j), B in self.pairwise.items():
            B = np.asarray(B, dtype=np.float64)
            if B.shape != (unary[i].size, unary[j].size):
                raise ValueError(f"edge ({i}, {j}) table has shape {B.shape}")
            if not np.all(np.isfinite(B)):
                raise ValueError(f"edge ({i}, {j}) has non-finite scores")
            pairwise[(i, j)] = B
        if self.topology.edges:
            self.topology.validate(len(unary))
        elif len(unary) > 1:
            raise ValueError("topology is not connected")
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def L(self) -> int:
        return len(self.unary)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(u.size for u in self.unary)


def unary_scores(positions: np.ndarray, peaks: np.ndarray, node: int, stats: TrainStats) -> np.ndarray:
    """Peak value times an unnormalized Gaussian around the landmark's training mean."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    d2 = np.sum((positions - stats.landmark_means[node]) ** 2, axis=1)
    return np.asarray(peaks, dtype=np.float64) * np.exp(-d2 / (2 * stats.unary_sigma**2))


def binary_scores(pos_i: np.ndarray, pos_j: np.ndarray, edge: EdgeStats) -> np.ndarray:
    """``t_pdf(d) + 2 exp(-|d_ref - d|)`` for every candidate pair.

    The two terms live on different natural scales (a density vs. a bounded
    similarity); they are added as-is.
    """
    pos_i = np.asarray(pos_i, dtype=np.float64).reshape(-1, 2)
    pos_j = np.asarray(pos_j, dtype=np.float64).reshape(-1, 2)
    diff = pos_i[:, None, :] - pos_j[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return edge.pdf(d) + 2.0 * np.exp(-np.abs(edge.reference_distance - d))


def build_graph(positions: np.ndarray, peaks: np.ndarray, stats: TrainStats) -> FactorGraph:
    """Graph with every landmark node drawing from the same candidate pool (mm)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if positions.shape[0] == 0:
        raise ValueError("empty candidate pool")
    unary = tuple(unary_scores(positions, peaks, n, stats) for n in range(stats.L))
    pairwise = {}
    for e in stats.edge_stats:
        pairwise[e.edge] = binary_scores(positions, positions, e)
    return FactorGraph(unary, pairwise, stats.topology, (positions,) * stats.L)


def energy(graph: FactorGraph, labeling: Labeling | tuple[int, ...]) -> float:
    a = labeling.assignment if isinstance(labeling, Labeling) else tuple(labeling)
    if len(a) != graph.L:
        raise IndexError("labeling length does not match node count")
    for n, k in enumerate(a):
        if not 0 <= k < graph.unary[n].size:
            raise IndexError(f"node {n}: candidate {k} out of range")
    total = sum(float(graph.unary[n][k]) for n, k in enumerate(a))
    total += sum(float(B[a[i], a[j]]) for (i, j), B in graph.pairwise.items())
    return total


def brute_force_map(graph: FactorGraph, guard: int = 10**7) -> Labeling:
    """Exact MAP by enumeration; ties go to the lexicographically smallest labeling."""
    sizes = graph.sizes
    space = 1
    for k in sizes:
        space *= k
    if space > guard:
        raise SearchSpaceTooLarge(f"{space} labelings exceed the guard of {guard}")
    L = graph.L
    total = np.zeros(sizes)
    for n, u in enumerate(graph.unary):
        shape = [1] * L
        shape[n] = sizes[n]
        total = total + u.reshape(shape)
    for (i, j), B in graph.pairwise.items():
        shape = [1] * L
        shape[i], shape[j] = sizes[i], sizes[j]
        total = total + B.reshape(shape)
    best = int(np.argmax(total))  # first maximum in C order
    return Labeling(tuple(int(k) for k in np.unravel_index(best, sizes)), True, 0)


def enumerate_energies(graph: FactorGraph):
    """Yield ``(assignment, energy)`` for every labeling, lexicographic order."""
    for a in itertools.product(*(range(k) for k in graph.sizes)):
        yield a, energy(graph, a)


def lbp_map(graph: FactorGraph, params: LbpParams = LbpParams()) -> Labeling:
    """Max-sum loopy belief propagation, synchronous schedule with damping."""
    L, sizes = graph.L, graph.sizes
    K = max(sizes)
    U = np.full((L, K), _PAD)
    for n, u in enumerate(graph.unary):
        U[n, : u.size] = u
    if not graph.pairwise:
        return Labeling(tuple(int(np.argmax(u)) for u in graph.unary), True, 1)

    # directed edges: d and d^1 are the two directions of one undirected edge
    src, dst, tables = [], [], []
    for (i, j), B in graph.pairwise.items():
        for s, r, T in ((i, j, B), (j, i, B.T)):
            P = np.full((K, K), _PAD)
            P[: T.shape[0], : T.shape[1]] = T
            src.append(s)
            dst.append(r)
            tables.append(P)
    src = np.array(src)
    dst = np.array(dst)
    tables = np.stack(tables)  # (D, K_src, K_dst)
    D = len(src)
    rev = np.arange(D) ^ 1
    valid = np.zeros((D, K), dtype=bool)
    for d in range(D):
        valid[d, : sizes[dst[d]]] = True

    M = np.where(valid, 0.0, _PAD)
    lam = params.damping
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        incoming = np.zeros((L, K))
        np.add.at(incoming, dst, M)
        H = U[src] + incoming[src] - M[rev]
        new = np.max(H[:, :, None] + tables, axis=1)
        new = new - np.max(np.where(valid, new, -np.inf), axis=1, keepdims=True)
        new = lam * M + (1 - lam) * new
        new = np.where(valid, new, _PAD)
        delta = float(np.max(np.abs(np.where(valid, new - M, 0.0))))
        M = new
        if delta < params.tolerance:
            converged = True
            break

    incoming = np.zeros((L, K))
    np.add.at(incoming, dst, M)
    beliefs = U + incoming
    assignment = tuple(int(np.argmax(beliefs[n, : sizes[n]])) for n in range(L))
    return Labeling(assignment, converged, it)
