"""Statistical shape model: generalized Procrustes, PCA modes and RANSAC matching.

2-D similarity transforms are handled as complex numbers: a shape is a vector
``z`` of complex landmarks and a similarity is ``z -> a*z + c`` with
``|a|`` the scale and ``arg(a)`` the rotation. Reflections are not representable,
which is what we want for chiral anatomy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DegenerateShape, Shape


class MatchFailed(RuntimeError):
    """RANSAC found fewer inliers than required."""

    def __init__(self, message: str, best_inliers: int = 0):
        super().__init__(message)
        self.best_inliers = best_inliers


def _to_complex(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points[..., 0] + 1j * points[..., 1]


def _to_real(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        # wrap into (-pi, pi]
        rot = math.atan2(math.sin(self.rotation), math.cos(self.rotation))
        if rot == -math.pi:
            rot = math.pi
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))

    @classmethod
    def from_complex(cls, a: complex, c: complex) -> SimilarityTransform:
        return cls(abs(a), math.atan2(a.imag, a.real), (c.real, c.imag))

    @property
    def a(self) -> complex:
        return self.scale * complex(math.cos(self.rotation), math.sin(self.rotation))

    @property
    def c(self) -> complex:
        return complex(*self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return _to_real(self.a * _to_complex(points) + self.c)

    def inverse(self) -> SimilarityTransform:
        a_inv = 1 / self.a
        return SimilarityTransform.from_complex(a_inv, -a_inv * self.c)


def estimate_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity mapping ``src`` onto ``dst`` (exact for two pairs)."""
    z, w = _to_complex(src), _to_complex(dst)
    if z.shape != w.shape or z.ndim != 1 or z.size < 2:
        raise ValueError("need matching lists of at least 2 points")
    zm, wm = z.mean(), w.mean()
    zc, wc = z - zm, w - wm
    denom = np.vdot(zc, zc).real
    if denom == 0.0:
        raise DegenerateShape("source points coincide")
    a = np.vdot(zc, wc) / denom
    if a == 0:
        raise DegenerateShape("target points coincide")
    return SimilarityTransform.from_complex(complex(a), complex(wm - a * zm))


# ---------------------------------------------------------------------------
# generalized Procrustes


def _center_unit(z: np.ndarray) -> np.ndarray:
    zc = z - z.mean()
    size = np.linalg.norm(zc)
    if size == 0.0:
        raise DegenerateShape("all landmarks coincide")
    return zc / size


def _canonical_rotation(mean: np.ndarray) -> complex:
    """Unit complex that rotates the first off-centre landmark of ``mean`` onto +x."""
    for v in mean:
        if abs(v) > 1e-12:
            return abs(v) / v
    return 1.0 + 0j


def procrustes_align(
    shapes: list[Shape] | np.ndarray, tol: float = 1e-10, max_iter: int = 100
) -> tuple[np.ndarray, Shape]:
    """Align shapes to their common mean with similarity transforms.

    Returns the ``(n, L, 2)`` aligned shapes and the mean shape, which is
    centred, has unit centroid size, and is put in a canonical orientation so
    the result does not depend on the pose of any input shape.
    """
    arr = np.stack([s.points for s in shapes]) if not isinstance(shapes, np.ndarray) else shapes
    if arr.ndim != 3 or arr.shape[0] < 2:
        raise ValueError("need at least 2 shapes of equal landmark count")
    Z = np.stack([_center_unit(z) for z in _to_complex(arr)])

    mean = Z[0]
    for _ in range(max_iter):
        # optimal a per shape: argmin |a z - mean|^2 = <z, mean> / <z, z>  (z unit size)
        a = np.einsum("ij,j->i", Z.conj(), mean)
        aligned = a[:, None] * Z
        new_mean = _center_unit(aligned.mean(axis=0))
        # keep the frame from drifting: rotate new mean onto the old one
        r = np.vdot(new_mean, mean)
        new_mean = new_mean * (r / abs(r)) if abs(r) > 0 else new_mean
        delta = np.linalg.norm(new_mean - mean)
        mean = new_mean
        if delta < tol:
            break

    rot = _canonical_rotation(mean)
    mean = mean * rot
    a = np.einsum("ij,j->i", Z.conj(), mean)
    aligned = a[:, None] * Z
    return _to_real(aligned), Shape(_to_real(mean), "mm")


# ---------------------------------------------------------------------------
# PCA shape space  x = x_mean + P b


@dataclass(frozen=True, eq=False)
class SsmModel:
    mean_shape: Shape
    eigenvectors: np.ndarray  # (2L, t), orthonormal columns
    eigenvalues: np.ndarray  # (t,), descending
    total_variance: float

    def __post_init__(self):
        P = np.array(self.eigenvectors, dtype=np.float64).reshape(2 * self.mean_shape.L, -1)
        lam = np.array(self.eigenvalues, dtype=np.float64).reshape(-1)
        if P.shape[1] != lam.size:
            raise ValueError("eigenvector/eigenvalue count mismatch")
        if np.any(lam < 0) or np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be non-negative and descending")
        P.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvectors", P)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def t(self) -> int:
        return self.eigenvalues.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SsmModel):
            return NotImplemented
        return (
            self.mean_shape == other.mean_shape
            and np.array_equal(self.eigenvectors, other.eigenvectors)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and self.total_variance == other.total_variance
        )


def fit_pca(aligned: np.ndarray, mean_shape: Shape, variance_fraction: float = 0.95) -> SsmModel:
    aligned = np.asarray(aligned, dtype=np.float64)
    n = aligned.shape[0]
    if n <= 1:
        raise ValueError("PCA needs at least 2 shapes")
    if not 0 < variance_fraction <= 1:
        raise ValueError("variance_fraction must be in (0, 1]")
    X = aligned.reshape(n, -1)
    cov = np.cov(X, rowvar=False, ddof=1)
    lam, vecs = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vecs = vecs[:, order]
    # sign convention: largest-magnitude component positive
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    vecs = vecs * np.where(flip == 0, 1.0, flip)

    total = float(lam.sum())
    # eigenvalues below rounding level are numerical zeros
    rank_floor = max(total, 1e-300) * 1e-12
    if total <= 1e-20 * max(float(np.sum(mean_shape.points**2)), 1e-300):
        t = 0
    else:
        cum = np.cumsum(lam)
        t = int(np.searchsorted(cum, variance_fraction * total - rank_floor) + 1)
        t = min(t, int(np.sum(lam > rank_floor)))
    return SsmModel(mean_shape, vecs[:, :t], lam[:t], total)


def project(shape: Shape | np.ndarray, model: SsmModel) -> np.ndarray:
    x = shape.vector() if isinstance(shape, Shape) else np.asarray(shape, dtype=np.float64).reshape(-1)
    if x.size != model.eigenvectors.shape[0]:
        raise ValueError("shape dimension does not match model")
    return model.eigenvectors.T @ (x - model.mean_shape.vector())


def reconstruct(b: np.ndarray, model: SsmModel) -> Shape:
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != model.t:
        raise ValueError(f"expected {model.t} shape parameters, got {b.size}")
    x = model.mean_shape.vector() + model.eigenvectors @ b
    return Shape(x.reshape(-1, 2), model.mean_shape.unit)


def fit_ssm(shapes: list[Shape] | np.ndarray, variance_fraction: float = 0.95) -> SsmModel:
    aligned, mean = procrustes_align(shapes)
    return fit_pca(aligned, mean, variance_fraction)


# ---------------------------------------------------------------------------
# RANSAC


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_threshold: float = 10.0
    min_inliers: int | None = None  # None -> ceil(L / 2)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")

    def required_inliers(self, L: int) -> int:
        return self.min_inliers if self.min_inliers is not None else math.ceil(L / 2)


@dataclass(frozen=True, eq=False)
class MatchResult:
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    transformed_mean: Shape
    residuals: np.ndarray

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def ransac_match(mean_shape: Shape, labeled: Shape, params: RansacParams = RansacParams()) -> MatchResult:
    """Robustly pose ``mean_shape`` onto ``labeled`` (correspondence by index)."""
    L = mean_shape.L
    if labeled.L != L:
        raise ValueError("mean shape and labeled shape differ in landmark count")
    z = _to_complex(mean_shape.points)
    w = _to_complex(labeled.points)
    thr = params.inlier_threshold

    rng = np.random.default_rng(params.seed)
    first = rng.integers(0, L, size=params.iterations)
    second = (first + rng.integers(1, L, size=params.iterations)) % L  # distinct from first

    dz = z[second] - z[first]
    usable = np.abs(dz) > 0
    a = np.where(usable, (w[second] - w[first]) / np.where(usable, dz, 1), 0)
    c = w[first] - a * z[first]
    resid = np.abs(a[:, None] * z[None, :] + c[:, None] - w[None, :])
    inl = (resid <= thr) & usable[:, None]
    counts = inl.sum(axis=1)
    mean_res = np.where(counts > 0, (resid * inl).sum(axis=1) / np.maximum(counts, 1), np.inf)
    # most inliers, then smallest mean inlier residual, then first iteration
    best = int(np.lexsort((np.arange(params.iterations), mean_res, -counts))[0])
    need = params.required_inliers(L)
    if counts[best] < max(need, 2):
        raise MatchFailed(f"best hypothesis has {counts[best]} inliers, need {need}", int(counts[best]))

    mask = inl[best]
    try:
        transform = estimate_similarity(mean_shape.points[mask], labeled.points[mask])
    except DegenerateShape:
        raise MatchFailed("inlier set is degenerate", int(counts[best])) from None
    moved = transform.apply(mean_shape.points)
    residuals = np.hypot(*(moved - labeled.points).T)
    mask = residuals <= thr
    mask.setflags(write=False)
    residuals.setflags(write=False)
    return MatchResult(transform, mask, Shape(moved, "mm"), residuals)
