"""Expression coefficients, trajectories, and K-means reference selection.

Expression state is a flat real vector (default dimension 100). A trajectory
is one such vector per video frame. Reference frames are picked by clustering
the per-frame coefficients and taking, per cluster, the frame closest to the
centroid, so the selected set spans the expressions present in the video.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EXP_DIM = 100


class ShapeError(ValueError):
    """Raised when coefficient / centroid dimensions do not line up."""


def as_coeff_matrix(coeffs, dim: int | None = None) -> np.ndarray:
    """Coerce a list of coefficient vectors to an (n, d) float64 matrix."""
    arr = np.asarray(coeffs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"expected (n, d) coefficients, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"expected coefficient dimension {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("coefficients contain non-finite entries")
    return arr


@dataclass(frozen=True)
class ExpressionTrajectory:
    """Per-frame expression coefficients plus frame-rate metadata.

    ``mode_labels``, when present, records which synthetic expression mode
    each frame belongs to (filled in by the synthetic world's trajectory
    generator; used only by oracles and reports).
    """

    coeffs: np.ndarray  # (n_frames, d)
    frame_rate: float = 25.0
    mode_labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", as_coeff_matrix(self.coeffs))
        if len(self.coeffs) == 0:
            raise ShapeError("trajectory must contain at least one frame")

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class ClusterState:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,) int
    inertia: float

    def __post_init__(self):
        if self.inertia < 0:
            raise ValueError("inertia must be non-negative")
        if len(self.labels) and self.labels.max() >= len(self.centroids):
            raise ValueError("label indexes a missing centroid")


def assign_clusters(coeffs, centroids) -> np.ndarray:
    """Assign each coefficient vector to its nearest centroid.

    Nearest is squared Euclidean distance; ties go to the lowest centroid
    index.
    """
    x = as_coeff_matrix(coeffs)
    c = as_coeff_matrix(centroids)
    if c.shape[0] == 0:
        raise ShapeError("centroids must be non-empty")
    if x.shape[1] != c.shape[1]:
        raise ShapeError(
            f"coefficient dim {x.shape[1]} != centroid dim {c.shape[1]}"
        )
    d2 = _sq_distances(x, c)
    return np.argmin(d2, axis=1)


def _sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances (n, k); no ||a||^2-2ab expansion,
    which can go slightly negative and perturb tie-breaking."""
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def update_centroids(coeffs, labels, k: int, previous=None) -> np.ndarray:
    """Per-cluster means. An empty cluster keeps its previous centroid
    (or zero when no previous centroids are given)."""
    x = as_coeff_matrix(coeffs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ShapeError(f"labels must lie in [0, {k})")
    if previous is not None:
        centroids = as_coeff_matrix(previous, dim=x.shape[1]).copy()
        if centroids.shape[0] != k:
            raise ShapeError("previous centroids must have k rows")
    else:
        centroids = np.zeros((k, x.shape[1]))
    for j in range(k):
        members = x[labels == j]
        if len(members):
            centroids[j] = members.mean(axis=0)
    return centroids


def kmeans(
    coeffs,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> ClusterState:
    """Lloyd's algorithm with seeded initialization.

    Initial centroids are k distinct samples drawn uniformly from the seeded
    generator; iteration stops when the inertia decrease drops below ``tol``
    or after ``max_iter`` rounds. Deterministic given (coeffs, k, seed).
    """
    x = as_coeff_matrix(coeffs)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = x[rng.choice(n, size=k, replace=False)].copy()

    prev_inertia = np.inf
    labels = assign_clusters(x, centroids)
    for _ in range(max_iter):
        centroids = update_centroids(x, labels, k, previous=centroids)
        labels = assign_clusters(x, centroids)
        inertia = float(
            np.sum((x - centroids[labels]) ** 2)
        )
        if prev_inertia - inertia < tol:
            prev_inertia = inertia
            break
        prev_inertia = inertia
    return ClusterState(centroids=centroids, labels=labels, inertia=prev_inertia)


def select_references(
    trajectory: ExpressionTrajectory,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> list[int]:
    """Pick one frame per cluster: the frame whose coefficients are closest
    to that cluster's centroid (ties -> earliest frame). Returns distinct
    frame indices, sorted ascending."""
    state = kmeans(trajectory.coeffs, k, seed=seed, max_iter=max_iter, tol=tol)
    d2 = _sq_distances(trajectory.coeffs, state.centroids)
    chosen: set[int] = set()
    for j in range(k):
        order = np.argsort(d2[:, j], kind="stable")
        for idx in order:
            if int(idx) not in chosen:
                chosen.add(int(idx))
                break
    return sorted(chosen)


def coverage_stats(trajectory: ExpressionTrajectory, ref_indices) -> dict:
    """How well the selected reference frames cover the trajectory.

    Reports mean and max distance from each frame's coefficients to its
    nearest selected reference, plus the per-dimension coefficient range.
    """
    ref_indices = list(ref_indices)
    if not ref_indices:
        raise ValueError("ref_indices must be non-empty")
    n = len(trajectory)
    for i in ref_indices:
        if not 0 <= i < n:
            raise IndexError(f"reference index {i} out of range [0, {n})")
    refs = trajectory.coeffs[ref_indices]
    d = np.sqrt(_sq_distances(trajectory.coeffs, refs)).min(axis=1)
    rng = trajectory.coeffs.max(axis=0) - trajectory.coeffs.min(axis=0)
    return {
        "mean_distance": float(d.mean()),
        "max_distance": float(d.max()),
        "n_frames": n,
        "n_references": len(ref_indices),
        "coeff_range_min": float(rng.min()),
        "coeff_range_max": float(rng.max()),
    }


def format_report(stats: dict) -> str:
    """Key/value text form of a coverage report."""
    return "\n".join(f"{key}: {value}" for key, value in stats.items()) + "\n"


def save_trajectory_csv(path, trajectory: ExpressionTrajectory, header: bool = True):
    """One row per frame, one float column per coefficient dimension."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"e{i}" for i in range(trajectory.dim)])
        for row in trajectory.coeffs:
            writer.writerow([repr(float(v)) for v in row])


def load_trajectory_csv(path, frame_rate: float = 25.0) -> ExpressionTrajectory:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if rows == [] and row[0].startswith("e"):
                continue  # optional header e0..e{D-1}
            rows.append([float(v) for v in row])
    return ExpressionTrajectory(coeffs=np.asarray(rows), frame_rate=frame_rate)
