"""PCA in maxout feature space and pairwise-distance curves."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

from .core import ProjectionBank, featurize_batch
from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(Z, k: int) -> PcaModel:
    """Top-``k`` principal directions of the sample covariance of ``Z``.

    With at least as many rows as columns this is a dense symmetric
    eigendecomposition of the ``m x m`` covariance.  Wide inputs (fewer rows
    than features, as with large feature banks) go through a thin SVD of
    the centered data instead, which yields the same directions without
    forming the covariance.  Each component is signed so that its
    largest-magnitude entry is positive.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise InvalidArgumentError(f"need at least two rows, got shape {Z.shape}")
    n, m = Z.shape
    if not 1 <= k <= min(n, m):
        raise InvalidArgumentError(f"k must lie in [1, {min(n, m)}], got {k}")
    mean = Z.mean(axis=0)
    C = Z - mean
    if n >= m:
        vals, vecs = np.linalg.eigh(C.T @ C / (n - 1))
        order = np.argsort(vals)[::-1][:k]
        vals = np.maximum(vals[order], 0.0)
        comps = vecs[:, order].T
    else:
        _, s, vt = np.linalg.svd(C, full_matrices=False)
        vals = s[:k] ** 2 / (n - 1)
        comps = vt[:k].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaModel(mean, comps, vals)


def transform(model: PcaModel, phi) -> np.ndarray:
    """Coordinates ``components @ (phi - mean)``; accepts a vector or a matrix of rows."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != model.mean.shape[0] or phi.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"expected length-{model.mean.shape[0]} features, got shape {phi.shape}")
    return (phi - model.mean) @ model.components.T


def _check_sphere(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgumentError(f"X must be 2-D, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InvalidArgumentError("distance curves require unit-norm rows")
    return X


def all_pairs(n: int) -> np.ndarray:
    return np.array(list(combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)


def distance_curve(bank: ProjectionBank, X, pairs=None) -> np.ndarray:
    """Rows ``(||x_i - x_j||, ||Phi(x_i) - Phi(x_j)||)`` for each index pair."""
    X = _check_sphere(X)
    pairs = all_pairs(X.shape[0]) if pairs is None else np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= X.shape[0]):
        raise InvalidArgumentError("pair index out of range")
    Z = featurize_batch(bank, X)
    i, j = pairs[:, 0], pairs[:, 1]
    orig = np.linalg.norm(X[i] - X[j], axis=1)
    emb = np.linalg.norm(Z[i] - Z[j], axis=1)
    return np.column_stack([orig, emb])


def binned_curve(curve, n_bins: int = 20, max_distance: float = 2.0):
    """Mean embedded distance per original-distance bin: ``(centers, means)``.

    Empty bins are dropped.
    """
    curve = np.asarray(curve)
    edges = np.linspace(0.0, max_distance, n_bins + 1)
    which = np.clip(np.digitize(curve[:, 0], edges) - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=curve[:, 1], minlength=n_bins)
    keep = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers[keep], sums[keep] / counts[keep]


def saturation_point(curve, fraction: float = 0.9, n_bins: int = 20) -> float:
    """Original distance at which the binned curve first reaches ``fraction`` of its plateau.

    The plateau is the mean embedded distance in the last occupied bin, i.e.
    for nearly antipodal pairs.
    """
    centers, means = binned_curve(curve, n_bins)
    plateau = means[-1]
    hit = np.nonzero(means >= fraction * plateau)[0]
    return float(centers[hit[0]])


def curve_monotonicity(curve, n_bins: int = 20) -> float:
    """Spearman correlation between bin centers and bin mean embedded distances."""
    centers, means = binned_curve(curve, n_bins)
    return float(stats.spearmanr(centers, means)[0])


def ordering_score(coords, order) -> float:
    """How well points along a 2-D curve follow ``order``.

    Points are parametrized by their polar angle about the centroid, cut at
    the widest angular gap, and compared to ``order`` by absolute Spearman
    correlation.
    """
    coords = np.asarray(coords, dtype=np.float64)
    rel = coords[:, :2] - coords[:, :2].mean(axis=0)
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    srt = np.sort(ang)
    gaps = np.diff(np.concatenate([srt, [srt[0] + 2 * np.pi]]))
    cut = srt[(np.argmax(gaps) + 1) % len(srt)]
    param = np.mod(ang - cut, 2 * np.pi)
    return float(abs(stats.spearmanr(param, order)[0]))
