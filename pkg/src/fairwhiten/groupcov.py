"""Per-group feature statistics and blended covariance estimation.

The covariance of a labeled dataset is decomposed into per-(target, bias)
group second moments. Recombining them with the empirical group
probabilities gives the covariance of the data as it is; recombining with
uniform weights gives the covariance the data would have if the two label
attributes were independent. A blend weight in [0, 1] interpolates between
the two, and the matching blended mean keeps the centering consistent with
the reweighted distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyGroupCell,
    LambdaOutOfRange,
    ValidationError,
)


class Centering(str, Enum):
    """Reference point used when forming per-group second moments.

    GLOBAL subtracts the dataset mean (the second moments then include
    between-group structure, and the blend at weight 0 reproduces the plain
    covariance matrix of the data). PER_GROUP subtracts each group's own
    mean, measuring within-group spread only.
    """

    GLOBAL = "global"
    PER_GROUP = "per_group"


class EmptyCellPolicy(str, Enum):
    """What to do when a (y, b) cell has no samples and uniform weights need it."""

    ERROR = "error"
    RENORMALIZE = "renormalize_over_occupied"


@dataclass(frozen=True)
class GroupedDataset:
    """Feature matrix (columns are samples) with target and bias labels.

    ``target_dim``, when set, marks the row split: rows [0, target_dim) are
    the target block and the remainder is the bias block.
    """

    features: np.ndarray
    y: np.ndarray
    b: np.ndarray
    n_classes: int
    n_bias: int
    target_dim: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        if feats.ndim != 2:
            raise DimensionMismatch(f"features must be 2-D, got shape {feats.shape}")
        n = feats.shape[1]
        if n == 0:
            raise EmptyDataset("dataset has no samples")
        if y.shape != (n,) or b.shape != (n,):
            raise DimensionMismatch(
                f"labels must have length {n}, got y {y.shape} and b {b.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        if self.n_classes < 1 or self.n_bias < 1:
            raise ValidationError("n_classes and n_bias must be >= 1")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValidationError(
                f"target labels must lie in [0, {self.n_classes}), got range "
                f"[{y.min()}, {y.max()}]"
            )
        if b.min() < 0 or b.max() >= self.n_bias:
            raise ValidationError(
                f"bias labels must lie in [0, {self.n_bias}), got range "
                f"[{b.min()}, {b.max()}]"
            )
        if self.target_dim is not None and not (0 < self.target_dim < feats.shape[0]):
            raise ValidationError(
                f"target_dim must split the {feats.shape[0]} feature rows, got {self.target_dim}"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "b", b)

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    def target_block(self) -> np.ndarray:
        if self.target_dim is None:
            raise ValidationError("dataset has no target/bias block split recorded")
        return self.features[: self.target_dim]

    def bias_block(self) -> np.ndarray:
        if self.target_dim is None:
            raise ValidationError("dataset has no target/bias block split recorded")
        return self.features[self.target_dim :]


def make_dataset(z_t, z_b, y, b, n_classes: int | None = None, n_bias: int | None = None) -> GroupedDataset:
    """Stack a target block over a bias block into a GroupedDataset.

    Label cardinalities default to max(label) + 1.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_t.ndim != 2 or z_b.ndim != 2 or z_t.shape[1] != z_b.shape[1]:
        raise DimensionMismatch(
            f"blocks must be 2-D with a shared sample count, got {z_t.shape} and {z_b.shape}"
        )
    y = np.asarray(y, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if y.size == 0:
        raise EmptyDataset("dataset has no samples")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if n_bias is None:
        n_bias = int(b.max()) + 1
    return GroupedDataset(
        features=np.vstack([z_t, z_b]),
        y=y,
        b=b,
        n_classes=n_classes,
        n_bias=n_bias,
        target_dim=z_t.shape[0],
    )


@dataclass(frozen=True)
class GroupStats:
    """Per-(y, b) counts, means, and centered second moments.

    ``second_moments[y, b]`` is the average outer product of the centered
    samples of that cell (zero matrix for empty cells); ``means[y, b]`` is
    always the cell's own mean regardless of the centering mode.
    """

    counts: np.ndarray          # (n_classes, n_bias) int64
    means: np.ndarray           # (n_classes, n_bias, dim)
    second_moments: np.ndarray  # (n_classes, n_bias, dim, dim)
    centering: Centering

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def n_bias(self) -> int:
        return self.counts.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @property
    def empirical_probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0

    def first_empty_cell(self) -> tuple[int, int] | None:
        empty = np.argwhere(~self.occupied)
        if empty.size == 0:
            return None
        return int(empty[0, 0]), int(empty[0, 1])


@dataclass(frozen=True)
class BlendedCovariance:
    """A blend-weighted covariance with its matching mean and provenance."""

    lam: float
    sigma: np.ndarray
    mean: np.ndarray
    stats: GroupStats


def compute_group_stats(data: GroupedDataset, centering: Centering = Centering.GLOBAL) -> GroupStats:
    """Counts, means, and centered second moments for every (y, b) cell."""
    centering = Centering(centering)
    feats = data.features
    dim = data.n_features
    counts = np.zeros((data.n_classes, data.n_bias), dtype=np.int64)
    means = np.zeros((data.n_classes, data.n_bias, dim))
    moments = np.zeros((data.n_classes, data.n_bias, dim, dim))
    global_mean = feats.mean(axis=1)
    for yi in range(data.n_classes):
        for bi in range(data.n_bias):
            mask = (data.y == yi) & (data.b == bi)
            n_cell = int(mask.sum())
            counts[yi, bi] = n_cell
            if n_cell == 0:
                continue
            cell = feats[:, mask]
            cell_mean = cell.mean(axis=1)
            means[yi, bi] = cell_mean
            ref = cell_mean if centering is Centering.PER_GROUP else global_mean
            centered = cell - ref[:, None]
            moments[yi, bi] = centered @ centered.T / n_cell
    return GroupStats(counts=counts, means=means, second_moments=moments, centering=centering)


def biased_covariance(stats: GroupStats) -> np.ndarray:
    """Covariance under the empirical group probabilities."""
    if stats.n_samples == 0:
        raise EmptyDataset("statistics cover no samples")
    probs = stats.empirical_probs
    sigma = np.zeros((stats.dim, stats.dim))
    for yi in range(stats.n_classes):
        for bi in range(stats.n_bias):
            if stats.counts[yi, bi] > 0:
                sigma += probs[yi, bi] * stats.second_moments[yi, bi]
    return sigma


def unbiased_covariance(
    stats: GroupStats,
    empty_cell_policy: EmptyCellPolicy = EmptyCellPolicy.ERROR,
) -> np.ndarray:
    """Covariance under uniform group weights (independence surrogate).

    Under the default ERROR policy every cell must be occupied; the
    RENORMALIZE policy instead spreads the uniform weight over occupied
    cells only (an explicit opt-in, since it changes the estimand).
    """
    empty_cell_policy = EmptyCellPolicy(empty_cell_policy)
    if stats.n_samples == 0:
        raise EmptyDataset("statistics cover no samples")
    occupied = stats.occupied
    if empty_cell_policy is EmptyCellPolicy.ERROR:
        missing = stats.first_empty_cell()
        if missing is not None:
            raise EmptyGroupCell(*missing, context="uniform group weighting is undefined")
        weight = 1.0 / (stats.n_classes * stats.n_bias)
    else:
        weight = 1.0 / int(occupied.sum())
    sigma = np.zeros((stats.dim, stats.dim))
    for yi in range(stats.n_classes):
        for bi in range(stats.n_bias):
            if occupied[yi, bi]:
                sigma += weight * stats.second_moments[yi, bi]
    return sigma


def _uniform_probs(stats: GroupStats, empty_cell_policy: EmptyCellPolicy) -> np.ndarray:
    occupied = stats.occupied
    if empty_cell_policy is EmptyCellPolicy.ERROR:
        missing = stats.first_empty_cell()
        if missing is not None:
            raise EmptyGroupCell(*missing, context="uniform group weighting is undefined")
        return np.full(occupied.shape, 1.0 / occupied.size)
    probs = np.zeros(occupied.shape)
    probs[occupied] = 1.0 / int(occupied.sum())
    return probs


def blend_covariance(
    stats: GroupStats,
    lam: float,
    empty_cell_policy: EmptyCellPolicy = EmptyCellPolicy.ERROR,
) -> BlendedCovariance:
    """Blend the uniform-weighted and empirically-weighted covariances.

    ``sigma = lam * unbiased + (1 - lam) * biased``; the boundaries are
    short-circuited so lam = 0 reproduces the biased covariance bit for bit
    (and never needs the uniform weights), likewise lam = 1 for the
    unbiased one. The blended mean uses the same lam-mixed group
    probabilities so downstream centering matches the reweighted
    distribution.
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0 or lam > 1.0:
        raise LambdaOutOfRange(f"blend weight must lie in [0, 1], got {lam!r}")
    empty_cell_policy = EmptyCellPolicy(empty_cell_policy)

    if lam == 0.0:
        sigma = biased_covariance(stats)
        cell_probs = stats.empirical_probs
    elif lam == 1.0:
        sigma = unbiased_covariance(stats, empty_cell_policy)
        cell_probs = _uniform_probs(stats, empty_cell_policy)
    else:
        sigma = lam * unbiased_covariance(stats, empty_cell_policy) + (1.0 - lam) * biased_covariance(stats)
        cell_probs = (
            lam * _uniform_probs(stats, empty_cell_policy)
            + (1.0 - lam) * stats.empirical_probs
        )

    mean = np.tensordot(cell_probs, stats.means, axes=([0, 1], [0, 1]))
    return BlendedCovariance(lam=lam, sigma=sigma, mean=mean, stats=stats)


def lambda_sample_weights(counts: np.ndarray, y, b, lam: float) -> np.ndarray:
    """Per-sample weights of the lam-blended group distribution, summing to 1.

    Each sample gets ``lam * P_u(g)/P_b(g) / N + (1 - lam) / N`` where g is
    its (y, b) cell, then the vector is renormalized. At lam = 0 this is the
    uniform 1/N weighting; at lam = 1 it reweights every cell to equal mass.
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0 or lam > 1.0:
        raise LambdaOutOfRange(f"blend weight must lie in [0, 1], got {lam!r}")
    counts = np.asarray(counts, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    total = int(counts.sum())
    if total < 1:
        raise EmptyDataset("count table has no samples")
    n_cells = counts.size
    cell_counts = counts[y, b].astype(np.float64)
    if np.any(cell_counts == 0):
        raise ValidationError("a sample falls in a cell with zero recorded count")
    weights = lam / (n_cells * cell_counts) + (1.0 - lam) / total
    return weights / weights.sum()
