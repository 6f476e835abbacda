"""Fit-and-apply whitening of stacked target/bias feature blocks.

A transform is fitted once on training features: the blended covariance of
the stacked blocks goes through an inverse-square-root solver and the
blended mean becomes the centering vector. Applying the frozen transform
decorrelates the blocks; certificates below measure how close the result
actually is to identity covariance and to block-to-block linear
unpredictability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import matops
from .errors import DimensionMismatch, SchemaError, ValidationError
from .groupcov import (
    BlendedCovariance,
    Centering,
    EmptyCellPolicy,
    blend_covariance,
    compute_group_stats,
    make_dataset,
)
from .matops import Method


@dataclass(frozen=True)
class WhiteningTransform:
    """A frozen whitening transform: centering vector plus inverse square root.

    ``fit_residual`` is ``||inv_sqrt @ sigma @ inv_sqrt.T - I||_F`` recorded
    at fit time against the unregularized blended covariance.
    """

    mean: np.ndarray
    inv_sqrt: np.ndarray
    target_dim: int
    bias_dim: int
    method: Method
    lam: float
    eps: float
    iterations: int
    fit_residual: float

    @property
    def dim(self) -> int:
        return self.target_dim + self.bias_dim


def fit(
    z_t,
    z_b,
    y,
    b,
    lam: float,
    method: Method | str = Method.NEWTON_SCHULZ,
    iterations: int = 5,
    eps: float = 1e-5,
    centering: Centering = Centering.GLOBAL,
    empty_cell_policy: EmptyCellPolicy = EmptyCellPolicy.ERROR,
    n_classes: int | None = None,
    n_bias: int | None = None,
) -> WhiteningTransform:
    """Fit a whitening transform on stacked target/bias training features.

    The blocks are concatenated, their blended covariance and mean are
    estimated from the labeled groups, and the chosen solver produces the
    inverse square root. ``eps`` is added to the covariance diagonal before
    inversion (rank-deficient covariances occur whenever the sample count
    is small relative to the stacked dimension).
    """
    method = matops.parse_method(method)
    ds = make_dataset(z_t, z_b, y, b, n_classes=n_classes, n_bias=n_bias)
    if ds.n_samples < 2:
        raise ValidationError("fitting needs at least 2 samples")
    stats = compute_group_stats(ds, centering)
    blended = blend_covariance(stats, lam, empty_cell_policy)
    result = matops.inv_sqrt(blended.sigma, method, iterations=iterations, eps=eps)
    return WhiteningTransform(
        mean=blended.mean,
        inv_sqrt=result.matrix,
        target_dim=ds.target_dim,
        bias_dim=ds.n_features - ds.target_dim,
        method=method,
        lam=float(lam),
        eps=float(eps),
        iterations=result.iterations_used,
        fit_residual=result.residual,
    )


def fit_from_blend(
    blended: BlendedCovariance,
    target_dim: int,
    method: Method | str = Method.NEWTON_SCHULZ,
    iterations: int = 5,
    eps: float = 1e-5,
) -> WhiteningTransform:
    """Build a transform from an already-computed blended covariance."""
    method = matops.parse_method(method)
    dim = blended.sigma.shape[0]
    if not 0 < target_dim < dim:
        raise ValidationError(f"target_dim must split the {dim} dimensions, got {target_dim}")
    result = matops.inv_sqrt(blended.sigma, method, iterations=iterations, eps=eps)
    return WhiteningTransform(
        mean=blended.mean,
        inv_sqrt=result.matrix,
        target_dim=target_dim,
        bias_dim=dim - target_dim,
        method=method,
        lam=blended.lam,
        eps=float(eps),
        iterations=result.iterations_used,
        fit_residual=result.residual,
    )


def apply(t: WhiteningTransform, z_t, z_b) -> tuple[np.ndarray, np.ndarray]:
    """Whiten stacked blocks and split back into (target, bias) blocks."""
    z_t = np.asarray(z_t, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_t.ndim != 2 or z_b.ndim != 2 or z_t.shape[1] != z_b.shape[1]:
        raise DimensionMismatch(
            f"blocks must be 2-D with a shared sample count, got {z_t.shape} and {z_b.shape}"
        )
    if z_t.shape[0] != t.target_dim or z_b.shape[0] != t.bias_dim:
        raise DimensionMismatch(
            f"blocks of shape {z_t.shape} and {z_b.shape} do not match the fitted "
            f"dims ({t.target_dim}, {t.bias_dim})"
        )
    z = np.vstack([z_t, z_b])
    z_w = t.inv_sqrt @ (z - t.mean[:, None])
    return z_w[: t.target_dim], z_w[t.target_dim :]


def cross_block_covariance(z_wt, z_wb, weights=None) -> np.ndarray:
    """Weighted covariance between the two blocks (the independence certificate).

    Both blocks are centered at their weighted means; uniform weights by
    default. A zero matrix certifies that no linear map from one block
    predicts any coordinate of the other in the weighted least-squares sense.
    """
    z_wt = np.asarray(z_wt, dtype=np.float64)
    z_wb = np.asarray(z_wb, dtype=np.float64)
    if z_wt.ndim != 2 or z_wb.ndim != 2 or z_wt.shape[1] != z_wb.shape[1]:
        raise DimensionMismatch(
            f"blocks must be 2-D with a shared sample count, got {z_wt.shape} and {z_wb.shape}"
        )
    n = z_wt.shape[1]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise DimensionMismatch(f"weights must have length {n}, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0) or w.sum() <= 0.0:
            raise ValidationError("weights must be finite, nonnegative, and not all zero")
        w = w / w.sum()
    mean_t = z_wt @ w
    mean_b = z_wb @ w
    return ((z_wt - mean_t[:, None]) * w) @ (z_wb - mean_b[:, None]).T


@dataclass(frozen=True)
class WhiteningCertificate:
    """Deviation-from-identity and linear-predictability scores for a fit.

    The weighted pair uses the fit's own blend weight; the unweighted pair
    repeats the measurement at blend weight 0 (plain empirical weighting)
    as a diagnostic for blends > 0.
    """

    max_cov_deviation: float
    ols_coefficient_norm: float
    unweighted_max_cov_deviation: float
    unweighted_ols_coefficient_norm: float


def certify(
    t: WhiteningTransform,
    z_t,
    z_b,
    y,
    b,
    centering: Centering = Centering.GLOBAL,
    n_classes: int | None = None,
    n_bias: int | None = None,
) -> WhiteningCertificate:
    """Recompute the blended covariance of the whitened output and score it.

    The covariance is assembled exactly as in ``fit`` (same centering mode,
    same blend weight), so a perfect transform scores 0 on the max-entry
    deviation from identity and 0 on the Frobenius norm of the implied
    least-squares map from the whitened target block to the whitened bias
    block.
    """
    z_wt, z_wb = apply(t, z_t, z_b)
    ds = make_dataset(z_wt, z_wb, y, b, n_classes=n_classes, n_bias=n_bias)
    stats = compute_group_stats(ds, centering)
    m = t.target_dim
    eye = np.eye(t.dim)

    def measure(lam: float) -> tuple[float, float]:
        sigma = blend_covariance(stats, lam).sigma
        deviation = float(np.abs(sigma - eye).max())
        coef = np.linalg.solve(sigma[:m, :m], sigma[:m, m:])
        return deviation, float(np.linalg.norm(coef))

    dev_w, ols_w = measure(t.lam)
    if t.lam == 0.0:
        dev_u, ols_u = dev_w, ols_w
    else:
        dev_u, ols_u = measure(0.0)
    return WhiteningCertificate(
        max_cov_deviation=dev_w,
        ols_coefficient_norm=ols_w,
        unweighted_max_cov_deviation=dev_u,
        unweighted_ols_coefficient_norm=ols_u,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def to_json(t: WhiteningTransform) -> str:
    """Serialize a transform; reals are decimal strings that round-trip doubles."""
    doc = {
        "dim": t.dim,
        "target_dim": t.target_dim,
        "lambda": _fmt(t.lam),
        "eps": _fmt(t.eps),
        "method": t.method.value,
        "iterations": t.iterations,
        "mean": [_fmt(v) for v in t.mean],
        "inv_sqrt": [_fmt(v) for v in t.inv_sqrt.ravel()],
        "fit_residual": _fmt(t.fit_residual),
    }
    return json.dumps(doc, indent=2)


def from_json(text: str) -> WhiteningTransform:
    """Inverse of ``to_json``; bit-exact for every real field."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"transform document is not valid JSON: {exc}") from exc
    required = {"dim", "target_dim", "lambda", "eps", "method", "iterations", "mean", "inv_sqrt", "fit_residual"}
    missing = required - doc.keys()
    if missing:
        raise SchemaError(f"transform document is missing fields: {sorted(missing)}")
    dim = int(doc["dim"])
    target_dim = int(doc["target_dim"])
    if not 0 < target_dim < dim:
        raise SchemaError(f"target_dim {target_dim} does not split dim {dim}")
    mean = np.array([float(v) for v in doc["mean"]])
    flat = np.array([float(v) for v in doc["inv_sqrt"]])
    if mean.shape != (dim,) or flat.shape != (dim * dim,):
        raise SchemaError(
            f"mean/inv_sqrt lengths ({mean.size}, {flat.size}) do not match dim {dim}"
        )
    return WhiteningTransform(
        mean=mean,
        inv_sqrt=flat.reshape(dim, dim),
        target_dim=target_dim,
        bias_dim=dim - target_dim,
        method=matops.parse_method(doc["method"]),
        lam=float(doc["lambda"]),
        eps=float(doc["eps"]),
        iterations=int(doc["iterations"]),
        fit_residual=float(doc["fit_residual"]),
    )
