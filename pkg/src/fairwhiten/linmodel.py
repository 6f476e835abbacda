"""Multinomial linear classifiers: weighted softmax cross-entropy, plain or
adaptive-moment first-order training, and the group loss-weighting scheme
that rebalances rare (target, bias) cells.

Training is deterministic given the config seed: initialization and batch
order are the only random elements and both come from a counter-based
generator seeded once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyGroupCell,
    NonFiniteLoss,
    ValidationError,
)


class OptimizerKind(str, Enum):
    GRADIENT_DESCENT = "gd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for ``train``.

    ``batch_size=None`` means full-batch updates. The adaptive-moment
    optimizer uses the customary defaults (beta1=0.9, beta2=0.999,
    eps=1e-8). ``decay_step`` optionally multiplies the learning rate by
    ``decay_factor`` from that step onward (a single-step decay schedule).
    """

    learning_rate: float = 0.1
    steps: int = 500
    batch_size: int | None = None
    seed: int = 0
    l2: float = 0.0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_step: int | None = None
    decay_factor: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive or None, got {self.batch_size}")
        if self.l2 < 0.0 or not np.isfinite(self.l2):
            raise ValidationError(f"l2 must be a finite nonnegative real, got {self.l2!r}")
        if self.decay_step is not None and self.decay_step < 0:
            raise ValidationError(f"decay_step must be nonnegative, got {self.decay_step}")


@dataclass(frozen=True)
class LinearClassifier:
    """Affine logits ``weights @ x + bias`` followed by softmax."""

    weights: np.ndarray  # (n_classes, input_dim)
    bias: np.ndarray     # (n_classes,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        v = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or v.shape != (w.shape[0],):
            raise DimensionMismatch(
                f"weights {w.shape} and bias {v.shape} are inconsistent"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise ValidationError("classifier parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", v)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainResult:
    classifier: LinearClassifier
    final_loss: float
    # step -> value pairs, keyed by "all" plus any requested group names
    loss_trace: dict = field(default_factory=dict)


def loss_weights(counts) -> np.ndarray:
    """Per-cell loss weights that rebalance group frequencies to uniform.

    weight(y, b) = P_uniform(y, b) / P_empirical(y, b), renormalized so the
    weighted sample count equals the raw sample count (mean weight 1 over
    samples). Rebalancing is undefined for empty cells; callers that want a
    fallback must choose it explicitly.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 2:
        raise DimensionMismatch(f"counts must be a 2-D table, got shape {counts.shape}")
    total = int(counts.sum())
    if total < 1:
        raise EmptyDataset("count table has no samples")
    empty = np.argwhere(counts == 0)
    if empty.size:
        raise EmptyGroupCell(int(empty[0, 0]), int(empty[0, 1]), context="loss weight undefined")
    raw = (total / counts.size) / counts
    return raw * (total / float((counts * raw).sum()))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def loss_and_gradient(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
    l2: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted softmax cross-entropy with an L2 penalty on the weight matrix.

    Returns ``(loss, d_weights, d_bias)``. The cross-entropy term is
    normalized by the weight sum; an all-zero weight vector contributes
    nothing (only the L2 term remains).
    """
    n = x.shape[1]
    # Overflow here is the blow-up the caller detects via the non-finite
    # loss; an inf result is the intended signal, not a warning condition.
    with np.errstate(over="ignore", invalid="ignore"):
        logits = weights @ x + bias[:, None]
        logp = _log_softmax(logits)
        wsum = float(sample_weights.sum())
        if wsum > 0.0:
            norm_w = sample_weights / wsum
            ce = float(-(norm_w * logp[labels, np.arange(n)]).sum())
            delta = np.exp(logp)
            delta[labels, np.arange(n)] -= 1.0
            delta *= norm_w
            d_weights = delta @ x.T
            d_bias = delta.sum(axis=1)
        else:
            ce = 0.0
            d_weights = np.zeros_like(weights)
            d_bias = np.zeros_like(bias)
        loss = ce + l2 * float((weights * weights).sum())
        return loss, d_weights + 2.0 * l2 * weights, d_bias


def _mean_ce(weights, bias, x, labels, mask=None) -> float:
    logp = _log_softmax(weights @ x + bias[:, None])
    picked = -logp[labels, np.arange(x.shape[1])]
    if mask is not None:
        if not mask.any():
            return float("nan")
        picked = picked[mask]
    return float(picked.mean())


def train(
    x,
    labels,
    sample_weights=None,
    cfg: TrainConfig = TrainConfig(),
    n_classes: int | None = None,
    trace_groups: dict | None = None,
    trace_every: int = 0,
) -> TrainResult:
    """Train a multinomial linear classifier on columns of ``x``.

    ``sample_weights`` scales each sample's contribution to the loss
    (nonnegative, not all zero; None means uniform). If ``trace_every > 0``,
    the full-data objective is recorded every that many steps under the key
    "all", and the unweighted mean cross-entropy over each boolean mask in
    ``trace_groups`` under its name.

    Raises:
        NonFiniteLoss: the objective became NaN/inf (reports the step).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise DimensionMismatch(f"x must be 2-D (features x samples), got shape {x.shape}")
    n = x.shape[1]
    if n == 0:
        raise EmptyDataset("no training samples")
    if labels.shape != (n,):
        raise DimensionMismatch(f"labels must have length {n}, got shape {labels.shape}")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (n,):
            raise DimensionMismatch(f"sample_weights must have length {n}, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValidationError("sample_weights must be finite and nonnegative")
        if w.sum() <= 0.0:
            raise ValidationError("sample_weights must not be all zero")

    rng = np.random.Generator(np.random.Philox(cfg.seed))
    weights = 0.01 * rng.standard_normal((n_classes, x.shape[0]))
    bias = np.zeros(n_classes)

    m_w = np.zeros_like(weights)
    v_w = np.zeros_like(weights)
    m_b = np.zeros_like(bias)
    v_b = np.zeros_like(bias)

    trace: dict = {}
    if trace_every > 0:
        trace["all"] = []
        for name in trace_groups or {}:
            trace[name] = []

    full_batch = cfg.batch_size is None or cfg.batch_size >= n
    order = None
    pos = n  # force an initial shuffle

    for step in range(cfg.steps):
        lr = cfg.learning_rate
        if cfg.decay_step is not None and step >= cfg.decay_step:
            lr *= cfg.decay_factor
        if full_batch:
            xb, lb, wb = x, labels, w
        else:
            if pos + cfg.batch_size > n:
                order = rng.permutation(n)
                pos = 0
            idx = order[pos : pos + cfg.batch_size]
            pos += cfg.batch_size
            xb, lb, wb = x[:, idx], labels[idx], w[idx]
        loss, g_w, g_b = loss_and_gradient(weights, bias, xb, lb, wb, cfg.l2)
        if not np.isfinite(loss):
            raise NonFiniteLoss(step)
        if cfg.optimizer is OptimizerKind.GRADIENT_DESCENT:
            weights = weights - lr * g_w
            bias = bias - lr * g_b
        else:
            t = step + 1
            m_w = cfg.beta1 * m_w + (1.0 - cfg.beta1) * g_w
            v_w = cfg.beta2 * v_w + (1.0 - cfg.beta2) * g_w * g_w
            m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * g_b
            v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * g_b * g_b
            corr1 = 1.0 - cfg.beta1**t
            corr2 = 1.0 - cfg.beta2**t
            weights = weights - lr * (m_w / corr1) / (np.sqrt(v_w / corr2) + cfg.adam_eps)
            bias = bias - lr * (m_b / corr1) / (np.sqrt(v_b / corr2) + cfg.adam_eps)
        if trace_every > 0 and ((step + 1) % trace_every == 0 or step + 1 == cfg.steps):
            full_loss, _, _ = loss_and_gradient(weights, bias, x, labels, w, cfg.l2)
            trace["all"].append((step + 1, full_loss))
            for name, mask in (trace_groups or {}).items():
                trace[name].append((step + 1, _mean_ce(weights, bias, x, labels, np.asarray(mask, bool))))

    final_loss, _, _ = loss_and_gradient(weights, bias, x, labels, w, cfg.l2)
    if not np.isfinite(final_loss):
        raise NonFiniteLoss(cfg.steps)
    return TrainResult(
        classifier=LinearClassifier(weights=weights, bias=bias),
        final_loss=final_loss,
        loss_trace=trace,
    )


def predict(clf: LinearClassifier, x) -> tuple[np.ndarray, np.ndarray]:
    """Labels and class probabilities for columns of ``x``.

    Ties in the logits break toward the smaller class index; probability
    columns sum to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != clf.input_dim:
        raise DimensionMismatch(
            f"x has shape {x.shape}, expected ({clf.input_dim}, n)"
        )
    probs = softmax(clf.weights @ x + clf.bias[:, None])
    return np.argmax(probs, axis=0), probs


def gradient_check(x, labels, sample_weights, clf: LinearClassifier, h: float = 1e-5, l2: float = 0.0) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Intended for small instances. Per-parameter relative error uses the
    denominator max(|analytic|, |numeric|, 1e-4): parameters whose gradient
    magnitude is below 1e-4 are effectively held to an absolute standard,
    since a pure ratio is meaningless for near-zero gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if sample_weights is None:
        sample_weights = np.ones(x.shape[1])
    else:
        sample_weights = np.asarray(sample_weights, dtype=np.float64)

    _, g_w, g_b = loss_and_gradient(clf.weights, clf.bias, x, labels, sample_weights, l2)

    def loss_at(weights, bias):
        val, _, _ = loss_and_gradient(weights, bias, x, labels, sample_weights, l2)
        return val

    worst = 0.0
    w0 = clf.weights
    b0 = clf.bias
    for i in range(w0.shape[0]):
        for j in range(w0.shape[1]):
            wp = w0.copy()
            wp[i, j] += h
            wm = w0.copy()
            wm[i, j] -= h
            numeric = (loss_at(wp, b0) - loss_at(wm, b0)) / (2.0 * h)
            denom = max(abs(g_w[i, j]), abs(numeric), 1e-4)
            worst = max(worst, abs(numeric - g_w[i, j]) / denom)
    for i in range(b0.shape[0]):
        bp = b0.copy()
        bp[i] += h
        bm = b0.copy()
        bm[i] -= h
        numeric = (loss_at(w0, bp) - loss_at(w0, bm)) / (2.0 * h)
        denom = max(abs(g_b[i]), abs(numeric), 1e-4)
        worst = max(worst, abs(numeric - g_b[i]) / denom)
    return worst


def classifier_to_json(clf: LinearClassifier) -> str:
    """Serialize; reals are decimal strings that round-trip doubles."""
    import json

    doc = {
        "n_classes": clf.n_classes,
        "input_dim": clf.input_dim,
        "weights": [repr(float(v)) for v in clf.weights.ravel()],
        "bias": [repr(float(v)) for v in clf.bias],
    }
    return json.dumps(doc, indent=2)


def classifier_from_json(text: str) -> LinearClassifier:
    import json

    from .errors import SchemaError

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"classifier document is not valid JSON: {exc}") from exc
    missing = {"n_classes", "input_dim", "weights", "bias"} - doc.keys()
    if missing:
        raise SchemaError(f"classifier document is missing fields: {sorted(missing)}")
    k = int(doc["n_classes"])
    m = int(doc["input_dim"])
    weights = np.array([float(v) for v in doc["weights"]])
    bias = np.array([float(v) for v in doc["bias"]])
    if weights.size != k * m or bias.size != k:
        raise SchemaError("weights/bias lengths do not match the declared shape")
    return LinearClassifier(weights=weights.reshape(k, m), bias=bias)
