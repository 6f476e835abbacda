"""Group fairness and accuracy metrics over prediction records.

Conditional probabilities are empirical counts with no smoothing. Gap
computations compare count ratios through integer cross-products
(|c1*n2 - c2*n1| / (n1*n2)), which keeps hand-computable fixtures exact in
floating point and makes empirically independent label pairs score an exact
zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    EmptyBiasGroup,
    EmptyConditionCell,
    EmptyDataset,
    EmptyGroupCell,
    ValidationError,
)


class EoPolicy(str, Enum):
    """Treatment of classes whose (Y=y, B=b) conditioning cell is empty."""

    ERROR = "error"
    SKIP_CLASS = "skip_class"


@dataclass(frozen=True)
class PredictionRecord:
    """Aligned prediction / target / bias label vectors."""

    y_hat: np.ndarray
    y: np.ndarray
    b: np.ndarray
    n_classes: int
    n_bias: int

    def __post_init__(self):
        y_hat = np.asarray(self.y_hat, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        if y_hat.ndim != 1 or y_hat.shape != y.shape or y.shape != b.shape:
            raise ValidationError(
                f"label vectors must be 1-D and aligned, got {y_hat.shape}, {y.shape}, {b.shape}"
            )
        if y_hat.size == 0:
            raise EmptyDataset("no prediction records")
        for name, arr, bound in (("y_hat", y_hat, self.n_classes), ("y", y, self.n_classes), ("b", b, self.n_bias)):
            if arr.min() < 0 or arr.max() >= bound:
                raise ValidationError(f"{name} labels must lie in [0, {bound})")
        object.__setattr__(self, "y_hat", y_hat)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "b", b)

    @property
    def n_records(self) -> int:
        return self.y_hat.size


def _joint_counts(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> np.ndarray:
    return np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb)


def _max_pair_gap(counts: np.ndarray, sizes: np.ndarray) -> float:
    # max over group pairs of |c1/n1 - c2/n2|, via exact integer cross-products
    best = 0.0
    g = counts.shape[0]
    for i in range(g):
        for j in range(i + 1, g):
            gap = abs(int(counts[i]) * int(sizes[j]) - int(counts[j]) * int(sizes[i])) / (
                int(sizes[i]) * int(sizes[j])
            )
            if gap > best:
                best = gap
    return best


def dp_class_gaps(records: PredictionRecord) -> list[float]:
    """Per-class max gap of P(Y_hat = y | B = b) across bias groups."""
    sizes = np.bincount(records.b, minlength=records.n_bias)
    empty = np.nonzero(sizes == 0)[0]
    if empty.size:
        raise EmptyBiasGroup(int(empty[0]))
    pred_by_bias = _joint_counts(records.y_hat, records.b, records.n_classes, records.n_bias)
    return [_max_pair_gap(pred_by_bias[cls], sizes) for cls in range(records.n_classes)]


def delta_dp(records: PredictionRecord) -> float:
    """Demographic-parity violation: mean over classes of the largest
    prediction-rate gap between any two bias groups."""
    gaps = dp_class_gaps(records)
    return float(sum(gaps) / records.n_classes)


def eo_class_gaps(records: PredictionRecord, policy: EoPolicy = EoPolicy.ERROR) -> list[float | None]:
    """Per-class max gap of P(Y_hat = y | B = b, Y = y) across bias groups.

    Returns None for classes skipped under SKIP_CLASS.
    """
    policy = EoPolicy(policy)
    cell_sizes = _joint_counts(records.y, records.b, records.n_classes, records.n_bias)
    correct_mask = records.y_hat == records.y
    correct = _joint_counts(
        records.y[correct_mask], records.b[correct_mask], records.n_classes, records.n_bias
    )
    gaps: list[float | None] = []
    for cls in range(records.n_classes):
        sizes = cell_sizes[cls]
        empty = np.nonzero(sizes == 0)[0]
        if empty.size:
            if policy is EoPolicy.ERROR:
                raise EmptyConditionCell(cls, int(empty[0]))
            gaps.append(None)
            continue
        gaps.append(_max_pair_gap(correct[cls], sizes))
    return gaps


def delta_eo(records: PredictionRecord, policy: EoPolicy = EoPolicy.ERROR) -> float:
    """Equalized-odds violation: mean over classes of the largest
    true-rate gap between any two bias groups, conditioned on the class."""
    gaps = eo_class_gaps(records, policy)
    kept = [g for g in gaps if g is not None]
    if not kept:
        raise ValidationError("every class was skipped; equalized odds is undefined")
    return float(sum(kept) / len(kept))


def group_accuracy_table(records: PredictionRecord) -> tuple[np.ndarray, np.ndarray]:
    """Per-(y, b) cell accuracy P(Y_hat = y | Y = y, B = b) and counts.

    Accuracy is NaN for empty cells.
    """
    counts = _joint_counts(records.y, records.b, records.n_classes, records.n_bias)
    correct_mask = records.y_hat == records.y
    correct = _joint_counts(
        records.y[correct_mask], records.b[correct_mask], records.n_classes, records.n_bias
    )
    with np.errstate(invalid="ignore"):
        acc = np.where(counts > 0, correct / np.maximum(counts, 1), np.nan)
    return acc, counts


def _validate_conflicting_set(conflicting_set, n_classes: int, n_bias: int) -> list[tuple[int, int]]:
    pairs = [(int(y), int(b)) for y, b in conflicting_set]
    if not pairs:
        raise ValidationError("conflicting_set must be nonempty")
    if len(set(pairs)) != len(pairs):
        raise ValidationError("conflicting_set contains duplicate cells")
    for y, b in pairs:
        if not (0 <= y < n_classes and 0 <= b < n_bias):
            raise ValidationError(f"conflicting cell ({y}, {b}) is out of range")
    return pairs


@dataclass(frozen=True)
class AccuracySuite:
    acc_unbiased: float
    acc_conflicting: float
    acc_worst_group: float
    group_table: np.ndarray
    group_counts: np.ndarray


def accuracy_suite(records: PredictionRecord, conflicting_set) -> AccuracySuite:
    """Unbiased (cell-mean), conflicting-cell-mean, and worst-cell accuracy.

    ``conflicting_set`` is an explicit list of (y, b) pairs; which cells
    count as conflicting is dataset semantics, not something this module
    infers.
    """
    pairs = _validate_conflicting_set(conflicting_set, records.n_classes, records.n_bias)
    acc, counts = group_accuracy_table(records)
    empty = np.argwhere(counts == 0)
    if empty.size:
        raise EmptyGroupCell(int(empty[0, 0]), int(empty[0, 1]), context="cell accuracy undefined")
    return AccuracySuite(
        acc_unbiased=float(acc.mean()),
        acc_conflicting=float(np.mean([acc[y, b] for y, b in pairs])),
        acc_worst_group=float(acc.min()),
        group_table=acc,
        group_counts=counts,
    )


def weighted_mean_accuracy(records: PredictionRecord, train_group_probs) -> float:
    """Cell accuracies averaged with externally supplied cell probabilities."""
    probs = np.asarray(train_group_probs, dtype=np.float64)
    if probs.shape != (records.n_classes, records.n_bias):
        raise ValidationError(
            f"probability table must have shape ({records.n_classes}, {records.n_bias}), "
            f"got {probs.shape}"
        )
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        raise ValidationError(f"probabilities must sum to 1, got {float(probs.sum())!r}")
    if np.any(probs < 0.0):
        raise ValidationError("probabilities must be nonnegative")
    acc, counts = group_accuracy_table(records)
    needed_empty = np.argwhere((probs > 0.0) & (counts == 0))
    if needed_empty.size:
        raise EmptyGroupCell(
            int(needed_empty[0, 0]), int(needed_empty[0, 1]), context="positive weight, no records"
        )
    return float(np.sum(np.where(probs > 0.0, probs * np.nan_to_num(acc), 0.0)))


@dataclass(frozen=True)
class FairnessReport:
    delta_dp: float
    delta_eo: float
    acc_unbiased: float
    acc_conflicting: float
    acc_worst_group: float
    group_table: np.ndarray
    group_counts: np.ndarray
    conflicting_set: tuple
    skipped_eo_classes: tuple = ()


def fairness_report(
    records: PredictionRecord,
    conflicting_set,
    eo_policy: EoPolicy = EoPolicy.ERROR,
) -> FairnessReport:
    """Full metric bundle over one set of prediction records."""
    suite = accuracy_suite(records, conflicting_set)
    gaps = eo_class_gaps(records, eo_policy)
    kept = [g for g in gaps if g is not None]
    if not kept:
        raise ValidationError("every class was skipped; equalized odds is undefined")
    return FairnessReport(
        delta_dp=delta_dp(records),
        delta_eo=float(sum(kept) / len(kept)),
        acc_unbiased=suite.acc_unbiased,
        acc_conflicting=suite.acc_conflicting,
        acc_worst_group=suite.acc_worst_group,
        group_table=suite.group_table,
        group_counts=suite.group_counts,
        conflicting_set=tuple((int(y), int(b)) for y, b in conflicting_set),
        skipped_eo_classes=tuple(i for i, g in enumerate(gaps) if g is None),
    )


def report_to_dict(report: FairnessReport) -> dict:
    return {
        "delta_dp": report.delta_dp,
        "delta_eo": report.delta_eo,
        "acc_unbiased": report.acc_unbiased,
        "acc_conflicting": report.acc_conflicting,
        "acc_worst_group": report.acc_worst_group,
        "group_table": [[float(v) for v in row] for row in report.group_table],
        "group_counts": [[int(v) for v in row] for row in report.group_counts],
        "conflicting_set": [list(pair) for pair in report.conflicting_set],
        "skipped_eo_classes": list(report.skipped_eo_classes),
    }


def report_to_json(report: FairnessReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


REPORT_CSV_COLUMNS = (
    "run_id",
    "lambda",
    "method",
    "T",
    "seed",
    "delta_dp",
    "delta_eo",
    "acc_unbiased",
    "acc_conflicting",
    "acc_worst_group",
)


def report_csv_row(
    report: FairnessReport,
    run_id: str,
    lam: float | None,
    method: str | None,
    iterations: int | None,
    seed: int | None,
) -> list[str]:
    """One flat CSV row in the REPORT_CSV_COLUMNS order ('' for absent fields)."""
    return [
        run_id,
        "" if lam is None else repr(float(lam)),
        "" if method is None else str(method),
        "" if iterations is None else str(int(iterations)),
        "" if seed is None else str(int(seed)),
        repr(float(report.delta_dp)),
        repr(float(report.delta_eo)),
        repr(float(report.acc_unbiased)),
        repr(float(report.acc_conflicting)),
        repr(float(report.acc_worst_group)),
    ]
