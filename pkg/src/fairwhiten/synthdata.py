"""Deterministic generator of biased synthetic feature datasets.

Stands in for frozen encoders: the target block carries a class signal plus
a controllable amount of bias-attribute signal (the spurious shortcut), the
bias block carries the bias attribute, and the joint label distribution is
skewed so that off-diagonal (y, b) pairs are rare. A held-out test split is
exactly group-balanced by stratified construction.

All randomness comes from one counter-based generator stream; the generator
identifier is written into the dataset sidecar so files are reproducible
across runs and machines.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import SpecInvalid, ValidationError
from .groupcov import GroupedDataset

GENERATOR_ID = "numpy-philox-4x64"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic feature law.

    ``conflict_ratio`` is the expected fraction of samples whose (y, b)
    pair is off-diagonal. ``bias_leak`` scales the bias-attribute signal
    leaked into the target block (the shortcut); ``bias_scale`` scales the
    bias block's own signal. ``quadratic_leak`` optionally adds a
    bias-noise-squared term to the target block: a dependence with zero
    covariance that no linear decorrelation can remove.
    """

    n_classes: int = 2
    n_bias: int = 2
    target_dim: int = 8
    bias_dim: int = 8
    n_samples: int = 20000
    n_test: int = 4000
    conflict_ratio: float = 0.05
    signal_strength: float = 1.0
    bias_leak: float = 2.0
    bias_scale: float = 6.0
    noise_std: float = 1.0
    quadratic_leak: float = 0.0
    seed: int = 0
    joint: tuple | None = None  # optional explicit (n_classes x n_bias) probability table

    def __post_init__(self):
        if min(self.n_classes, self.n_bias, self.target_dim, self.bias_dim) < 1:
            raise SpecInvalid("all dimensions and cardinalities must be >= 1")
        if self.n_samples < 1:
            raise SpecInvalid(f"n_samples must be >= 1, got {self.n_samples}")
        if not (0.0 < self.conflict_ratio < 1.0):
            raise SpecInvalid(f"conflict_ratio must lie in (0, 1), got {self.conflict_ratio!r}")
        if not (self.signal_strength > 0.0 and np.isfinite(self.signal_strength)):
            raise SpecInvalid(f"signal_strength must be positive, got {self.signal_strength!r}")
        if not (self.noise_std > 0.0 and np.isfinite(self.noise_std)):
            raise SpecInvalid(f"noise_std must be positive, got {self.noise_std!r}")
        if self.bias_leak < 0.0 or not np.isfinite(self.bias_leak):
            raise SpecInvalid(f"bias_leak must be >= 0, got {self.bias_leak!r}")
        if not (self.bias_scale > 0.0 and np.isfinite(self.bias_scale)):
            raise SpecInvalid(f"bias_scale must be positive, got {self.bias_scale!r}")
        if self.n_test < self.n_classes * self.n_bias:
            raise SpecInvalid(
                f"n_test must cover every (y, b) cell at least once, "
                f"got {self.n_test} for {self.n_classes * self.n_bias} cells"
            )
        if self.joint is not None:
            table = np.asarray(self.joint, dtype=np.float64)
            if table.shape != (self.n_classes, self.n_bias):
                raise SpecInvalid(
                    f"joint table must have shape ({self.n_classes}, {self.n_bias}), got {table.shape}"
                )
            if np.any(table < 0.0) or abs(float(table.sum()) - 1.0) > 1e-9:
                raise SpecInvalid("joint table must be nonnegative and sum to 1")


def _validate_construction(spec: SynthSpec) -> None:
    if spec.joint is None:
        if spec.n_classes != spec.n_bias:
            raise SpecInvalid(
                "aligned/conflicting construction assumes n_classes == n_bias; "
                "provide an explicit joint table for unequal cardinalities"
            )
        mix = spec.conflict_ratio * spec.n_bias / (spec.n_bias - 1) if spec.n_bias > 1 else None
        if spec.n_bias == 1:
            raise SpecInvalid("n_bias must be >= 2 for the aligned/conflicting construction")
        if mix > 1.0:
            raise SpecInvalid(
                f"conflict_ratio {spec.conflict_ratio} is unreachable with {spec.n_bias} bias "
                f"values (maximum {(spec.n_bias - 1) / spec.n_bias})"
            )
    needed_target = spec.n_classes + (spec.n_bias if spec.bias_leak > 0.0 else 0)
    if spec.target_dim < needed_target:
        raise SpecInvalid(
            f"target_dim must be >= {needed_target} to hold disjoint class and leak axes, "
            f"got {spec.target_dim}"
        )
    if spec.bias_dim < spec.n_bias:
        raise SpecInvalid(
            f"bias_dim must be >= n_bias = {spec.n_bias}, got {spec.bias_dim}"
        )


def _draw_labels(spec: SynthSpec, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    if spec.joint is not None:
        table = np.asarray(spec.joint, dtype=np.float64).ravel()
        flat = rng.choice(table.size, size=n, p=table / table.sum())
        return flat // spec.n_bias, flat % spec.n_bias
    y = rng.integers(0, spec.n_classes, size=n)
    # Mixing with a uniform redraw makes the off-diagonal mass exactly
    # conflict_ratio: P(redraw) = ratio * n_bias / (n_bias - 1).
    mix = spec.conflict_ratio * spec.n_bias / (spec.n_bias - 1)
    redraw = rng.random(n) < mix
    uniform_b = rng.integers(0, spec.n_bias, size=n)
    b = np.where(redraw, uniform_b, y)
    return y, b


def _features_for(spec: SynthSpec, rng: np.random.Generator, y: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = y.size
    noise_t = rng.normal(0.0, spec.noise_std, size=(spec.target_dim, n))
    noise_b = rng.normal(0.0, spec.noise_std, size=(spec.bias_dim, n))
    target = noise_t.copy()
    target[y, np.arange(n)] += spec.signal_strength
    if spec.bias_leak > 0.0:
        # The leak occupies its own axes (offset past the class axes): the
        # shortcut is linearly separable from the genuine signal, so linear
        # decorrelation can in principle remove all of it.
        target[spec.n_classes + b, np.arange(n)] += spec.bias_leak
    if spec.quadratic_leak != 0.0:
        # Centered square of the bias block's own noise along each sample's
        # bias axis: dependent on the bias block yet uncorrelated with it.
        squared = noise_b[b, np.arange(n)] ** 2 - spec.noise_std**2
        target[-1, :] += spec.quadratic_leak * squared
    bias = noise_b
    bias[b, np.arange(n)] += spec.bias_scale
    return np.vstack([target, bias])


def generate(spec: SynthSpec) -> tuple[GroupedDataset, GroupedDataset]:
    """Generate (train, test) datasets from one seeded counter-based stream.

    The train split draws labels from the biased joint distribution; the
    test split has exactly equal counts in every (y, b) cell (n_test is
    truncated to a multiple of the cell count) with the same conditional
    feature law.
    """
    _validate_construction(spec)
    rng = np.random.Generator(np.random.Philox(spec.seed))

    y_train, b_train = _draw_labels(spec, rng, spec.n_samples)
    feats_train = _features_for(spec, rng, y_train, b_train)

    cells = spec.n_classes * spec.n_bias
    per_cell = spec.n_test // cells
    grid = np.arange(cells)
    y_test = np.repeat(grid // spec.n_bias, per_cell)
    b_test = np.repeat(grid % spec.n_bias, per_cell)
    feats_test = _features_for(spec, rng, y_test, b_test)

    train = GroupedDataset(
        features=feats_train,
        y=y_train,
        b=b_train,
        n_classes=spec.n_classes,
        n_bias=spec.n_bias,
        target_dim=spec.target_dim,
    )
    test = GroupedDataset(
        features=feats_test,
        y=y_test,
        b=b_test,
        n_classes=spec.n_classes,
        n_bias=spec.n_bias,
        target_dim=spec.target_dim,
    )
    return train, test


def spec_to_dict(spec: SynthSpec) -> dict:
    doc = asdict(spec)
    if doc["joint"] is not None:
        doc["joint"] = [list(row) for row in np.asarray(spec.joint, dtype=np.float64)]
    return doc


def spec_from_dict(doc: dict) -> SynthSpec:
    from .errors import SchemaError

    known = set(SynthSpec.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"unknown synthetic-spec fields: {sorted(unknown)}")
    kwargs = dict(doc)
    if kwargs.get("joint") is not None:
        kwargs["joint"] = tuple(tuple(float(v) for v in row) for row in kwargs["joint"])
    return SynthSpec(**kwargs)


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


def write_dataset_csv(
    ds: GroupedDataset,
    path,
    spec: SynthSpec | None = None,
    split: str | None = None,
) -> Path:
    """Write a dataset as CSV (header id,y,b,t_*,z_*; LF endings; shortest
    round-trip decimals) plus a JSON sidecar recording the generating spec.
    """
    if ds.target_dim is None:
        raise ValidationError("dataset has no target/bias split; cannot write the block columns")
    path = Path(path)
    m_t = ds.target_dim
    m_b = ds.n_features - ds.target_dim
    header = (
        ["id", "y", "b"]
        + [f"t_{i}" for i in range(m_t)]
        + [f"z_{i}" for i in range(m_b)]
    )
    lines = [",".join(header)]
    feats = ds.features
    for i in range(ds.n_samples):
        row = [str(i), str(int(ds.y[i])), str(int(ds.b[i]))]
        row.extend(repr(float(v)) for v in feats[:, i])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"generator": GENERATOR_ID, "split": split, "n_rows": ds.n_samples}
    if spec is not None:
        meta["spec"] = spec_to_dict(spec)
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path
