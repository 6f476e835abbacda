"""End-to-end experiment orchestration.

One run sweeps a grid of (blend weight, solver, iteration count) arms over
one or more seeds. Every arm shares the per-seed dataset (common random
numbers), fits a whitening transform on the training features, trains
linear heads on the whitened blocks, and reports fairness metrics on the
train and held-out splits next to a raw-feature baseline trained per seed.

Reports serialize to JSON (full detail) and to a flat CSV whose bytes are a
pure function of the config and seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from . import whiten
from .errors import (
    EmptyDataset,
    FairwhitenError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .fairmetrics import (
    REPORT_CSV_COLUMNS,
    EoPolicy,
    FairnessReport,
    PredictionRecord,
    fairness_report,
    report_csv_row,
    report_to_dict,
)
from .groupcov import Centering, GroupedDataset, blend_covariance, compute_group_stats
from .linmodel import OptimizerKind, TrainConfig, loss_weights, predict, train
from .matops import Method, parse_method
from .synthdata import SynthSpec, generate, spec_from_dict, spec_to_dict

# Sub-seed namespaces: every random stream in a run is derived from the run
# seed plus a (role, arm) key, so arms share data but not head training.
_ROLE_DATA = 0
_ROLE_VANILLA = 1
_ROLE_TARGET_HEAD = 2
_ROLE_BIAS_HEAD = 3


def _sub_seed(seed: int, role: int, arm_index: int = 0) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(role, arm_index))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class CsvSource:
    train_csv: str
    test_csv: str


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs; grids are cartesian over arms."""

    data: SynthSpec | CsvSource
    lambdas: tuple = (0.25,)
    methods: tuple = (Method.NEWTON_SCHULZ,)
    iterations: tuple = (5,)
    eps: float = 1e-5
    train: TrainConfig = TrainConfig()
    lw_enabled: bool = True
    lw_on_bias: bool = False
    seeds: tuple = (0,)
    conflicting_set: tuple | None = None
    centering: Centering = Centering.GLOBAL
    eo_policy: EoPolicy = EoPolicy.ERROR
    trace_every: int = 10
    output_dir: str | None = None

    def __post_init__(self):
        if not self.lambdas or not self.methods or not self.iterations or not self.seeds:
            raise ValidationError("lambdas, methods, iterations, and seeds must be nonempty")
        for lam in self.lambdas:
            if not (0.0 <= float(lam) <= 1.0):
                raise ValidationError(f"grid blend weight {lam!r} outside [0, 1]")
        for t in self.iterations:
            if int(t) < 1:
                raise ValidationError(f"grid iteration count {t!r} must be >= 1")
        for s in self.seeds:
            if int(s) < 0:
                raise ValidationError(f"seeds must be nonnegative, got {s!r}")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "methods", tuple(parse_method(m) for m in self.methods))
        object.__setattr__(self, "iterations", tuple(int(v) for v in self.iterations))
        object.__setattr__(self, "seeds", tuple(int(v) for v in self.seeds))


@dataclass
class ArmOutcome:
    arm_id: str
    seed: int
    lam: float | None
    method: Method | None
    iterations: int | None
    fit_residual: float | None
    target_final_loss: float
    bias_final_loss: float | None
    train_report: FairnessReport
    test_report: FairnessReport
    loss_traces: dict
    wall_clock: float


@dataclass
class RunReport:
    config: dict
    outcomes: list = field(default_factory=list)
    partial: bool = False
    error: str | None = None


def _arm_label(lam: float, method: Method, iterations: int) -> str:
    return f"lam{lam!r}-{method.value}-T{iterations}"


def _default_conflicting_set(n_classes: int, n_bias: int) -> tuple:
    if n_classes != n_bias:
        raise ValidationError(
            "conflicting_set must be given explicitly when n_classes != n_bias"
        )
    return tuple((y, b) for y in range(n_classes) for b in range(n_bias) if y != b)


def _evaluate(clf, feats, y, b, n_classes, n_bias, conflicting_set, eo_policy) -> FairnessReport:
    y_hat, _ = predict(clf, feats)
    records = PredictionRecord(y_hat=y_hat, y=y, b=b, n_classes=n_classes, n_bias=n_bias)
    return fairness_report(records, conflicting_set, eo_policy)


def run_experiment(cfg: RunConfig) -> RunReport:
    """Run every (blend, solver, iterations) arm for every seed.

    Raises the first module error encountered, tagged with the offending
    arm; partial results are persisted to the output directory (if one is
    configured) before the abort propagates.
    """
    report = RunReport(config=config_to_dict(cfg))
    if isinstance(cfg.data, CsvSource):
        shared_train = load_dataset(cfg.data.train_csv)
        shared_test = load_dataset(cfg.data.test_csv)
    arms = list(enumerate(product(cfg.lambdas, cfg.methods, cfg.iterations)))

    current = "setup"
    try:
        for seed in cfg.seeds:
            current = f"setup seed={seed}"
            if isinstance(cfg.data, SynthSpec):
                spec = dataclasses.replace(cfg.data, seed=_sub_seed(seed, _ROLE_DATA))
                train_ds, test_ds = generate(spec)
            else:
                train_ds, test_ds = shared_train, shared_test
            z_t, z_b = train_ds.target_block(), train_ds.bias_block()
            zt_test, zb_test = test_ds.target_block(), test_ds.bias_block()
            n_classes, n_bias = train_ds.n_classes, train_ds.n_bias
            conflicting = (
                cfg.conflicting_set
                if cfg.conflicting_set is not None
                else _default_conflicting_set(n_classes, n_bias)
            )
            stats = compute_group_stats(train_ds, cfg.centering)
            lw_table = loss_weights(stats.counts) if (cfg.lw_enabled or cfg.lw_on_bias) else None
            aligned = train_ds.y == train_ds.b
            trace_groups = {"aligned": aligned, "conflicting": ~aligned}

            current = f"vanilla seed={seed}"
            started = time.perf_counter()
            res_v = train(
                z_t,
                train_ds.y,
                None,
                dataclasses.replace(cfg.train, seed=_sub_seed(seed, _ROLE_VANILLA)),
                n_classes=n_classes,
                trace_groups=trace_groups,
                trace_every=cfg.trace_every,
            )
            report.outcomes.append(
                ArmOutcome(
                    arm_id="vanilla",
                    seed=seed,
                    lam=None,
                    method=None,
                    iterations=None,
                    fit_residual=None,
                    target_final_loss=res_v.final_loss,
                    bias_final_loss=None,
                    train_report=_evaluate(
                        res_v.classifier, z_t, train_ds.y, train_ds.b,
                        n_classes, n_bias, conflicting, cfg.eo_policy,
                    ),
                    test_report=_evaluate(
                        res_v.classifier, zt_test, test_ds.y, test_ds.b,
                        n_classes, n_bias, conflicting, cfg.eo_policy,
                    ),
                    loss_traces={f"target/{k}": v for k, v in res_v.loss_trace.items()},
                    wall_clock=time.perf_counter() - started,
                )
            )

            for arm_index, (lam, method, iters) in arms:
                label = _arm_label(lam, method, iters)
                current = f"arm {label} seed={seed}"
                started = time.perf_counter()
                blended = blend_covariance(stats, lam)
                transform = whiten.fit_from_blend(
                    blended, train_ds.target_dim, method=method, iterations=iters, eps=cfg.eps
                )
                z_wt, z_wb = whiten.apply(transform, z_t, z_b)
                zwt_test, zwb_test = whiten.apply(transform, zt_test, zb_test)
                w_target = lw_table[train_ds.y, train_ds.b] if cfg.lw_enabled else None
                res_t = train(
                    z_wt,
                    train_ds.y,
                    w_target,
                    dataclasses.replace(cfg.train, seed=_sub_seed(seed, _ROLE_TARGET_HEAD, arm_index)),
                    n_classes=n_classes,
                    trace_groups=trace_groups,
                    trace_every=cfg.trace_every,
                )
                w_bias = lw_table[train_ds.y, train_ds.b] if cfg.lw_on_bias else None
                res_b = train(
                    z_wb,
                    train_ds.b,
                    w_bias,
                    dataclasses.replace(cfg.train, seed=_sub_seed(seed, _ROLE_BIAS_HEAD, arm_index)),
                    n_classes=n_bias,
                    trace_groups=trace_groups,
                    trace_every=cfg.trace_every,
                )
                traces = {f"target/{k}": v for k, v in res_t.loss_trace.items()}
                traces.update({f"bias/{k}": v for k, v in res_b.loss_trace.items()})
                report.outcomes.append(
                    ArmOutcome(
                        arm_id=label,
                        seed=seed,
                        lam=lam,
                        method=method,
                        iterations=iters,
                        fit_residual=transform.fit_residual,
                        target_final_loss=res_t.final_loss,
                        bias_final_loss=res_b.final_loss,
                        train_report=_evaluate(
                            res_t.classifier, z_wt, train_ds.y, train_ds.b,
                            n_classes, n_bias, conflicting, cfg.eo_policy,
                        ),
                        test_report=_evaluate(
                            res_t.classifier, zwt_test, test_ds.y, test_ds.b,
                            n_classes, n_bias, conflicting, cfg.eo_policy,
                        ),
                        loss_traces=traces,
                        wall_clock=time.perf_counter() - started,
                    )
                )
    except FairwhitenError as exc:
        report.partial = True
        report.error = f"[{current}] {exc}"
        if cfg.output_dir:
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.partial.json").write_text(report_json(report), encoding="utf-8")
        exc.args = (f"[{current}] " + (str(exc.args[0]) if exc.args else ""),) + exc.args[1:]
        raise
    return report


def _outcome_to_dict(o: ArmOutcome) -> dict:
    return {
        "arm_id": o.arm_id,
        "seed": o.seed,
        "lambda": o.lam,
        "method": None if o.method is None else o.method.value,
        "T": o.iterations,
        "fit_residual": o.fit_residual,
        "target_final_loss": o.target_final_loss,
        "bias_final_loss": o.bias_final_loss,
        "train": report_to_dict(o.train_report),
        "test": report_to_dict(o.test_report),
        "loss_traces": {k: [[int(s), float(v)] for s, v in tr] for k, tr in o.loss_traces.items()},
        "wall_clock": o.wall_clock,
    }


def report_json(report: RunReport) -> str:
    doc = {
        "config": report.config,
        "partial": report.partial,
        "error": report.error,
        "outcomes": [_outcome_to_dict(o) for o in report.outcomes],
    }
    return json.dumps(doc, indent=2)


def sweep_to_csv(report: RunReport) -> str:
    """Flatten a run report to CSV text.

    One row per (arm, seed, split) in execution order, then two aggregate
    rows per arm: mean and population std of the test-split metrics across
    seeds.
    """
    lines = [",".join(REPORT_CSV_COLUMNS)]
    arm_order: list[str] = []
    arm_meta: dict[str, tuple] = {}
    arm_test_metrics: dict[str, list] = {}
    for o in report.outcomes:
        if o.arm_id not in arm_meta:
            arm_order.append(o.arm_id)
            arm_meta[o.arm_id] = (o.lam, o.method, o.iterations)
            arm_test_metrics[o.arm_id] = []
        for split, rep in (("train", o.train_report), ("test", o.test_report)):
            row = report_csv_row(
                rep,
                run_id=f"{o.arm_id}/seed{o.seed}/{split}",
                lam=o.lam,
                method="vanilla" if o.method is None else o.method.value,
                iterations=o.iterations,
                seed=o.seed,
            )
            lines.append(",".join(row))
        r = o.test_report
        arm_test_metrics[o.arm_id].append(
            [r.delta_dp, r.delta_eo, r.acc_unbiased, r.acc_conflicting, r.acc_worst_group]
        )
    for arm_id in arm_order:
        lam, method, iters = arm_meta[arm_id]
        values = np.asarray(arm_test_metrics[arm_id])
        for stat_name, stat in (("mean", values.mean(axis=0)), ("std", values.std(axis=0))):
            row = [
                f"{arm_id}/test/{stat_name}",
                "" if lam is None else repr(float(lam)),
                "vanilla" if method is None else method.value,
                "" if iters is None else str(iters),
                "",
            ] + [repr(float(v)) for v in stat]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, output_dir) -> tuple[Path, Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    csv_path = out / "report.csv"
    json_path.write_text(report_json(report), encoding="utf-8")
    csv_path.write_text(sweep_to_csv(report), encoding="utf-8")
    return json_path, csv_path


def load_dataset(path) -> GroupedDataset:
    """Read a dataset CSV written in the id,y,b,t_*,z_* format.

    Validation is strict: the header must match the format exactly, every
    cell must parse, and non-finite feature values are rejected. Label
    cardinalities are inferred as max + 1.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyDataset(f"{path} is empty") from None
            m_t, m_b = _validate_header(header)
            ids = []
            ys = []
            bs = []
            feats = []
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(
                        f"{path} line {line_no}: expected {len(header)} cells, found {len(row)}"
                    )
                try:
                    ids.append(int(row[0]))
                    ys.append(int(row[1]))
                    bs.append(int(row[2]))
                except ValueError as exc:
                    raise ParseError(f"{path} line {line_no}: bad integer label: {exc}") from exc
                try:
                    values = [float(cell) for cell in row[3:]]
                except ValueError as exc:
                    raise ParseError(f"{path} line {line_no}: bad numeric cell: {exc}") from exc
                if not all(np.isfinite(values)):
                    raise ParseError(f"{path} line {line_no}: non-finite feature value")
                if ys[-1] < 0 or bs[-1] < 0:
                    raise ParseError(f"{path} line {line_no}: negative label")
                feats.append(values)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not feats:
        raise EmptyDataset(f"{path} has no data rows")
    features = np.asarray(feats, dtype=np.float64).T
    y = np.asarray(ys, dtype=np.int64)
    b = np.asarray(bs, dtype=np.int64)
    return GroupedDataset(
        features=features,
        y=y,
        b=b,
        n_classes=int(y.max()) + 1,
        n_bias=int(b.max()) + 1,
        target_dim=m_t,
    )


def _validate_header(header: list[str]) -> tuple[int, int]:
    expected = ["id", "y", "b"]
    for i, name in enumerate(expected):
        if i >= len(header) or header[i] != name:
            found = header[i] if i < len(header) else "<end of header>"
            raise SchemaError(f"expected column {name!r} at position {i}, found {found!r}")
    pos = len(expected)
    m_t = 0
    while pos < len(header) and header[pos] == f"t_{m_t}":
        m_t += 1
        pos += 1
    if m_t == 0:
        found = header[pos] if pos < len(header) else "<end of header>"
        raise SchemaError(f"expected target feature column 't_0', found {found!r}")
    m_b = 0
    while pos < len(header) and header[pos] == f"z_{m_b}":
        m_b += 1
        pos += 1
    if m_b == 0:
        found = header[pos] if pos < len(header) else "<end of header>"
        raise SchemaError(
            f"expected bias feature column 'z_0' after the target block, found {found!r}"
        )
    if pos != len(header):
        raise SchemaError(f"unexpected column {header[pos]!r} at position {pos}")
    return m_t, m_b


_TRAIN_FIELDS = set(TrainConfig.__dataclass_fields__)

_OPTIMIZER_ALIASES = {
    "gd": OptimizerKind.GRADIENT_DESCENT,
    "gradient_descent": OptimizerKind.GRADIENT_DESCENT,
    "adam": OptimizerKind.ADAM,
    "adaptive_moment": OptimizerKind.ADAM,
}


def train_config_from_dict(doc: dict) -> TrainConfig:
    unknown = set(doc) - _TRAIN_FIELDS
    if unknown:
        raise SchemaError(f"unknown train-config fields: {sorted(unknown)}")
    kwargs = dict(doc)
    if "optimizer" in kwargs:
        key = str(kwargs["optimizer"]).lower()
        if key not in _OPTIMIZER_ALIASES:
            raise ValidationError(f"unknown optimizer {kwargs['optimizer']!r}")
        kwargs["optimizer"] = _OPTIMIZER_ALIASES[key]
    return TrainConfig(**kwargs)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["optimizer"] = cfg.optimizer.value
    return doc


def config_from_dict(doc: dict) -> RunConfig:
    known = {
        "data", "lambdas", "methods", "iterations", "eps", "train", "lw_enabled",
        "lw_on_bias", "seeds", "conflicting_set", "centering", "eo_policy",
        "trace_every", "output_dir",
    }
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"unknown run-config fields: {sorted(unknown)}")
    if "data" not in doc:
        raise SchemaError("run config requires a 'data' entry")
    data_doc = doc["data"]
    if "synth" in data_doc:
        data = spec_from_dict(data_doc["synth"])
    elif "csv" in data_doc:
        csv_doc = data_doc["csv"]
        if "train" not in csv_doc or "test" not in csv_doc:
            raise SchemaError("csv data source requires 'train' and 'test' paths")
        data = CsvSource(train_csv=csv_doc["train"], test_csv=csv_doc["test"])
    else:
        raise SchemaError("data entry must contain 'synth' or 'csv'")

    def as_tuple(value, default):
        if value is None:
            return default
        if isinstance(value, (list, tuple)):
            return tuple(value)
        return (value,)

    kwargs = {
        "data": data,
        "lambdas": as_tuple(doc.get("lambdas"), (0.25,)),
        "methods": as_tuple(doc.get("methods"), (Method.NEWTON_SCHULZ,)),
        "iterations": as_tuple(doc.get("iterations"), (5,)),
        "eps": float(doc.get("eps", 1e-5)),
        "train": train_config_from_dict(doc.get("train", {})),
        "lw_enabled": bool(doc.get("lw_enabled", True)),
        "lw_on_bias": bool(doc.get("lw_on_bias", False)),
        "seeds": as_tuple(doc.get("seeds"), (0,)),
        "centering": Centering(doc.get("centering", Centering.GLOBAL)),
        "eo_policy": EoPolicy(doc.get("eo_policy", EoPolicy.ERROR)),
        "trace_every": int(doc.get("trace_every", 10)),
        "output_dir": doc.get("output_dir"),
    }
    conflicting = doc.get("conflicting_set")
    kwargs["conflicting_set"] = (
        None if conflicting is None else tuple((int(y), int(b)) for y, b in conflicting)
    )
    return RunConfig(**kwargs)


def config_from_json(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"run config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    if isinstance(cfg.data, SynthSpec):
        data = {"synth": spec_to_dict(cfg.data)}
    else:
        data = {"csv": {"train": cfg.data.train_csv, "test": cfg.data.test_csv}}
    return {
        "data": data,
        "lambdas": list(cfg.lambdas),
        "methods": [m.value for m in cfg.methods],
        "iterations": list(cfg.iterations),
        "eps": cfg.eps,
        "train": train_config_to_dict(cfg.train),
        "lw_enabled": cfg.lw_enabled,
        "lw_on_bias": cfg.lw_on_bias,
        "seeds": list(cfg.seeds),
        "conflicting_set": (
            None if cfg.conflicting_set is None else [list(p) for p in cfg.conflicting_set]
        ),
        "centering": cfg.centering.value,
        "eo_policy": cfg.eo_policy.value,
        "trace_every": cfg.trace_every,
        "output_dir": cfg.output_dir,
    }
