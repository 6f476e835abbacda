"""Command-line surface.

Subcommands:
    generate  synthetic-spec JSON -> dataset CSV (+ sidecar, optional test split)
    run       run-config JSON -> report JSON + CSV
    sweep     grid shorthand flags -> same outputs as run
    metrics   predictions CSV -> fairness report JSON

Exit codes: 0 success, 1 validation error (bad inputs/config/files),
2 numerical failure (non-convergence, blow-up, bad pivot).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline, synthdata
from .errors import NumericalError, ParseError, SchemaError, ValidationError
from .fairmetrics import EoPolicy, PredictionRecord, fairness_report, report_to_json


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; bad flags are validation
    # errors here, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _comma_list(parse_item):
    def convert(text: str):
        items = [part.strip() for part in text.split(",") if part.strip()]
        if not items:
            raise argparse.ArgumentTypeError("expected a comma-separated list")
        try:
            return [parse_item(item) for item in items]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return convert


def _parse_cells(text: str):
    # "0:1,1:0" -> [(0, 1), (1, 0)]
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            y, b = part.split(":")
            pairs.append((int(y), int(b)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(
                f"bad cell {part!r}; expected y:b pairs like 0:1,1:0"
            ) from exc
    if not pairs:
        raise argparse.ArgumentTypeError("expected at least one y:b cell")
    return pairs


def _load_json_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc


def _cmd_generate(args) -> int:
    spec = synthdata.spec_from_dict(_load_json_file(args.spec))
    train_ds, test_ds = synthdata.generate(spec)
    synthdata.write_dataset_csv(train_ds, args.train_out, spec=spec, split="train")
    print(f"wrote {train_ds.n_samples} training rows to {args.train_out}")
    if args.test_out:
        synthdata.write_dataset_csv(test_ds, args.test_out, spec=spec, split="test")
        print(f"wrote {test_ds.n_samples} test rows to {args.test_out}")
    return 0


def _finish_run(cfg: pipeline.RunConfig, out_override: str | None) -> int:
    output_dir = out_override or cfg.output_dir
    if output_dir is None:
        raise ValidationError("no output directory: set output_dir in the config or pass --out")
    if out_override:
        import dataclasses

        cfg = dataclasses.replace(cfg, output_dir=out_override)
    report = pipeline.run_experiment(cfg)
    json_path, csv_path = pipeline.write_report(report, output_dir)
    for outcome in report.outcomes:
        rep = outcome.test_report
        print(
            f"{outcome.arm_id} seed={outcome.seed}: "
            f"test acc_unbiased={rep.acc_unbiased:.4f} "
            f"acc_worst_group={rep.acc_worst_group:.4f} "
            f"delta_dp={rep.delta_dp:.4f} delta_eo={rep.delta_eo:.4f}"
        )
    print(f"report: {json_path}")
    print(f"table:  {csv_path}")
    return 0


def _cmd_run(args) -> int:
    cfg = pipeline.config_from_dict(_load_json_file(args.config))
    return _finish_run(cfg, args.out)


def _cmd_sweep(args) -> int:
    doc = _load_json_file(args.config) if args.config else {}
    if "data" not in doc:
        doc["data"] = {"synth": {}}
    doc["lambdas"] = args.lambdas
    doc["methods"] = args.methods
    doc["iterations"] = args.T
    doc["seeds"] = args.seeds
    if args.lw is not None:
        doc["lw_enabled"] = args.lw
    if args.steps is not None:
        doc.setdefault("train", {})["steps"] = args.steps
    if args.learning_rate is not None:
        doc.setdefault("train", {})["learning_rate"] = args.learning_rate
    if args.eps is not None:
        doc["eps"] = args.eps
    cfg = pipeline.config_from_dict(doc)
    return _finish_run(cfg, args.out)


def _read_predictions_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValidationError(f"{path} is empty") from None
            if header != ["y_hat", "y", "b"]:
                raise SchemaError(
                    f"predictions header must be y_hat,y,b; found {','.join(header)}"
                )
            rows = []
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise ParseError(f"{path} line {line_no}: expected 3 cells, found {len(row)}")
                try:
                    rows.append([int(cell) for cell in row])
                except ValueError as exc:
                    raise ParseError(f"{path} line {line_no}: bad integer: {exc}") from exc
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    arr = np.asarray(rows, dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _cmd_metrics(args) -> int:
    y_hat, y, b = _read_predictions_csv(args.pred)
    n_classes = int(max(y_hat.max(), y.max())) + 1
    n_bias = int(b.max()) + 1
    if args.conflicting_set is not None:
        conflicting = args.conflicting_set
    else:
        if n_classes != n_bias:
            raise ValidationError(
                "pass --conflicting-set explicitly when n_classes != n_bias"
            )
        conflicting = [(yy, bb) for yy in range(n_classes) for bb in range(n_bias) if yy != bb]
    records = PredictionRecord(y_hat=y_hat, y=y, b=b, n_classes=n_classes, n_bias=n_bias)
    report = fairness_report(records, conflicting, EoPolicy(args.eo_policy))
    text = report_to_json(report)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairwhiten", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="synthetic-spec JSON -> dataset CSV")
    p_gen.add_argument("--spec", required=True, help="path to a synthetic-spec JSON file")
    p_gen.add_argument("--train-out", required=True, help="output CSV path for the train split")
    p_gen.add_argument("--test-out", help="optional output CSV path for the balanced test split")
    p_gen.set_defaults(func=_cmd_generate)

    p_run = sub.add_parser("run", help="run-config JSON -> report JSON + CSV")
    p_run.add_argument("--config", required=True, help="path to a run-config JSON file")
    p_run.add_argument("--out", help="output directory (overrides config output_dir)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid flags -> report JSON + CSV")
    p_sweep.add_argument("--lambda", dest="lambdas", type=_comma_list(float), default=[0.25],
                         help="comma-separated blend weights, e.g. 0,0.25,0.5,1")
    p_sweep.add_argument("--method", dest="methods", type=_comma_list(str), default=["cns"],
                         help="comma-separated solvers from zca,cd,cns")
    p_sweep.add_argument("--T", dest="T", type=_comma_list(int), default=[5],
                         help="comma-separated iteration counts for the iterative solver")
    p_sweep.add_argument("--seeds", type=_comma_list(int), default=[0],
                         help="comma-separated seeds, e.g. 0,1,2")
    p_sweep.add_argument("--config", help="optional base run-config JSON to override")
    p_sweep.add_argument("--steps", type=int, help="training steps per head")
    p_sweep.add_argument("--learning-rate", type=float, help="training learning rate")
    p_sweep.add_argument("--eps", type=float, help="covariance shrinkage added before inversion")
    lw_group = p_sweep.add_mutually_exclusive_group()
    lw_group.add_argument("--lw", dest="lw", action="store_true", default=None,
                          help="enable group loss weighting on the target head")
    lw_group.add_argument("--no-lw", dest="lw", action="store_false",
                          help="disable group loss weighting")
    p_sweep.add_argument("--out", help="output directory")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_metrics = sub.add_parser("metrics", help="predictions CSV -> fairness report JSON")
    p_metrics.add_argument("--pred", required=True, help="CSV with header y_hat,y,b")
    p_metrics.add_argument("--conflicting-set", type=_parse_cells,
                           help="bias-conflicting cells as y:b pairs, e.g. 0:1,1:0 "
                                "(default: all off-diagonal cells)")
    p_metrics.add_argument("--eo-policy", choices=[p.value for p in EoPolicy],
                           default=EoPolicy.ERROR.value,
                           help="treatment of empty conditioning cells")
    p_metrics.add_argument("--out", help="write the report JSON here instead of stdout")
    p_metrics.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
