"""Command-line entry point.

Subcommands:

* ``gen``            synthetic benchmark data with ground-truth columns
* ``audit``          score a test set and flag individuals
* ``eval``           naive-vs-adjusted RMSE comparison against ground truth
* ``check-dag``      pre-audit validation of a DAG / role combination
* ``demo-collider``  regenerate the bundled collider scenario end to end

Every command writes a run manifest next to its outputs recording the
exact flags, seeds and input digests, so a run can be replayed
byte-for-byte.  Exit codes: 0 success, 1 validation/usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .causal_graph import (
    AuditRoles,
    Dag,
    GraphError,
    dag_to_text,
    parse_dag,
    parse_dag_json,
    partition_nodes,
    validate_for_audit,
)
from .classifiers import (
    ExternalModel,
    ExternalModelError,
    LookupModel,
    PredictionError,
    TrainingError,
    train,
)
from .dataset import (
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    AttributeSpec,
    DataError,
    Dataset,
    Schema,
    fit_distribution,
    load_csv,
    load_distribution,
)
from .evaluation import EvaluationError, compare
from .scm import ScmError, SyntheticConfig, generate_synthetic, synthetic_dag
from .situation_test import AuditConfig, AuditError, audit
from . import demo as demo_mod

log = logging.getLogger("situtest")


class UsageError(ValueError):
    """Bad flags or flag combinations."""


_VALIDATION_ERRORS = (
    UsageError,
    GraphError,
    DataError,
    TrainingError,
    PredictionError,
    AuditError,
    ScmError,
    EvaluationError,
    FileNotFoundError,
    IsADirectoryError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1, not argparse's 2
        raise UsageError(message)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("SITUTEST_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return 1
        args.func(args)
        return 0
    except ExternalModelError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> _Parser:
    parser = _Parser(prog="situtest", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"situtest {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", parents=[], help="generate synthetic benchmark data")
    p.add_argument("--n", type=int, required=True, help="number of records (positive)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=1.0,
                   help="scale of the protected attribute's true effect")
    p.add_argument("--collider-y", type=float, default=1.0, dest="collider_y",
                   help="collider loading on the outcome")
    p.add_argument("--collider-a", type=float, default=2.0, dest="collider_a",
                   help="collider loading on the protected attribute")
    p.add_argument("--noise", type=float, default=0.01,
                   help="upper bound of the collider's uniform noise")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--dag-out", dest="dag_out", default=None,
                   help="also write the generator's DAG file here")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("audit", help="audit a classifier over a test set")
    _common_audit_flags(p)
    p.add_argument("--alpha", type=float, required=True,
                   help="flagging threshold in [0, 1] (required; no default)")
    p.add_argument("--out-prefix", dest="out_prefix", required=True,
                   help="write <prefix>.csv, <prefix>.json and the manifest")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("eval", help="compare naive and adjusted probes to ground truth")
    _common_audit_flags(p)
    p.add_argument("--alpha", type=float, default=1.0,
                   help="threshold recorded in the config (not used by RMSE)")
    p.add_argument("--truth-col", dest="truth_col", default="true_ds",
                   help="test CSV column holding the true scores")
    p.add_argument("--out", required=True, help="comparison report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("check-dag", help="validate a DAG / role combination")
    p.add_argument("--dag", required=True)
    p.add_argument("--protected", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.add_argument("--out", default=None,
                   help="also write the report (and its manifest) here")
    p.set_defaults(func=_cmd_check_dag)

    p = sub.add_parser("demo-collider",
                       help="regenerate the bundled collider scenario end to end")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_demo)
    return parser


def _common_audit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dag", required=True, help="DAG file (edge-list text or JSON)")
    p.add_argument("--data", required=True, help="test set CSV")
    p.add_argument("--model", required=True,
                   help="lr | nb | knn[:k=K] | lookup:<table.json> | external:<command>")
    p.add_argument("--train", default=None, help="training CSV for built-in models")
    p.add_argument("--dist", default=None,
                   help="descendant-distribution JSON (the training distribution)")
    p.add_argument("--fit-dist-from", dest="fit_dist_from", default=None,
                   help="CSV to fit the descendant distribution from")
    p.add_argument("--bins", type=int, default=10,
                   help="equal-frequency bins for continuous descendants")
    p.add_argument("--protected", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--schema", default=None, help="optional schema JSON")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _ManifestBuilder:
    """Collects input/output digests while a command runs."""

    def __init__(self, command: str, args: argparse.Namespace):
        flags = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
        self.payload = {
            "command": command,
            "tool_version": __version__,
            "timestamp": _utc_now(),
            "flags": flags,
            "seeds": {k: v for k, v in flags.items() if "seed" in k},
            "inputs": {},
            "outputs": {},
        }

    def read_text(self, path: str) -> str:
        data = Path(path).read_bytes()
        self.payload["inputs"][str(path)] = _sha256(data)
        return data.decode("utf-8")

    def write_text(self, path: str, text: str) -> None:
        data = text.encode("utf-8")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
        self.payload["outputs"][str(path)] = _sha256(data)

    def save(self, path: str) -> None:
        Path(path).write_text(json.dumps(self.payload, indent=2) + "\n",
                              encoding="utf-8")


def _cmd_gen(args: argparse.Namespace) -> None:
    manifest = _ManifestBuilder("gen", args)
    config = SyntheticConfig(
        n=args.n, seed=args.seed, delta=args.delta,
        collider_y_weight=args.collider_y, collider_a_weight=args.collider_a,
        noise_bound=args.noise,
    )
    data = generate_synthetic(config)
    manifest.write_text(args.out, data.to_csv_text())
    if args.dag_out:
        manifest.write_text(args.dag_out, dag_to_text(synthetic_dag()))
    manifest.save(args.out + ".manifest.json")
    log.info("wrote %s rows to %s", len(data), args.out)


def _load_dag(manifest: _ManifestBuilder, path: str) -> Dag:
    text = manifest.read_text(path)
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return parse_dag_json(text)
    return parse_dag(text)


def _file_cells(text: str) -> tuple[list[str], dict[str, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV: missing header row") from None
    cells: dict[str, list[str]] = {name: [] for name in header}
    for row in reader:
        if not row:
            continue
        for name, value in zip(header, row):
            cells[name].append(value.strip())
    return header, cells


def _infer_kinds(texts: list[str]) -> dict[str, AttributeSpec]:
    """One consistent attribute spec per column across all given CSVs.

    Pooling the files keeps categorical level coding and binary/continuous
    decisions identical between, e.g., a training and a test set.
    """
    pooled: dict[str, list[str]] = {}
    for text in texts:
        _, cells = _file_cells(text)
        for name, values in cells.items():
            pooled.setdefault(name, []).extend(values)
    specs = {}
    for name, values in pooled.items():
        if values and all(v in ("0", "1") for v in values):
            specs[name] = AttributeSpec(name, BINARY)
            continue
        try:
            for v in values:
                float(v)
            specs[name] = AttributeSpec(name, CONTINUOUS)
        except ValueError:
            specs[name] = AttributeSpec(name, CATEGORICAL,
                                        tuple(sorted(set(values))))
    return specs


def _parse_schema_json(text: str) -> dict[str, AttributeSpec]:
    obj = json.loads(text)
    specs = {}
    for a in obj["attributes"]:
        specs[a["name"]] = AttributeSpec(a["name"], a["kind"],
                                         tuple(a.get("levels", ())))
    return specs


class _DataLoader:
    """Loads every CSV of one command under a shared attribute vocabulary."""

    def __init__(self, manifest: _ManifestBuilder, roles: AuditRoles,
                 schema_path: str | None, csv_paths: list[str]):
        self.manifest = manifest
        self.roles = roles
        self.texts = {path: manifest.read_text(path) for path in csv_paths}
        if schema_path:
            self.specs = _parse_schema_json(manifest.read_text(schema_path))
        else:
            self.specs = _infer_kinds(list(self.texts.values()))

    def load(self, path: str) -> Dataset:
        text = self.texts[path]
        header, _ = _file_cells(text)
        attrs = [self.specs[name] for name in header if name in self.specs]
        return load_csv(text, Schema(attrs, self.roles))


def _model_features(dag: Dag, schema: Schema, outcome: str) -> list[str]:
    # Only attributes the policy graph knows about may feed the model;
    # ground-truth extras like tau/true_ds never become features.
    return [n for n in schema.names if n in dag.nodes and n != outcome]


def _build_model(manifest: _ManifestBuilder, spec: str, dag: Dag,
                 loader: _DataLoader, args: argparse.Namespace,
                 roles: AuditRoles, test_schema: Schema):
    kind, _, rest = spec.partition(":")
    if kind in ("lr", "nb", "knn"):
        if args.train is None:
            raise UsageError(f"model {kind!r} needs --train")
        train_data = loader.load(args.train)
        features = _model_features(dag, train_data.schema, roles.outcome)
        hyper = {}
        if kind == "knn":
            hyper["k"] = 5
            for part in filter(None, rest.split(",")):
                key, _, value = part.partition("=")
                if key.strip() != "k":
                    raise UsageError(f"unknown knn option {key!r}")
                hyper["k"] = int(value)
        name = {"lr": "logistic", "nb": "naive_bayes", "knn": "knn"}[kind]
        return train(name, train_data, features, **hyper)
    if kind == "lookup":
        if not rest:
            raise UsageError("lookup model needs a table path: lookup:<table.json>")
        return LookupModel.from_json(manifest.read_text(rest))
    if kind == "external":
        if not rest:
            raise UsageError("external model needs a command: external:<command>")
        return ExternalModel(_model_features(dag, test_schema, roles.outcome), rest)
    raise UsageError(f"unknown model spec {spec!r}")


def _build_config(manifest: _ManifestBuilder, args: argparse.Namespace,
                  dag: Dag, loader: _DataLoader, alpha: float) -> AuditConfig:
    partition = partition_nodes(dag, loader.roles)
    if args.dist:
        dist = load_distribution(manifest.read_text(args.dist))
    elif args.fit_dist_from:
        source = loader.load(args.fit_dist_from)
        variables = [n for n in source.schema.names if n in partition.descendants]
        dist = fit_distribution(source, variables, bins=args.bins)
    else:
        raise UsageError("one of --dist or --fit-dist-from is required")
    return AuditConfig(threshold=alpha, partition=partition,
                       collider_distribution=dist)


def _audit_inputs(manifest: _ManifestBuilder, args: argparse.Namespace,
                  alpha: float):
    roles = AuditRoles(protected=args.protected, outcome=args.outcome)
    dag = _load_dag(manifest, args.dag)
    roles.require_in(dag)
    csv_paths = [args.data]
    for extra in (args.train, args.fit_dist_from):
        if extra and extra not in csv_paths:
            csv_paths.append(extra)
    loader = _DataLoader(manifest, roles, args.schema, csv_paths)
    data = loader.load(args.data)
    model = _build_model(manifest, args.model, dag, loader, args, roles,
                         data.schema)
    config = _build_config(manifest, args, dag, loader, alpha)
    return roles, data, model, config


def _cmd_audit(args: argparse.Namespace) -> None:
    manifest = _ManifestBuilder("audit", args)
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    roles, data, model, config = _audit_inputs(manifest, args, args.alpha)
    report = audit(model, data, roles, config, threads=max(1, args.threads))
    manifest.write_text(args.out_prefix + ".csv", report.to_csv_text())
    manifest.write_text(args.out_prefix + ".json", report.to_json_text() + "\n")
    manifest.save(args.out_prefix + ".manifest.json")
    summary = report.summary()
    print(json.dumps(summary))


def _cmd_eval(args: argparse.Namespace) -> None:
    manifest = _ManifestBuilder("eval", args)
    roles, data, model, config = _audit_inputs(manifest, args, args.alpha)
    if args.truth_col not in data.schema:
        raise UsageError(f"test data lacks the truth column {args.truth_col!r}")
    truths = data.column(args.truth_col)
    result = compare(model, data, roles, config, truths,
                     threads=max(1, args.threads))
    manifest.write_text(args.out, result.to_json_text() + "\n")
    manifest.save(args.out + ".manifest.json")
    print(result.summary_text())


def _cmd_check_dag(args: argparse.Namespace) -> None:
    manifest = _ManifestBuilder("check-dag", args)
    dag = _load_dag(manifest, args.dag)
    roles = AuditRoles(protected=args.protected, outcome=args.outcome)
    report = validate_for_audit(dag, roles)
    rendered = report.to_json() if args.json else report.to_text()
    print(rendered)
    if args.out:
        manifest.write_text(args.out, rendered + "\n")
        manifest.save(args.out + ".manifest.json")


def _cmd_demo(args: argparse.Namespace) -> None:
    manifest = _ManifestBuilder("demo-collider", args)
    out = Path(args.out_dir)
    report, data = demo_mod.run_demo(n=args.n, seed=args.seed, alpha=args.alpha)
    manifest.write_text(str(out / "dag.txt"), dag_to_text(demo_mod.demo_dag()))
    manifest.write_text(str(out / "classifier.json"),
                        demo_mod.demo_lookup_model().to_json() + "\n")
    manifest.write_text(str(out / "distribution.json"),
                        demo_mod.demo_collider_distribution().to_json() + "\n")
    manifest.write_text(str(out / "test.csv"), data.to_csv_text())
    manifest.write_text(str(out / "report.csv"), report.to_csv_text())
    manifest.write_text(str(out / "report.json"), report.to_json_text() + "\n")
    manifest.save(str(out / "manifest.json"))
    naive = [abs(s.nds) for s in report.individuals]
    adjusted = [s.ds for s in report.individuals]
    print(
        "demo audit over %d records: naive |score| range [%.3f, %.3f], "
        "adjusted score max %.2e" % (
            len(report.individuals), min(naive), max(naive), max(adjusted))
    )


if __name__ == "__main__":
    sys.exit(main())
