"""Command-line entry point: ``ioexai <command> ...``.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime error.
Every command writes a ``manifest.txt`` next to its outputs recording the
argv, config, seed and SHA-256 digests of inputs and outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import shlex
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, svg
from .dataset import (
    MODEL_FEATURES,
    ColumnMapping,
    DatasetError,
    builtin_scenario,
    load_dataset,
    load_scenario,
    save_dataset,
    summary_stats,
    synth_generate,
    train_test_split,
    validate,
    write_summary,
)
from .evaluation import ScoreError, THEORETICAL, build_comparison_report, write_report
from .kvconfig import ConfigError, format_kv, read_kv
from .pipeline import AssociationError, EmptyCohortError, PipelineConfig, model_features, read_run, run_pipeline, write_run
from .regressors import FitConfig, FitError, ModelFormatError, fit_ensemble, load_model, save_model
from .shapley import BackgroundSet, EnumerationLimitError, EvaluationCounter, importance_from_explanations, shapley_exact_many

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4
CONFIG_DIR_ENV = "IOEXAI_CONFIG_DIR"
MANIFEST_FILE = "manifest.txt"
EFFICIENCY_TOLERANCE = 1e-9

VALIDATION_ERRORS = (ConfigError, DatasetError, FitError, ModelFormatError, ScoreError, AssociationError, EnumerationLimitError)


class ValidationFailure(Exception):
    pass


class CommandFailure(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _input_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST_FILE)
    return [path] if path.is_file() else []


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    seconds = int(epoch) if epoch and epoch.isdigit() else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(seconds))


def write_manifest(
    out_dir: Path,
    argv: list[str],
    command: str,
    inputs: list[Path],
    outputs: list[Path],
    config: dict[str, str] | None = None,
    seed: int | None = None,
    counters: dict[str, int] | None = None,
) -> Path:
    items: dict[str, object] = {
        "command": command,
        "argv": shlex.join(argv),
        "cwd": os.getcwd(),
        "version": __version__,
        "created": _timestamp(),
    }
    if seed is not None:
        items["seed"] = seed
    for key, value in (config or {}).items():
        items[f"config.{key}"] = value
    for path in inputs:
        for f in _input_files(Path(path)):
            items[f"input.{f}"] = sha256_file(f)
    for f in sorted(set(outputs)):
        items[f"output.{f.relative_to(out_dir) if f.is_relative_to(out_dir) else f}"] = sha256_file(f)
    for key, value in (counters or {}).items():
        items[f"counter.{key}"] = value
    path = out_dir / MANIFEST_FILE
    path.write_text(format_kv(items), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    return {key: value for _, key, value in read_kv(path)}


def output_digests(manifest: dict[str, str]) -> dict[str, str]:
    return {k[len("output.") :]: v for k, v in manifest.items() if k.startswith("output.")}


def resolve_config(value: str | None, command: str) -> Path | None:
    """``--config`` as given, else relative to ``$IOEXAI_CONFIG_DIR``, else ``<dir>/<command>.conf``."""
    config_dir = os.environ.get(CONFIG_DIR_ENV)
    if value is not None:
        path = Path(value)
        if not path.exists() and config_dir and (Path(config_dir) / value).exists():
            path = Path(config_dir) / value
        if not path.exists():
            raise ConfigError(f"config file not found: {value}")
        return path
    if config_dir and (Path(config_dir) / f"{command}.conf").exists():
        return Path(config_dir) / f"{command}.conf"
    return None


def _require_out(args) -> Path:
    if not args.out:
        raise ValidationFailure(f"{args.command}: --out is required")
    return Path(args.out)


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _pipeline_config(args) -> PipelineConfig:
    path = resolve_config(args.config, args.command)
    cfg = PipelineConfig.from_file(path) if path else PipelineConfig()
    overrides = {}
    if getattr(args, "kind", None):
        overrides["kind"] = args.kind
    if getattr(args, "explain_rows", None):
        overrides["explain_rows"] = args.explain_rows
    fit_overrides = {}
    for flag, key in (("n_estimators", "n_estimators"), ("learning_rate", "learning_rate")):
        value = getattr(args, flag, None)
        if value is not None:
            fit_overrides[key] = value
    if getattr(args, "max_depth", None) is not None:
        fit_overrides["max_depth"] = FitConfig.from_items({"max_depth": args.max_depth}).max_depth
    if args.seed is not None:
        fit_overrides["seed"] = args.seed
    if fit_overrides:
        overrides["fit"] = replace(cfg.fit, **fit_overrides)
    return replace(cfg, **overrides) if overrides else cfg


# --------------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    out = _require_out(args)
    source = Path(args.scenario)
    scenario = load_scenario(source) if source.exists() else builtin_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    ds = synth_generate(scenario)
    written = save_dataset(ds, out)
    write_manifest(out, args.argv, "generate", [source] if source.exists() else [], written, seed=scenario.seed)
    _say(args, f"wrote {len(ds)} sessions to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    out = _require_out(args)
    mapping = ColumnMapping.from_file(args.mapping) if args.mapping else None
    ds = load_dataset(args.source, mapping)
    if args.split:
        n_train, n_test = args.split
        ds = train_test_split(ds, n_train, n_test, args.seed if args.seed is not None else 0)
    report = validate(ds)
    written = save_dataset(ds, out)
    (out / "validation.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    written.append(out / "validation.txt")
    present = [f for f in MODEL_FEATURES if np.isfinite(ds.column(f)).any()]
    write_summary(summary_stats(ds, present), out / "summary.csv")
    written.append(out / "summary.csv")
    inputs = [Path(args.source)] + ([Path(args.mapping)] if args.mapping else [])
    ingest = ds.ingest_report
    counters = {"rows": len(ds)}
    if ingest is not None:
        counters.update(rows_read=ingest.rows_read, rows_dropped=ingest.rows_dropped, rows_flagged=ingest.rows_flagged)
    write_manifest(out, args.argv, "ingest", inputs, written, seed=args.seed, counters=counters)
    _say(args, f"ingested {len(ds)} rows into {out}; {len(report.violations)} validation findings")
    if args.strict and not report.ok:
        raise ValidationFailure("validation failed:\n" + "\n".join(report.lines()))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _pipeline_config(args)
    out = _require_out(args)
    ds = load_dataset(args.dataset)
    names = model_features(args.target, cfg.kind, cfg.linear_uses_cell_id)
    rows = ds.train_indices if ds.split is not None else None
    rows = ds.complete_rows(names + (args.target,), rows)
    if rows.size == 0:
        raise DatasetError("no complete training rows")
    model = fit_ensemble(ds.matrix(names, rows), ds.column(args.target)[rows], cfg.kind, cfg.fit, names, args.target)
    model_path = out if out.suffix else out / f"model_{args.target}.txt"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    config = {"kind": cfg.kind, "target": args.target, **model.config.as_items()}
    write_manifest(model_path.parent, args.argv, "train", [Path(args.dataset)], [model_path], config, cfg.seed, {"train_rows": int(rows.size)})
    _say(args, f"trained {cfg.kind} on {rows.size} rows -> {model_path}")
    return EXIT_OK


def cmd_explain(args) -> int:
    out = _require_out(args)
    model = load_model(args.model)
    ds = load_dataset(args.dataset)
    missing = [f for f in model.feature_names if f not in MODEL_FEATURES]
    if missing:
        raise ValidationFailure(
            f"model features {list(model.feature_names)} do not match dataset columns; missing {missing}"
        )
    names = model.feature_names
    bg_rows = ds.complete_rows(names, ds.train_indices if ds.split is not None else None)
    rows = ds.complete_rows(names, ds.test_indices if ds.split is not None else None)
    if args.rows is not None:
        rows = rows[: args.rows]
    if rows.size == 0 or bg_rows.size == 0:
        raise DatasetError("no complete rows to explain")
    bg = BackgroundSet.from_rows(ds.matrix(names, bg_rows), names, args.background, args.seed or 0)
    counter = EvaluationCounter()
    exps = shapley_exact_many(model, ds.matrix(names, rows), bg, counter)
    gaps = np.array([e.efficiency_gap for e in exps])
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(("row", "base_value", "prediction") + tuple(f"phi_{n}" for n in names) + ("efficiency_gap",))]
    for row, e, gap in zip(rows, exps, gaps):
        lines.append(",".join([str(int(row)), repr(e.base_value), repr(e.prediction)] + [repr(float(p)) for p in e.phi] + [repr(float(gap))]))
    phi_path = out / "phi.csv"
    phi_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    importance = importance_from_explanations(exps, names)
    imp_lines = ["rank,feature,mean_abs_phi"] + [
        f"{r},{name},{value!r}" for r, (name, value) in enumerate(importance.ranked(), start=1)
    ]
    imp_path = out / "importance.csv"
    imp_path.write_text("\n".join(imp_lines) + "\n", encoding="utf-8")
    svg_path = svg.write_svg(svg.horizontal_bars(f"Mean |phi| for {model.target_name}", importance.ranked()), out / "importance.svg")
    max_gap = float(gaps.max())
    counters = {"explained_rows": counter.instances, "coalition_evaluations": counter.coalitions, "model_evaluations": counter.model_rows}
    write_manifest(
        out, args.argv, "explain", [Path(args.model), Path(args.dataset)], [phi_path, imp_path, svg_path],
        {"background_rows": str(bg.data.shape[0])}, args.seed or 0, counters,
    )
    _say(args, f"explained {rows.size} rows; max efficiency gap {max_gap:.3g}")
    if not max_gap <= EFFICIENCY_TOLERANCE * max(1.0, float(np.abs([e.prediction for e in exps]).max())):
        raise CommandFailure(f"efficiency check failed: max gap {max_gap!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    out = _require_out(args)
    ds = load_dataset(args.dataset)
    if ds.split is None:
        raise DatasetError("dataset has no train/test split; run train_test_split first (ioexai ingest --split)")
    result = run_pipeline(ds, cfg, name=args.name)
    written = write_run(result, out)
    write_manifest(out, args.argv, "run", [Path(args.dataset)], written, cfg.as_items(), cfg.seed, result.counters)
    _say(
        args,
        f"{result.name}: {result.associations.n_associated}/{len(ds)} users associated, "
        f"loss {result.training_loss:.6g}, objective {result.objective:.6g} (truth {result.objective_truth:.6g})",
    )
    return EXIT_OK


def cmd_report(args) -> int:
    out = _require_out(args)
    runs = [read_run(d) for d in args.runs]
    report = build_comparison_report(runs, args.reference)
    written = write_report(report, out)

    names = [r.name for r in sorted(runs, key=lambda r: (r.kind, r.name))]
    boxes = {"truth": report.truth_cqi_stats} if report.truth_cqi_stats else {}
    for s in report.scores:
        if s.target == "cqi":
            boxes[s.run] = s.cqi_stats
    figures = {"cqi_box.svg": svg.box_summary("CQI distribution (test partition)", boxes)}
    targets = sorted({s.target for s in report.scores})
    figures["scores_r2.svg"] = svg.bar_chart(
        "R-squared by model", names, {t: [report.score(n, t).r_squared for n in names] for t in targets}
    )
    figures["scores_mape.svg"] = svg.bar_chart(
        "MAPE by model", names, {t: [report.score(n, t).mape_pct for n in names] for t in targets}, unit="%"
    )
    for target in ("dl_mbps", "ul_mbps"):
        if target in targets:
            labels = [THEORETICAL] + names
            values = [float(np.mean(runs[0].truth[target]))] + [report.score(n, target).mean_prediction for n in names]
            figures[f"rates_{target}.svg"] = svg.bar_chart(f"Mean {target}", labels, {target: values}, unit="Mbps")
    for (run, target), ranked in sorted(report.importance.items()):
        figures[f"importance_{run}_{target}.svg"] = svg.horizontal_bars(f"{run}: mean |phi| for {target}", ranked)
    figures["correlation.svg"] = svg.heat_table("Pearson correlation (test partition)", report.correlation_names, report.correlation)
    for name, text in figures.items():
        written.append(svg.write_svg(text, out / name))
    write_manifest(out, args.argv, "report", [Path(d) for d in args.runs], written, {"reference": args.reference})
    _say(args, report.summary_text().rstrip())
    return EXIT_OK


def cmd_replay(args) -> int:
    """Re-execute a manifest's command line and compare output digests."""
    manifest = read_manifest(args.manifest)
    argv = shlex.split(manifest["argv"])
    expected = output_digests(manifest)
    cwd = Path(manifest.get("cwd", "."))
    previous = os.getcwd()
    os.chdir(cwd)
    try:
        code = main(argv)
        if code != EXIT_OK:
            return code
        new_manifest = read_manifest(_manifest_location(argv))
    finally:
        os.chdir(previous)
    actual = output_digests(new_manifest)
    if actual != expected:
        changed = sorted(k for k in set(expected) | set(actual) if expected.get(k) != actual.get(k))
        raise CommandFailure(f"replay produced different outputs: {', '.join(changed)}")
    _say(args, f"replay matched {len(expected)} output digests")
    return EXIT_OK


def _manifest_location(argv: list[str]) -> Path:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    if args.command == "train" and out.suffix:
        return out.parent
    return out


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--config", default=None, help=f"key = value config file (relative names also searched in ${CONFIG_DIR_ENV})")
    common.add_argument("--out", default=None, help="output directory (or model file for train)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="ioexai", description="Quality-aware service delivery with Shapley explanations.")
    parser.add_argument("--version", action="version", version=f"ioexai {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="draw a synthetic session dataset")
    p.add_argument("scenario", help="scenario file or built-in name (table2, five_gnb)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", parents=[common], help="import a CSV trace through a column mapping")
    p.add_argument("source", help="CSV file or dataset directory")
    p.add_argument("--mapping", default=None, help="column mapping file")
    p.add_argument("--split", type=int, nargs=2, metavar=("N_TRAIN", "N_TEST"), help="draw a train/test split")
    p.add_argument("--strict", action="store_true", help="exit with code 3 when validation finds problems")
    p.set_defaults(func=cmd_ingest)

    def fit_flags(p):
        p.add_argument("--kind", default=None, help="random_forest, extra_trees, gradient_boosting, adaboost_r2 or linear")
        p.add_argument("--n-estimators", dest="n_estimators", type=int, default=None)
        p.add_argument("--max-depth", dest="max_depth", default=None, help="integer, 'none' or 'auto'")
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)

    p = sub.add_parser("train", parents=[common], help="fit one regressor")
    p.add_argument("dataset")
    p.add_argument("--target", default="cqi", choices=[f for f in MODEL_FEATURES if f != "cell_id"])
    fit_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common], help="exact Shapley values for a trained model")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--rows", type=int, default=None, help="explain at most this many rows")
    p.add_argument("--background", type=int, default=200, help="background rows (mean substitution)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run", parents=[common], help="associate, fit, explain and predict")
    p.add_argument("dataset")
    p.add_argument("--name", default=None, help="run name used in reports (default: model kind)")
    p.add_argument("--explain-rows", dest="explain_rows", type=int, default=None)
    fit_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="compare runs and draw figures")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--reference", default=THEORETICAL, help="run name or 'theoretical' (test ground truth)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", parents=[common], help="re-run a manifest and verify its output digests")
    p.add_argument("manifest", help="manifest file or the directory holding it")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args.argv = argv
    try:
        return args.func(args)
    except (ValidationFailure, *VALIDATION_ERRORS) as exc:
        print(f"ioexai {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CommandFailure, EmptyCohortError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"ioexai {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
