"""Command-line entry point wiring all modules into reproducible experiments.

Commands: gen-data, train, finetune, eval, portrait, solve-trace. Every
command validates its configuration and input artifacts before writing
anything; outputs land under --out with a manifest.json listing them.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, plantgen, training
from .config import ConfigError, ExperimentConfig, load_config
from .flowsheet import FlowsheetGraph, subgraph
from .nn import CheckpointError, load_manifest, save_manifest
from .plantgen import Dataset, Plant, PlantError, default_plant_path, load_plant
from .solvers import METHODS, SolveConfig, solve_cycles
from .training import FinetuneSchedule, TrainingError

logger = logging.getLogger("flowtune")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class Manifest:
    """Collects artifact paths written by a command."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.entries: dict[str, str] = {}

    def add(self, key: str, path: Path) -> Path:
        self.entries[key] = str(Path(path).relative_to(self.out_dir))
        return Path(path)

    def write(self) -> None:
        (self.out_dir / "manifest.json").write_text(
            json.dumps(self.entries, indent=2, sort_keys=True))


def _require(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required {what}", EXIT_CONFIG)
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING)
    return p


def _load_plant(args, cfg: ExperimentConfig) -> Plant:
    plant_path = args.plant or cfg.plant or default_plant_path()
    p = Path(plant_path)
    if not p.exists():
        raise CliError(f"plant file not found: {p}", EXIT_CONFIG)
    try:
        return load_plant(p)
    except PlantError as exc:
        raise CliError(f"invalid plant file: {exc}", EXIT_CONFIG)


def _load_dataset(args, cfg: ExperimentConfig) -> Dataset:
    path = _require(getattr(args, "dataset", None) or cfg.dataset_path, "dataset")
    try:
        return Dataset.load(path)
    except (PlantError, ValueError, OSError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}", EXIT_MISSING)


def _load_models(args, cfg: ExperimentConfig, attr: str = "checkpoints"):
    path = _require(getattr(args, attr, None), f"{attr} manifest")
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise CliError(f"checkpoint manifest not found: {path}", EXIT_MISSING)
    try:
        return load_manifest(path)
    except CheckpointError as exc:
        raise CliError(f"cannot load checkpoints: {exc}", EXIT_MISSING)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _graph_for(args, plant: Plant) -> FlowsheetGraph:
    units = getattr(args, "units", None)
    if not units:
        return plant.graph
    names = [u.strip() for u in units.split(",") if u.strip()]
    for name in names:
        if name not in plant.graph.units:
            raise CliError(f"unknown unit in --units: {name}", EXIT_CONFIG)
    return subgraph(plant.graph, names)


def _solve_config(cfg: ExperimentConfig, method: str | None = None,
                  scale=None) -> SolveConfig:
    return SolveConfig(method=method or cfg.solve.method,
                       max_iterations=cfg.solve.max_iterations,
                       tolerance=cfg.solve.tolerance, scale=scale,
                       wegstein_bounds=tuple(cfg.solve.wegstein_bounds),
                       newton_damping=cfg.solve.newton_damping)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    seed = cfg.require_seed() if args.seed is None else args.seed
    points = args.points or cfg.dataset_points
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    try:
        dataset = plantgen.generate_dataset(plant, n_points=points, seed=seed)
    except PlantError as exc:
        logger.error("data generation aborted: %s", exc)
        return EXIT_NUMERIC
    path = manifest.add("dataset", out / "dataset.csv")
    dataset.save(path)
    manifest.add("dataset_meta", Path(str(path) + ".meta.json"))
    manifest.write()
    logger.info("wrote %d rows (%d train / %d test) to %s",
                len(dataset.rows), len(dataset.train_rows),
                len(dataset.test_rows), path)
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    dataset = _load_dataset(args, cfg)
    seed = cfg.require_seed() if args.seed is None else args.seed
    epochs = args.epochs or cfg.train.epochs
    lr = args.lr or cfg.train.lr
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    try:
        models, reports = training.train_single_units(
            plant, dataset, epochs=epochs, lr=lr, seed=seed,
            jobs=args.jobs or cfg.train.jobs)
    except TrainingError as exc:
        logger.error("training aborted: %s", exc)
        return EXIT_NUMERIC
    ckpt_dir = out / "checkpoints"
    manifest.add("checkpoints", save_manifest(models, ckpt_dir))
    report_path = manifest.add("unit_report", out / "unit_r2.csv")
    training.write_unit_report(reports, report_path)
    manifest.write()
    for r in reports:
        logger.info("unit %-12s kind=%-14s r2=%.4f", r.unit, r.kind, r.r2)
    return EXIT_OK


def _parse_k_set(text: str | None, default) -> tuple[int, ...]:
    if not text:
        return tuple(default)
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise CliError(f"bad k-set {text!r}; expected integers", EXIT_CONFIG)


def cmd_finetune(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    dataset = _load_dataset(args, cfg)
    models = _load_models(args, cfg)
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    freeze = tuple(u.strip() for u in (args.freeze or "").split(",") if u.strip()) \
        or tuple(cfg.finetune.freeze)
    schedule = FinetuneSchedule(
        k_set=_parse_k_set(args.k_set, cfg.finetune.k_set),
        epochs=args.epochs or cfg.finetune.epochs,
        lr=args.lr or cfg.finetune.lr,
        method=args.method or cfg.finetune.method,
        frozen_units=freeze)
    try:
        tuned, log = training.finetune(plant, dataset, models, schedule)
    except TrainingError as exc:
        logger.error("fine-tuning aborted: %s", exc)
        return EXIT_NUMERIC
    ckpt_dir = out / "checkpoints_finetuned"
    manifest.add("checkpoints", save_manifest(tuned, ckpt_dir))
    log_path = manifest.add("training_log", out / "finetune_log.csv")
    training.write_finetune_log(log, log_path)
    reports = [training.evaluate_unit(tuned[name], plant, dataset, name)
               for name in plant.graph.units]
    report_path = manifest.add("unit_report", out / "unit_r2_finetuned.csv")
    training.write_unit_report(reports, report_path)
    manifest.write()
    logger.info("fine-tuned %d epochs over K-set %s; final loss %.4e",
                schedule.epochs, schedule.k_set, log[-1].loss if log else float("nan"))
    return EXIT_OK


def _eval_grid(plant: Plant, dataset: Dataset, models, cfg: ExperimentConfig,
               graph: FlowsheetGraph, methods, k_values, product: str):
    rows = []
    results = {}
    for method in methods:
        for k in k_values:
            res = training.evaluate(plant, dataset, models,
                                    _solve_config(cfg, method), k,
                                    graph=graph, product_stream=product)
            rows.append([method, k, *(f"{p:.8g}" for p in res.percentiles),
                         f"{res.end_to_end_r2:.6f}", res.failures])
            results[(method, k)] = res
    return rows, results


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    dataset = _load_dataset(args, cfg)
    models = _load_models(args, cfg)
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    graph = _graph_for(args, plant)
    product = args.product or cfg.eval.product
    if product not in graph.streams:
        raise CliError(f"product stream {product!r} not in graph", EXIT_CONFIG)
    k_values = list(range(0, (args.k_max or cfg.eval.k_max) + 1))
    if args.matrix:
        return _cmd_eval_matrix(args, cfg, plant, dataset, models, out,
                                manifest, product, k_values)
    rows, results = _eval_grid(plant, dataset, models, cfg, graph, METHODS,
                               k_values, product)
    conv_path = manifest.add("convergence", out / "convergence.csv")
    with open(conv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "k", "p25", "p50", "p75", "end_to_end_r2",
                         "failures"])
        writer.writerows(rows)
    k_max = k_values[-1]
    summary = {"product": product, "k_max": k_max, "methods": {}}
    for method in METHODS:
        res = results[(method, k_max)]
        parity_path = manifest.add(f"parity_{method}", out / f"parity_{method}.csv")
        with open(parity_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variable", "true", "predicted"])
            for var, pairs in res.parity.items():
                for t, p in pairs:
                    writer.writerow([var, f"{t:.10g}", f"{p:.10g}"])
        summary["methods"][method] = {
            "end_to_end_r2": res.end_to_end_r2,
            "median_scaled_error": res.percentiles[1],
            "stream_r2": res.stream_r2,
            "failures": res.failures,
        }
    summary_path = manifest.add("summary", out / "eval_summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    manifest.write()
    for method in METHODS:
        m = summary["methods"][method]
        logger.info("%-9s K=%d r2=%.4f median=%.4g", method, k_max,
                    m["end_to_end_r2"], m["median_scaled_error"])
    return EXIT_OK


def _cmd_eval_matrix(args, cfg, plant, dataset, models, out, manifest,
                     product, k_values) -> int:
    """Appendix-style grid: fine-tune once per training method, evaluate
    with every prediction method."""
    rows = []
    k_max = k_values[-1]
    for train_method in METHODS:
        schedule = FinetuneSchedule(k_set=tuple(cfg.finetune.k_set),
                                    epochs=cfg.finetune.epochs,
                                    lr=cfg.finetune.lr, method=train_method)
        try:
            tuned, _ = training.finetune(plant, dataset, models, schedule)
        except TrainingError as exc:
            logger.error("matrix fine-tune (%s) aborted: %s", train_method, exc)
            return EXIT_NUMERIC
        save_manifest(tuned, out / "matrix" / train_method)
        for predict_method in METHODS:
            res = training.evaluate(plant, dataset, tuned,
                                    _solve_config(cfg, predict_method), k_max,
                                    product_stream=product)
            rows.append([train_method, predict_method,
                         f"{res.percentiles[1]:.8g}",
                         f"{res.end_to_end_r2:.6f}", res.failures])
            logger.info("train=%-9s predict=%-9s r2=%.4f median=%.4g",
                        train_method, predict_method, res.end_to_end_r2,
                        res.percentiles[1])
    path = manifest.add("matrix", out / "method_matrix.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_method", "predict_method", "median_scaled_error",
                         "end_to_end_r2", "failures"])
        writer.writerows(rows)
    manifest.write()
    return EXIT_OK


def cmd_portrait(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    dataset = _load_dataset(args, cfg)
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    pair = tuple((args.pair or ",".join(cfg.portrait.pair)).split(","))
    if len(pair) != 2:
        raise CliError("--pair must name two tear variables", EXIT_CONFIG)
    model_sets = {"before": _load_models(args, cfg)}
    if args.checkpoints_after:
        model_sets["after"] = _load_models(args, cfg, "checkpoints_after")
    graph = plant.graph
    names = graph.tear_variable_names()
    stats = dataset.norm_stats(names)
    row = int(args.row)
    feeds, extras, truth = _row_context(plant, dataset, graph, row)
    data_points = dataset.values(list(pair), split=None)
    alignments = {}
    for tag, models in model_sets.items():
        graph.bind_models(models)
        portrait = analysis.phase_portrait(
            graph, feeds, extras, pair, truth, stats.sigma,
            data_points=data_points, grid=args.grid or cfg.portrait.grid)
        analysis.portrait_to_csv(portrait, manifest.add(
            f"portrait_{tag}_csv", out / f"portrait_{tag}.csv"))
        analysis.portrait_to_svg(portrait, manifest.add(
            f"portrait_{tag}_svg", out / f"portrait_{tag}.svg"))
        alignments[tag] = analysis.alignment_metric(portrait)
        logger.info("portrait (%s): alignment %.4f", tag, alignments[tag])
    path = manifest.add("alignment", out / "alignment.json")
    path.write_text(json.dumps(alignments, indent=2, sort_keys=True))
    manifest.write()
    return EXIT_OK


def _row_context(plant: Plant, dataset: Dataset, graph: FlowsheetGraph,
                 row_index: int):
    """Feeds, extras and the true tear vector for one test row."""
    test = dataset.test_rows
    if not 0 <= row_index < len(test):
        raise CliError(f"row {row_index} out of range (0..{len(test) - 1})",
                       EXIT_CONFIG)
    feeds = {}
    for s in graph.feeds:
        cols = [f"{s}.{v}" for v in graph.streams[s].variables]
        feeds[s] = test[row_index][dataset.column_indices(cols)]
    extras = {}
    for name, unit in graph.units.items():
        cols = [f"{name}.{n}" for n in unit.extra_inputs]
        extras[name] = test[row_index][dataset.column_indices(cols)] if cols \
            else np.zeros(0)
    truth = test[row_index][dataset.column_indices(graph.tear_variable_names())]
    return feeds, extras, truth


def cmd_solve_trace(args, cfg: ExperimentConfig) -> int:
    plant = _load_plant(args, cfg)
    dataset = _load_dataset(args, cfg)
    models = _load_models(args, cfg)
    out = _out_dir(args, cfg)
    manifest = Manifest(out)
    graph = _graph_for(args, plant)
    graph.bind_models(models)
    names = graph.tear_variable_names()
    stats = dataset.norm_stats(names)
    feeds, extras, _ = _row_context(plant, dataset, graph, int(args.row))
    cfg_solve = _solve_config(cfg, args.method, scale=stats.sigma)
    _, trace = solve_cycles(graph, feeds, extras, cfg_solve,
                            initial_guess=stats.mu.copy())
    path = manifest.add("trace", out / f"trace_{trace.method}_row{args.row}.csv")
    trace.to_csv(path, names)
    manifest.write()
    logger.info("%s: %d iterations, converged=%s diverged=%s residual=%.3e",
                trace.method, trace.iterations, trace.converged,
                trace.diverged, trace.residuals[-1])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowtune",
        description="Neural surrogate flowsheet simulation experiments")
    parser.add_argument("--config", help="YAML experiment config")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True, checkpoints=False):
        p.add_argument("--plant", help="plant definition YAML")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if dataset:
            p.add_argument("--dataset", help="dataset CSV path")
        if checkpoints:
            p.add_argument("--checkpoints", help="checkpoint dir or manifest")

    p = sub.add_parser("gen-data", help="generate the steady-state dataset")
    common(p, dataset=False)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="stage 1: fit per-unit surrogates")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="stage 2: train through the unrolled solver")
    common(p, checkpoints=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--k-set", dest="k_set", help="e.g. 0,1,2,...,10")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--freeze", help="comma-separated unit names to freeze")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="solve the surrogate flowsheet over test rows")
    common(p, checkpoints=True)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--product")
    p.add_argument("--units", help="restrict to a sub-flowsheet (comma-separated)")
    p.add_argument("--matrix", action="store_true",
                   help="run the training-method x prediction-method grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("portrait", help="phase portrait of the update field")
    common(p, checkpoints=True)
    p.add_argument("--checkpoints-after", dest="checkpoints_after",
                   help="fine-tuned checkpoints for the before/after pair")
    p.add_argument("--pair", help="two tear variables, e.g. cold_out.temp,c1_top.w_product")
    p.add_argument("--grid", type=int)
    p.add_argument("--row", type=int, default=0, help="test row for feeds/extras")
    p.set_defaults(func=cmd_portrait)

    p = sub.add_parser("solve-trace", help="dump one solve trace as CSV")
    common(p, checkpoints=True)
    p.add_argument("--method", choices=METHODS, default="direct")
    p.add_argument("--row", type=int, default=0)
    p.set_defaults(func=cmd_solve_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, CliError) as exc:
        code = getattr(exc, "code", EXIT_CONFIG)
        logger.error("%s", exc)
        return code
    except (PlantError, TrainingError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
