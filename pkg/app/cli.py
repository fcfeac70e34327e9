import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from analysis import aggregate_traces, comparison_table, cost_table, significance_table, summarize
from chc import mask_bits, run_chc
from common import (
    Arm,
    ConfigError,
    DataError,
    ExperimentConfig,
    ExperimentResult,
    RunReport,
    TraceEvent,
)
from data import (
    SplitData,
    load_csv,
    make_dermatology_like,
    make_planted,
    preprocess,
    shuffle_split,
    write_csv,
)
from evaluators import FullEvaluator
from induction import EvalBudgetCounter, holdout_accuracy
from saga import compare_runs, run_saga

SAGA_LOG_LEVEL = os.getenv("SAGA_LOG_LEVEL", "INFO")
SAGA_WORKERS = os.getenv("SAGA_WORKERS")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
FLOAT_FORMAT = "%.6f"

logger = logging.getLogger(__name__)


def load_split(cfg: ExperimentConfig) -> SplitData:
    raw = load_csv(cfg.dataset, cfg.target, cfg.missing_tokens)
    return shuffle_split(preprocess(raw), cfg.split_seed)


def run_baseline(
    split: SplitData, seed: int, clock: Callable[[], float], dataset: str, label: str
) -> RunReport:
    start = clock()
    counter = EvalBudgetCounter()
    mask = np.ones(split.train.n_features, dtype=bool)
    validation = FullEvaluator(split.train, split.validation, counter)(mask)
    return RunReport(
        algorithm=label,
        dataset=dataset,
        run_seed=seed,
        n_train=split.train.n_instances,
        best_mask=mask_bits(mask),
        validation_accuracy=validation,
        test_accuracy=holdout_accuracy(mask, split.train, split.test),
        elapsed=clock() - start,
        surrogate_evals=counter.surrogate_evals,
        full_evals=counter.full_evals,
        instances_processed=counter.instances_processed,
        generations=0,
    )


def run_once(
    cfg: ExperimentConfig,
    split: SplitData,
    seed: int,
    clock: Callable[[], float] = time.perf_counter,
) -> RunReport:
    label = cfg.arm_label()
    if cfg.arm == Arm.BASELINE:
        return run_baseline(split, seed, clock, cfg.dataset_id, label)
    if cfg.arm == Arm.CHC:
        chc_cfg = cfg.chc.model_copy(update={"seed": seed})
        return run_chc(split, chc_cfg, clock=clock, dataset=cfg.dataset_id, label=label)
    if cfg.arm == Arm.SAGA:
        saga_cfg = cfg.saga.model_copy(update={"seed": seed})
        return run_saga(split, saga_cfg, clock=clock, dataset=cfg.dataset_id, label=label)
    raise ConfigError(f"unknown arm {cfg.arm!r}", field="arm")


def _run_in_worker(job: tuple) -> RunReport:
    cfg, split, seed = job
    return run_once(cfg, split, seed)


def run_experiment(
    cfg: ExperimentConfig, clock: Callable[[], float] = time.perf_counter, write: bool = True
) -> ExperimentResult:
    split = load_split(cfg)
    seeds = range(cfg.run_seed, cfg.run_seed + cfg.repetitions)
    logger.info(
        "%s on %s: %d runs, train/validation/test = %d/%d/%d",
        cfg.arm_label(),
        cfg.dataset_id,
        cfg.repetitions,
        split.train.n_instances,
        split.validation.n_instances,
        split.test.n_instances,
    )
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_run_in_worker, [(cfg, split, s) for s in seeds]))
    else:
        reports = [run_once(cfg, split, s, clock) for s in seeds]

    result = ExperimentResult(config=cfg, reports=reports, summary=summarize(reports))
    if write:
        write_run_artifacts(result, cfg.output_dir)
    return result


def trace_frame(trace: Sequence[TraceEvent]) -> pd.DataFrame:
    frame = pd.DataFrame([e.model_dump() for e in trace], columns=list(TraceEvent.model_fields))
    return frame.rename(columns={"elapsed": "timestamp"})


def write_run_artifacts(result: ExperimentResult, directory: Path) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    # wall-clock stays out of summary.json so that reruns compare byte for byte
    summary = {
        "config": result.config.model_dump(mode="json"),
        "summary": result.summary.model_dump(exclude={"elapsed_mean", "elapsed_std"}),
        "runs": [r.model_dump(mode="json", exclude={"elapsed", "trace"}) for r in result.reports],
    }
    path = directory / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)

    path = directory / "reports.json"
    path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    written.append(path)

    for report in result.reports:
        if report.trace:
            path = directory / f"trace_{report.run_seed}.csv"
            trace_frame(report.trace).to_csv(path, index=False)
            written.append(path)
    logger.info("wrote %d artifacts to %s", len(written), directory)
    return written


def load_result(directory: Path) -> ExperimentResult:
    path = Path(directory) / "reports.json"
    try:
        return ExperimentResult.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}", source=str(path)) from exc


def emit_tables(
    results: Sequence[ExperimentResult], directory: Path, axis: str = "instances"
) -> List[Path]:
    if not results:
        raise ConfigError("no results to tabulate")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    path = directory / "table.csv"
    comparison_table(results).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    written.append(path)

    significance = significance_table(results)
    if not significance.empty:
        path = directory / "significance.csv"
        significance.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    traces = [
        aggregate_traces(r.reports, axis=axis, label=f"{r.label}@{r.config.dataset_id}")
        for r in results
        if any(report.trace for report in r.reports)
    ]
    if traces:
        path = directory / "fig_trace.csv"
        pd.concat(traces, ignore_index=True).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    return written


def emit_match_table(
    reference: ExperimentResult, baseline: ExperimentResult, directory: Path
) -> Path:
    matches = compare_runs(reference.reports, baseline.reports)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "match.csv"
    pd.DataFrame([m.model_dump() for m in matches]).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    matched = sum(m.matched for m in matches)
    logger.info("%s matched %s in %d of %d runs", baseline.label, reference.label, matched, len(matches))
    return path


# Command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saga", description="Surrogate-assisted CHC feature selection experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one arm over seeded repetitions")
    run.add_argument("--config", type=Path, help="JSON experiment config")
    run.add_argument("--dataset", type=Path, help="CSV dataset path")
    run.add_argument("--target", help="Target column name")
    run.add_argument("--arm", choices=[a.value for a in Arm])
    run.add_argument("--label", help="Arm label used in tables")
    run.add_argument("--b", type=int, help="Surrogate levels (default: 4)")
    run.add_argument("--pr", type=float, help="Population reduction rate (default: 0.5)")
    run.add_argument("--z", type=int, help="Generations between control checks (default: 10)")
    run.add_argument("--fop", type=int, choices=(0, 1), help="False optimum prevention (default: 1)")
    run.add_argument("--sp", type=int, help="Surrogate perseverance (default: 1)")
    run.add_argument("--so", type=int, choices=(0, 1), help="Surrogate only (default: 0)")
    run.add_argument("--p0", type=int, help="Initial SAGA population (default: 40)")
    run.add_argument("--a", type=float, help="Schedule base (default: 2)")
    run.add_argument("--pop", type=int, help="CHC population (default: 40)")
    run.add_argument("--strict-pseudocode", action="store_true", default=None)
    run.add_argument("--seed", type=int, help="First run seed (default: 0)")
    run.add_argument("--split-seed", type=int, help="Split seed (default: 0)")
    run.add_argument("--reps", type=int, help="Repetitions (default: 10)")
    run.add_argument("--out", type=Path, help="Output directory")
    run.add_argument("--workers", type=int, help="Worker processes")
    run.add_argument("--missing", nargs="*", help='Missing-value tokens (default: "" "?")')

    compare = sub.add_parser("compare", help="Time-to-match of a baseline against a reference")
    compare.add_argument("--reference", type=Path, required=True, help="Reference result dir")
    compare.add_argument("--baseline", type=Path, required=True, help="Baseline result dir")
    compare.add_argument("--out", type=Path, required=True)

    tables = sub.add_parser("tables", help="Comparison tables over result directories")
    tables.add_argument("results", type=Path, nargs="+")
    tables.add_argument("--out", type=Path, required=True)
    tables.add_argument("--axis", choices=("instances", "elapsed"), default="instances")

    cost = sub.add_parser("cost", help="Schedule cost ratios per learner complexity")
    cost.add_argument("--a", type=float, default=2.0)
    cost.add_argument("--max-levels", type=int, default=8)
    cost.add_argument("--out", type=Path, required=True)

    generate = sub.add_parser("generate", help="Write a synthetic fixture dataset")
    generate.add_argument("kind", choices=("planted", "dermatology"))
    generate.add_argument("--n", type=int)
    generate.add_argument("--k", type=int)
    generate.add_argument("--informative", type=int, nargs="+", default=[0, 1, 2])
    generate.add_argument("--noise", type=float, default=0.0)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--out", type=Path, required=True)
    return parser


SAGA_FLAGS = ("b", "pr", "z", "fop", "sp", "so", "p0", "a", "strict_pseudocode")
TOP_LEVEL_FLAGS = {
    "dataset": "dataset",
    "target": "target",
    "arm": "arm",
    "label": "label",
    "seed": "run_seed",
    "split_seed": "split_seed",
    "reps": "repetitions",
    "out": "output_dir",
    "workers": "workers",
    "missing": "missing_tokens",
}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}", field="config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not JSON: {exc}", field="config") from exc
    for flag, name in TOP_LEVEL_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            data[name] = str(value) if isinstance(value, Path) else value
    saga = data.setdefault("saga", {})
    for flag in SAGA_FLAGS:
        value = getattr(args, flag)
        if value is not None:
            saga[flag] = value
    if args.pop is not None:
        data.setdefault("chc", {})["pop_size"] = args.pop
    if args.workers is None and SAGA_WORKERS:
        if not SAGA_WORKERS.isdigit():
            raise ConfigError(f"SAGA_WORKERS={SAGA_WORKERS!r} is not a count", field="workers")
        data.setdefault("workers", int(SAGA_WORKERS))
    return ExperimentConfig.model_validate(data)


def cmd_run(args: argparse.Namespace) -> int:
    result = run_experiment(config_from_args(args))
    s = result.summary
    print(
        f"{result.label} on {s.dataset}: test {s.test_mean:.4f} ±{s.test_std:.4f}, "
        f"validation {s.validation_mean:.4f}, instances {s.instances_mean:.0f}, "
        f"features {s.features_mean:.1f}"
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    path = emit_match_table(load_result(args.reference), load_result(args.baseline), args.out)
    print(path)
    return EXIT_OK


def cmd_tables(args: argparse.Namespace) -> int:
    for path in emit_tables([load_result(d) for d in args.results], args.out, args.axis):
        print(path)
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "fig_cost.csv"
    cost_table(args.a, args.max_levels).to_csv(path, index=False, float_format="%.8f")
    print(path)
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    if args.kind == "planted":
        data = make_planted(
            args.n or 2000, args.k or 20, args.informative, args.seed, noise=args.noise
        )
    else:
        data = make_dermatology_like(args.seed, n=args.n or 366, k=args.k or 34)
    print(write_csv(data, args.out))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "tables": cmd_tables,
    "cost": cmd_cost,
    "generate": cmd_generate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=SAGA_LOG_LEVEL.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
