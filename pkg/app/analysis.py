import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats

from common import ExperimentResult, LevelRecord, RunReport, Summary

# complexity exponent of each induction family, in number of training rows
COMPLEXITY_EXPONENTS = {"DT": 1.0, "kNN": 2.0, "SVM": 3.0}
TRACE_GRID_POINTS = 200
TRACE_WINDOW = 10
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class CostModel:
    complexity_exponent: float = 1.0
    a: float = 2.0
    b: int = 4

    def __post_init__(self):
        if self.complexity_exponent < 1:
            raise ValueError("complexity exponent must be at least 1")
        if self.a <= 1:
            raise ValueError("schedule base must exceed 1")
        if self.b < 1:
            raise ValueError("need at least one level")


def schedule_cost_ratio(model: CostModel) -> float:
    """Surrogate-stage cost relative to one full-data stage at equal evaluations per level."""
    return math.fsum((model.a ** (-i)) ** model.complexity_exponent for i in range(1, model.b + 1))


def cost_table(a: float = 2.0, max_levels: int = 8) -> pd.DataFrame:
    rows = []
    for b in range(1, max_levels + 1):
        row = {"levels": b}
        for name, exponent in COMPLEXITY_EXPONENTS.items():
            row[name] = schedule_cost_ratio(CostModel(exponent, a, b))
        rows.append(row)
    return pd.DataFrame(rows, columns=["levels", *COMPLEXITY_EXPONENTS])


def moving_average(series: Sequence[float], window: int = TRACE_WINDOW) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be at least 1")
    values = pd.Series(series, dtype=np.float64)
    if values.empty:
        raise ValueError("empty series")
    return values.rolling(window, min_periods=1).mean().to_numpy()


def _as_sample(values: Sequence[float], name: str) -> np.ndarray:
    sample = np.asarray(values, dtype=np.float64)
    if sample.size < 2:
        raise ValueError(f"{name} needs at least 2 values")
    return sample


def welch_t(
    sample_a: Sequence[float], sample_b: Sequence[float], variance_floor: float = VARIANCE_FLOOR
) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and its two-sided p-value."""
    a = _as_sample(sample_a, "sample_a")
    b = _as_sample(sample_b, "sample_b")
    mean_a, mean_b = a.mean(), b.mean()
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    if var_a == 0 and var_b == 0 and mean_a == mean_b:
        return 0.0, 1.0

    se_a = max(var_a, variance_floor) / a.size
    se_b = max(var_b, variance_floor) / b.size
    t = float((mean_a - mean_b) / math.sqrt(se_a + se_b))
    df = (se_a + se_b) ** 2 / (se_a**2 / (a.size - 1) + se_b**2 / (b.size - 1))
    # two-sided Student-t tail through the regularized incomplete beta
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, min(1.0, p)


def paired_t(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    a = _as_sample(sample_a, "sample_a")
    b = _as_sample(sample_b, "sample_b")
    if a.size != b.size:
        raise ValueError("paired samples must have equal length")
    diff = a - b
    if np.all(diff == diff[0]):
        if diff[0] == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff[0]), 0.0
    result = stats.ttest_rel(a, b)
    return float(result.statistic), float(result.pvalue)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def summarize(reports: Sequence[RunReport]) -> Summary:
    if not reports:
        raise ValueError("no runs to summarize")
    validation = _mean_std([r.validation_accuracy for r in reports])
    test = _mean_std([r.test_accuracy for r in reports])
    instances = _mean_std([r.instances_processed for r in reports])
    elapsed = _mean_std([r.elapsed for r in reports])
    return Summary(
        algorithm=reports[0].algorithm,
        dataset=reports[0].dataset,
        n_runs=len(reports),
        validation_mean=validation[0],
        validation_std=validation[1],
        test_mean=test[0],
        test_std=test[1],
        instances_mean=instances[0],
        instances_std=instances[1],
        elapsed_mean=elapsed[0],
        elapsed_std=elapsed[1],
        features_mean=float(np.mean([r.n_selected for r in reports])),
    )


@dataclass(frozen=True)
class TraceSeries:
    run_id: int
    label: str
    elapsed: np.ndarray
    instances: np.ndarray
    fitness: np.ndarray

    @classmethod
    def from_report(cls, report: RunReport) -> "TraceSeries":
        return cls(
            run_id=report.run_seed,
            label=report.algorithm,
            elapsed=np.array([e.elapsed for e in report.trace], dtype=np.float64),
            instances=np.array([e.instances_processed for e in report.trace], dtype=np.float64),
            fitness=np.array([e.best_true_fitness for e in report.trace], dtype=np.float64),
        )

    def axis(self, name: str) -> np.ndarray:
        if name == "elapsed":
            return self.elapsed
        if name == "instances":
            return self.instances
        raise ValueError(f"unknown trace axis {name!r}")

    def resample(self, grid: np.ndarray, axis: str = "instances") -> np.ndarray:
        """Step-function value at each grid point; before the first event, the first value."""
        xs = self.axis(axis)
        idx = np.searchsorted(xs, grid, side="right") - 1
        return self.fitness[np.clip(idx, 0, xs.size - 1)]


def aggregate_traces(
    reports: Sequence[RunReport],
    axis: str = "instances",
    points: int = TRACE_GRID_POINTS,
    window: int = TRACE_WINDOW,
    label: str | None = None,
) -> pd.DataFrame:
    series = [TraceSeries.from_report(r) for r in reports if r.trace]
    if not series:
        raise ValueError("no traces to aggregate")
    end = max(s.axis(axis)[-1] for s in series)
    grid = np.linspace(0.0, end, points)
    smoothed = np.vstack([moving_average(s.resample(grid, axis), window) for s in series])
    std = smoothed.std(axis=0, ddof=1) if len(series) > 1 else np.zeros(points)
    return pd.DataFrame(
        {
            "x": grid,
            "mean": smoothed.mean(axis=0),
            "std": std,
            "label": label or series[0].label,
        }
    )


def surrogate_budget_ratio(levels: Sequence[LevelRecord], n_train: int) -> float:
    """Surrogate rows consumed over (full training size x largest per-level evaluation count).

    Stays below the schedule's cost ratio for linear learners, and so below 1.
    """
    evals: Dict[int, int] = {}
    rows: Dict[int, int] = {}
    for record in levels:
        evals[record.level] = evals.get(record.level, 0) + record.surrogate_evals
        rows[record.level] = rows.get(record.level, 0) + record.surrogate_evals * record.sample_size
    most = max(evals.values(), default=0)
    if most == 0:
        return 0.0
    return sum(rows.values()) / (n_train * most)


# Result tables

SUMMARY_COLUMNS = (
    ("instances", "instances_mean", "instances_std"),
    ("elapsed", "elapsed_mean", "elapsed_std"),
    ("validation", "validation_mean", "validation_std"),
    ("test", "test_mean", "test_std"),
)


def _group_by_dataset(results: Sequence[ExperimentResult]) -> Dict[str, List[ExperimentResult]]:
    groups: Dict[str, List[ExperimentResult]] = {}
    for result in results:
        groups.setdefault(result.config.dataset_id, []).append(result)
    return groups


def comparison_table(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """One row per dataset; per arm mean/std columns, winners, and p-values against the first arm."""
    if not results:
        raise ValueError("no results")
    labels = list(dict.fromkeys(r.label for r in results))
    rows = []
    for dataset, group in _group_by_dataset(results).items():
        by_label = {r.label: r for r in group}
        row = {"dataset": dataset}
        for label in labels:
            result = by_label.get(label)
            for name, mean_field, std_field in SUMMARY_COLUMNS:
                if result is None:
                    row[f"{label}:{name}_mean"] = row[f"{label}:{name}_std"] = np.nan
                    continue
                row[f"{label}:{name}_mean"] = getattr(result.summary, mean_field)
                row[f"{label}:{name}_std"] = getattr(result.summary, std_field)
        present = [by_label[label] for label in labels if label in by_label]
        row["time_winner"] = min(present, key=lambda r: r.summary.instances_mean).label
        row["accuracy_winner"] = max(present, key=lambda r: r.summary.test_mean).label
        reference = by_label.get(labels[0])
        for label in labels[1:]:
            other = by_label.get(label)
            p_time = p_accuracy = np.nan
            comparable = reference is not None and other is not None
            if comparable and len(reference.reports) > 1 and len(other.reports) > 1:
                p_time = welch_t(
                    [r.instances_processed for r in other.reports],
                    [r.instances_processed for r in reference.reports],
                )[1]
                p_accuracy = welch_t(
                    [r.test_accuracy for r in other.reports],
                    [r.test_accuracy for r in reference.reports],
                )[1]
            row[f"{label}:p_time"] = p_time
            row[f"{label}:p_accuracy"] = p_accuracy
        rows.append(row)
    return pd.DataFrame(rows)


def significance_table(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """Paired and unpaired tests across datasets, each arm against the first one."""
    labels = list(dict.fromkeys(r.label for r in results))
    groups = _group_by_dataset(results)
    rows = []
    for label in labels[1:]:
        shared = [
            (by[labels[0]], by[label])
            for by in ({r.label: r for r in group} for group in groups.values())
            if labels[0] in by and label in by
        ]
        if len(shared) < 2:
            continue
        for metric, field_name in (("test", "test_mean"), ("instances", "instances_mean")):
            ref = [getattr(a.summary, field_name) for a, _ in shared]
            other = [getattr(b.summary, field_name) for _, b in shared]
            welch = welch_t(other, ref)
            paired = paired_t(other, ref)
            rows.append(
                {
                    "metric": metric,
                    "arm": label,
                    "reference": labels[0],
                    "n_datasets": len(shared),
                    "welch_t": welch[0],
                    "welch_p": welch[1],
                    "paired_t": paired[0],
                    "paired_p": paired[1],
                }
            )
    return pd.DataFrame(
        rows,
        columns=[
            "metric",
            "arm",
            "reference",
            "n_datasets",
            "welch_t",
            "welch_p",
            "paired_t",
            "paired_p",
        ],
    )
