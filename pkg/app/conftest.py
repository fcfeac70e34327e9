import itertools
from dataclasses import replace

import numpy as np
import pytest

from common import RunReport, TraceEvent
from data import TableData, make_dermatology_like, make_planted, shuffle_split
from induction import EvalBudgetCounter, fitness

ORACLE_INFORMATIVE = (1, 3, 6)
PLANTED_INFORMATIVE = (2, 9, 15)
ORACLE_TEST_NOISE = 0.1


@pytest.fixture(scope="session")
def oracle_split():
    """K=8 binary features, N=60, labels the majority of features 1, 3 and 6.

    The label noise sits in the held-out test rows only, so the supersets of
    {1, 3, 6} share the validation optimum.
    """
    data = make_planted(60, 8, ORACLE_INFORMATIVE, seed=7, binary=True)
    split = shuffle_split(data, seed=0)
    return replace(split, test=flip_labels(split.test, ORACLE_TEST_NOISE, seed=7))


def flip_labels(data: TableData, rate: float, seed: int) -> TableData:
    rng = np.random.default_rng(seed)
    n_flips = max(1, round(rate * data.n_instances))
    rows = rng.choice(data.n_instances, size=n_flips, replace=False)
    labels = data.labels.copy()
    labels[rows] = (labels[rows] + 1) % data.n_classes
    return replace(data, labels=labels)


@pytest.fixture(scope="session")
def oracle_optimum(oracle_split):
    return brute_force_optimum(oracle_split)


@pytest.fixture(scope="session")
def planted_split():
    data = make_planted(2000, 20, PLANTED_INFORMATIVE, seed=11)
    return shuffle_split(data, seed=0)


@pytest.fixture(scope="session")
def dermatology_split():
    return shuffle_split(make_dermatology_like(seed=3), seed=0)


def brute_force_optimum(split) -> float:
    k = split.train.n_features
    counter = EvalBudgetCounter()
    best = 0.0
    for bits in itertools.product((False, True), repeat=k):
        if any(bits):
            best = max(best, fitness(np.array(bits), split.train, split.validation, counter))
    return best


def make_report(
    algorithm="CHC",
    dataset="toy@0",
    run_seed=0,
    validation=0.5,
    test=0.5,
    instances=100,
    elapsed=1.0,
    fitness_trace=(),
    mask=(1, 0, 1),
) -> RunReport:
    trace = [
        TraceEvent(
            generation=i + 1,
            stage="chc",
            elapsed=float(i + 1),
            instances_processed=10 * (i + 1),
            surrogate_evals=0,
            full_evals=i + 1,
            best_true_fitness=f,
        )
        for i, f in enumerate(fitness_trace)
    ]
    return RunReport(
        algorithm=algorithm,
        dataset=dataset,
        run_seed=run_seed,
        n_train=60,
        best_mask=list(mask),
        validation_accuracy=validation,
        test_accuracy=test,
        elapsed=elapsed,
        surrogate_evals=0,
        full_evals=len(trace),
        instances_processed=instances,
        generations=len(trace),
        trace=trace,
    )


class StepClock:
    """Deterministic clock: every call advances by one tick."""

    def __init__(self, tick: float = 0.001):
        self.tick = tick
        self.now = 0.0

    def __call__(self) -> float:
        self.now += self.tick
        return self.now
