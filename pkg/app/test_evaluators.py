import numpy as np
import pytest

from data import TableData, subsample
from evaluators import FullEvaluator, SurrogateEvaluator
from induction import EvalBudgetCounter


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return TableData(features=rng.random((40, 5)), labels=rng.integers(0, 2, 40), n_classes=2)


def test_full_evaluator_charges_every_training_row(table):
    counter = EvalBudgetCounter()
    evaluator = FullEvaluator(table, table, counter)
    value = evaluator([1, 0, 1, 0, 0])
    assert 0.0 <= value <= 1.0
    assert counter.full_evals == 1
    assert counter.instances_processed == 40
    assert evaluator.NAME == "full"
    assert evaluator.rows == 40


def test_surrogate_evaluator_charges_sample_rows(table):
    counter = EvalBudgetCounter()
    evaluator = SurrogateEvaluator(table, table, counter, subsample(table, 10, seed=1, level=3))
    evaluator([1, 1, 0, 0, 0])
    assert counter.surrogate_evals == 1
    assert counter.full_evals == 0
    assert counter.instances_processed == 10
    assert evaluator.rows == 10


def test_cache_hit_is_not_charged(table):
    counter = EvalBudgetCounter()
    evaluator = FullEvaluator(table, table, counter)
    first = evaluator([0, 1, 1, 0, 1])
    second = evaluator(np.array([False, True, True, False, True]))
    assert first == second
    assert counter.full_evals == 1
    assert counter.instances_processed == 40
    assert counter.cache_hits == 1


def test_cache_is_per_evaluator(table):
    counter = EvalBudgetCounter()
    sample = subsample(table, 10, seed=1)
    SurrogateEvaluator(table, table, counter, sample)([1, 0, 0, 0, 0])
    SurrogateEvaluator(table, table, counter, sample)([1, 0, 0, 0, 0])
    assert counter.surrogate_evals == 2
    assert counter.cache_hits == 0


def test_counter_merge_and_snapshot():
    a = EvalBudgetCounter(surrogate_evals=2, full_evals=1, instances_processed=30)
    snapshot = a.snapshot()
    a.merge(EvalBudgetCounter(surrogate_evals=1, instances_processed=5, cache_hits=4))
    assert (a.surrogate_evals, a.full_evals, a.instances_processed, a.cache_hits) == (3, 1, 35, 4)
    assert snapshot.instances_processed == 30


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
