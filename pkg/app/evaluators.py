from functools import wraps
from typing import Optional

import numpy as np

from data import SampleHandle, TableData
from induction import EvalBudgetCounter, FitnessValue, as_mask, fitness


def wrap_cache(fn):
    """Memoize an evaluator method per instance, keyed by the mask bits.

    Each evaluator instance is one fitness function (one training view), so a
    cache never outlives the level it belongs to. Hits are tallied, not charged.
    """

    @wraps(fn)
    def wrapper(self, mask):
        bits = as_mask(mask, self.n_features)
        key = np.packbits(bits).tobytes()
        if key in self.cache:
            self.counter.cache_hits += 1
            return self.cache[key]
        value = fn(self, bits)
        self.cache[key] = value
        return value

    return wrapper


class SurrogateEvaluator:
    """Fitness of a mask by a tree trained on one level's sampled rows."""

    NAME = "surrogate"

    def __init__(
        self,
        train: TableData,
        validation: TableData,
        counter: EvalBudgetCounter,
        sample: Optional[SampleHandle] = None,
    ):
        self.train = train
        self.validation = validation
        self.counter = counter
        self.sample = sample
        self.cache: dict[bytes, FitnessValue] = {}

    @property
    def n_features(self) -> int:
        return self.train.n_features

    @property
    def rows(self) -> int:
        return self.sample.size if self.sample is not None else self.train.n_instances

    @wrap_cache
    def evaluate(self, mask) -> FitnessValue:
        return fitness(mask, self.train, self.validation, self.counter, sample=self.sample)

    def __call__(self, mask) -> FitnessValue:
        return self.evaluate(mask)


class FullEvaluator(SurrogateEvaluator):
    """The original function: a tree trained on every training row."""

    NAME = "full"

    def __init__(self, train: TableData, validation: TableData, counter: EvalBudgetCounter):
        super().__init__(train, validation, counter, sample=None)
