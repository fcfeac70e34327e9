import logging
import math
from typing import Callable

import numpy as np

from induction import FitnessValue

logger = logging.getLogger(__name__)


class SurrogateSwitch(Exception):
    """Raised when evolution control abandons the current surrogate."""

    def __init__(self, level: int, true_fitness: FitnessValue):
        self.level = level
        self.true_fitness = true_fitness


class EvolutionControl:
    """Re-checks the surrogate's best with the original function every `step` generations.

    Stays "improving" while the true fitness strictly rises and trips to "switched"
    on the first check that does not improve on the previous one.
    """

    def __init__(
        self,
        full_evaluator: Callable[[np.ndarray], FitnessValue],
        level: int,
        step: int = 10,
        previous_true: FitnessValue = -math.inf,
    ):
        self.full_evaluator = full_evaluator
        self.level = level
        self.step = step
        self.previous_true = previous_true

        self.state = "improving"
        self.checks = 0

    def due(self, generations: int) -> bool:
        return generations > 0 and generations % self.step == 0

    def check(self, current_best: np.ndarray) -> tuple[FitnessValue, bool]:
        new_true = self.full_evaluator(current_best)
        self.checks += 1
        switch = new_true <= self.previous_true
        logger.debug(
            "level %d check %d: true %.4f vs %.4f%s",
            self.level,
            self.checks,
            new_true,
            self.previous_true,
            " -> switch" if switch else "",
        )
        if switch:
            self.state = "switched"
        else:
            self.previous_true = new_true
        return new_true, switch

    def guard(self, current_best: np.ndarray) -> FitnessValue:
        new_true, switch = self.check(current_best)
        if switch:
            raise SurrogateSwitch(self.level, new_true)
        return new_true


class StagnationTracker:
    """Counts consecutive generations whose best fitness did not strictly improve."""

    def __init__(self, limit: int = 10, start: FitnessValue = -math.inf):
        self.limit = limit
        self.best = start
        self.stagnant = 0

    def update(self, best: FitnessValue) -> bool:
        if best > self.best:
            self.best = best
            self.stagnant = 0
        else:
            self.stagnant += 1
        return self.converged

    @property
    def converged(self) -> bool:
        return self.stagnant >= self.limit
