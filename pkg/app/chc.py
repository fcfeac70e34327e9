import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from common import ChcConfig, RunReport, TraceEvent
from data import SplitData
from evaluators import FullEvaluator
from evolution_control import StagnationTracker
from induction import EvalBudgetCounter, FitnessValue, holdout_accuracy, repair_mask

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], FitnessValue]


class SeedMode(str, Enum):
    MIGRANT = "migrant"
    FREQUENCY = "frequency"


@dataclass(frozen=True)
class Member:
    mask: np.ndarray
    fitness: FitnessValue

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.mask))

    def rank_key(self):
        # higher fitness, then fewer features, then the smaller bit string
        return (-self.fitness, self.n_selected, tuple(self.mask.astype(np.int8).tolist()))


@dataclass
class Population:
    members: List[Member]
    incest_threshold: int
    generation: int = 0
    cataclysms: int = field(default=0)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def best(self) -> Member:
        return min(self.members, key=Member.rank_key)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    if a.shape != b.shape:
        raise ValueError(f"mask lengths differ: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))


def random_mask(n_features: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    return rng.random(n_features) < prob


def init_population(
    p: int,
    n_features: int,
    rng: np.random.Generator,
    evaluator: Evaluator,
    seed_mask: Optional[np.ndarray] = None,
    seed_mode: Optional[SeedMode] = None,
    inclusion_prob: float = 0.5,
) -> Population:
    if p < 2:
        raise ValueError("population needs at least 2 members")
    masks = []
    if seed_mask is not None:
        seed_mask = np.asarray(seed_mask, dtype=bool)
        if seed_mask.size != n_features:
            raise ValueError(f"seed mask has {seed_mask.size} bits, expected {n_features}")
        masks.append(repair_mask(seed_mask.copy(), rng))
        if seed_mode == SeedMode.FREQUENCY:
            inclusion_prob = np.count_nonzero(seed_mask) / n_features
    while len(masks) < p:
        masks.append(repair_mask(random_mask(n_features, inclusion_prob, rng), rng))
    members = [Member(mask, evaluator(mask)) for mask in masks]
    return Population(members=members, incest_threshold=n_features // 4)


def hux_crossover(
    a: np.ndarray, b: np.ndarray, incest_threshold: int, rng: np.random.Generator
) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Swap half of the differing bits, or return None when the parents are too close."""
    distance = hamming(a, b)
    if distance < 2 or distance / 2 <= incest_threshold:
        return None
    differing = np.flatnonzero(a != b)
    swap = rng.choice(differing, size=distance // 2, replace=False)
    child1, child2 = a.copy(), b.copy()
    child1[swap] = b[swap]
    child2[swap] = a[swap]
    return child1, child2


def step_generation(pop: Population, evaluator: Evaluator, rng: np.random.Generator) -> Population:
    order = rng.permutation(pop.size)
    children: List[Member] = []
    for i in range(0, pop.size - 1, 2):
        a = pop.members[order[i]].mask
        b = pop.members[order[i + 1]].mask
        offspring = hux_crossover(a, b, pop.incest_threshold, rng)
        if offspring is None:
            continue
        for child in offspring:
            child = repair_mask(child, rng)
            children.append(Member(child, evaluator(child)))

    # parents first, so a stable sort keeps a parent over an equal child
    pool = pop.members + children
    survivors = sorted(pool, key=Member.rank_key)[: pop.size]
    child_ids = {id(c) for c in children}
    threshold = pop.incest_threshold
    if not any(id(m) in child_ids for m in survivors):
        threshold -= 1
    return replace(
        pop, members=survivors, incest_threshold=threshold, generation=pop.generation + 1
    )


def cataclysm(
    pop: Population, evaluator: Evaluator, rng: np.random.Generator, divergence_rate: float = 0.35
) -> Population:
    best = pop.best
    n_features = best.mask.size
    members = [best]
    while len(members) < pop.size:
        flips = rng.random(n_features) < divergence_rate
        mask = repair_mask(best.mask ^ flips, rng)
        members.append(Member(mask, evaluator(mask)))
    threshold = int(np.floor(divergence_rate * (1.0 - divergence_rate) * n_features))
    logger.debug("cataclysm at generation %d, threshold reset to %d", pop.generation, threshold)
    return replace(pop, members=members, incest_threshold=threshold, cataclysms=pop.cataclysms + 1)


def evolve(
    pop: Population,
    evaluator: Evaluator,
    rng: np.random.Generator,
    cfg: ChcConfig,
    on_generation: Optional[Callable[[Population], bool]] = None,
) -> Population:
    """Run generations until stagnation, the generation cap, or `on_generation` returns True."""
    tracker = StagnationTracker(cfg.stagnation_limit, start=pop.best.fitness)
    while pop.generation < cfg.max_generations:
        pop = step_generation(pop, evaluator, rng)
        converged = tracker.update(pop.best.fitness)
        if pop.incest_threshold < 0:
            pop = cataclysm(pop, evaluator, rng, cfg.divergence_rate)
        if on_generation is not None and on_generation(pop):
            break
        if converged:
            break
    return pop


class TraceRecorder:
    def __init__(self, counter: EvalBudgetCounter, clock: Callable[[], float] = time.perf_counter):
        self.counter = counter
        self.clock = clock
        self.start = clock()
        self.events: List[TraceEvent] = []
        self.best_true = 0.0

    @property
    def elapsed(self) -> float:
        return self.clock() - self.start

    def record(self, generation: int, stage: str, true_fitness: Optional[FitnessValue] = None):
        if true_fitness is not None:
            self.best_true = max(self.best_true, true_fitness)
        self.events.append(
            TraceEvent(
                generation=generation,
                stage=stage,
                elapsed=self.elapsed,
                instances_processed=self.counter.instances_processed,
                surrogate_evals=self.counter.surrogate_evals,
                full_evals=self.counter.full_evals,
                best_true_fitness=self.best_true,
            )
        )


def mask_bits(mask: np.ndarray) -> List[int]:
    return [int(b) for b in mask]


def run_chc(
    split: SplitData,
    cfg: ChcConfig,
    evaluator: Optional[Evaluator] = None,
    counter: Optional[EvalBudgetCounter] = None,
    clock: Callable[[], float] = time.perf_counter,
    dataset: str = "",
    label: Optional[str] = None,
) -> RunReport:
    counter = counter or EvalBudgetCounter()
    evaluator = evaluator or FullEvaluator(split.train, split.validation, counter)
    recorder = TraceRecorder(counter, clock)
    rng = np.random.default_rng(cfg.seed)

    pop = init_population(
        cfg.pop_size, split.train.n_features, rng, evaluator, inclusion_prob=cfg.init_inclusion_prob
    )

    def on_generation(current: Population) -> bool:
        recorder.record(current.generation, "chc", current.best.fitness)
        return False

    pop = evolve(pop, evaluator, rng, cfg, on_generation)
    best = pop.best
    logger.info(
        "chc seed %d: %d generations, %d cataclysms, best %.4f with %d features",
        cfg.seed,
        pop.generation,
        pop.cataclysms,
        best.fitness,
        best.n_selected,
    )
    return RunReport(
        algorithm=label or f"CHC[p={cfg.pop_size}]",
        dataset=dataset,
        run_seed=cfg.seed,
        n_train=split.train.n_instances,
        best_mask=mask_bits(best.mask),
        validation_accuracy=best.fitness,
        test_accuracy=holdout_accuracy(best.mask, split.train, split.test),
        elapsed=recorder.elapsed,
        surrogate_evals=counter.surrogate_evals,
        full_evals=counter.full_evals,
        instances_processed=counter.instances_processed,
        generations=pop.generation,
        trace=recorder.events,
    )
