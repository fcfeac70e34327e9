import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from chc import (
    Member,
    Population,
    SeedMode,
    TraceRecorder,
    evolve,
    init_population,
    mask_bits,
)
from common import ConfigError, LevelRecord, MatchResult, RunReport, SagaConfig
from data import SampleHandle, SplitData, subsample
from evaluators import FullEvaluator, SurrogateEvaluator
from evolution_control import EvolutionControl, SurrogateSwitch
from induction import EvalBudgetCounter, FitnessValue, holdout_accuracy

logger = logging.getLogger(__name__)

MIN_SAMPLE_SIZE = 2
MIN_POP_SIZE = 2


@dataclass(frozen=True)
class SamplingSchedule:
    a: float
    b: int
    sizes: tuple

    @property
    def fractions(self) -> tuple:
        return tuple(self.a ** (-i) for i in range(self.b, 0, -1))

    def size_at(self, level: int) -> int:
        """Sample size of surrogate level `level` (b is the smallest, 1 the largest)."""
        return self.sizes[self.b - level]


def build_schedule(n: int, a: float = 2.0, b: int = 4) -> SamplingSchedule:
    if b < 1:
        raise ValueError(f"need at least one level, got b={b}")
    if a <= 1:
        raise ValueError(f"schedule base must exceed 1, got a={a}")
    if n < a**b:
        raise ValueError(f"{n} rows cannot fill {b} levels with base {a}")
    sizes = tuple(max(MIN_SAMPLE_SIZE, math.floor(n / a**i)) for i in range(b, 0, -1))
    if any(s >= t for s, t in zip(sizes, sizes[1:])) or sizes[-1] >= n:
        raise ValueError(f"schedule {list(sizes)} for N={n} is not strictly increasing below N")
    return SamplingSchedule(a=a, b=b, sizes=sizes)


def _rounded_pop(p0: int, pr: float, steps: int) -> int:
    return max(MIN_POP_SIZE, math.floor(p0 * pr**steps + 0.5))


def population_schedule(p0: int, pr: float, b: int) -> List[int]:
    """Population size per level, largest level first: {40, 20, 10, 5} for the defaults."""
    return [_rounded_pop(p0, pr, b - level) for level in range(b, 0, -1)]


def run_schedule(
    p0: int, pr: float, b: int, sp: int = 1, strict_pseudocode: bool = False
) -> List[tuple[int, int, int]]:
    """(level, repetition, pop_size) for every surrogate run in execution order.

    Reduction happens on level change only, unless `strict_pseudocode` asks for a
    reduction after every convergence.
    """
    per_level = population_schedule(p0, pr, b)
    runs = []
    for index, level in enumerate(range(b, 0, -1)):
        for repetition in range(sp):
            if strict_pseudocode:
                pop_size = _rounded_pop(p0, pr, len(runs))
            else:
                pop_size = per_level[index]
            runs.append((level, repetition, pop_size))
    return runs


@dataclass
class LevelState:
    level: int
    sample: SampleHandle
    pop_size: int
    best_true_fitness: FitnessValue = -math.inf
    persev_remaining: int = 0


@dataclass(frozen=True)
class LevelOutcome:
    best: Member
    generations: int
    switched: bool


@dataclass(frozen=True)
class SurrogateStage:
    g_prime: Member
    levels: List[LevelRecord]
    generations: int


def evolution_control_check(
    current_best: np.ndarray,
    previous_true: FitnessValue,
    full_evaluator: Callable[[np.ndarray], FitnessValue],
) -> tuple[FitnessValue, bool]:
    return EvolutionControl(full_evaluator, level=0, previous_true=previous_true).check(current_best)


def run_level(
    state: LevelState,
    incoming_best: Optional[np.ndarray],
    cfg: SagaConfig,
    split: SplitData,
    full_evaluator: FullEvaluator,
    counter: EvalBudgetCounter,
    rng: np.random.Generator,
    recorder: Optional[TraceRecorder] = None,
    generation_offset: int = 0,
) -> LevelOutcome:
    surrogate = SurrogateEvaluator(split.train, split.validation, counter, state.sample)
    pop = init_population(
        state.pop_size,
        split.train.n_features,
        rng,
        surrogate,
        seed_mask=incoming_best,
        seed_mode=SeedMode.MIGRANT if incoming_best is not None else None,
        inclusion_prob=cfg.chc.init_inclusion_prob,
    )
    control = EvolutionControl(full_evaluator, state.level, cfg.z, state.best_true_fitness)
    stage = f"level-{state.level}"
    latest = pop
    verified: Optional[Member] = None

    def on_generation(current: Population) -> bool:
        nonlocal latest, verified
        latest = current
        if cfg.fop and control.due(current.generation):
            true_fitness = control.guard(current.best.mask)
            verified = current.best
            if recorder is not None:
                recorder.record(generation_offset + current.generation, stage, true_fitness)
        return False

    try:
        pop = evolve(pop, surrogate, rng, cfg.chc, on_generation)
    except SurrogateSwitch as switch:
        if recorder is not None:
            recorder.record(generation_offset + latest.generation, stage, switch.true_fitness)
        # the member behind the last improving check, not the surrogate's false optimum
        best = verified if verified is not None else latest.best
        return LevelOutcome(best=best, generations=latest.generation, switched=True)
    return LevelOutcome(best=pop.best, generations=pop.generation, switched=False)


def run_surrogate_stage(
    split: SplitData,
    cfg: SagaConfig,
    counter: Optional[EvalBudgetCounter] = None,
    full_evaluator: Optional[FullEvaluator] = None,
    rng: Optional[np.random.Generator] = None,
    recorder: Optional[TraceRecorder] = None,
) -> SurrogateStage:
    counter = counter or EvalBudgetCounter()
    full_evaluator = full_evaluator or FullEvaluator(split.train, split.validation, counter)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    schedule = build_schedule(split.train.n_instances, cfg.a, cfg.b)
    runs = run_schedule(cfg.p0, cfg.pr, cfg.b, cfg.sp, cfg.strict_pseudocode)
    migrant: Optional[Member] = None
    candidates: List[Member] = []
    records: List[LevelRecord] = []
    generations = 0

    for level, repetition, pop_size in runs:
        sample = subsample(
            split.train, schedule.size_at(level), int(rng.integers(2**32)), level=level
        )
        state = LevelState(
            level=level,
            sample=sample,
            pop_size=pop_size,
            best_true_fitness=migrant.fitness if migrant is not None else -math.inf,
            persev_remaining=cfg.sp - repetition - 1,
        )
        before = counter.snapshot()
        outcome = run_level(
            state,
            migrant.mask if migrant is not None else None,
            cfg,
            split,
            full_evaluator,
            counter,
            rng,
            recorder,
            generations,
        )
        generations += outcome.generations
        true_fitness = full_evaluator(outcome.best.mask)
        candidates.append(Member(outcome.best.mask, true_fitness))
        if recorder is not None:
            recorder.record(generations, f"level-{level}", true_fitness)

        records.append(
            LevelRecord(
                level=level,
                repetition=repetition,
                pop_size=pop_size,
                sample_size=sample.size,
                generations=outcome.generations,
                switched=outcome.switched,
                surrogate_evals=counter.surrogate_evals - before.surrogate_evals,
                instances_processed=counter.instances_processed - before.instances_processed,
                candidate_true_fitness=true_fitness,
            )
        )
        logger.info(
            "level %d rep %d: p=%d, sample=%d, %d generations%s, true %.4f",
            level,
            repetition,
            pop_size,
            sample.size,
            outcome.generations,
            " (switched)" if outcome.switched else "",
            true_fitness,
        )

        if state.persev_remaining == 0:
            # migrate the best by true fitness, the incumbent included
            pool = candidates + ([migrant] if migrant is not None else [])
            migrant = min(pool, key=Member.rank_key)
            candidates = []

    return SurrogateStage(g_prime=migrant, levels=records, generations=generations)


def run_saga(
    split: SplitData,
    cfg: SagaConfig,
    counter: Optional[EvalBudgetCounter] = None,
    clock: Callable[[], float] = time.perf_counter,
    dataset: str = "",
    label: str = "SAGA",
) -> RunReport:
    counter = counter or EvalBudgetCounter()
    full_evaluator = FullEvaluator(split.train, split.validation, counter)
    recorder = TraceRecorder(counter, clock)
    rng = np.random.default_rng(cfg.seed)

    stage = run_surrogate_stage(split, cfg, counter, full_evaluator, rng, recorder)
    g_prime = stage.g_prime
    best, generations = g_prime, stage.generations

    if not cfg.so:
        logger.info("final stage: p=%d seeded by g' with %d features", cfg.p0, g_prime.n_selected)
        pop = init_population(
            cfg.p0,
            split.train.n_features,
            rng,
            full_evaluator,
            seed_mask=g_prime.mask,
            seed_mode=SeedMode.FREQUENCY,
        )

        def on_generation(current: Population) -> bool:
            recorder.record(stage.generations + current.generation, "final", current.best.fitness)
            return False

        pop = evolve(pop, full_evaluator, rng, cfg.chc, on_generation)
        best = min([pop.best, g_prime], key=Member.rank_key)
        generations += pop.generation

    surrogate_test = holdout_accuracy(g_prime.mask, split.train, split.test)
    test = surrogate_test if best is g_prime else holdout_accuracy(best.mask, split.train, split.test)
    logger.info(
        "saga seed %d: %d generations, %d surrogate and %d full evaluations, best %.4f",
        cfg.seed,
        generations,
        counter.surrogate_evals,
        counter.full_evals,
        best.fitness,
    )
    return RunReport(
        algorithm=label,
        dataset=dataset,
        run_seed=cfg.seed,
        n_train=split.train.n_instances,
        best_mask=mask_bits(best.mask),
        validation_accuracy=best.fitness,
        test_accuracy=test,
        surrogate_mask=mask_bits(g_prime.mask),
        surrogate_validation_accuracy=g_prime.fitness,
        surrogate_test_accuracy=surrogate_test,
        elapsed=recorder.elapsed,
        surrogate_evals=counter.surrogate_evals,
        full_evals=counter.full_evals,
        instances_processed=counter.instances_processed,
        generations=generations,
        trace=recorder.events,
        levels=stage.levels,
    )


def _first_match(report: RunReport, reference_fitness: FitnessValue) -> MatchResult:
    for event in report.trace:
        if event.best_true_fitness >= reference_fitness:
            return MatchResult(
                run_seed=report.run_seed,
                reference_fitness=reference_fitness,
                matched=True,
                generation=event.generation,
                elapsed=event.elapsed,
                instances_processed=event.instances_processed,
            )
    return MatchResult(run_seed=report.run_seed, reference_fitness=reference_fitness, matched=False)


def compare_runs(reference: Sequence[RunReport], baseline: Sequence[RunReport]) -> List[MatchResult]:
    """When did each baseline run first reach the final fitness of its paired reference run.

    Runs are paired in run-seed order.
    """
    datasets = {r.dataset for r in reference} | {r.dataset for r in baseline}
    if len(datasets) > 1:
        raise ConfigError(f"runs come from different datasets: {sorted(datasets)}", field="dataset")
    if len(reference) != len(baseline):
        raise ConfigError(
            f"{len(reference)} reference runs cannot pair with {len(baseline)} baseline runs"
        )
    pairs = zip(
        sorted(reference, key=lambda r: r.run_seed), sorted(baseline, key=lambda r: r.run_seed)
    )
    return [_first_match(run, ref.validation_accuracy) for ref, run in pairs]
