from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator


class DataError(Exception):
    """Raised when a dataset cannot be loaded, preprocessed, split or sampled."""

    def __init__(self, message: str, source: str | None = None):
        super().__init__(message)
        self.source = source


class ConfigError(Exception):
    """Raised when an experiment configuration is unusable."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class Arm(str, Enum):
    BASELINE = "baseline"
    CHC = "chc"
    SAGA = "saga"


class ChcConfig(BaseModel):
    pop_size: int = Field(40, ge=2, description="Population size p")
    max_generations: int = Field(10000, ge=1, description="Generation cap k")
    stagnation_limit: int = Field(
        10, ge=1, description="Generations without improvement before convergence"
    )
    divergence_rate: float = Field(
        0.35, gt=0.0, lt=1.0, description="Bit-flip rate of cataclysmic reinitialization"
    )
    init_inclusion_prob: float = Field(
        0.5, gt=0.0, lt=1.0, description="Per-feature inclusion probability at init"
    )
    seed: int = Field(0, description="Run seed")


class SagaConfig(BaseModel):
    b: int = Field(4, ge=1, description="Number of surrogate levels")
    pr: float = Field(0.5, gt=0.0, le=1.0, description="Population reduction rate")
    z: int = Field(10, ge=1, description="Generations between evolution-control checks")
    fop: bool = Field(True, description="False optimum prevention (evolution control)")
    sp: int = Field(1, ge=1, description="Surrogate perseverance")
    so: bool = Field(False, description="Stop after the surrogate stage")
    p0: int = Field(40, ge=2, description="Initial population size")
    a: float = Field(2.0, gt=1.0, description="Base of the geometric sampling schedule")
    chc: ChcConfig = Field(default_factory=ChcConfig, description="CHC settings per level")
    seed: int = Field(0, description="Run seed")
    strict_pseudocode: bool = Field(
        False, description="Reduce population and resample on every convergence event"
    )


class TraceEvent(BaseModel):
    generation: int = Field(..., description="Generation counter within the stage")
    stage: str = Field(..., description="Stage label, e.g. chc, level-4, final")
    elapsed: float = Field(..., description="Seconds since the run started")
    instances_processed: int = Field(..., description="Training rows consumed so far")
    surrogate_evals: int = Field(..., description="Surrogate evaluations so far")
    full_evals: int = Field(..., description="Full-data evaluations so far")
    best_true_fitness: float = Field(..., description="Best known true fitness")


class LevelRecord(BaseModel):
    level: int = Field(..., description="Surrogate level i (b down to 1)")
    repetition: int = Field(..., description="Perseverance repetition at this level")
    pop_size: int
    sample_size: int
    generations: int
    switched: bool = Field(..., description="Level ended by evolution control")
    surrogate_evals: int
    instances_processed: int
    candidate_true_fitness: float


class RunReport(BaseModel):
    algorithm: str = Field(..., description="Arm label, e.g. CHC or SAGA[so=1]")
    dataset: str = Field(..., description="Dataset identity (name and split seed)")
    run_seed: int
    n_train: int
    best_mask: List[int] = Field(..., description="Selected features as 0/1 bits")
    validation_accuracy: float
    test_accuracy: float
    surrogate_mask: Optional[List[int]] = Field(
        None, description="Surrogate-stage best g' (SAGA only)"
    )
    surrogate_validation_accuracy: Optional[float] = None
    surrogate_test_accuracy: Optional[float] = None
    elapsed: float
    surrogate_evals: int
    full_evals: int
    instances_processed: int
    generations: int
    trace: List[TraceEvent] = Field(default_factory=list)
    levels: List[LevelRecord] = Field(default_factory=list)

    @property
    def n_selected(self) -> int:
        return sum(self.best_mask)


class Summary(BaseModel):
    algorithm: str
    dataset: str
    n_runs: int
    validation_mean: float
    validation_std: float
    test_mean: float
    test_std: float
    instances_mean: float
    instances_std: float
    elapsed_mean: float
    elapsed_std: float
    features_mean: float


class MatchResult(BaseModel):
    run_seed: int
    reference_fitness: float
    matched: bool
    generation: Optional[int] = None
    elapsed: Optional[float] = None
    instances_processed: Optional[int] = None


class ExperimentConfig(BaseModel):
    dataset: Path = Field(..., description="CSV dataset path")
    target: str = Field(..., description="Target column name")
    arm: Arm = Field(Arm.SAGA, description="baseline | chc | saga")
    label: Optional[str] = Field(None, description="Arm label used in tables")
    saga: SagaConfig = Field(default_factory=SagaConfig)
    chc: ChcConfig = Field(default_factory=ChcConfig)
    repetitions: int = Field(10, ge=1, description="Number of seeded runs")
    split_seed: int = Field(0, description="Seed of the fixed 60/20/20 split")
    run_seed: int = Field(0, description="First run seed")
    output_dir: Path = Field(Path("results"), description="Directory for artifacts")
    missing_tokens: List[str] = Field(default_factory=lambda: ["", "?"])
    workers: int = Field(1, ge=1, description="Processes for repetitions")

    @field_validator("arm", mode="before")
    @classmethod
    def normalize_arm(cls, value):
        if isinstance(value, str):
            return value.lower()
        return value

    @property
    def dataset_id(self) -> str:
        return f"{self.dataset.stem}@{self.split_seed}"

    def arm_label(self) -> str:
        if self.label:
            return self.label
        if self.arm == Arm.BASELINE:
            return "Baseline"
        if self.arm == Arm.CHC:
            return f"CHC[p={self.chc.pop_size}]"
        flags = []
        defaults = SagaConfig()
        for name in ("b", "pr", "z", "fop", "sp", "so", "p0"):
            value = getattr(self.saga, name)
            if value != getattr(defaults, name):
                flags.append(f"{name}={int(value) if isinstance(value, bool) else value}")
        return f"SAGA[{', '.join(flags)}]" if flags else "SAGA"


class ExperimentResult(BaseModel):
    config: ExperimentConfig
    reports: List[RunReport]
    summary: Summary

    @property
    def label(self) -> str:
        return self.config.arm_label()
