import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from common import DataError

logger = logging.getLogger(__name__)

DEFAULT_MISSING_TOKENS = ("", "?")

# 60/20/20 split, in tenths to keep the floor exact
TRAIN_TENTHS = 6
VALIDATION_TENTHS = 2


@dataclass(frozen=True)
class RawTable:
    """Pre-encoding dataset: one column per CSV header field, missing cells as None."""

    column_names: List[str]
    columns: List[List[Optional[str]]]
    target_column: int
    numeric: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns:
            raise DataError("table has no columns")
        lengths = {len(c) for c in self.columns}
        if len(lengths) != 1 or lengths == {0}:
            raise DataError("columns must share one non-zero length")
        if not 0 <= self.target_column < len(self.columns):
            raise DataError(f"target column index {self.target_column} out of range")
        if not self.numeric:
            object.__setattr__(
                self, "numeric", [_is_numeric(pd.Series(c, dtype=object)) for c in self.columns]
            )

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    @property
    def feature_columns(self) -> List[int]:
        return [i for i in range(len(self.columns)) if i != self.target_column]


@dataclass(frozen=True)
class TableData:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: tuple = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise DataError("features must be N x K and match the label count")
        if not np.isfinite(features).all():
            raise DataError("features contain missing or non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError("labels must lie in 0..C-1")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if not self.feature_names:
            names = tuple(f"x{i}" for i in range(features.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices: Sequence[int]) -> "TableData":
        idx = np.asarray(indices, dtype=np.int64)
        return TableData(
            features=self.features[idx],
            labels=self.labels[idx],
            n_classes=self.n_classes,
            feature_names=self.feature_names,
        )

    def to_raw(self, target: str = "target") -> RawTable:
        names = list(self.feature_names) + [target]
        columns = [[repr(float(v)) for v in self.features[:, j]] for j in range(self.n_features)]
        columns.append([str(int(v)) for v in self.labels])
        return RawTable(column_names=names, columns=columns, target_column=len(names) - 1)


@dataclass(frozen=True)
class SplitData:
    train: TableData
    validation: TableData
    test: TableData
    split_seed: int


@dataclass(frozen=True)
class SampleHandle:
    indices: tuple
    level: int
    sample_seed: int

    @property
    def size(self) -> int:
        return len(self.indices)


def _is_numeric(column: pd.Series) -> bool:
    present = column.dropna()
    if present.empty:
        return False
    return bool(pd.to_numeric(present, errors="coerce").notna().all())


def load_csv(
    path: Path | str,
    target: str,
    missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS,
) -> RawTable:
    tokens = set(missing_tokens)
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}", source=str(path)) from exc

    if len(rows) < 3:
        raise DataError("CSV needs a header and at least 2 data rows", source=str(path))
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if target not in header:
        raise DataError(f"target column {target!r} not in header", source=str(path))
    # pandas pads short rows with NaN silently, so row lengths are checked here
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"line {line}: expected {len(header)} fields, got {len(row)}",
                source=str(path),
            )

    frame = pd.DataFrame(body, columns=header, dtype=object)
    frame = frame.apply(lambda col: col.str.strip())
    frame = frame.mask(frame.isin(tokens))
    logger.info("loaded %s: %d rows, %d columns", path.name, len(frame), len(header))
    return RawTable(
        column_names=header,
        columns=[[None if pd.isna(v) else v for v in frame[name]] for name in header],
        target_column=header.index(target),
    )


def _encode_categorical(column: pd.Series, name: str) -> np.ndarray:
    present = column.dropna()
    if present.empty:
        raise DataError(f"column {name!r} is entirely missing")
    # mode() returns every tied value in sorted order
    filled = column.fillna(present.mode().iloc[0])
    categories = sorted(filled.unique())
    return pd.Categorical(filled, categories=categories).codes.astype(np.float64)


def _impute_numeric(column: pd.Series, name: str) -> np.ndarray:
    values = column.map(float, na_action="ignore").astype(np.float64)
    if values.isna().all():
        raise DataError(f"column {name!r} is entirely missing")
    return values.fillna(values.median()).to_numpy()


def _encode_labels(column: pd.Series, numeric: bool, name: str) -> tuple[np.ndarray, int]:
    if column.isna().any():
        raise DataError(f"target column {name!r} has missing values")
    if numeric:
        values = column.map(float)
        categories = sorted(values.unique())
    else:
        values = column
        categories = sorted(column.unique())
    if len(categories) < 2:
        raise DataError("target needs at least 2 distinct labels")
    codes = pd.Categorical(values, categories=categories).codes
    return codes.astype(np.int64), len(categories)


def preprocess(raw: RawTable) -> TableData:
    features = []
    names = []
    for j in raw.feature_columns:
        name = raw.column_names[j]
        column = pd.Series(raw.columns[j], dtype=object)
        if raw.numeric[j]:
            features.append(_impute_numeric(column, name))
        else:
            features.append(_encode_categorical(column, name))
        names.append(name)

    target = raw.column_names[raw.target_column]
    labels, n_classes = _encode_labels(
        pd.Series(raw.columns[raw.target_column], dtype=object),
        raw.numeric[raw.target_column],
        target,
    )
    matrix = np.column_stack(features) if features else np.empty((raw.n_rows, 0))
    return TableData(
        features=matrix, labels=labels, n_classes=n_classes, feature_names=tuple(names)
    )


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = TRAIN_TENTHS * n // 10
    n_validation = VALIDATION_TENTHS * n // 10
    return n_train, n_validation, n - n_train - n_validation


def shuffle_split(data: TableData, seed: int) -> SplitData:
    n = data.n_instances
    sizes = split_sizes(n)
    if n < 5 or min(sizes) < 1:
        raise DataError(f"{n} rows cannot fill a 60/20/20 split")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_validation, _ = sizes
    return SplitData(
        train=data.take(order[:n_train]),
        validation=data.take(order[n_train : n_train + n_validation]),
        test=data.take(order[n_train + n_validation :]),
        split_seed=seed,
    )


def subsample(train: TableData, size: int, seed: int, level: int = 0) -> SampleHandle:
    if not 1 <= size <= train.n_instances:
        raise DataError(f"sample size {size} outside 1..{train.n_instances}")
    indices = np.random.default_rng(seed).choice(train.n_instances, size=size, replace=False)
    return SampleHandle(indices=tuple(int(i) for i in indices), level=level, sample_seed=seed)


# Synthetic fixtures


def make_planted(
    n: int,
    k: int,
    informative: Sequence[int],
    seed: int,
    noise: float = 0.0,
    binary: bool = False,
) -> TableData:
    """Binary labels from a majority vote of the informative features.

    Each informative feature votes 1 when above 0.5; `noise` flips that share of labels.
    """
    rng = np.random.default_rng(seed)
    if binary:
        features = rng.integers(0, 2, size=(n, k)).astype(np.float64)
    else:
        features = rng.random((n, k))
    votes = (features[:, list(informative)] > 0.5).sum(axis=1)
    labels = (votes * 2 > len(informative)).astype(np.int64)
    flip = rng.random(n) < noise
    labels[flip] = 1 - labels[flip]
    return TableData(features=features, labels=labels, n_classes=2)


def make_dermatology_like(seed: int, n: int = 366, k: int = 34, n_classes: int = 6) -> TableData:
    """Ordinal 0-3 clinical-style scores carry the class signal in a third of the columns;
    the rest are continuous readings on [0, 3) unrelated to the class.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    n_signal = k // 3
    profiles = rng.integers(0, 4, size=(n_classes, n_signal))
    signal = profiles[labels] + rng.integers(-1, 2, size=(n, n_signal))
    noise = 3.0 * rng.random((n, k - n_signal))
    features = np.hstack([np.clip(signal, 0, 3), noise]).astype(np.float64)
    return TableData(features=features, labels=labels, n_classes=n_classes)


def write_csv(data: TableData, path: Path | str, target: str = "class") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(data.features, columns=list(data.feature_names))
    frame[target] = data.labels
    frame.to_csv(path, index=False)
    return path
