"""CSV ingestion, preprocessing, splits and planted-feature synthetic data."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .concrete import ConfigError
from .tensor import DTYPE, Rng

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class CsvParseError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: list[str] | None = None
    class_names: list[str] | None = None
    split: np.ndarray | None = None  # per-row "train" / "val" / "test"
    informative: list[int] | None = None

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        if self.y is None:
            return 0
        return len(self.class_names) if self.class_names else int(self.y.max()) + 1

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.X)

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray | None]:
        if self.split is None:
            raise ConfigError("dataset has no split assignment")
        mask = self.split == name
        return self.X[mask], None if self.y is None else self.y[mask]


# ---------------------------------------------------------------- CSV

def _resolve_label(header: list[str], label) -> int | None:
    if label is None:
        return None
    if isinstance(label, int):
        idx = label if label >= 0 else len(header) + label
        if not 0 <= idx < len(header):
            raise CsvParseError(f"label column index {label} out of range for {len(header)} columns")
        return idx
    if label not in header:
        raise CsvParseError(f"label column {label!r} not in header {header}")
    return header.index(label)


def load_csv(path, label=None) -> Dataset:
    """Read a header-first, comma separated file; empty cells are missing values.

    ``label`` names (str) or indexes (int) the class column.  Class values are
    mapped to 0..C-1 in order of first appearance.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise CsvParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    label_idx = _resolve_label(header, label)
    features = [i for i in range(len(header)) if i != label_idx]
    X = []
    raw_labels = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvParseError(f"{path}:{line_no}: expected {len(header)} cells, found {len(row)}")
        values = []
        for col in features:
            cell = row[col].strip()
            if cell == "":
                values.append(math.nan)
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise CsvParseError(
                    f"{path}:{line_no}: column {header[col]!r} (#{col}) is not numeric: {cell!r}") from None
        X.append(values)
        if label_idx is not None:
            cell = row[label_idx].strip()
            if cell == "":
                raise CsvParseError(f"{path}:{line_no}: missing label")
            raw_labels.append(cell)
    if not X:
        raise CsvParseError(f"{path}: no data rows")
    y = class_names = None
    if label_idx is not None:
        class_names = list(dict.fromkeys(raw_labels))
        lookup = {name: i for i, name in enumerate(class_names)}
        y = np.array([lookup[v] for v in raw_labels], dtype=np.int64)
    return Dataset(np.array(X, dtype=DTYPE), y, [header[i] for i in features], class_names)


def write_csv(path, dataset: Dataset, label_name: str = "label") -> None:
    names = dataset.feature_names or [f"f{i}" for i in range(dataset.D)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ([label_name] if dataset.y is not None else []))
        for i in range(dataset.N):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in dataset.X[i]]
            if dataset.y is not None:
                label = dataset.y[i]
                cells.append(dataset.class_names[label] if dataset.class_names else str(int(label)))
            writer.writerow(cells)


# ---------------------------------------------------------------- preprocessing

def impute_class_mean(dataset: Dataset) -> Dataset:
    """Fill each missing cell with the mean of that feature over rows of the same class.

    A (class, feature) pair with no observed value falls back to the global
    feature mean.
    """
    miss = dataset.missing
    if not miss.any():
        return dataset
    if dataset.y is None:
        raise ConfigError("class-mean imputation needs labels; use impute='global_mean' for unlabeled data")
    X = dataset.X.copy()
    global_mean = np.nanmean(np.where(miss, np.nan, X), axis=0) if (~miss).any() else None
    for c in np.unique(dataset.y):
        rows = dataset.y == c
        for j in np.flatnonzero(miss[rows].any(axis=0)):
            observed = dataset.X[rows, j][~miss[rows, j]]
            if observed.size:
                fill = observed.mean()
            else:
                fill = global_mean[j]
                log.warning("feature %d has no observed values in class %d; using the global mean", j, c)
            X[rows & miss[:, j], j] = fill
    if np.isnan(X).any():
        raise ConfigError("some features have no observed values at all")
    return replace(dataset, X=X)


def impute_global_mean(dataset: Dataset) -> Dataset:
    miss = dataset.missing
    if not miss.any():
        return dataset
    means = np.nanmean(dataset.X, axis=0)
    if np.isnan(means).any():
        raise ConfigError("some features have no observed values at all")
    X = np.where(miss, means[None, :], dataset.X)
    return replace(dataset, X=X)


@dataclass
class MinMaxStats:
    low: np.ndarray
    high: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.low) / safe, 0.0)


def minmax_stats(dataset: Dataset) -> MinMaxStats:
    X_train, _ = dataset.part("train")
    if X_train.shape[0] == 0:
        raise ConfigError("training split is empty")
    return MinMaxStats(X_train.min(axis=0), X_train.max(axis=0))


def minmax_scale(dataset: Dataset, stats: MinMaxStats | None = None) -> Dataset:
    """Scale every split with min/max taken from the training rows only.

    Columns that are constant on the training split become all zeros.
    """
    stats = minmax_stats(dataset) if stats is None else stats
    return replace(dataset, X=stats.apply(dataset.X))


def assign_splits(dataset: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """Seeded shuffle into train/val/test, stratified by class when labels exist."""
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = Rng(seed, "split")
    split = np.empty(dataset.N, dtype=object)
    groups = [np.arange(dataset.N)] if dataset.y is None else [
        np.flatnonzero(dataset.y == c) for c in range(int(dataset.y.max()) + 1)]
    for rows in groups:
        rows = rows[rng.permutation(len(rows))]
        n_train = int(round(ratios[0] * len(rows)))
        n_val = int(round(ratios[1] * len(rows)))
        split[rows[:n_train]] = "train"
        split[rows[n_train:n_train + n_val]] = "val"
        split[rows[n_train + n_val:]] = "test"
    out = replace(dataset, split=split)
    for name in SPLITS:
        if not (split == name).any():
            raise ConfigError(f"{name} split is empty ({dataset.N} rows, ratios {ratios})")
    return out


def prepare(dataset: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0, impute: str = "class_mean",
            stats: MinMaxStats | None = None):
    """Impute, split and scale; returns the processed dataset and scaling stats.

    Scaling statistics come from the training split unless ``stats`` is given.
    """
    if impute == "class_mean":
        dataset = impute_class_mean(dataset)
    elif impute == "global_mean":
        dataset = impute_global_mean(dataset)
    elif impute != "none":
        raise ConfigError(f"unknown imputation mode {impute!r}")
    if dataset.missing.any():
        raise ConfigError("dataset still has missing values; enable imputation")
    dataset = assign_splits(dataset, ratios, seed)
    stats = minmax_stats(dataset) if stats is None else stats
    return minmax_scale(dataset, stats), stats


# ---------------------------------------------------------------- synthetic

@dataclass
class SyntheticSpec:
    task: str = "classification"
    N: int = 2000
    D: int = 20
    k_true: int = 3
    n_classes: int = 8
    separation: float = 3.0
    noise: float = 1.0
    seed: int = 0
    informative: list[int] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _class_codes(n_classes: int, k: int) -> np.ndarray:
    """+-1 code per class over the k informative features.

    Class c uses the binary digits of c; two classes use complementary codes.
    Every informative feature must vary across classes.
    """
    if n_classes == 2:
        return np.array([[-1.0] * k, [1.0] * k])
    if n_classes > 2**k:
        raise ConfigError(f"{n_classes} classes need more than {k} informative features")
    codes = np.array([[2.0 * ((c >> j) & 1) - 1.0 for j in range(k)] for c in range(n_classes)])
    if (codes.min(axis=0) == codes.max(axis=0)).any():
        raise ConfigError(f"with {n_classes} classes some of the {k} informative features would be constant")
    return codes


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Dataset with a planted informative feature set.

    classification: informative feature j of class c is N(separation * noise * code[c, j], noise^2)
    with +-1 class codes, so every class mean sits ``separation`` standard
    deviations from each per-feature decision boundary.  Other features are
    N(0, noise^2).  With noise = 0 the
    classes sit on distinct points, so they are linearly separable on the
    informative set.

    reconstruction: informative columns are independent uniform signals; every
    other column is a random linear mixture of them plus N(0, (0.01 noise)^2).
    """
    if spec.task not in ("classification", "reconstruction"):
        raise ConfigError(f"unknown synthetic task {spec.task!r}")
    if not 1 <= spec.k_true <= spec.D:
        raise ConfigError(f"k_true={spec.k_true} must lie in [1, D={spec.D}]")
    if spec.N < 1:
        raise ConfigError("N must be positive")
    rng = Rng(spec.seed, "synthetic")
    if spec.informative is None:
        informative = sorted(int(i) for i in rng.permutation(spec.D)[: spec.k_true])
    else:
        informative = sorted(int(i) for i in spec.informative)
        if len(set(informative)) != spec.k_true or min(informative) < 0 or max(informative) >= spec.D:
            raise ConfigError(f"informative set {spec.informative} is not {spec.k_true} distinct indices in [0, {spec.D})")
    others = [j for j in range(spec.D) if j not in informative]
    X = np.zeros((spec.N, spec.D))
    names = [f"f{j}" for j in range(spec.D)]
    if spec.task == "classification":
        if spec.n_classes < 2:
            raise ConfigError("classification needs at least two classes")
        codes = _class_codes(spec.n_classes, spec.k_true)
        scale = spec.noise if spec.noise > 0 else 1.0
        y = np.arange(spec.N) % spec.n_classes
        y = y[rng.permutation(spec.N)]
        X[:, informative] = spec.separation * scale * codes[y] + spec.noise * rng.normal((spec.N, spec.k_true))
        X[:, others] = spec.noise * rng.normal((spec.N, len(others)))
        # labels renumbered by first appearance so a CSV round trip keeps them
        order = list(dict.fromkeys(int(v) for v in y))
        remap = {old: new for new, old in enumerate(order)}
        y = np.array([remap[int(v)] for v in y], dtype=np.int64)
        return Dataset(X, y, names, [str(i) for i in range(spec.n_classes)], informative=informative)
    signals = rng.uniform((spec.N, spec.k_true))
    mix = rng.normal((spec.k_true, len(others))) / math.sqrt(spec.k_true)
    X[:, informative] = signals
    X[:, others] = signals @ mix + 0.01 * spec.noise * rng.normal((spec.N, len(others)))
    return Dataset(X, None, names, None, informative=informative)


def permute_features(dataset: Dataset, perm) -> Dataset:
    """Reorder columns so that new column j is old column perm[j]."""
    perm = [int(p) for p in perm]
    inverse = {old: new for new, old in enumerate(perm)}
    names = None if dataset.feature_names is None else [dataset.feature_names[p] for p in perm]
    informative = None if dataset.informative is None else sorted(inverse[i] for i in dataset.informative)
    return replace(dataset, X=dataset.X[:, perm], feature_names=names, informative=informative)
