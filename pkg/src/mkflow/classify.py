"""Pairwise distance matrices and repeated nearest-neighbour evaluation."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mkflow.distributions import DEFAULT_RESOLUTION, GroundCost, MassDistribution
from mkflow.errors import FormatError, InvalidArgument
from mkflow.imaging import l2_distance
from mkflow.transport import unbalanced_distance

WORKERS_ENV = "MKFLOW_WORKERS"
DEFAULT_KAPPAS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise InvalidArgument(f"{WORKERS_ENV} must be an integer, got {value!r}") from None
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    ids: list[str]
    items: list[MassDistribution]
    labels: list[str]
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.ids) == len(self.items) == len(self.labels)):
            raise InvalidArgument("ids, items and labels must have equal lengths")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidArgument("item ids must be unique")
        classes = self.classes or list(dict.fromkeys(self.labels))
        unknown = set(self.labels) - set(classes)
        if unknown:
            raise InvalidArgument(f"labels not in classes: {sorted(unknown)}")
        object.__setattr__(self, "classes", list(classes))

    def __len__(self):
        return len(self.ids)

    def label_codes(self) -> np.ndarray:
        index = {c: k for k, c in enumerate(self.classes)}
        return np.array([index[lab] for lab in self.labels], dtype=np.int64)


@dataclass(frozen=True)
class Metric:
    """``kind`` is "mk" (unbalanced transport) or "l2"."""

    kind: str = "mk"
    kappa: float = 1.0
    p: float = 1.0
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.kind not in ("mk", "l2"):
            raise InvalidArgument(f"unknown metric {self.kind!r}")
        if self.kind == "mk" and not (self.kappa > 0 and self.p > 0 and self.resolution >= 1):
            raise InvalidArgument("mk metric needs kappa > 0, p > 0 and resolution >= 1")

    @property
    def tag(self) -> str:
        if self.kind == "l2":
            return "l2"
        return f"mk:kappa={self.kappa:g}:p={self.p:g}"

    def __call__(self, f0: MassDistribution, f1: MassDistribution) -> float:
        if self.kind == "l2":
            return l2_distance(f0, f1)
        c = GroundCost.on(f0.grid, self.p)
        return unbalanced_distance(f0, f1, c, self.kappa, self.resolution).value


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric_tag: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidArgument(f"distance matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidArgument("distances must be finite and nonnegative")
        if not np.array_equal(v, v.T) or np.any(np.diag(v) != 0):
            raise InvalidArgument("distance matrix must be symmetric with zero diagonal")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


# worker-process state, set once per pool so items are not re-sent per task
_POOL_ITEMS: list[MassDistribution] = []
_POOL_METRIC: Metric | None = None


def _init_pool(items, metric):
    global _POOL_ITEMS, _POOL_METRIC
    _POOL_ITEMS = items
    _POOL_METRIC = metric


def _row_task(i: int) -> tuple[int, np.ndarray]:
    items = _POOL_ITEMS
    row = np.array([_POOL_METRIC(items[i], items[j]) for j in range(i + 1, len(items))])
    return i, row


def distance_matrix(data: LabeledDataset, metric: Metric, workers: int | None = None) -> DistanceMatrix:
    """Symmetric matrix of ``metric`` over all pairs; identical for any worker count.

    Only the upper triangle is solved (one transport problem per pair) and
    then mirrored.
    """
    items = data.items
    n = len(items)
    if n and any(f.grid != items[0].grid for f in items):
        raise InvalidArgument("all items must share one grid")
    values = np.zeros((n, n))
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise InvalidArgument("workers must be positive")
    if metric.kind == "l2":
        stack = np.stack([f.mass for f in items]) if n else np.zeros((0, 0))
        for i in range(n):
            diff = stack[i + 1:] - stack[i]
            values[i, i + 1:] = [math.sqrt(math.fsum((d * d).tolist())) for d in diff]
    elif workers == 1 or n < 3:
        _init_pool(items, metric)
        for i in range(n - 1):
            values[i, i + 1:] = _row_task(i)[1]
    else:
        # interleave long and short rows so the queue drains evenly
        order = [k for pair in zip(range(n - 1), reversed(range(n - 1))) for k in pair][: n - 1]
        with ProcessPoolExecutor(workers, initializer=_init_pool, initargs=(items, metric)) as pool:
            for i, row in pool.map(_row_task, order, chunksize=1):
                values[i, i + 1:] = row
    values = values + values.T
    return DistanceMatrix(values, metric.tag)


def write_matrix_csv(matrix: DistanceMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# metric={matrix.metric_tag} n={matrix.n}\n")
        for row in matrix.values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path: str | Path) -> DistanceMatrix:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise FormatError(f"{path}: missing '# metric=... n=...' header", 0)
        fields = dict(part.split("=", 1) for part in header[1:].split() if "=" in part)
        if "metric" not in fields or "n" not in fields:
            raise FormatError(f"{path}: header needs metric= and n=", 0)
        n = int(fields["n"])
        rows = [line for line in fh.read().splitlines() if line.strip()]
    if len(rows) != n:
        raise FormatError(f"{path}: header says n={n} but found {len(rows)} rows")
    try:
        values = np.array([[float(x) for x in row.split(",")] for row in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from exc
    if values.shape != (n, n):
        raise FormatError(f"{path}: expected {n}x{n} values, got shape {values.shape}")
    return DistanceMatrix(values, fields["metric"])


def write_labels(path: str | Path, ids: Sequence[str], labels: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        writer.writerows(zip(ids, labels))


def read_labels(path: str | Path) -> dict[str, str]:
    """Map of id -> label, in file order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
            raise FormatError(f"{path}: expected an 'id,label' header")
        out: dict[str, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise FormatError(f"{path}: line {lineno} needs id and label")
            out[row[0].strip()] = row[1].strip()
    return out


def stratified_split(labels, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per class, floor(count * fraction) uniformly drawn training indices; the rest test."""
    labels = np.asarray(labels)
    if not (0 < train_fraction < 1):
        raise InvalidArgument(f"train_fraction must lie in (0, 1), got {train_fraction}")
    train = []
    for cls in dict.fromkeys(labels.tolist()):
        members = np.flatnonzero(labels == cls)
        k = math.floor(len(members) * train_fraction)
        if k < 1:
            raise InvalidArgument(
                f"class {cls!r} has {len(members)} items; fraction {train_fraction} leaves no training item"
            )
        train.append(rng.choice(members, size=k, replace=False))
    train_idx = np.sort(np.concatenate(train))
    test_mask = np.ones(labels.shape[0], dtype=bool)
    test_mask[train_idx] = False
    return train_idx, np.flatnonzero(test_mask)


def nn_classify(matrix, labels, train, test) -> np.ndarray:
    """Label of the nearest training item for every test item.

    Ties go to the training item with the lowest index.
    """
    values = matrix.values if isinstance(matrix, DistanceMatrix) else np.asarray(matrix)
    labels = np.asarray(labels)
    train = np.sort(np.asarray(train, dtype=np.int64))
    test = np.asarray(test, dtype=np.int64)
    if train.size == 0:
        raise InvalidArgument("training set is empty")
    if np.intersect1d(train, test).size:
        raise InvalidArgument("train and test indices overlap")
    n = values.shape[0]
    if train.min() < 0 or train.max() >= n or (test.size and (test.min() < 0 or test.max() >= n)):
        raise InvalidArgument("index out of range")
    nearest = np.argmin(values[np.ix_(test, train)], axis=1)
    return labels[train[nearest]]


@dataclass(frozen=True, eq=False)
class ClassificationReport:
    repeats: int
    per_repeat_error: np.ndarray = field(repr=False)
    mean_error: float
    ci_low: float
    ci_high: float
    seed: int
    train_fraction: float
    metric_tag: str = ""

    def summary(self) -> str:
        tag = f"{self.metric_tag}: " if self.metric_tag else ""
        return (
            f"{tag}mean error {self.mean_error:.4f}, 90% band [{self.ci_low:.4f}, {self.ci_high:.4f}] "
            f"over {self.repeats} repeats (train fraction {self.train_fraction:.4g}, seed {self.seed})"
        )


def repeat_rng(seed: int, repeat: int) -> np.random.Generator:
    """Generator for one repeat, keyed on (seed, repeat) so repeats are order-independent."""
    return np.random.default_rng([seed, repeat])


def evaluate(matrix, labels, train_fraction: float = 1 / 3, repeats: int = 1000,
             seed: int = 0) -> ClassificationReport:
    """Error rate of nearest-neighbour classification over repeated stratified splits.

    The band is the empirical 5th to 95th percentile of the per-repeat errors,
    widened if needed so that it contains the mean.
    """
    if repeats < 1:
        raise InvalidArgument("repeats must be at least 1")
    labels = np.asarray(labels)
    values = matrix.values if isinstance(matrix, DistanceMatrix) else np.asarray(matrix)
    if values.shape != (labels.shape[0], labels.shape[0]):
        raise InvalidArgument(f"matrix shape {values.shape} does not match {labels.shape[0]} labels")
    errors = np.empty(repeats)
    for r in range(repeats):
        train, test = stratified_split(labels, train_fraction, repeat_rng(seed, r))
        predicted = nn_classify(values, labels, train, test)
        errors[r] = np.count_nonzero(predicted != labels[test]) / test.shape[0]
    mean = float(errors.mean())
    low, high = np.percentile(errors, [5, 95])
    return ClassificationReport(
        repeats=repeats,
        per_repeat_error=errors,
        mean_error=mean,
        ci_low=float(min(low, mean)),
        ci_high=float(max(high, mean)),
        seed=seed,
        train_fraction=train_fraction,
        metric_tag=getattr(matrix, "metric_tag", ""),
    )


@dataclass(frozen=True)
class SweepRow:
    metric_tag: str
    kappa: float | None
    mean_error: float
    ci_low: float
    ci_high: float


def kappa_sweep(data: LabeledDataset, kappas: Sequence[float], p: float = 1.0,
                resolution: int = DEFAULT_RESOLUTION, train_fraction: float = 1 / 3,
                repeats: int = 1000, seed: int = 0, workers: int | None = None,
                matrices: dict | None = None) -> list[SweepRow]:
    """One mk row per kappa followed by the l2 baseline row.

    Pass a dict as ``matrices`` to collect the computed distance matrices by tag.
    """
    if not kappas:
        raise InvalidArgument("kappa list is empty")
    labels = np.array(data.labels)
    rows = []
    metrics = [Metric("mk", float(k), p, resolution) for k in kappas] + [Metric("l2")]
    for metric in metrics:
        dm = distance_matrix(data, metric, workers)
        if matrices is not None:
            matrices[metric.tag] = dm
        report = evaluate(dm, labels, train_fraction, repeats, seed)
        rows.append(SweepRow(
            metric.tag,
            metric.kappa if metric.kind == "mk" else None,
            report.mean_error,
            report.ci_low,
            report.ci_high,
        ))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "kappa", "mean_error", "ci_low", "ci_high"])
        for row in rows:
            writer.writerow([row.metric_tag, "" if row.kappa is None else f"{row.kappa:g}",
                             f"{row.mean_error:.6f}", f"{row.ci_low:.6f}", f"{row.ci_high:.6f}"])


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'metric':<24} {'mean error':>10} {'5%':>8} {'95%':>8}"]
    for row in rows:
        lines.append(f"{row.metric_tag:<24} {row.mean_error:>10.4f} {row.ci_low:>8.4f} {row.ci_high:>8.4f}")
    return "\n".join(lines)
