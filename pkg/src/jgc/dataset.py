"""Time-series container, z-scoring, lag embedding and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

LAGGED = "lagged"
CONTEMPORANEOUS = "contemporaneous"
TIME = "time"


class DatasetError(ValueError):
    """Invalid dataset content or shape."""


@dataclass(frozen=True)
class TimeSeriesDataset:
    """T x N observations, one row per timestep and one column per variable."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DatasetError(f"values must be 2-D, got shape {values.shape}")
        names = tuple(str(n) for n in self.names)
        T, N = values.shape
        if T < 2:
            raise DatasetError(f"need at least 2 timesteps, got T={T}")
        if N < 1:
            raise DatasetError("need at least one variable")
        if len(names) != N:
            raise DatasetError(f"{len(names)} names for {N} columns")
        if any(n == "" for n in names):
            raise DatasetError("variable names must be non-empty")
        if len(set(names)) != N:
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DatasetError(f"duplicate variable names: {dup}")
        bad = np.argwhere(~np.isfinite(values))
        if len(bad):
            t, i = bad[0]
            raise DatasetError(f"non-finite value {values[t, i]!r} at t={t}, variable {names[i]!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values, names: Sequence[str] | None = None) -> "TimeSeriesDataset":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            names = [f"x{i}" for i in range(values.shape[1])]
        return cls(values, tuple(names))

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesDataset):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class InputIndex:
    """Meaning of one design-matrix column."""

    kind: str
    variable: int | None = None
    lag: int | None = None
    position: int = 0

    @property
    def is_candidate(self) -> bool:
        """Whether the column is a Granger-causal candidate (time is not)."""
        return self.kind != TIME


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    index_map: list[InputIndex]
    target: int
    eta: int
    times: np.ndarray = field(default=None)

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]


def load_csv(path) -> TimeSeriesDataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    seen = set()
    for col, name in enumerate(header):
        if not name:
            raise DatasetError(f"{path}: empty header name in column {col + 1}")
        if name in seen:
            raise DatasetError(f"{path}: duplicate header name {name!r} in column {col + 1}")
        seen.add(name)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(
                f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
        parsed = []
        for col, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col + 1}") from None
            if not math.isfinite(v):
                raise DatasetError(
                    f"{path}: non-finite cell {cell!r} at row {lineno}, column {col + 1}")
            parsed.append(v)
        data.append(parsed)
    if len(data) < 2:
        raise DatasetError(f"{path}: need at least 2 data rows, got {len(data)}")
    return TimeSeriesDataset(np.array(data, dtype=np.float64), tuple(header))


def save_csv(ds: TimeSeriesDataset, path) -> None:
    # re-validate: callers may hand in objects built around __post_init__
    ds = TimeSeriesDataset(ds.values, ds.names)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for row in ds.values:
            w.writerow([format_real(v) for v in row])


def format_real(v: float) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    return format(float(v), ".17g")


def standardize(ds: TimeSeriesDataset):
    """Z-score every column with population statistics.

    Returns the standardized dataset plus ``(mean, std)`` arrays such that
    ``out * std + mean`` recovers the input.
    """
    v = ds.values
    mean = v.mean(axis=0)
    centered = v - mean
    std = np.sqrt((centered ** 2).mean(axis=0))
    scale = np.maximum(np.abs(mean), 1.0)
    for i, s in enumerate(std):
        if not s > 1e-12 * scale[i]:
            raise DatasetError(f"variable {ds.names[i]!r} is constant; cannot standardize")
    out = centered / std
    # second pass removes the residual mean left by rounding
    out -= out.mean(axis=0)
    return TimeSeriesDataset(out, ds.names), (mean, std)


def input_layout(N: int, eta: int, target: int, contemporaneous: bool = True,
                 time_input: bool = False) -> list[InputIndex]:
    """Column order: lagged blocks (variable-major, lag-minor), contemporaneous, time."""
    index = []
    for i in range(N):
        for a in range(1, eta + 1):
            index.append(InputIndex(LAGGED, i, a, len(index)))
    if contemporaneous:
        for i in range(N):
            if i != target:
                index.append(InputIndex(CONTEMPORANEOUS, i, 0, len(index)))
    if time_input:
        index.append(InputIndex(TIME, None, None, len(index)))
    return index


def build_design(ds: TimeSeriesDataset, target: int, eta: int, contemporaneous: bool = True,
                 time_input: bool = False) -> DesignMatrix:
    T, N = ds.T, ds.N
    if not 0 <= target < N:
        raise DatasetError(f"target {target} out of range for N={N}")
    if not 1 <= eta < T:
        raise DatasetError(f"max lag eta={eta} must satisfy 1 <= eta < T={T}")
    index_map = input_layout(N, eta, target, contemporaneous, time_input)
    v = ds.values
    M = T - eta
    times = np.arange(eta, T)
    X = np.empty((M, len(index_map)))
    for idx in index_map:
        if idx.kind == LAGGED:
            X[:, idx.position] = v[eta - idx.lag:T - idx.lag, idx.variable]
        elif idx.kind == CONTEMPORANEOUS:
            X[:, idx.position] = v[eta:, idx.variable]
        else:
            X[:, idx.position] = times / (T - 1)
    return DesignMatrix(X, v[eta:, target].copy(), index_map, target, eta, times)
