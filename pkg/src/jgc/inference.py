"""From trained networks to Granger-causal sets.

Pipeline per target: build the lag-embedded design, train ``runs`` gated
networks with consecutive seeds, take the input Jacobian over the training
rows, reduce each column to a score, merge lag 0 and lag 1 into one class,
then intersect the runs with the cutoff-and-truncate rule in
:func:`threshold_select`.

Keys are ``(variable, lag_class)`` pairs where lag class ``MERGED_LAG`` (1)
holds both the contemporaneous and the lag-1 input.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import (TIME, DatasetError, DesignMatrix, InputIndex,
                      TimeSeriesDataset, build_design, standardize)
from .network import TrainConfig, input_jacobian, train_many
from .simulators import MERGED_LAG, lag_class

log = logging.getLogger(__name__)

STATISTICS = ("abs_mean", "mean_abs")

Key = tuple  # (variable, lag class)


@dataclass
class ImportanceTensor:
    """Per-row input Jacobian of one target's network."""

    J: np.ndarray
    index_map: list[InputIndex]
    target: int
    times: np.ndarray | None = None

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=np.float64)
        if self.J.ndim != 2 or self.J.shape[1] != len(self.index_map):
            raise ValueError(f"J has shape {self.J.shape}, index map has {len(self.index_map)} inputs")
        if self.times is None:
            self.times = np.arange(self.J.shape[0])
        elif len(self.times) != self.J.shape[0]:
            raise ValueError("times must have one entry per Jacobian row")

    @classmethod
    def from_network(cls, params, design: DesignMatrix) -> "ImportanceTensor":
        return cls(input_jacobian(params, design.X), design.index_map, design.target, design.times)


@dataclass
class ImportanceScores:
    """Nonnegative score and signed mean Jacobian per (variable, lag class)."""

    entries: dict
    signed_means: dict

    def __post_init__(self):
        if set(self.entries) != set(self.signed_means):
            raise ValueError("entries and signed_means must share keys")
        for k, v in self.entries.items():
            if not v >= 0:
                raise ValueError(f"score for {k} is negative or NaN: {v}")

    def keys(self) -> list:
        return sorted(self.entries)

    def to_list(self) -> list[dict]:
        return [{"src": k[0], "lag": k[1], "score": self.entries[k],
                 "signed_mean": self.signed_means[k]} for k in self.keys()]

    @classmethod
    def from_list(cls, rows) -> "ImportanceScores":
        entries = {(int(r["src"]), int(r["lag"])): float(r["score"]) for r in rows}
        signed = {(int(r["src"]), int(r["lag"])): float(r["signed_mean"]) for r in rows}
        return cls(entries, signed)


def _column_stats(J: np.ndarray, statistic: str):
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")
    if J.shape[0] < 1:
        raise ValueError("need at least one Jacobian row")
    mu = J.mean(axis=0)
    score = np.abs(mu) if statistic == "abs_mean" else np.abs(J).mean(axis=0)
    return score, mu


def merge_lag_classes(raw: dict, raw_signed: dict | None = None) -> ImportanceScores:
    """Fold raw ``(variable, lag)`` scores into lag classes.

    Lag 0 and lag 1 add up into class ``MERGED_LAG``; lags >= 2 pass through.
    Signed means fold the same way.
    """
    if raw_signed is None:
        raw_signed = {k: 0.0 for k in raw}
    entries: dict = {}
    signed: dict = {}
    for (i, lag), s in sorted(raw.items()):
        if lag < 0:
            raise ValueError(f"negative lag in key {(i, lag)}")
        key = (i, lag_class(lag))
        entries[key] = entries.get(key, 0.0) + float(s)
        signed[key] = signed.get(key, 0.0) + float(raw_signed[(i, lag)])
    return ImportanceScores(entries, signed)


def importance_scores(J: ImportanceTensor, statistic: str = "abs_mean") -> ImportanceScores:
    """Reduce each Jacobian column over rows, merge lag 0/1, drop the time input."""
    score, mu = _column_stats(J.J, statistic)
    raw, raw_signed = {}, {}
    for idx in J.index_map:
        if idx.kind == TIME:
            continue
        raw[(idx.variable, idx.lag)] = score[idx.position]
        raw_signed[(idx.variable, idx.lag)] = mu[idx.position]
    return merge_lag_classes(raw, raw_signed)


def _ordering(scores: ImportanceScores, epsilon: float) -> list:
    ent = scores.entries
    if not ent:
        return []
    top = max(ent.values())
    keep = [k for k, v in ent.items() if v > 0 and v >= epsilon * top]
    return sorted(keep, key=lambda k: (-ent[k], k))


def threshold_select(*runs: ImportanceScores, epsilon: float = 0.01, passes: int = 2) -> set:
    """Keys that every run ranks inside a common leading block.

    Each run drops entries below ``epsilon`` times its maximum and orders the
    rest by descending score (ties by key). Each pass intersects the orders
    and cuts every order just before its first key outside the intersection.
    The final intersection is returned.
    """
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    space = set(runs[0].entries)
    if any(set(r.entries) != space for r in runs[1:]):
        raise ValueError("runs must share the same key space")
    orders = [_ordering(r, epsilon) for r in runs]
    for _ in range(passes):
        common = set.intersection(*(set(o) for o in orders))
        cut = []
        for o in orders:
            n = next((p for p, k in enumerate(o) if k not in common), len(o))
            cut.append(o[:n])
        orders = cut
    return set.intersection(*(set(o) for o in orders))


def infer_signs(runs: Sequence[ImportanceScores], selected: Iterable) -> tuple[dict, list]:
    """Sign of the run-summed signed mean for each selected key.

    Returns ``(signs, zero_keys)``; exact zeros get "+" and are listed in
    ``zero_keys``.
    """
    signs, zero = {}, []
    for k in sorted(selected):
        total = sum(r.signed_means[k] for r in runs)
        if total == 0:
            zero.append(k)
            log.warning("signed mean of %s is exactly zero; reporting '+'", k)
        signs[k] = "-" if total < 0 else "+"
    return signs, zero


@dataclass
class AnalysisConfig:
    eta: int = 5
    lam: float = 1.0
    epsilon: float = 0.01
    runs: int = 3
    contemporaneous: bool = True
    time_input: bool = False
    standardize: bool = True
    statistic: str = "abs_mean"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.validate()

    def validate(self):
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.runs < 2:
            raise ValueError("runs must be >= 2")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; choose from {STATISTICS}")
        self.train.validate()

    def train_config(self, run: int) -> TrainConfig:
        return replace(self.train, lam=float(self.lam), seed=self.train.seed + run)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("eta", "lam", "epsilon", "runs", "contemporaneous",
                                           "time_input", "standardize", "statistic")}
        d["train"] = self.train.to_dict()
        return d


@dataclass
class GcResult:
    target: int
    selected: frozenset
    signs: dict
    runs: list
    tau_hat: int
    zero_sign: list = field(default_factory=list)
    tensors: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.selected = frozenset(self.selected)
        if set(self.signs) != set(self.selected):
            raise ValueError("signs must be defined exactly on the selected keys")
        expect = max((k[1] for k in self.selected), default=0)
        if self.tau_hat != expect:
            raise ValueError(f"tau_hat {self.tau_hat} disagrees with selected keys ({expect})")

    def pooled(self) -> dict:
        """Mean score over runs, per key."""
        keys = self.runs[0].keys()
        return {k: float(np.mean([r.entries[k] for r in self.runs])) for k in keys}

    def to_dict(self) -> dict:
        pooled = self.pooled()
        return {
            "target": self.target,
            "selected": [{"src": k[0], "lag": k[1], "sign": self.signs[k], "score": pooled[k]}
                         for k in sorted(self.selected)],
            "tau_hat": self.tau_hat,
            "zero_sign": [list(k) for k in self.zero_sign],
            "runs": [r.to_list() for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GcResult":
        sel = {(int(e["src"]), int(e["lag"])): e["sign"] for e in d["selected"]}
        return cls(int(d["target"]), frozenset(sel), sel,
                   [ImportanceScores.from_list(r) for r in d["runs"]], int(d["tau_hat"]),
                   [tuple(k) for k in d.get("zero_sign", [])])


def save_result(path, result: GcResult) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_result(path) -> GcResult:
    return GcResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def combine(target: int, tensors: Sequence[ImportanceTensor], epsilon: float = 0.01,
            statistic: str = "abs_mean", keep_tensors: bool = False) -> GcResult:
    """Scores, selection and signs from one tensor per run."""
    runs = [importance_scores(t, statistic) for t in tensors]
    selected = threshold_select(*runs, epsilon=epsilon)
    signs, zero = infer_signs(runs, selected)
    tau = max((k[1] for k in selected), default=0)
    return GcResult(target, frozenset(selected), signs, runs, tau, zero,
                    list(tensors) if keep_tensors else None)


def prepare(ds: TimeSeriesDataset, cfg: AnalysisConfig) -> TimeSeriesDataset:
    if cfg.eta >= ds.T - 1:
        raise DatasetError(f"eta={cfg.eta} leaves no training rows for T={ds.T}")
    return standardize(ds)[0] if cfg.standardize else ds


def analyze_many(tasks: Sequence, keep_tensors: bool = False) -> list[list[GcResult]]:
    """Analyse several ``(dataset, config, targets)`` tasks with one training call.

    All networks of all tasks are trained together; results do not depend on
    how tasks are grouped. Returns one list of :class:`GcResult` per task,
    ordered like its ``targets``.
    """
    jobs, plan = [], []
    for ds, cfg, targets in tasks:
        cfg.validate()
        data = prepare(ds, cfg)
        targets = list(range(ds.N)) if targets is None else list(targets)
        for j in targets:
            if not 0 <= j < ds.N:
                raise DatasetError(f"target {j} out of range for N={ds.N}")
        entries = []
        for j in targets:
            design = build_design(data, j, cfg.eta, cfg.contemporaneous, cfg.time_input)
            first = len(jobs)
            for r in range(cfg.runs):
                jobs.append((design.X, design.y, cfg.train_config(r)))
            entries.append((j, design, first))
        plan.append((cfg, entries))
    params = train_many(jobs)
    out = []
    for cfg, entries in plan:
        results = []
        for j, design, first in entries:
            tensors = [ImportanceTensor.from_network(params[first + r], design)
                       for r in range(cfg.runs)]
            results.append(combine(j, tensors, cfg.epsilon, cfg.statistic, keep_tensors))
        out.append(results)
    return out


def analyze_dataset(ds: TimeSeriesDataset, cfg: AnalysisConfig, targets=None,
                    keep_tensors: bool = False) -> list[GcResult]:
    return analyze_many([(ds, cfg, targets)], keep_tensors)[0]


def analyze_target(ds: TimeSeriesDataset, j: int, cfg: AnalysisConfig,
                   keep_tensors: bool = False) -> GcResult:
    return analyze_dataset(ds, cfg, [j], keep_tensors)[0]


# ------------------------------------------------------------ time traces

def moving_average(x, window: int) -> np.ndarray:
    """Centered moving average along axis 0; the window shrinks at the edges."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be an odd integer >= 1, got {window}")
    if window == 1:
        return x.copy()
    h = window // 2
    n = x.shape[0]
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    lo = np.clip(np.arange(n) - h, 0, n)
    hi = np.clip(np.arange(n) + h + 1, 0, n)
    width = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (c[hi] - c[lo]) / width


def trace_key(variable: int, lag: int) -> str:
    return f"var{variable}@0u1" if lag == MERGED_LAG else f"var{variable}@lag{lag}"


def importance_timeseries(J: ImportanceTensor, smooth_window: int = 1):
    """Per lag-class Jacobian trace over time.

    Lag-0 and lag-1 columns are summed into the merged class; the time input
    is dropped. Returns ``(times, keys, values)`` with ``values`` of shape
    (rows, keys).
    """
    cols: dict = {}
    for idx in J.index_map:
        if idx.kind == TIME:
            continue
        key = (idx.variable, lag_class(idx.lag))
        cols.setdefault(key, []).append(idx.position)
    keys = sorted(cols)
    values = np.empty((J.J.shape[0], len(keys)))
    for c, k in enumerate(keys):
        values[:, c] = J.J[:, cols[k]].sum(axis=1)
    return np.asarray(J.times), keys, moving_average(values, smooth_window)


def regime_contrast(values: np.ndarray, times: np.ndarray, start: int, end: int) -> float:
    """Mean |trace| inside ``[start, end)`` divided by the mean outside it."""
    v = np.abs(np.asarray(values, dtype=np.float64))
    inside = (times >= start) & (times < end)
    if not inside.any() or inside.all():
        raise ValueError("regime must leave rows both inside and outside")
    out = v[~inside].mean()
    return float(np.inf) if out == 0 else float(v[inside].mean() / out)
