"""Scoring against ground truth and multi-realization lambda sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .inference import AnalysisConfig, GcResult, analyze_many, importance_timeseries
from .simulators import (GroundTruthGraph, LvSpec, VarSpec, simulate_lorenz96,
                         simulate_lotka_volterra, simulate_nonlinear_map, simulate_piecewise_var,
                         simulate_var, union_graph)

log = logging.getLogger(__name__)

VARIABLE = "variable"
LAG = "lag"
MODES = (VARIABLE, LAG)
METRICS = ("auroc", "auprc", "f_score", "sensitivity_pos", "sensitivity_neg")


class MetricUndefined(ValueError):
    """The metric has no meaning for this truth vector (e.g. no positives)."""


class KeyMismatch(ValueError):
    """Results and ground truth live on different key spaces."""


def _as_arrays(scores, truth):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(truth).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def auroc(scores, truth) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    s, y = _as_arrays(scores, truth)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("AUROC needs at least one positive and one negative")
    # midranks turn the Mann-Whitney count into a rank sum
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def auprc(scores, truth) -> float:
    """Average precision with tied scores sharing one threshold."""
    s, y = _as_arrays(scores, truth)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefined("AUPRC needs at least one positive")
    # summed as an exact rational so the value does not depend on rounding order
    ap, prev_tp = Fraction(0), 0
    for t in np.unique(s)[::-1]:
        hit = s >= t
        tp = int((hit & y).sum())
        if tp > prev_tp:
            ap += Fraction((tp - prev_tp) * tp, int(hit.sum()))
            prev_tp = tp
    return float(ap / n_pos)


def f_score(predicted, truth) -> float:
    """Harmonic mean of precision and recall of two key sets (both empty gives 1)."""
    predicted, truth = set(predicted), set(truth)
    if not predicted and not truth:
        return 1.0
    tp = len(predicted & truth)
    if tp == 0:
        return 0.0
    # 2PR / (P + R) simplified to one division
    return 2 * tp / (len(predicted) + len(truth))


def sign_sensitivity(predicted: dict, truth: dict):
    """Fraction of true '+' (and '-') edges predicted with the right sign.

    Returns ``(sens_pos, sens_neg)``; a component is None when truth has no
    edge of that sign.
    """
    out = []
    for sign in ("+", "-"):
        keys = [k for k, v in truth.items() if v == sign]
        if not keys:
            out.append(None)
            continue
        out.append(sum(predicted.get(k) == sign for k in keys) / len(keys))
    return tuple(out)


# ------------------------------------------------------------------ graph scores

@dataclass
class ScoreMatrix:
    """Edge scores keyed (src, dst) in variable mode or (src, dst, lag) in lag mode."""

    n: int
    mode: str
    self_connections: bool
    scores: dict

    def keys(self) -> list:
        return sorted(self.scores)

    def as_array(self) -> np.ndarray:
        """N x N variable-level matrix (source row, target column); excluded cells are NaN."""
        if self.mode != VARIABLE:
            raise ValueError("only variable-level scores form a matrix")
        a = np.full((self.n, self.n), np.nan)
        for (i, j), v in self.scores.items():
            a[i, j] = v
        return a


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _by_target(results: Sequence[GcResult], n: int) -> dict:
    got = {r.target: r for r in results}
    missing = [j for j in range(n) if j not in got]
    if missing:
        raise KeyMismatch(f"missing results for targets {missing}")
    return got


def aggregate_graph_scores(results: Sequence[GcResult], n: int, mode: str = VARIABLE,
                           self_connections: bool = True) -> ScoreMatrix:
    """Collect run-pooled scores of every target into one edge-score map.

    Variable mode keeps the max over lag classes for each (src, dst) pair.
    Excluded self pairs are left out entirely.
    """
    _check_mode(mode)
    got = _by_target(results, n)
    scores: dict = {}
    for j in range(n):
        for (i, lag), v in got[j].pooled().items():
            if i == j and not self_connections:
                continue
            if mode == LAG:
                scores[(i, j, lag)] = v
            else:
                scores[(i, j)] = max(v, scores.get((i, j), -math.inf))
    return ScoreMatrix(n, mode, self_connections, scores)


def predicted_edges(results: Sequence[GcResult], n: int, mode: str = VARIABLE,
                    self_connections: bool = True) -> dict:
    """Thresholded edges with signs.

    In variable mode a pair takes the sign of its highest-scoring selected lag class.
    """
    _check_mode(mode)
    got = _by_target(results, n)
    out: dict = {}
    best: dict = {}
    for j in range(n):
        r = got[j]
        pooled = r.pooled()
        for (i, lag) in sorted(r.selected):
            if i == j and not self_connections:
                continue
            if mode == LAG:
                out[(i, j, lag)] = r.signs[(i, lag)]
            elif pooled[(i, lag)] > best.get((i, j), -math.inf):
                best[(i, j)] = pooled[(i, lag)]
                out[(i, j)] = r.signs[(i, lag)]
    return out


def truth_edges(graph: GroundTruthGraph, mode: str = VARIABLE, self_connections: bool = True) -> dict:
    """Ground-truth edges with signs in the given scoring mode."""
    _check_mode(mode)
    out: dict = {}
    for e in graph.sorted_edges():
        if e.src == e.dst and not self_connections:
            continue
        key = (e.src, e.dst, e.lag) if mode == LAG else (e.src, e.dst)
        if key in out and out[key] != e.sign:
            out[key] = "?"
        else:
            out[key] = e.sign
    return out


def score_vectors(matrix: ScoreMatrix, graph: GroundTruthGraph):
    """Aligned (keys, scores, truth bits) over the matrix key space."""
    if graph.n != matrix.n:
        raise KeyMismatch(f"truth has {graph.n} variables, results have {matrix.n}")
    truth = truth_edges(graph, matrix.mode, matrix.self_connections)
    keys = matrix.keys()
    outside = sorted(set(truth) - set(matrix.scores))
    if outside:
        raise KeyMismatch(f"{len(outside)} truth edges outside the result key space, "
                          f"first: {outside[:10]}")
    return keys, [matrix.scores[k] for k in keys], [k in truth for k in keys]


def _safe(fn, *args):
    try:
        return fn(*args)
    except MetricUndefined:
        return None


def evaluate(results: Sequence[GcResult], graph: GroundTruthGraph, mode: str = VARIABLE,
             self_connections: bool = True) -> dict:
    """All metrics for one realization; inapplicable ones are None."""
    m = aggregate_graph_scores(results, graph.n, mode, self_connections)
    _, s, y = score_vectors(m, graph)
    truth = truth_edges(graph, mode, self_connections)
    pred = predicted_edges(results, graph.n, mode, self_connections)
    pos, neg = sign_sensitivity(pred, truth)
    return {"auroc": _safe(auroc, s, y), "auprc": _safe(auprc, s, y),
            "f_score": f_score(pred, truth), "sensitivity_pos": pos, "sensitivity_neg": neg}


# ----------------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    """Per-realization metric values with their mean and population sd."""

    lam: float
    mode: str
    self_connections: bool
    values: dict  # metric name -> list over realizations (None where inapplicable)

    @property
    def realizations(self) -> int:
        return len(next(iter(self.values.values()), []))

    def mean(self, metric: str):
        v = [x for x in self.values[metric] if x is not None]
        return float(np.mean(v)) if v else None

    def sd(self, metric: str):
        v = [x for x in self.values[metric] if x is not None]
        return float(np.std(v)) if v else None

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "mode": self.mode, "self_connections": self.self_connections,
            "realizations": self.realizations,
            "metrics": {k: {"values": self.values[k], "mean": self.mean(k), "sd": self.sd(k)}
                        for k in METRICS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(float(d["lambda"]), d["mode"], bool(d["self_connections"]),
                   {k: list(v["values"]) for k, v in d["metrics"].items()})


def collect(lam, mode, self_connections, per_realization: Sequence[dict]) -> MetricsReport:
    return MetricsReport(lam, mode, self_connections,
                         {k: [r[k] for r in per_realization] for k in METRICS})


# -------------------------------------------------------------------- benchmarks

@dataclass(frozen=True)
class Benchmark:
    name: str
    simulate: Callable  # (seed, **overrides) -> (dataset, truth graph, regimes or None)
    eta: int
    lam_grid: tuple
    # (mode, self-connections) pairs; the first is the headline scoring
    scorings: tuple
    # "auprc" or "auprc_sensitivity": the quantity a sweep maximises
    selection: str = "auprc"
    lam: float = 1.0
    overrides: tuple = ()
    # (field, value) pairs replacing AnalysisConfig defaults for this benchmark
    analysis: tuple = ()

    def config(self, **kw) -> AnalysisConfig:
        """Default analysis settings for this benchmark; keywords take precedence."""
        base = {"eta": self.eta, "lam": self.lam, **dict(self.analysis)}
        base.update(kw)
        return AnalysisConfig(**base)


def _sim_var(seed, n=10, t=500, tau=5):
    ds, g = simulate_var(VarSpec(n=n, T=t, tau=tau, seed=seed))
    return ds, g, None


def _sim_piecewise(seed, n=10, t=900, tau=5):
    breaks = (t // 3, 2 * t // 3)
    ds, regimes = simulate_piecewise_var(VarSpec(n=n, T=t, tau=tau, seed=seed, breaks=breaks))
    return ds, union_graph(g for _, g in regimes), regimes


def _sim_lorenz(seed, n=20, t=500, f=10.0):
    ds, g = simulate_lorenz96(N=n, F=f, T=t, seed=seed)
    return ds, g, None


def _sim_map(seed, t=1000, tau=10):
    ds, g = simulate_nonlinear_map(tau=tau, T=t, seed=seed)
    return ds, g, None


def _sim_lv(seed, n=20, t=2000):
    ds, g = simulate_lotka_volterra(LvSpec(n=n, T=t, seed=seed))
    return ds, g, None


PAPER_GRID = (0.5, 1.0, 1.5, 2.0, 2.5)

BENCHMARKS = {
    "var": Benchmark("var", _sim_var, 10, PAPER_GRID,
                     ((VARIABLE, True), (LAG, True)), overrides=("n", "t", "tau")),
    "lorenz96": Benchmark("lorenz96", _sim_lorenz, 5, PAPER_GRID,
                          ((VARIABLE, False), (LAG, True)), overrides=("n", "t", "f"),
                          analysis=(("standardize", False), ("statistic", "mean_abs"))),
    "map": Benchmark("map", _sim_map, 15, PAPER_GRID, ((LAG, True), (VARIABLE, True)),
                     overrides=("t", "tau")),
    "lotka_volterra": Benchmark("lotka_volterra", _sim_lv, 1, (0.0, 0.25, 0.5),
                                ((VARIABLE, False), (LAG, True)), selection="auprc_sensitivity",
                                overrides=("n", "t")),
    "piecewise_var": Benchmark("piecewise_var", _sim_piecewise, 10, (3.0,),
                               ((VARIABLE, True), (LAG, True)), lam=3.0,
                               overrides=("n", "t", "tau"), analysis=(("time_input", True),)),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def realization_seeds(master: int, realization: int) -> tuple[int, int]:
    """Independent (simulation, training) seeds for one realization."""
    out = []
    for purpose in (0, 1):
        ss = np.random.SeedSequence([int(master), int(realization), purpose])
        out.append(int(ss.generate_state(1, np.uint32)[0]))
    return out[0], out[1]


def selection_score(report: MetricsReport, selection: str):
    auprc_ = report.mean("auprc")
    if selection == "auprc":
        return auprc_
    pos, neg = report.mean("sensitivity_pos"), report.mean("sensitivity_neg")
    parts = [x for x in (pos, neg) if x is not None]
    if auprc_ is None or not parts:
        return auprc_
    return (float(np.mean(parts)) + auprc_) / 2


@dataclass
class ExperimentReport:
    benchmark: str
    lam_grid: list
    realizations: int
    master_seed: int
    # reports[scoring index][lambda index]
    reports: list
    scorings: list
    selection: str
    sim_overrides: dict = field(default_factory=dict)

    def best(self, scoring: int = 0) -> MetricsReport:
        """Report at the lambda with the highest selection score (first on ties)."""
        cands = self.reports[scoring]
        keyed = [(selection_score(r, self.selection), -k) for k, r in enumerate(cands)]
        best = max(range(len(cands)),
                   key=lambda k: (-math.inf if keyed[k][0] is None else keyed[k][0], keyed[k][1]))
        return cands[best]

    def stability(self, scoring: int = 0) -> list[tuple[float, float]]:
        return [(r.lam, r.mean("f_score")) for r in self.reports[scoring]]

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark, "lambda_grid": self.lam_grid,
            "realizations": self.realizations, "master_seed": self.master_seed,
            "selection": self.selection, "sim_overrides": self.sim_overrides,
            "scorings": [{"mode": m, "self_connections": s,
                          "best_lambda": self.best(k).lam,
                          "per_lambda": [r.to_dict() for r in self.reports[k]]}
                         for k, (m, s) in enumerate(self.scorings)],
        }


def _realization_job(args):
    bench_name, sim_overrides, master, rz, cfg, grid = args
    bench = get_benchmark(bench_name)
    sim_seed, train_seed = realization_seeds(master, rz)
    ds, graph, _ = bench.simulate(sim_seed, **sim_overrides)
    base = replace(cfg, train=replace(cfg.train, seed=train_seed))
    tasks = [(ds, replace(base, lam=float(lam)), None) for lam in grid]
    try:
        per_lam = analyze_many(tasks)
    except Exception as exc:
        raise RuntimeError(f"{bench_name} realization {rz}: {exc}") from exc
    scores = [[evaluate(res, graph, mode, selfc) for res in per_lam]
              for mode, selfc in bench.scorings]
    return rz, scores, per_lam


def run_experiment(benchmark: str, lam_grid: Sequence[float] | None = None, realizations: int = 5,
                   base: AnalysisConfig | None = None, master_seed: int = 0, workers: int = 1,
                   sim_overrides: dict | None = None, keep_results: bool = False):
    """Sweep lambda over seeded realizations of a benchmark.

    Every realization reuses one simulated dataset across the whole grid.
    Work is split by realization; with ``workers > 1`` realizations run in
    separate processes and are merged by index, so the report does not
    depend on the worker count.
    """
    bench = get_benchmark(benchmark)
    grid = [float(x) for x in (bench.lam_grid if lam_grid is None else lam_grid)]
    if not grid:
        raise ValueError("lambda grid must not be empty")
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    sim_overrides = dict(sim_overrides or {})
    unknown = set(sim_overrides) - set(bench.overrides)
    if unknown:
        raise ValueError(f"benchmark {benchmark!r} does not take {sorted(unknown)}")
    cfg = base if base is not None else bench.config()
    cfg.validate()
    jobs = [(benchmark, sim_overrides, master_seed, rz, cfg, grid) for rz in range(realizations)]
    if workers == 1 or realizations == 1:
        done = [_realization_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, realizations)) as pool:
            done = list(pool.map(_realization_job, jobs))
    done.sort(key=lambda d: d[0])
    reports = []
    for s, (mode, selfc) in enumerate(bench.scorings):
        reports.append([collect(lam, mode, selfc, [d[1][s][k] for d in done])
                        for k, lam in enumerate(grid)])
    report = ExperimentReport(benchmark, grid, realizations, master_seed, reports,
                              list(bench.scorings), bench.selection, sim_overrides)
    if keep_results:
        return report, [d[2] for d in done]
    return report


def stability_curve(benchmark: str, lam_grid: Sequence[float] | None = None, realizations: int = 5,
                    base: AnalysisConfig | None = None, master_seed: int = 0, workers: int = 1,
                    sim_overrides: dict | None = None) -> list[tuple[float, float]]:
    """Mean thresholded-set F-score per lambda under the headline scoring."""
    rep = run_experiment(benchmark, lam_grid, realizations, base, master_seed, workers,
                         sim_overrides)
    return rep.stability(0)


# ------------------------------------------------------------------- curve points

def roc_points(scores, truth) -> list[tuple[float, float]]:
    """(false positive rate, true positive rate) per distinct threshold, from (0, 0)."""
    s, y = _as_arrays(scores, truth)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("ROC needs at least one positive and one negative")
    pts = [(0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        hit = s >= t
        pts.append((int((hit & ~y).sum()) / n_neg, int((hit & y).sum()) / n_pos))
    return pts


def pr_points(scores, truth) -> list[tuple[float, float]]:
    """(recall, precision) per distinct threshold, highest threshold first."""
    s, y = _as_arrays(scores, truth)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefined("PR curve needs at least one positive")
    pts = []
    for t in np.unique(s)[::-1]:
        hit = s >= t
        tp = int((hit & y).sum())
        pts.append((tp / n_pos, tp / int(hit.sum())))
    return pts


# ------------------------------------------------------------------ regime traces

def regime_contrasts(results: Sequence[GcResult], regimes, smooth_window: int = 1) -> dict:
    """Inside/outside ratio of mean |trace| for every regime-specific true edge.

    ``regimes`` is a list of ``((start, end), graph)``. An edge is regime
    specific when some but not all regimes contain it; its active rows are the
    union of those regimes. Traces are averaged over runs before taking
    magnitudes, so results must carry their Jacobian tensors.
    """
    got = {r.target: r for r in results}
    present: dict = {}
    for k, (_, g) in enumerate(regimes):
        for e in g.edges:
            present.setdefault((e.src, e.dst, e.lag), set()).add(k)
    out = {}
    for key, ks in sorted(present.items()):
        if len(ks) == len(regimes) or key[1] not in got:
            continue
        r = got[key[1]]
        if not r.tensors:
            raise ValueError(f"result for target {key[1]} has no Jacobian tensors")
        traces = []
        for t in r.tensors:
            times, keys, vals = importance_timeseries(t, smooth_window)
            traces.append(vals[:, keys.index((key[0], key[2]))])
        v = np.abs(np.mean(traces, axis=0))
        inside = np.zeros(len(times), dtype=bool)
        for k in ks:
            (start, end), _ = regimes[k]
            inside |= (times >= start) & (times < end)
        if not inside.any() or inside.all():
            continue
        outside = v[~inside].mean()
        out[key] = math.inf if outside == 0 else float(v[inside].mean() / outside)
    return out
