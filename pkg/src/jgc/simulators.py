"""Benchmark systems with exact lagged, signed ground-truth graphs.

Randomness comes from numpy's PCG64 bit generator (platform independent
for a given seed); Gaussian noise is drawn with the Box-Muller transform on
its uniform stream so the mapping from seed to data is fully specified.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .dataset import TimeSeriesDataset

MERGED_LAG = 1  # lag class holding both lag-0 and lag-1 dependencies
SIGNS = ("+", "-", "?")


class SimulationError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def box_muller(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws from pairs of uniforms."""
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n].reshape(size)


def lag_class(lag: int) -> int:
    return MERGED_LAG if lag <= 1 else int(lag)


class Edge(NamedTuple):
    src: int
    dst: int
    lag: int
    sign: str = "?"


@dataclass(frozen=True)
class GroundTruthGraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset(Edge(*e) for e in self.edges)
        seen = set()
        for e in edges:
            if not (0 <= e.src < self.n and 0 <= e.dst < self.n):
                raise ValueError(f"edge {e} has index outside [0, {self.n})")
            if e.lag < MERGED_LAG:
                raise ValueError(f"edge {e} has invalid lag class")
            if e.sign not in SIGNS:
                raise ValueError(f"edge {e} has invalid sign {e.sign!r}")
            key = (e.src, e.dst, e.lag)
            if key in seen:
                raise ValueError(f"duplicate edge key {key}")
            seen.add(key)
        object.__setattr__(self, "edges", edges)

    def lag_keys(self) -> set[tuple[int, int, int]]:
        return {(e.src, e.dst, e.lag) for e in self.edges}

    def pair_keys(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    def signed(self) -> dict[tuple[int, int, int], str]:
        return {(e.src, e.dst, e.lag): e.sign for e in self.edges}

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [_edge_dict(e) for e in self.sorted_edges()]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthGraph":
        return cls(int(d["n"]), frozenset(_edge_from(e) for e in d["edges"]))


def _edge_dict(e: Edge) -> dict:
    return {"src": e.src, "dst": e.dst, "lag": e.lag, "sign": e.sign}


def _edge_from(d: dict) -> Edge:
    return Edge(int(d["src"]), int(d["dst"]), int(d["lag"]), str(d.get("sign", "?")))


def save_truth(path, graph: GroundTruthGraph, regimes=None) -> None:
    doc = graph.to_dict()
    if regimes:
        doc["regimes"] = [
            {"start": int(s), "end": int(e), "edges": [_edge_dict(x) for x in g.sorted_edges()]}
            for (s, e), g in regimes
        ]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_truth(path):
    """Returns ``(graph, regimes)``; regimes is a list of ((start, end), graph) or None."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    graph = GroundTruthGraph.from_dict(doc)
    regimes = None
    if doc.get("regimes"):
        regimes = [((int(r["start"]), int(r["end"])),
                    GroundTruthGraph(graph.n, frozenset(_edge_from(e) for e in r["edges"])))
                   for r in doc["regimes"]]
    return graph, regimes


# --------------------------------------------------------------------------- VAR

@dataclass
class VarSpec:
    n: int = 10
    T: int = 500
    tau: int = 5
    p: float = 0.1
    coef_range: tuple[float, float] = (0.2, 0.8)
    noise_sd: float = 1.0
    seed: int = 0
    burn_in: int = 100
    breaks: tuple[int, ...] = ()
    # explicit coefficients, shape (tau, n, n) with coefs[a-1][dst][src];
    # one array per regime when breaks are given
    coefs: list | None = None
    max_rescale: int = 200

    def validate(self):
        if self.n < 1 or self.T < 2:
            raise ValueError("VarSpec needs n >= 1 and T >= 2")
        if self.tau < 1:
            raise ValueError("VarSpec.tau must be >= 1")
        if not 0 < self.p < 1:
            raise ValueError("VarSpec.p must lie in (0, 1)")
        lo, hi = self.coef_range
        if not 0 <= lo <= hi:
            raise ValueError("coef_range must satisfy 0 <= lo <= hi")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        b = list(self.breaks)
        if any(x <= 0 or x >= self.T for x in b) or b != sorted(set(b)):
            raise ValueError(f"breaks must be strictly increasing inside (0, T): {b}")
        if self.coefs is not None and len(self.coefs) != len(b) + 1:
            raise ValueError("need one coefficient array per regime")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coef_range"] = list(self.coef_range)
        d["breaks"] = list(self.breaks)
        if self.coefs is not None:
            d["coefs"] = [np.asarray(c).tolist() for c in self.coefs]
        return d


def companion_radius(coefs: np.ndarray) -> float:
    tau, n, _ = coefs.shape
    comp = np.zeros((tau * n, tau * n))
    comp[:n] = np.concatenate(list(coefs), axis=1)
    comp[n:, :-n] = np.eye((tau - 1) * n)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def random_var_coefs(rng, n, tau, p, coef_range, max_rescale=200) -> np.ndarray:
    lo, hi = coef_range
    mask = rng.random((tau, n, n)) < p
    mag = lo + (hi - lo) * rng.random((tau, n, n))
    sign = np.where(rng.random((tau, n, n)) < 0.5, -1.0, 1.0)
    coefs = np.where(mask, mag * sign, 0.0)
    for _ in range(max_rescale):
        rho = companion_radius(coefs)
        if rho < 1.0:
            return coefs
        coefs = coefs * (0.95 / rho)
    raise SimulationError(f"VAR not stabilized after {max_rescale} rescalings")


def var_graph(coefs: np.ndarray) -> GroundTruthGraph:
    tau, n, _ = coefs.shape
    edges = set()
    for a in range(1, tau + 1):
        for dst, src in zip(*np.nonzero(coefs[a - 1])):
            c = coefs[a - 1, dst, src]
            edges.add(Edge(int(src), int(dst), lag_class(a), "+" if c > 0 else "-"))
    # lag 1 is the only lag mapped to the merged class, so keys stay unique
    return GroundTruthGraph(n, frozenset(edges))


def simulate_piecewise_var(spec: VarSpec):
    """VAR whose coefficient matrices switch at ``spec.breaks``.

    Returns the dataset and a list of ``((start, end), graph)`` regimes with
    half-open intervals in observation time.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    n, tau = spec.n, spec.tau
    bounds = [0, *spec.breaks, spec.T]
    if spec.coefs is None:
        regimes = [random_var_coefs(rng, n, tau, spec.p, spec.coef_range, spec.max_rescale)
                   for _ in range(len(bounds) - 1)]
    else:
        regimes = []
        for c in spec.coefs:
            c = np.asarray(c, dtype=np.float64)
            if c.shape != (tau, n, n):
                raise ValueError(f"coefficient array shape {c.shape} != {(tau, n, n)}")
            regimes.append(c)
    total = spec.burn_in + tau + spec.T
    eps = spec.noise_sd * box_muller(rng, (total, n))
    x = np.zeros((total, n))
    x[:tau] = eps[:tau]
    start = tau + spec.burn_in  # first recorded row
    which = np.searchsorted(np.array(spec.breaks, dtype=int), np.arange(spec.T), side="right")
    for t in range(tau, total):
        k = 0 if t < start else which[t - start]
        A = regimes[k]
        acc = eps[t].copy()
        for a in range(1, tau + 1):
            acc += A[a - 1] @ x[t - a]
        x[t] = acc
    if not np.all(np.isfinite(x)):
        raise SimulationError("VAR trajectory became non-finite")
    ds = TimeSeriesDataset(x[start:], tuple(f"x{i}" for i in range(n)))
    out = [((bounds[k], bounds[k + 1]), var_graph(regimes[k])) for k in range(len(regimes))]
    return ds, out


def simulate_var(spec: VarSpec):
    if spec.breaks:
        raise ValueError("use simulate_piecewise_var for specs with breaks")
    ds, regimes = simulate_piecewise_var(spec)
    return ds, regimes[0][1]


# ---------------------------------------------------------------------- Lorenz96

def lorenz96_rhs(x: np.ndarray, F: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + F


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_lorenz96(x0, F: float, dt_sample: float, n_samples: int, substeps: int = 10):
    """Sample the trajectory from ``x0`` every ``dt_sample`` (x0 is not included)."""
    h = dt_sample / substeps
    x = np.array(x0, dtype=np.float64)
    f = lambda s: lorenz96_rhs(s, F)  # noqa: E731
    out = np.empty((n_samples, x.size))
    for t in range(n_samples):
        for _ in range(substeps):
            x = rk4_step(f, x, h)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"Lorenz96 blew up at sample {t}")
        out[t] = x
    return out


def lorenz96_graph(n: int) -> GroundTruthGraph:
    edges = set()
    for i in range(n):
        for s in {(i - 2) % n, (i - 1) % n, i, (i + 1) % n}:
            edges.add(Edge(s, i, MERGED_LAG, "?"))
    return GroundTruthGraph(n, frozenset(edges))


def simulate_lorenz96(N: int = 20, F: float = 10.0, dt_sample: float = 0.1, T: int = 500,
                      seed: int = 0, substeps: int = 10, burn_in: int = 500, x0=None):
    """Lorenz96 sampled every ``dt_sample``; ``burn_in`` counts inner RK4 steps."""
    if N < 4:
        raise ValueError("Lorenz96 needs N >= 4")
    if T < 2 or dt_sample <= 0 or substeps < 1:
        raise ValueError("invalid Lorenz96 sampling settings")
    h = dt_sample / substeps
    if x0 is None:
        x = 0.01 * box_muller(make_rng(seed), (N,))
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (N,):
            raise ValueError(f"x0 must have shape ({N},)")
    f = lambda s: lorenz96_rhs(s, F)  # noqa: E731
    for k in range(burn_in):
        x = rk4_step(f, x, h)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"Lorenz96 blew up at burn-in step {k}")
    data = integrate_lorenz96(x, F, dt_sample, T, substeps)
    return TimeSeriesDataset(data, tuple(f"x{i}" for i in range(N))), lorenz96_graph(N)


# ----------------------------------------------------------------- nonlinear map

def nonlinear_map_graph(tau: int) -> GroundTruthGraph:
    # variable 0 is x, variable 1 is y
    edges = {Edge(0, 0, MERGED_LAG, "?"), Edge(1, 0, MERGED_LAG, "-"),
             Edge(1, 1, MERGED_LAG, "?"), Edge(0, 1, lag_class(tau), "-")}
    return GroundTruthGraph(2, frozenset(edges))


def simulate_nonlinear_map(tau: int = 10, T: int = 1000, seed: int = 0, x0: float | None = None,
                           y0: float | None = None, burn_in: int = 100):
    """Coupled logistic maps where x drives y at delay ``tau``.

    The pre-history x(-tau+1) .. x(-1) is drawn uniformly from (0, 1); x(0), y(0)
    are ``x0``, ``y0`` (uniform in (0.2, 0.8) when omitted). The first
    ``burn_in`` iterates are discarded.
    """
    if tau < 1 or T <= tau:
        raise ValueError("need tau >= 1 and T > tau")
    rng = make_rng(seed)
    hist = rng.random(tau - 1)
    if x0 is None:
        x0 = 0.2 + 0.6 * rng.random()
    if y0 is None:
        y0 = 0.2 + 0.6 * rng.random()
    if not (0 < x0 < 1 and 0 <= y0 < 1):
        raise ValueError("x0 must lie in (0, 1) and y0 in [0, 1)")
    total = burn_in + T
    x = np.empty(tau + total)
    y = np.empty(tau + total)
    x[:tau - 1] = hist
    x[tau - 1] = x0
    y[tau - 1] = y0
    for t in range(tau, tau + total):
        x[t] = x[t - 1] * (3.78 - 3.78 * x[t - 1] - 0.07 * y[t - 1])
        y[t] = y[t - 1] * (3.77 - 3.77 * y[t - 1] - 0.08 * x[t - tau])
        if not (-10 <= x[t] <= 10 and -10 <= y[t] <= 10):
            raise SimulationError(f"nonlinear map diverged at step {t - tau + 1}")
    start = tau + burn_in
    data = np.stack([x[start:], y[start:]], axis=1)
    return TimeSeriesDataset(data, ("x", "y")), nonlinear_map_graph(tau)


# --------------------------------------------------------------- Lotka-Volterra

@dataclass
class LvSpec:
    n: int = 20
    alpha: float = 1.1
    beta: float = 0.2
    delta: float = 0.2
    rho: float = 1.1
    eta_lv: float = 2.75e-5
    n_parents: int = 2
    T: int = 2000
    dt: float = 0.01
    stride: int = 10
    seed: int = 0
    burn_in: int = 500
    init_range: tuple[float, float] = (5.0, 10.0)
    x0: list | None = field(default=None)

    def validate(self):
        if self.n < 2 or self.n % 2:
            raise ValueError("LvSpec.n must be even and >= 2")
        if self.alpha <= 0 or self.rho <= 0:
            raise ValueError("alpha and rho must be positive")
        if self.beta < 0 or self.delta < 0 or self.eta_lv < 0:
            raise ValueError("beta, delta, eta_lv must be non-negative")
        if not 1 <= self.n_parents <= self.n // 2:
            raise ValueError("n_parents must lie in [1, n/2]")
        if self.T < 2 or self.dt <= 0 or self.stride < 1:
            raise ValueError("invalid LV sampling settings")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_range"] = list(self.init_range)
        return d


def lv_parents(n_species: int, n_parents: int):
    """Cyclic topology: prey i is eaten by predators i, i+1, ..."""
    prey_pa = [[(i + k) % n_species for k in range(n_parents)] for i in range(n_species)]
    pred_pa = [[i for i in range(n_species) if j in prey_pa[i]] for j in range(n_species)]
    return prey_pa, pred_pa


def lv_graph(spec: LvSpec) -> GroundTruthGraph:
    m = spec.n // 2
    prey_pa, pred_pa = lv_parents(m, spec.n_parents)
    edges = set()
    for i in range(m):
        edges.add(Edge(i, i, MERGED_LAG, "?"))
        edges.add(Edge(m + i, m + i, MERGED_LAG, "?"))
        if spec.beta > 0:
            for j in prey_pa[i]:
                edges.add(Edge(m + j, i, MERGED_LAG, "-"))
    if spec.delta > 0:
        for j in range(m):
            for k in pred_pa[j]:
                edges.add(Edge(k, m + j, MERGED_LAG, "+"))
    return GroundTruthGraph(spec.n, frozenset(edges))


def simulate_lotka_volterra(spec: LvSpec):
    """Multi-species predator-prey system: prey are variables 0..n/2-1."""
    spec.validate()
    m = spec.n // 2
    prey_pa, pred_pa = lv_parents(m, spec.n_parents)
    P = np.zeros((m, m))  # P[i, j] = 1 if predator j preys on prey i
    for i, pa in enumerate(prey_pa):
        P[i, pa] = 1.0
    a, b, d, r, e = spec.alpha, spec.beta, spec.delta, spec.rho, spec.eta_lv

    def rhs(s):
        x, y = s[:m], s[m:]
        dx = a * x - b * x * (P @ y) - e * x * x
        dy = d * y * (P.T @ x) - r * y
        return np.concatenate([dx, dy])

    if spec.x0 is None:
        lo, hi = spec.init_range
        s = lo + (hi - lo) * make_rng(spec.seed).random(spec.n)
    else:
        s = np.array(spec.x0, dtype=np.float64)
    out = np.empty((spec.T, spec.n))
    total = spec.burn_in + spec.T * spec.stride
    row = 0
    for k in range(1, total + 1):
        s = rk4_step(rhs, s, spec.dt)
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise SimulationError(f"Lotka-Volterra population invalid at step {k}")
        if k > spec.burn_in and (k - spec.burn_in) % spec.stride == 0:
            out[row] = s
            row += 1
    names = tuple([f"prey{i}" for i in range(m)] + [f"pred{j}" for j in range(m)])
    return TimeSeriesDataset(out, names), lv_graph(spec)


def lv_first_integral(x, y, alpha, beta, delta, rho):
    """Conserved quantity of the two-species system without self-limitation."""
    return delta * x - rho * np.log(x) + beta * y - alpha * np.log(y)


def union_graph(graphs: Iterable[GroundTruthGraph]) -> GroundTruthGraph:
    """Edges present in any regime; conflicting signs become '?'."""
    graphs = list(graphs)
    n = graphs[0].n
    seen: dict = {}
    for g in graphs:
        for e in g.edges:
            key = (e.src, e.dst, e.lag)
            seen[key] = e.sign if seen.get(key, e.sign) == e.sign else "?"
    return GroundTruthGraph(n, frozenset(Edge(*k, s) for k, s in seen.items()))
