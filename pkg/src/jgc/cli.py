"""Command-line front end: ``jgc simulate | analyze | evaluate | sweep``.

Every invocation writes into one output directory: its result files, a
``manifest.json`` (resolved config, output checksums, and a provenance
block holding the only timestamp) and ``log.txt``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, format_real, load_csv, save_csv
from .evaluation import (BENCHMARKS, LAG, MODES, VARIABLE, KeyMismatch, MetricUndefined,
                         aggregate_graph_scores, evaluate, get_benchmark, pr_points, roc_points,
                         run_experiment, score_vectors)
from .inference import (AnalysisConfig, GcResult, analyze_many, importance_timeseries,
                        load_result, save_result, trace_key)
from .network import TrainConfig, TrainingError
from .simulators import GroundTruthGraph, SimulationError, load_truth, save_truth

log = logging.getLogger("jgc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "data": None, "benchmark": None, "n": None, "t": None, "tau": None, "f": None,
    "eta": None, "lambda": None, "lambda_grid": None, "epsilon": 0.01, "runs": 3,
    "contemporaneous": None, "time_input": None, "standardize": None, "epochs": 2000,
    "lr": 1e-3, "batch": 64, "hidden": "50,50", "activation": "tanh", "dtype": "float32",
    "statistic": "abs_mean", "seed": 0, "workers": None, "out": None, "targets": None,
    "smooth": 1, "svg": False, "realizations": 5, "results": None, "truth": None,
    "mode": VARIABLE, "self_connections": "include",
}

COMMAND_KEYS = {
    "simulate": {"benchmark", "n", "t", "tau", "f", "seed", "out"},
    "analyze": {"data", "benchmark", "n", "t", "tau", "f", "eta", "lambda", "epsilon", "runs",
                "contemporaneous", "time_input", "standardize", "epochs", "lr", "batch",
                "hidden", "activation", "dtype", "statistic", "seed", "workers", "out",
                "targets", "smooth", "svg"},
    "evaluate": {"results", "truth", "mode", "self_connections", "out"},
    "sweep": {"benchmark", "n", "t", "tau", "f", "eta", "lambda_grid", "epsilon", "runs",
              "contemporaneous", "time_input", "standardize", "epochs", "lr", "batch",
              "hidden", "activation", "dtype", "statistic", "seed", "workers", "out",
              "realizations"},
}


class UsageError(ValueError):
    """Bad flags or config; exit code 2."""


# --------------------------------------------------------------------- parsing

def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _add_sim_flags(p):
    p.add_argument("--n", type=int, help="number of variables")
    p.add_argument("--t", type=int, help="series length")
    p.add_argument("--tau", type=int, help="true maximum lag (VAR) or coupling delay (map)")
    p.add_argument("--f", type=float, help="Lorenz96 forcing")


def _add_model_flags(p):
    p.add_argument("--eta", type=int, help="maximum tested lag")
    p.add_argument("--epsilon", type=float, help="relative cutoff (default 0.01)")
    p.add_argument("--runs", type=int, help="independent runs per target (default 3)")
    p.add_argument("--contemporaneous", action=argparse.BooleanOptionalAction, default=None,
                   help="feed lag-0 values of the other variables "
                        "(default on unless the benchmark presets it)")
    p.add_argument("--time-input", action=argparse.BooleanOptionalAction, default=None,
                   help="append normalised time as an input "
                        "(default off unless the benchmark presets it)")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None,
                   help="z-score columns before fitting "
                        "(default on unless the benchmark presets it)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths (default 50,50)")
    p.add_argument("--activation", choices=["tanh", "relu", "identity"])
    p.add_argument("--dtype", choices=["float32", "float64"], help="training precision")
    p.add_argument("--statistic", choices=["abs_mean", "mean_abs"])
    p.add_argument("--workers", type=int, help="process pool size (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jgc", description="Jacobian Granger causality")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON file of option values; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("simulate", help="generate a benchmark dataset and its ground truth")
    p.add_argument("name", nargs="?", help="benchmark name")
    p.add_argument("--benchmark")
    _add_sim_flags(p)
    common(p)

    p = sub.add_parser("analyze", help="infer Granger-causal sets for a dataset")
    p.add_argument("--data", help="CSV with a header row")
    p.add_argument("--benchmark", help="simulate this benchmark instead of reading --data")
    _add_sim_flags(p)
    _add_model_flags(p)
    p.add_argument("--lambda", dest="lambda_", type=float, help="L1 strength on the gates")
    p.add_argument("--targets", help="comma-separated target indices (default all)")
    p.add_argument("--smooth", type=int, help="odd moving-average window for traces (default 1)")
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=None,
                   help="also draw each trace CSV as an SVG line plot")
    common(p)

    p = sub.add_parser("evaluate", help="score analysis results against ground truth")
    p.add_argument("--results", help="directory written by analyze")
    p.add_argument("--truth", help="ground-truth JSON")
    p.add_argument("--mode", choices=list(MODES))
    p.add_argument("--self-connections", choices=["include", "exclude"])
    common(p)

    p = sub.add_parser("sweep", help="lambda sweep over seeded benchmark realizations")
    p.add_argument("name", nargs="?", help="benchmark name")
    p.add_argument("--benchmark")
    _add_sim_flags(p)
    _add_model_flags(p)
    p.add_argument("--lambda-grid", help="comma-separated lambda values")
    p.add_argument("--realizations", type=int)
    common(p)
    return parser


def _normalise_key(k: str) -> str:
    k = k.replace("-", "_")
    return "lambda" if k == "lambda_" else k


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    cmd = args.command
    allowed = COMMAND_KEYS[cmd]
    cfg = {k: DEFAULTS[k] for k in allowed}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a flat JSON object")
        for k, v in doc.items():
            key = _normalise_key(k)
            if key not in allowed:
                raise UsageError(f"unknown config key {k!r} for {cmd}; allowed: {sorted(allowed)}")
            if isinstance(v, (dict,)):
                raise UsageError(f"config key {k!r} must not be nested")
            cfg[key] = v
    for k, v in vars(args).items():
        key = _normalise_key(k)
        if key in allowed and v is not None:
            cfg[key] = v
    name = getattr(args, "name", None)
    if name is not None:
        if cfg.get("benchmark") not in (None, name) and args.benchmark is not None:
            raise UsageError(f"benchmark given twice: {name!r} and {args.benchmark!r}")
        cfg["benchmark"] = name
    if cfg.get("out") is None:
        raise UsageError("--out is required")
    return cfg


def _check_benchmark(cfg: dict):
    name = cfg.get("benchmark")
    if name is None:
        raise UsageError(f"a benchmark name is required; choose from {sorted(BENCHMARKS)}")
    try:
        return get_benchmark(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _sim_overrides(cfg: dict, bench) -> dict:
    out = {}
    for k in ("n", "t", "tau", "f"):
        if cfg.get(k) is None:
            continue
        if k not in bench.overrides:
            raise UsageError(f"--{k} does not apply to benchmark {bench.name!r}")
        out[k] = cfg[k]
    return out


def _analysis_config(cfg: dict, bench, lam) -> AnalysisConfig:
    # unset model switches fall back to the benchmark preset, then to the library default
    preset = bench.config() if bench else AnalysisConfig()
    switches = {k: bool(getattr(preset, k) if cfg.get(k) is None else cfg[k])
                for k in ("contemporaneous", "time_input", "standardize")}
    try:
        train = TrainConfig(epochs=int(cfg["epochs"]), lr=float(cfg["lr"]),
                            batch_size=int(cfg["batch"]), seed=int(cfg["seed"]),
                            hidden=tuple(_int_list(cfg["hidden"])),
                            activation=cfg["activation"], dtype=cfg["dtype"])
        return AnalysisConfig(
            eta=int(cfg["eta"] if cfg.get("eta") is not None else preset.eta),
            lam=float(lam), epsilon=float(cfg["epsilon"]), runs=int(cfg["runs"]),
            statistic=cfg["statistic"], train=train, **switches)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _workers(cfg: dict) -> int:
    w = cfg.get("workers")
    w = (os.cpu_count() or 1) if w is None else int(w)
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


# ---------------------------------------------------------------------- output

class Output:
    """Output directory with a plain log file and a manifest written last."""

    def __init__(self, path, command: str, config: dict, verbose: bool = False):
        self.dir = Path(path)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.files: list[str] = []
        self.handler = logging.FileHandler(self.dir / "log.txt", mode="w", encoding="utf-8")
        self.handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root = logging.getLogger()
        root.addHandler(self.handler)
        root.setLevel(logging.DEBUG if verbose else logging.INFO)

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.dir / name

    def write_json(self, name: str, doc) -> None:
        self.path(name).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                   encoding="utf-8")

    def close(self, status: str) -> None:
        outputs = {}
        for name in sorted(self.files):
            p = self.dir / name
            if p.is_file():
                outputs[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "config": self.config,
            "status": status,
            "outputs": outputs,
            "provenance": {
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "jgc_version": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True)
                                                + "\n", encoding="utf-8")
        logging.getLogger().removeHandler(self.handler)
        self.handler.close()


def graph_doc(results, n: int, names) -> dict:
    """Combined selected edges of all targets, in ground-truth JSON layout plus scores."""
    edges = []
    for r in sorted(results, key=lambda r: r.target):
        pooled = r.pooled()
        for (i, lag) in sorted(r.selected):
            edges.append({"src": i, "dst": r.target, "lag": lag, "sign": r.signs[(i, lag)],
                          "score": pooled[(i, lag)]})
    return {"n": n, "names": list(names), "targets": sorted(r.target for r in results),
            "edges": sorted(edges, key=lambda e: (e["src"], e["dst"], e["lag"]))}


def write_trace_csv(path: Path, times, keys, values) -> None:
    lines = [",".join(["t"] + [trace_key(*k) for k in keys])]
    for t, row in zip(times, values):
        lines.append(",".join([str(int(t))] + [format_real(v) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def write_trace_svg(path: Path, times, keys, values, title: str) -> None:
    """Polyline per key with axes, tick labels and a legend."""
    W, H, L, R, T, B = 720, 360, 60, 170, 30, 40
    x0, x1 = float(times[0]), float(times[-1]) if len(times) > 1 else float(times[0]) + 1
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        lo, hi = lo - 1, hi + 1
    pw, ph = W - L - R, H - T - B

    def sx(x):
        return L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return T + (hi - y) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{L}" y="18" font-size="13">{title}</text>',
           f'<line x1="{L}" y1="{T + ph}" x2="{L + pw}" y2="{T + ph}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{T + ph}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = lo + frac * (hi - lo)
        out.append(f'<text x="{sx(xv):.1f}" y="{T + ph + 15}" text-anchor="middle">{xv:.0f}</text>')
        out.append(f'<text x="{L - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{H - 5}" text-anchor="middle">t</text>')
    if lo < 0 < hi:
        out.append(f'<line x1="{L}" y1="{sy(0):.1f}" x2="{L + pw}" y2="{sy(0):.1f}" '
                   f'stroke="#cccccc"/>')
    for c, k in enumerate(keys):
        colour = _COLOURS[c % len(_COLOURS)]
        pts = " ".join(f"{sx(float(t)):.1f},{sy(float(v)):.1f}" for t, v in zip(times, values[:, c]))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}"/>')
        ly = T + 14 * c + 8
        out.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{W - R + 35}" y="{ly + 4}">{trace_key(*k)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


# -------------------------------------------------------------------- commands

def cmd_simulate(cfg: dict, out: Output) -> int:
    bench = _check_benchmark(cfg)
    overrides = _sim_overrides(cfg, bench)
    seed = int(cfg["seed"])
    try:
        ds, graph, regimes = bench.simulate(seed, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {bench.name} spec: {exc}") from None
    save_csv(ds, out.path("data.csv"))
    save_truth(out.path("truth.json"), graph, regimes)
    out.write_json("spec.json", {"benchmark": bench.name, "seed": seed, **overrides})
    log.info("simulated %s: T=%d N=%d, %d true edges", bench.name, ds.T, ds.N, len(graph.edges))
    return EXIT_OK


def _analyze_chunk(args):
    ds, acfg, targets, keep = args
    try:
        return analyze_many([(ds, acfg, targets)], keep_tensors=keep)[0], []
    except TrainingError:
        pass
    # retry one target at a time so that healthy targets still report
    done, failed = [], []
    for j in targets:
        try:
            done += analyze_many([(ds, acfg, [j])], keep_tensors=keep)[0]
        except TrainingError as exc:
            failed.append((j, str(exc)))
    return done, failed


def cmd_analyze(cfg: dict, out: Output) -> int:
    bench = None
    if cfg.get("data") is None and cfg.get("benchmark") is None:
        raise UsageError("analyze needs --data or --benchmark")
    if cfg.get("data") is not None and cfg.get("benchmark") is not None:
        raise UsageError("give either --data or --benchmark, not both")
    if cfg.get("benchmark") is not None:
        bench = _check_benchmark(cfg)
        ds, graph, regimes = bench.simulate(int(cfg["seed"]), **_sim_overrides(cfg, bench))
        save_csv(ds, out.path("data.csv"))
        save_truth(out.path("truth.json"), graph, regimes)
    else:
        for k in ("n", "t", "tau", "f"):
            if cfg.get(k) is not None:
                raise UsageError(f"--{k} only applies with --benchmark")
        ds = load_csv(cfg["data"])
    lam = cfg.get("lambda")
    if lam is None:
        lam = bench.lam if bench else 1.0
    acfg = _analysis_config(cfg, bench, lam)
    if acfg.eta >= ds.T - 1:
        raise UsageError(f"--eta {acfg.eta} too large for T={ds.T}")
    targets = list(range(ds.N)) if cfg.get("targets") is None else _int_list(cfg["targets"])
    bad = [j for j in targets if not 0 <= j < ds.N]
    if bad or not targets:
        raise UsageError(f"targets {bad or targets} out of range for N={ds.N}")
    smooth = int(cfg["smooth"])
    if smooth < 1 or smooth % 2 == 0:
        raise UsageError("--smooth must be an odd integer >= 1")
    workers = min(_workers(cfg), len(targets))
    log.info("analyzing %d targets of %s (T=%d, N=%d) with eta=%d lambda=%s",
             len(targets), cfg.get("data") or bench.name, ds.T, ds.N, acfg.eta, acfg.lam)
    keep = bool(acfg.time_input or cfg["svg"])
    chunks = [targets[w::workers] for w in range(workers)]
    jobs = [(ds, acfg, c, keep) for c in chunks if c]
    if len(jobs) == 1:
        parts = [_analyze_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_analyze_chunk, jobs))
    results = sorted((r for p in parts for r in p[0]), key=lambda r: r.target)
    failed = sorted(f for p in parts for f in p[1])

    for r in results:
        save_result(out.path(f"result_{r.target}.json"), r)
        if keep:
            traces = [importance_timeseries(t, smooth) for t in r.tensors]
            times, keys = traces[0][0], traces[0][1]
            mean = np.mean([tr[2] for tr in traces], axis=0)
            if acfg.time_input:
                write_trace_csv(out.path(f"trace_{r.target}.csv"), times, keys, mean)
            if cfg["svg"]:
                shown = sorted(r.selected) or sorted(r.pooled(), key=lambda k: -r.pooled()[k])[:5]
                cols = [keys.index(k) for k in shown]
                write_trace_svg(out.path(f"trace_{r.target}.svg"), times, shown, mean[:, cols],
                                f"target {ds.names[r.target]}")
        log.info("target %d (%s): %d selected, tau_hat=%d", r.target, ds.names[r.target],
                 len(r.selected), r.tau_hat)
    out.write_json("graph.json", graph_doc(results, ds.N, ds.names))
    out.write_json("analysis_config.json", acfg.to_dict())
    if failed:
        for j, msg in failed:
            log.error("target %d failed: %s", j, msg)
        print(f"training failed for targets {[j for j, _ in failed]}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _load_results(path: Path) -> list[GcResult]:
    if not path.is_dir():
        raise UsageError(f"--results must be a directory written by analyze: {path}")
    files = sorted(path.glob("result_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise UsageError(f"no result_*.json files in {path}")
    return [load_result(p) for p in files]


def _mismatch_report(results, graph: GroundTruthGraph, mode: str, selfc: bool) -> str:
    targets = {r.target for r in results}
    lines = []
    missing = [j for j in range(graph.n) if j not in targets]
    extra = sorted(t for t in targets if t >= graph.n)
    if missing:
        lines.append(f"targets without results: {missing[:10]}")
    if extra:
        lines.append(f"result targets outside truth: {extra[:10]}")
    if not lines:
        m = aggregate_graph_scores(results, graph.n, mode, selfc)
        keys = {(e.src, e.dst, e.lag) if mode == LAG else (e.src, e.dst) for e in graph.edges
                if selfc or e.src != e.dst}
        lines.append(f"truth keys outside the result key space: {sorted(keys - set(m.scores))[:10]}")
    return "; ".join(lines)


def cmd_evaluate(cfg: dict, out: Output) -> int:
    if cfg.get("results") is None or cfg.get("truth") is None:
        raise UsageError("evaluate needs --results and --truth")
    results = _load_results(Path(cfg["results"]))
    graph, _ = load_truth(cfg["truth"])
    mode, selfc = cfg["mode"], cfg["self_connections"] == "include"
    if mode not in MODES or cfg["self_connections"] not in ("include", "exclude"):
        raise UsageError("invalid --mode or --self-connections")
    try:
        metrics = evaluate(results, graph, mode, selfc)
        m = aggregate_graph_scores(results, graph.n, mode, selfc)
        keys, s, y = score_vectors(m, graph)
    except KeyMismatch:
        msg = _mismatch_report(results, graph, mode, selfc)
        log.error("key-space mismatch: %s", msg)
        print(f"key-space mismatch: {msg}", file=sys.stderr)
        return EXIT_FAIL
    out.write_json("metrics.json", {"mode": mode, "self_connections": selfc,
                                    "n_keys": len(keys), "n_true": int(sum(y)),
                                    "metrics": metrics})
    try:
        roc = roc_points(s, y)
        pr = pr_points(s, y)
    except MetricUndefined:
        roc = pr = []
    _write_points(out.path("roc.csv"), "fpr,tpr", roc)
    _write_points(out.path("pr.csv"), "recall,precision", pr)
    print(f"{'metric':<17}value")
    for k, v in metrics.items():
        print(f"{k:<17}{'n/a' if v is None else format(v, '.4f')}")
    log.info("evaluated %d keys in %s mode", len(keys), mode)
    return EXIT_OK


def _write_points(path: Path, header: str, pts) -> None:
    lines = [header] + [f"{format_real(a)},{format_real(b)}" for a, b in pts]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_sweep(cfg: dict, out: Output) -> int:
    bench = _check_benchmark(cfg)
    overrides = _sim_overrides(cfg, bench)
    grid = bench.lam_grid if cfg.get("lambda_grid") is None else _float_list(cfg["lambda_grid"])
    if not grid:
        raise UsageError("--lambda-grid must not be empty")
    if any(not x >= 0 for x in grid):
        raise UsageError("lambda values must be >= 0")
    reps = int(cfg["realizations"])
    if reps < 1:
        raise UsageError("--realizations must be >= 1")
    acfg = _analysis_config(cfg, bench, grid[0])
    log.info("sweeping %s over lambda %s, %d realizations", bench.name, list(grid), reps)
    rep = run_experiment(bench.name, grid, reps, acfg, int(cfg["seed"]), _workers(cfg), overrides)
    doc = rep.to_dict()
    out.write_json("report.json", doc)
    best = []
    for k, (mode, selfc) in enumerate(rep.scorings):
        b = rep.best(k)
        best.append({"mode": mode, "self_connections": selfc, "lambda": b.lam,
                     **{m: {"mean": b.mean(m), "sd": b.sd(m)} for m in b.values}})
    out.write_json("best.json", {"benchmark": bench.name, "selection": rep.selection,
                                 "best": best})
    lines = ["lambda,f_score_mean,f_score_sd"]
    for r in rep.reports[0]:
        lines.append(f"{format_real(r.lam)},{format_real(r.mean('f_score'))},"
                     f"{format_real(r.sd('f_score'))}")
    out.path("stability.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for b in best:
        print(f"{b['mode']:<9} self={'in' if b['self_connections'] else 'ex'}  "
              f"best lambda={b['lambda']:g}  "
              f"AUROC={_fmt(b['auroc'])}  AUPRC={_fmt(b['auprc'])}  F={_fmt(b['f_score'])}")
    return EXIT_OK


def _fmt(stat) -> str:
    if stat["mean"] is None:
        return "n/a"
    return f"{stat['mean']:.3f}+-{stat['sd']:.3f}"


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    console.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    logging.getLogger().addHandler(console)
    out = None
    try:
        cfg = resolve(args)
        out = Output(cfg["out"], args.command, cfg, args.verbose)
        code = COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"jgc {args.command}: error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (FileNotFoundError, DatasetError, SimulationError, TrainingError, RuntimeError,
            ValueError) as exc:
        log.error("%s", exc)
        print(f"jgc {args.command}: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    finally:
        logging.getLogger().removeHandler(console)
    if out is not None:
        out.close("ok" if code == EXIT_OK else f"exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
