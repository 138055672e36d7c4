"""Gated feedforward predictor: forward pass, L1-gated training, input Jacobian.

The first layer is a one-to-one gate (one scalar weight per input, no bias,
no nonlinearity) followed by a dense stack with a linear scalar output.
Training runs many independent networks at once as a stack of arrays so the
per-step cost is dominated by batched matrix products rather than
interpreter overhead.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .simulators import make_rng

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "identity")
DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingError(RuntimeError):
    def __init__(self, message, network=None, epoch=None, step=None):
        super().__init__(message)
        self.network = network
        self.epoch = epoch
        self.step = step


@dataclass
class GatedMlpParams:
    gate: np.ndarray
    weights: list
    biases: list
    activation: str = "tanh"
    train_loss: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        self.gate = np.asarray(self.gate, dtype=np.float64).ravel()
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in self.biases]
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("need at least one hidden layer plus the output layer")
        fan_in = self.gate.size
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[0] != fan_in or b.shape != (w.shape[1],):
                raise ValueError("layer shapes do not chain")
            fan_in = w.shape[1]
        if fan_in != 1:
            raise ValueError("output layer must have a single unit")

    @property
    def D(self) -> int:
        return self.gate.size

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def n_params(self) -> int:
        return self.D + sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_flat(self) -> np.ndarray:
        parts = [self.gate]
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, flat, D: int, hidden: Sequence[int], activation: str = "tanh"):
        flat = np.asarray(flat, dtype=np.float64)
        sizes = _layer_shapes(D, hidden)
        gate = flat[:D]
        o = D
        weights, biases = [], []
        for fi, fo in sizes:
            weights.append(flat[o:o + fi * fo].reshape(fi, fo))
            o += fi * fo
            biases.append(flat[o:o + fo])
            o += fo
        if o != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {o}")
        return cls(gate.copy(), [w.copy() for w in weights], [b.copy() for b in biases], activation)


@dataclass
class TrainConfig:
    """Optimisation settings for one network.

    ``lam`` is the L1 strength on the gate weights; gates listed in
    ``free_gates`` are left unpenalised. Defaults follow the
    published JGC hyperparameters (2 x 50 hidden, 2000 epochs, lr 1e-3,
    batch 64).
    """

    lam: float = 0.0
    epochs: int = 2000
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "tanh"
    dtype: str = "float32"
    free_gates: tuple[int, ...] = ()

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.free_gates = tuple(sorted({int(i) for i in self.free_gates}))
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["free_gates"] = list(self.free_gates)
        return d

    def penalty_weights(self, D: int) -> np.ndarray:
        """Per-gate L1 strengths: ``lam`` everywhere except the free gates."""
        w = np.full(D, float(self.lam))
        bad = [i for i in self.free_gates if not 0 <= i < D]
        if bad:
            raise ValueError(f"free gate indices {bad} outside [0, {D})")
        w[list(self.free_gates)] = 0.0
        return w


def _layer_shapes(D: int, hidden: Sequence[int]) -> list[tuple[int, int]]:
    widths = [D, *hidden, 1]
    return list(zip(widths[:-1], widths[1:]))


def _init_from_rng(rng, D, hidden, activation) -> GatedMlpParams:
    weights, biases = [], []
    for fi, fo in _layer_shapes(D, hidden):
        bound = 1.0 / np.sqrt(fi)
        weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
        biases.append(rng.uniform(-bound, bound, size=fo))
    return GatedMlpParams(np.ones(D), weights, biases, activation)


def init_network(D: int, hidden: Sequence[int] = (50, 50), activation: str = "tanh",
                 seed: int = 0) -> GatedMlpParams:
    if D < 1:
        raise ValueError("D must be >= 1")
    hidden = list(hidden)
    if not hidden:
        raise ValueError("at least one hidden layer is required")
    if min(hidden) < 1:
        raise ValueError("hidden widths must be >= 1")
    return _init_from_rng(make_rng(seed), D, hidden, activation)


# ------------------------------------------------------------------ evaluation

def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, a):
    """Derivative expressed through the activation output."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (a > 0).astype(a.dtype)
    return np.ones_like(a)


def _check_inputs(params: GatedMlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.D:
        raise ValueError(f"input has {X.shape[-1]} features, network expects {params.D}")
    return X


def _forward_trace(params: GatedMlpParams, X: np.ndarray):
    acts = []
    a = X * params.gate
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = _act(params.activation, a @ w + b)
        acts.append(a)
    out = a @ params.weights[-1][:, 0] + params.biases[-1][0]
    return out, acts


def forward(params: GatedMlpParams, x) -> float | np.ndarray:
    """Network output for one input vector (scalar) or a matrix of rows (vector)."""
    X = _check_inputs(params, x)
    single = X.ndim == 1
    out, _ = _forward_trace(params, np.atleast_2d(X))
    return float(out[0]) if single else out


def loss(params: GatedMlpParams, X, y, lam) -> float:
    """Mean squared error plus the L1 penalty on the gate weights.

    ``lam`` is a scalar or one strength per gate.
    """
    X = _check_inputs(params, np.atleast_2d(X))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0 or y.shape[0] != X.shape[0]:
        raise ValueError("batch must be non-empty with one target per row")
    r = forward(params, X) - y
    return float(np.mean(r * r) + np.sum(np.asarray(lam) * np.abs(params.gate)))


def input_jacobian(params: GatedMlpParams, X) -> np.ndarray:
    """d output / d input for every row of ``X`` by reverse-mode accumulation."""
    X = _check_inputs(params, np.atleast_2d(X))
    _, acts = _forward_trace(params, X)
    delta = np.broadcast_to(params.weights[-1][:, 0], acts[-1].shape)
    for layer in range(len(acts) - 1, -1, -1):
        delta = delta * _act_grad(params.activation, acts[layer])
        delta = delta @ params.weights[layer].T
    return delta * params.gate


def finite_diff_jacobian(params: GatedMlpParams, X, step: float = 1e-5) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be > 0")
    X = _check_inputs(params, np.atleast_2d(X))
    J = np.empty_like(X)
    for d in range(X.shape[1]):
        up = X.copy()
        dn = X.copy()
        up[:, d] += step
        dn[:, d] -= step
        J[:, d] = (forward(params, up) - forward(params, dn)) / (2 * step)
    return J


# -------------------------------------------------------------------- training

# no reassociation: results must not depend on buffer alignment or stack size
_jit = numba.njit(cache=True, fastmath={"nnan", "ninf", "nsz", "contract"}, error_model="numpy")


@_jit
def _gather_rows(Xs, ids, perm, start, stop, out):
    C = out.shape[2]
    for k in range(out.shape[0]):
        i = ids[k]
        for r in range(start, stop):
            row = perm[k, r]
            for c in range(C):
                out[k, r - start, c] = Xs[i, row, c]


@_jit
def _gate_forward(gate, W0, W0_eff):
    K, D, H = W0.shape
    for k in range(K):
        for d in range(D):
            g = gate[k, d]
            for h in range(H):
                W0_eff[k, d, h] = g * W0[k, d, h]


@_jit
def _gate_backward(G, gate, W0, lam, gW0, ggate):
    K, D, H = W0.shape
    for k in range(K):
        for d in range(D):
            g = gate[k, d]
            acc = G.dtype.type(0)
            for h in range(H):
                gW0[k, d, h] = G[k, d, h] * g
                acc += G[k, d, h] * W0[k, d, h]
            s = G.dtype.type(0)
            if g > 0:
                s = lam[k, d]
            elif g < 0:
                s = -lam[k, d]
            ggate[k, d] = acc + s


@_jit
def _act_backward(delta, a, kind):
    """delta *= activation'(.) expressed through the activation output ``a``."""
    K, B, H = delta.shape
    one = delta.dtype.type(1)
    zero = delta.dtype.type(0)
    for k in range(K):
        for b in range(B):
            for h in range(H):
                x = a[k, b, h]
                if kind == 0:
                    delta[k, b, h] *= one - x * x
                elif kind == 1 and x <= zero:
                    delta[k, b, h] = zero


@_jit
def _output_backward(err, w_out, delta):
    K, B, H = delta.shape
    for k in range(K):
        for b in range(B):
            e = err[k, b, 0]
            for h in range(H):
                delta[k, b, h] = e * w_out[k, h, 0]


@_jit
def _adam_update(theta, grad, m, v, step_size, beta1, beta2, inv_corr2, eps):
    """One in-place Adam step over flat buffers; ``step_size`` = lr / (1 - beta1**t)."""
    one = theta.dtype.type(1)
    omb1 = one - beta1
    omb2 = one - beta2
    for i in range(theta.size):
        gi = grad[i]
        mi = beta1 * m[i] + omb1 * gi
        vi = beta2 * v[i] + omb2 * gi * gi
        m[i] = mi
        v[i] = vi
        theta[i] -= step_size * mi / (np.sqrt(vi * inv_corr2) + eps)


def _stack_views(buf, D, hidden):
    """Split a (K, P) parameter buffer into gate / weight / bias views."""
    K = buf.shape[0]
    gate = buf[:, :D]
    o = D
    Ws, bs = [], []
    for fi, fo in _layer_shapes(D, hidden):
        Ws.append(buf[:, o:o + fi * fo].reshape(K, fi, fo))
        o += fi * fo
        bs.append(buf[:, o:o + fo].reshape(K, 1, fo))
        o += fo
    return gate, Ws, bs


_ACT_CODE = {"tanh": 0, "relu": 1, "identity": 2}


class _Stack:
    """Trains K same-shaped networks in lockstep on their own data and seeds."""

    def __init__(self, Xs, ys, design_ids, cfgs: list[TrainConfig]):
        c0 = cfgs[0]
        self.dt = dt = DTYPES[c0.dtype]
        self.cfg = c0
        self.K = K = len(cfgs)
        self.M, self.D = Xs.shape[1], Xs.shape[2]
        # targets ride along as an extra column so one gather fetches both
        self.XY = np.ascontiguousarray(np.concatenate([Xs, ys[..., None]], axis=2), dtype=dt)
        self.ids = np.asarray(design_ids, dtype=np.int64)
        self.hidden = c0.hidden
        self.act = c0.activation
        self.kind = _ACT_CODE[c0.activation]
        self.lam = np.stack([c.penalty_weights(self.D) for c in cfgs]).astype(dt)
        self.rngs = [make_rng(c.seed) for c in cfgs]
        init = [_init_from_rng(r, self.D, self.hidden, self.act) for r in self.rngs]
        self.theta = np.stack([p.to_flat() for p in init]).astype(dt)
        self.grad = np.zeros_like(self.theta)
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.gate, self.W, self.b = _stack_views(self.theta, self.D, self.hidden)
        self.ggate, self.gW, self.gb = _stack_views(self.grad, self.D, self.hidden)
        self.B = B = min(c0.batch_size, self.M)
        self.batch = np.empty((K, B, self.D + 1), dt)
        self.acts = [np.empty((K, B, h), dt) for h in self.hidden]
        self.deltas = [np.empty((K, B, h), dt) for h in self.hidden]
        self.out = np.empty((K, B, 1), dt)
        self.ones_b = np.ones((K, 1, B), dt)
        self.W0_eff = np.empty((K, self.D, self.hidden[0]), dt)
        self.G = np.empty_like(self.W0_eff)
        self.step = 0

    def _activate(self, a):
        if self.kind == 0:
            np.tanh(a, out=a)
        elif self.kind == 1:
            np.maximum(a, 0, out=a)

    def batch_step(self, bs: int) -> np.ndarray:
        L = len(self.hidden)
        xb = self.batch[:, :bs, :self.D]
        yb = self.batch[:, :bs, self.D:]
        acts = [a[:, :bs] for a in self.acts]
        deltas = [d[:, :bs] for d in self.deltas]
        out = self.out[:, :bs]
        ones_b = self.ones_b[:, :, :bs]

        _gate_forward(self.gate, self.W[0], self.W0_eff)
        np.matmul(xb, self.W0_eff, out=acts[0])
        acts[0] += self.b[0]
        self._activate(acts[0])
        for l in range(1, L):
            np.matmul(acts[l - 1], self.W[l], out=acts[l])
            acts[l] += self.b[l]
            self._activate(acts[l])
        np.matmul(acts[-1], self.W[L], out=out)
        out += self.b[L]
        out -= yb
        sse = np.einsum("kbi,kbi->k", out, out)
        out *= self.dt(2.0 / bs)

        np.matmul(acts[-1].transpose(0, 2, 1), out, out=self.gW[L])
        np.matmul(ones_b, out, out=self.gb[L])
        _output_backward(out, self.W[L], deltas[-1])
        _act_backward(deltas[-1], acts[-1], self.kind)
        for l in range(L - 1, 0, -1):
            np.matmul(acts[l - 1].transpose(0, 2, 1), deltas[l], out=self.gW[l])
            np.matmul(ones_b, deltas[l], out=self.gb[l])
            np.matmul(deltas[l], self.W[l].transpose(0, 2, 1), out=deltas[l - 1])
            _act_backward(deltas[l - 1], acts[l - 1], self.kind)
        np.matmul(xb.transpose(0, 2, 1), deltas[0], out=self.G)
        np.matmul(ones_b, deltas[0], out=self.gb[0])
        _gate_backward(self.G, self.gate, self.W[0], self.lam, self.gW[0], self.ggate)

        self.step += 1
        c = self.cfg
        dt = self.dt
        _adam_update(self.theta.reshape(-1), self.grad.reshape(-1), self.m.reshape(-1),
                     self.v.reshape(-1), dt(c.lr / (1 - c.beta1 ** self.step)), dt(c.beta1),
                     dt(c.beta2), dt(1 / (1 - c.beta2 ** self.step)), dt(c.adam_eps))
        return sse

    def run(self) -> np.ndarray:
        c = self.cfg
        K, M, B = self.K, self.M, self.B
        history = np.empty((K, c.epochs))
        for epoch in range(c.epochs):
            perm = np.stack([r.permutation(M) for r in self.rngs])
            total = np.zeros(K)
            for s in range(0, M, B):
                e = min(s + B, M)
                _gather_rows(self.XY, self.ids, perm, s, e, self.batch)
                total += self.batch_step(e - s)
            if not np.all(np.isfinite(total)):
                bad = int(np.flatnonzero(~np.isfinite(total))[0])
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {self.step}",
                                    network=bad, epoch=epoch, step=self.step)
            history[:, epoch] = total / M
            if epoch % 250 == 0:
                log.debug("epoch %d: mean train mse %.4g", epoch, history[:, epoch].mean())
        return history

    def params(self, history) -> list[GatedMlpParams]:
        out = []
        for k in range(self.K):
            p = GatedMlpParams.from_flat(self.theta[k].astype(np.float64), self.D, self.hidden,
                                         self.act)
            p.train_loss = history[k]
            out.append(p)
        return out


def _signature(X, cfg: TrainConfig):
    return (X.shape, cfg.epochs, cfg.lr, cfg.batch_size, cfg.beta1, cfg.beta2, cfg.adam_eps,
            cfg.hidden, cfg.activation, cfg.dtype)


def train_many(jobs: Sequence[tuple]) -> list[GatedMlpParams]:
    """Train one network per ``(X, y, cfg)`` job.

    Jobs with identical shapes and optimiser settings are trained together as
    one stack; results are returned in job order. Each job's outcome depends
    only on its own data and config.
    """
    results: list = [None] * len(jobs)
    groups: dict = {}
    for k, (X, y, cfg) in enumerate(jobs):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.ndim != 2 or y.shape[0] != X.shape[0] or X.shape[0] < 1:
            raise ValueError(f"job {k}: X must be (M, D) with one target per row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError(f"job {k}: non-finite training data")
        cfg.validate()
        groups.setdefault(_signature(X, cfg), []).append((k, X, y, cfg))
    for members in groups.values():
        uniq: dict = {}
        ids = []
        for _, X, y, _ in members:
            key = (id(X), id(y))
            if key not in uniq:
                uniq[key] = len(uniq)
            ids.append(uniq[key])
        first = {}
        for (_, X, y, _), i in zip(members, ids):
            first.setdefault(i, (X, y))
        Xs = np.stack([first[i][0] for i in range(len(first))])
        ys = np.stack([first[i][1] for i in range(len(first))])
        stack = _Stack(Xs, ys, ids, [m[3] for m in members])
        try:
            history = stack.run()
        except TrainingError as exc:
            job = members[exc.network][0]
            raise TrainingError(f"job {job}: {exc}", job, exc.epoch, exc.step) from None
        for (k, *_), p in zip(members, stack.params(history)):
            results[k] = p
    return results


def train(design, cfg: TrainConfig) -> GatedMlpParams:
    """Fit one gated network to a design matrix (anything with ``X`` and ``y``)."""
    return train_many([(design.X, design.y, cfg)])[0]


# ------------------------------------------------------------------ checkpoint

def save_checkpoint(path, params: GatedMlpParams, cfg: TrainConfig | None = None) -> None:
    doc = {
        "D": params.D,
        "hidden": list(params.hidden),
        "activation": params.activation,
        "shapes": [[params.D]] + [[*w.shape] for w in params.weights],
        "gate": params.gate.tolist(),
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "train_config": cfg.to_dict() if cfg is not None else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    weights = [np.array(w).reshape(s) for w, s in zip(doc["weights"], doc["shapes"][1:])]
    params = GatedMlpParams(np.array(doc["gate"]), weights, [np.array(b) for b in doc["biases"]],
                            doc["activation"])
    cfg = TrainConfig(**doc["train_config"]) if doc.get("train_config") else None
    return params, cfg


def with_lambda(cfg: TrainConfig, lam: float, seed: int | None = None) -> TrainConfig:
    return replace(cfg, lam=float(lam), seed=cfg.seed if seed is None else int(seed))
