"""Simulated synchronous data-parallel SGD with sparsified, error-compensated gradients.

Each iteration every worker draws a seeded minibatch from its shard, adds its
residual, compresses, and the sparse gradients are averaged in fixed worker
order. All replicas then take the same plain SGD step ``x -= lr * G``.
Results do not depend on whether workers run on threads.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import sparsify
from .compressors import make_compressor
from .errors import DimMismatch, DivergenceDetected, InvalidInput
from .tracefile import write_trace

log = logging.getLogger(__name__)


# -- data --

@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "logistic"  # linear | logistic | moons
    n_samples: int = 4096
    n_features: int = 200
    noise: float = 0.1
    seed: int = 0


def make_dataset(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic regression / classification data, fully determined by ``spec.seed``.

    ``logistic`` draws labels from a Bernoulli whose logit is a planted linear
    model; ``noise`` is the probability of flipping a label. ``moons`` is a
    two-interleaved-arcs set in the first two features, with the remaining
    features pure noise.
    """
    rng = np.random.default_rng(spec.seed)
    n, f = spec.n_samples, spec.n_features
    if spec.kind == "linear":
        X = rng.standard_normal((n, f))
        w = rng.standard_normal(f) / math.sqrt(f)
        y = X @ w + spec.noise * rng.standard_normal(n)
    elif spec.kind == "logistic":
        X = rng.standard_normal((n, f))
        w = 3.0 * rng.standard_normal(f) / math.sqrt(f)
        p = 1.0 / (1.0 + np.exp(-(X @ w)))
        y = (rng.random(n) < p).astype(np.float64)
        flip = rng.random(n) < spec.noise
        y[flip] = 1.0 - y[flip]
    elif spec.kind == "moons":
        if f < 2:
            raise InvalidInput("moons data needs n_features >= 2")
        y = (rng.random(n) < 0.5).astype(np.float64)
        t = rng.random(n) * math.pi
        x0 = np.where(y == 0, np.cos(t), 1.0 - np.cos(t))
        x1 = np.where(y == 0, np.sin(t), 0.5 - np.sin(t))
        X = rng.standard_normal((n, f)) * spec.noise
        X[:, 0] += x0
        X[:, 1] += x1
    else:
        raise InvalidInput(f"unknown dataset kind {spec.kind!r}")
    return X, y


# -- models --

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LinearRegression:
    """Mean squared error ``0.5 * mean((Xw - y)^2)``."""

    def __init__(self, n_features):
        self.n_features = n_features
        self.n_params = n_features

    def init_params(self, rng):
        return np.zeros(self.n_params)

    def loss(self, w, X, y):
        r = X @ w - y
        return 0.5 * float(np.mean(r * r))

    def grad(self, w, X, y):
        return X.T @ (X @ w - y) / X.shape[0]


class LogisticRegression:
    """Mean logistic loss with labels in {0, 1}."""

    def __init__(self, n_features):
        self.n_features = n_features
        self.n_params = n_features

    def init_params(self, rng):
        return np.zeros(self.n_params)

    def loss(self, w, X, y):
        z = X @ w
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def grad(self, w, X, y):
        return X.T @ (_sigmoid(X @ w) - y) / X.shape[0]


class MLP:
    """One tanh hidden layer, logistic output. Parameters are packed flat as
    ``[W1 (h x f), b1 (h), w2 (h), b2]``."""

    def __init__(self, n_features, hidden=16):
        self.n_features = n_features
        self.hidden = hidden
        self.n_params = hidden * n_features + 2 * hidden + 1

    def init_params(self, rng):
        h, f = self.hidden, self.n_features
        theta = np.zeros(self.n_params)
        theta[: h * f] = rng.standard_normal(h * f) / math.sqrt(f)
        theta[h * f + h: h * f + 2 * h] = rng.standard_normal(h) / math.sqrt(h)
        return theta

    def _unpack(self, theta):
        h, f = self.hidden, self.n_features
        W1 = theta[: h * f].reshape(h, f)
        b1 = theta[h * f: h * f + h]
        w2 = theta[h * f + h: h * f + 2 * h]
        return W1, b1, w2, theta[-1]

    def loss(self, theta, X, y):
        W1, b1, w2, b2 = self._unpack(theta)
        z = np.tanh(X @ W1.T + b1) @ w2 + b2
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def grad(self, theta, X, y):
        W1, b1, w2, b2 = self._unpack(theta)
        a = np.tanh(X @ W1.T + b1)
        dz = (_sigmoid(a @ w2 + b2) - y) / X.shape[0]
        dpre = np.outer(dz, w2) * (1.0 - a * a)
        return np.concatenate([(dpre.T @ X).ravel(), dpre.sum(axis=0), a.T @ dz, [dz.sum()]])


def make_model(name: str, n_features: int, hidden: int = 16):
    if name == "linear":
        return LinearRegression(n_features)
    if name == "logistic":
        return LogisticRegression(n_features)
    if name == "mlp":
        return MLP(n_features, hidden)
    raise InvalidInput(f"unknown model {name!r}; expected linear, logistic or mlp")


# -- configuration and records --

@dataclass(frozen=True)
class CompressorSpec:
    name: str = "none"
    delta: float = 1.0
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrainConfig:
    workers: int = 8
    batch_size: int = 32
    lr: float = 0.1
    iterations: int = 500
    model: str = "logistic"
    hidden: int = 16
    dataset: DatasetSpec = DatasetSpec()
    compressor: CompressorSpec = CompressorSpec()
    error_compensation: bool = True
    warmup_iterations: int = 0
    seed: int = 0
    threads: int = 1
    record_timing: bool = False

    def __post_init__(self):
        problems = []
        if not self.lr > 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1:
            problems.append(f"iterations must be >= 1, got {self.iterations}")
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dataset.n_samples < self.workers:
            problems.append("dataset must hold at least one sample per worker")
        if problems:
            raise InvalidInput("; ".join(problems))


@dataclass
class WorkerState:
    rank: int
    params: np.ndarray
    memory: sparsify.ECMemory
    shard: np.ndarray  # row indices into the dataset
    rng_seed: int
    compressor: Callable


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    k_target: int
    k_hat: list
    eta: list
    elapsed_ns: list
    stages: Optional[list]
    param_hash: str

    @property
    def k_hat_mean(self) -> float:
        return float(np.mean(self.k_hat))


@dataclass
class TrainResult:
    initial_loss: float
    records: list
    params: np.ndarray

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss


def param_hash(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()[:16]


def worker_seed(seed: int, rank: int) -> int:
    return int(np.random.SeedSequence([seed, rank]).generate_state(1, np.uint64)[0])


# -- operations --

def worker_step(worker: WorkerState, model, X, y, batch_size: int, iteration: int) -> np.ndarray:
    """Minibatch gradient at the worker's parameters; deterministic per (seed, iteration)."""
    if worker.shard.size == 0:
        raise InvalidInput(f"worker {worker.rank} has an empty shard")
    rng = np.random.default_rng([worker.rng_seed, iteration])
    rows = worker.shard[rng.integers(0, worker.shard.size, batch_size)]
    return model.grad(worker.params, X[rows], y[rows])


def aggregate(sparse_grads) -> np.ndarray:
    """Average of the densified gradients, summed in list order."""
    sparse_grads = list(sparse_grads)
    if not sparse_grads:
        raise InvalidInput("nothing to aggregate")
    d = sparse_grads[0].dim
    total = np.zeros(d, dtype=np.float64)
    for s in sparse_grads:
        if s.dim != d:
            raise DimMismatch(f"gradient dims differ: {s.dim} vs {d}")
        total[s.indices] += s.values
    return total / len(sparse_grads)


def build_workers(config: TrainConfig, model, n_samples: int) -> list[WorkerState]:
    init = model.init_params(np.random.default_rng([config.seed, 2**31]))
    shards = np.array_split(np.arange(n_samples), config.workers)
    spec = config.compressor
    workers = []
    for rank in range(config.workers):
        seed = worker_seed(config.seed, rank)
        workers.append(WorkerState(
            rank=rank,
            params=init.copy(),
            memory=sparsify.ECMemory(model.n_params),
            shard=shards[rank],
            rng_seed=seed,
            compressor=make_compressor(spec.name, spec.delta, seed=seed, **spec.options),
        ))
    return workers


def train(config: TrainConfig, on_gradient: Callable | None = None) -> TrainResult:
    """Run ``config.iterations`` synchronous steps and return the per-iteration trace.

    ``on_gradient(iteration, rank, grad)`` sees every uncompressed gradient.
    Raises :class:`DivergenceDetected` (carrying the partial trace) if the loss
    stops being finite.
    """
    X, y = make_dataset(config.dataset)
    model = make_model(config.model, X.shape[1], config.hidden)
    workers = build_workers(config, model, X.shape[0])
    identity = make_compressor("none", 1.0)
    initial_loss = model.loss(workers[0].params, X, y)
    records: list[IterationRecord] = []
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def local(worker, it):
        g = worker_step(worker, model, X, y, config.batch_size, it)
        if on_gradient is not None:
            on_gradient(it, worker.rank, g)
        if it <= config.warmup_iterations:
            return identity(g, it)
        c = sparsify.ec_apply(g, worker.memory) if config.error_compensation else g
        sparse, stats = worker.compressor(c, it)
        if config.error_compensation:
            sparsify.ec_update(worker.memory, c, sparse)
        return sparse, stats

    try:
        for it in range(1, config.iterations + 1):
            if pool is None:
                out = [local(w, it) for w in workers]
            else:
                out = list(pool.map(local, workers, [it] * len(workers)))
            G = aggregate(s for s, _ in out)
            for w in workers:
                w.params -= config.lr * G
            hashes = {param_hash(w.params) for w in workers}
            if len(hashes) != 1:
                raise AssertionError(f"replicas diverged at iteration {it}")
            loss = model.loss(workers[0].params, X, y)
            stats = [st for _, st in out]
            records.append(IterationRecord(
                iteration=it,
                loss=loss,
                k_target=stats[0].k_target,
                k_hat=[st.k_hat for st in stats],
                eta=[st.threshold for st in stats],
                elapsed_ns=[st.elapsed_ns if config.record_timing else 0 for st in stats],
                stages=[st.stages for st in stats] if hasattr(stats[0], "stages") else None,
                param_hash=hashes.pop(),
            ))
            if not math.isfinite(loss):
                raise DivergenceDetected(f"loss is {loss} at iteration {it}", records)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(initial_loss, records, workers[0].params.copy())


def trace_capture(config: TrainConfig, iterations, out_dir, rank: int = 0) -> list[Path]:
    """Dump rank ``rank``'s uncompressed gradient at the given 1-based iterations."""
    wanted = sorted(set(int(i) for i in iterations))
    if not wanted:
        return []
    if wanted[0] < 1 or wanted[-1] > config.iterations:
        raise InvalidInput(f"dump iterations must lie in [1, {config.iterations}]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def dump(it, r, g):
        if r == rank and it in wanted:
            path = out_dir / f"grad_iter{it:06d}.sidg"
            write_trace(path, g)
            paths.append(path)

    train(replace(config, iterations=wanted[-1]), on_gradient=dump)
    return paths
