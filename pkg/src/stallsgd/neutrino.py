"""Training the block network with standard and restarted incremental methods.

All stochastic methods start from the same parameters and visit the same
sequence of training examples (indices drawn uniformly with replacement),
so differences come from the update rule and the restarts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset
from .kernels import CROSS_ENTROPY, SQUARED, nn_adagrad, nn_sgd
from .network import dataset_metrics, forward_batch, mean_loss, total_gradient
from .optim import BFGSConfig, RestartPolicy, ScheduleSpec, bfgs_minimize, record_iterations, step_sizes

STOCHASTIC_METHODS = ("sgd", "restarted_sgd", "adagrad", "restarted_adagrad")
_CHUNK = 1 << 16


@dataclass
class MethodRun:
    name: str
    ks: np.ndarray
    params: np.ndarray  # (n_snapshots, 61)
    triggers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    status: str = "ok"


def example_order(n_train: int, n_iters: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    return rng.integers(0, n_train, size=n_iters, dtype=np.int64)


def _segments(n_iters, stops):
    """Split ``[0, n_iters)`` at every value in ``stops`` and every ``_CHUNK`` steps."""
    cuts = sorted(set(int(s) for s in stops if 0 < s < n_iters) | {n_iters})
    k = 0
    for cut in cuts:
        while k < cut:
            nxt = min(cut, k + _CHUNK)
            yield k, nxt
            k = nxt


def train_stochastic(
    name: str,
    params0,
    X,
    y,
    order,
    record_every: int,
    *,
    schedule: ScheduleSpec,
    policy: RestartPolicy,
    eta: float = 0.001,
    eps_guard: float = 1e-12,
    loss: str = "squared",
) -> MethodRun:
    if name not in STOCHASTIC_METHODS:
        raise ValueError(f"unknown method {name!r}")
    n_iters = len(order)
    restarted = name.startswith("restarted_")
    triggers = policy.triggers(n_iters) if restarted else np.zeros(0, dtype=np.int64)
    rec = record_iterations(n_iters, record_every)
    trigger_set = set(triggers.tolist())
    rec_set = set(rec.tolist())
    loss_code = SQUARED if loss == "squared" else CROSS_ENTROPY
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    params = np.array(params0, dtype=np.float64)
    G = np.ones_like(params)
    snaps = []
    for lo, hi in _segments(n_iters, np.concatenate([triggers, rec])):
        idx = order[lo:hi]
        if name.endswith("sgd"):
            nn_sgd(params, X, y, idx, step_sizes(schedule, triggers, lo, hi - lo), loss_code)
        else:
            nn_adagrad(params, G, X, y, idx, eta, eps_guard, loss_code)
        if hi in trigger_set:
            G[:] = 1.0
        if hi in rec_set:
            snaps.append(params.copy())
    return MethodRun(name, rec, np.array(snaps), triggers)


def train_bfgs(params0, X, y, config: BFGSConfig, loss: str = "squared") -> MethodRun:
    res = bfgs_minimize(
        lambda p: mean_loss(p, X, y, loss),
        lambda p: total_gradient(p, X, y, loss),
        params0,
        config,
    )
    return MethodRun("bfgs", np.arange(len(res.trajectory), dtype=np.int64), res.trajectory, status=res.status)


@dataclass
class SnapshotMetrics:
    train_loss: np.ndarray
    train_error: np.ndarray
    test_loss: np.ndarray
    test_error: np.ndarray


def snapshot_metrics(run: MethodRun, split: SplitDataset, loss: str = "squared") -> SnapshotMetrics:
    cols = {k: [] for k in ("train_loss", "train_error", "test_loss", "test_error")}
    for p in run.params:
        for part, X, y in (("train", split.train_X, split.train_y), ("test", split.test_X, split.test_y)):
            out = forward_batch(p, X)
            cols[f"{part}_loss"].append(mean_loss(p, X, y, loss))
            cols[f"{part}_error"].append(float(np.mean((out >= 0.5) != (y == 1.0))))
    return SnapshotMetrics(**{k: np.array(v) for k, v in cols.items()})


def final_gradient_norm(run: MethodRun, split: SplitDataset, loss: str = "squared") -> float:
    return dataset_metrics(run.params[-1], split.train_X, split.train_y, loss).total_gradient_norm
