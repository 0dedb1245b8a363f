"""Batched SGD / restarted SGD runs on the ideal problem.

Every run ``r`` draws from its own :class:`~stallsgd.ideal.ObservationStream`
seeded by ``(seed, r)``, and all methods passed to one call consume the same
draws, so standard and restarted trajectories are paired by construction.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _accel
from .ideal import IdealProblemSpec, ObservationStream, OLSAccumulator
from .kernels import ideal_sgd_batch
from .optim import RestartPolicy, ScheduleSpec, step_sizes

CHUNK = 8192
BATCH_RUNS = 50


@dataclass(frozen=True)
class Method:
    schedule: ScheduleSpec
    policy: RestartPolicy | None = None

    @property
    def label(self):
        return ("restarted_" if self.policy else "sgd_") + self.schedule.label()

    def triggers(self, n_steps):
        if self.policy is None:
            return np.zeros(0, dtype=np.int64)
        return self.policy.triggers(n_steps)


@dataclass
class SimulationResult:
    record_ks: np.ndarray
    run_indices: np.ndarray
    thetas: np.ndarray  # (n_methods, n_runs, n_records, d)
    ols: np.ndarray | None  # (n_runs, d)
    checksums: list

    def errors(self, spec: IdealProblemSpec):
        """l2 distance to ``beta*``, shape ``(n_methods, n_runs, n_records)``."""
        return np.linalg.norm(self.thetas - spec.beta_star, axis=-1)

    def ols_errors(self, spec: IdealProblemSpec):
        return np.linalg.norm(self.ols - spec.beta_star, axis=-1)


def geometric_checkpoints(n_steps: int, ratio: float = 1.3) -> np.ndarray:
    """Roughly log-spaced iterations ``1 .. n_steps`` (``n_steps`` always included)."""
    pts = {1, int(n_steps)}
    x = 1.0
    while x < n_steps:
        x *= ratio
        pts.add(min(int(round(x)), int(n_steps)))
    return np.array(sorted(pts), dtype=np.int64)


def simulate_ideal(
    spec: IdealProblemSpec,
    methods,
    n_steps: int,
    run_indices,
    seed: int,
    record_ks=None,
    theta0=None,
    with_ols: bool = False,
    batch_runs: int = BATCH_RUNS,
) -> SimulationResult:
    methods = list(methods)
    run_indices = np.asarray(list(run_indices), dtype=np.int64)
    record_ks = np.array([n_steps] if record_ks is None else sorted(set(int(k) for k in record_ks)), dtype=np.int64)
    if len(record_ks) and (record_ks[0] < 0 or record_ks[-1] > n_steps):
        raise ValueError("record iterations must lie in [0, n_steps]")
    d = spec.d
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    Qt = spec.Qt
    triggers = [m.triggers(n_steps) for m in methods]
    n_runs = len(run_indices)
    out = np.empty((len(methods), n_runs, len(record_ks), d))
    ols = np.empty((n_runs, d)) if with_ols else None
    checksums = []

    for b0 in range(0, n_runs, batch_runs):
        runs = run_indices[b0:b0 + batch_runs]
        nb = len(runs)
        streams = [ObservationStream(spec, seed, r) for r in runs]
        accs = [OLSAccumulator(d) for _ in runs] if with_ols else None
        thetas = [np.tile(theta0, (nb, 1)) for _ in methods]
        rec = 0
        while rec < len(record_ks) and record_ks[rec] == 0:
            for mi in range(len(methods)):
                out[mi, b0:b0 + nb, rec] = thetas[mi]
            rec += 1
        k = 0
        while k < n_steps:
            stop = min(k + CHUNK, n_steps)
            if rec < len(record_ks):
                stop = min(stop, int(record_ks[rec]))
            m = stop - k
            cols = np.empty((nb, m), dtype=np.int64)
            ys = np.empty((nb, m))
            for i, stream in enumerate(streams):
                cols[i], ys[i] = stream.take_observations(m)
                if accs is not None:
                    accs[i].update_columns(Qt, cols[i], ys[i])
            for mi, method in enumerate(methods):
                alphas = step_sizes(method.schedule, triggers[mi], k, m)
                ideal_sgd_batch(thetas[mi], Qt, cols, ys, alphas)
            k = stop
            while rec < len(record_ks) and record_ks[rec] == k:
                for mi in range(len(methods)):
                    out[mi, b0:b0 + nb, rec] = thetas[mi]
                rec += 1
        if accs is not None:
            for i, acc in enumerate(accs):
                ols[b0 + i] = acc.solve()
        checksums.extend(s.checksum() for s in streams)
    return SimulationResult(record_ks, run_indices, out, ols, checksums)


def _worker(args):
    backend, kwargs = args
    _accel.set_backend(backend)
    return simulate_ideal(**kwargs)


def simulate_ideal_parallel(spec, methods, n_steps, run_indices, seed, workers: int = 1, **kwargs) -> SimulationResult:
    """:func:`simulate_ideal` fanned out over processes; output is identical to the serial call.

    Runs are split into contiguous groups and the pieces are concatenated in
    run-index order, whatever order the workers finish in.
    """
    run_indices = list(run_indices)
    if workers <= 1 or len(run_indices) < 2:
        return simulate_ideal(spec, methods, n_steps, run_indices, seed, **kwargs)
    groups = [g.tolist() for g in np.array_split(np.asarray(run_indices), min(workers, len(run_indices))) if len(g)]
    jobs = [
        (_accel.get_backend(), dict(spec=spec, methods=list(methods), n_steps=n_steps, run_indices=g, seed=seed, **kwargs))
        for g in groups
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_worker, jobs))
    return SimulationResult(
        parts[0].record_ks,
        np.concatenate([p.run_indices for p in parts]),
        np.concatenate([p.thetas for p in parts], axis=1),
        None if parts[0].ols is None else np.concatenate([p.ols for p in parts]),
        [c for p in parts for c in p.checksums],
    )
