"""Experiment drivers behind the CLI subcommands.

Each ``run_*`` function takes an :class:`ExperimentConfig`, writes its CSV
files under ``config.out`` and returns a dict of the in-memory results. Every
CSV starts with the full resolved configuration as ``# key=value`` lines.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .bounds import IdealMode, decay_terms, expected_gap_after, prob_lower_bound_ideal
from .data import (
    DOWNLOAD_HINT,
    MINIBOONE_N_BACKGROUND,
    MINIBOONE_N_SIGNAL,
    DEFAULT_TRAIN_FRACTION,
    label_and_split,
    load_raw,
    synthetic_fallback,
    zscore,
)
from .ideal import DEFAULT_BETA_NORM, DEFAULT_NOISE, generate_problem
from .network import init_params
from .neutrino import STOCHASTIC_METHODS, example_order, final_gradient_norm, snapshot_metrics, train_bfgs, train_stochastic
from .optim import BFGSConfig, RestartPolicy, ScheduleSpec, write_trajectory_csv
from .simulate import Method, geometric_checkpoints, simulate_ideal_parallel

log = logging.getLogger(__name__)

DEFAULT_EXPONENTS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)


class ConfigError(ValueError):
    pass


class DatasetMissingError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    command: str = ""
    d: int = 10
    noise_halfwidth: float = DEFAULT_NOISE
    beta_norm: float = DEFAULT_BETA_NORM
    exponents: tuple = DEFAULT_EXPONENTS
    observations: int = 10**6
    runs: int = 100
    delta: float = 0.1
    seed: int = 0
    first_trigger: int = 100
    growth_factor: float = 1.56
    record_every: int = 5000
    checkpoint_ratio: float = 1.3
    bound_observations: tuple = (10**2, 10**4, 10**6, 10**8, 10**10)
    workers: int = 1
    out: str = "results"
    dataset: str | None = None
    synthetic: bool = False
    epochs: int = 30
    eta: float = 0.001
    sgd_exponent: float = 0.7
    bfgs_iters: int = 30
    split_seed: int = 0
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    zscore: bool = False
    loss: str = "squared"
    save_trajectories: bool = True
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self):
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.noise_halfwidth < 0 or self.beta_norm < 0:
            raise ConfigError("noise_halfwidth and beta_norm must be non-negative")
        if self.observations < 1:
            raise ConfigError("observations must be >= 1")
        if self.command == "montecarlo" and self.runs < 2:
            raise ConfigError("montecarlo needs runs >= 2")
        if self.runs < 1 or self.workers < 1:
            raise ConfigError("runs and workers must be >= 1")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if any(not p > 0 for p in self.exponents):
            raise ConfigError("exponents must be positive")
        if self.growth_factor <= 1 or self.first_trigger < 1:
            raise ConfigError("restart policy needs first_trigger >= 1 and growth_factor > 1")
        if self.record_every < 1 or self.epochs < 1:
            raise ConfigError("record_every and epochs must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.loss not in ("squared", "cross_entropy"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        return self

    def policy(self):
        return RestartPolicy(self.first_trigger, self.growth_factor)

    def comments(self):
        out = {"stallsgd_version": __version__}
        for f in dataclasses.fields(self):
            if f.name in ("extra", "workers", "out"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            out[f.name] = _fmt(value)
        return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# per-command defaults that differ from the dataclass defaults
COMMAND_DEFAULTS = {
    "stall": {"runs": 1},
    "restart": {"runs": 1},
    "bounds": {"d": 100},
}

FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_value(name, text):
    if name not in FIELD_TYPES or name in ("command", "extra"):
        raise ConfigError(f"unknown config key {name!r}")
    kind = FIELD_TYPES[name]
    text = text.strip()
    try:
        if name in ("exponents", "bound_observations"):
            conv = float if name == "exponents" else lambda s: int(float(s))
            return tuple(conv(v) for v in text.split(",") if v.strip())
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "str | None":
            return text or None
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            values[key] = parse_value(key, value)
    return values


def build_config(command, file_values=None, overrides=None) -> ExperimentConfig:
    """Dataclass defaults < per-command defaults < config file < explicit flags."""
    values = dict(COMMAND_DEFAULTS.get(command, {}))
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values.pop("command", None)
    return ExperimentConfig(command=command, **values).validate()


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _out_dir(config):
    path = Path(config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_table(path, columns, rows, comments=None):
    """Plain CSV with ``# key=value`` header comments; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        for key, value in (comments or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def read_table(path):
    """Parse a CSV written by :func:`write_table` into ``(comments, header, rows)``."""
    comments, lines = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                comments[key] = value
            elif line:
                lines.append(line.split(","))
    return comments, lines[0], lines[1:]


# ---------------------------------------------------------------------------
# Ideal-problem commands
# ---------------------------------------------------------------------------


def _problem(config):
    return generate_problem(config.d, config.noise_halfwidth, config.beta_norm, config.seed)


def _trajectory_command(config, restarted):
    spec = _problem(config)
    n = config.observations
    policy = config.policy() if restarted else None
    methods = [Method(ScheduleSpec.power_law(p), policy) for p in config.exponents]
    ks = np.concatenate([[0], geometric_checkpoints(n, config.checkpoint_ratio)])
    res = simulate_ideal_parallel(spec, methods, n, [0], config.seed, record_ks=ks)
    errors = res.errors(spec)[:, 0, :]
    prefix = "restart" if restarted else "stall"
    out = _out_dir(config)
    comments = config.comments() | {"stream_checksum": res.checksums[0]}
    rows = []
    for mi, p in enumerate(config.exponents):
        for k, e in zip(res.record_ks, errors[mi]):
            rows.append((methods[mi].label, p, int(k), float(e), math.log10(e) if e > 0 else -math.inf))
    files = [write_table(out / f"{prefix}_errors.csv", ("method", "exponent", "k", "error", "log10_error"), rows, comments)]
    if config.save_trajectories:
        for mi, p in enumerate(config.exponents):
            path = out / f"{prefix}_trajectory_p{p:g}.csv"
            with open(path, "w") as fh:
                write_trajectory_csv(fh, res.record_ks, res.thetas[mi, 0], comments | {"method": methods[mi].label})
            files.append(path)
    triggers = policy.triggers(n) if policy else np.zeros(0, dtype=np.int64)
    if restarted:
        files.append(write_table(out / "restart_triggers.csv", ("j", "iteration"), enumerate(triggers.tolist(), 1), comments))
    final = {p: float(errors[mi, -1]) for mi, p in enumerate(config.exponents)}
    return {"spec": spec, "result": res, "final_error": final, "triggers": triggers, "files": files, "checksum": res.checksums[0]}


def run_stall(config):
    return _trajectory_command(config, restarted=False)


def run_restart(config):
    return _trajectory_command(config, restarted=True)


@dataclass(frozen=True)
class RunStatistics:
    mean: float
    median: float
    variance: float
    max: float
    min: float
    fraction_below_delta: float

    @classmethod
    def from_errors(cls, errors, delta):
        e = np.asarray(errors, dtype=np.float64)
        return cls(
            float(np.mean(e)),
            float(np.median(e)),
            float(np.var(e, ddof=1)) if len(e) > 1 else 0.0,
            float(np.max(e)),
            float(np.min(e)),
            float(np.mean(e <= delta)),
        )


MC_COLUMNS = (
    "method", "exponent", "restarted", "n_runs", "mean", "median", "variance", "max", "min",
    "fraction_below_delta", "prob_lower_bound",
)


def run_montecarlo(config):
    spec = _problem(config)
    n = config.observations
    methods = [Method(ScheduleSpec.power_law(p)) for p in config.exponents]
    methods += [Method(ScheduleSpec.power_law(p), config.policy()) for p in config.exponents]
    res = simulate_ideal_parallel(spec, methods, n, range(config.runs), config.seed, workers=config.workers, with_ols=True)
    errors = res.errors(spec)[:, :, -1]
    init_dist_sq = float(spec.beta_star @ spec.beta_star)
    stats, rows = {}, []
    ols = RunStatistics.from_errors(res.ols_errors(spec), config.delta)
    stats["ols"] = ols
    rows.append(("ols", None, None, config.runs, *dataclasses.astuple(ols), None))
    for mi, m in enumerate(methods):
        s = RunStatistics.from_errors(errors[mi], config.delta)
        stats[m.label] = s
        bound = None
        if m.policy is None:
            bound = prob_lower_bound_ideal(spec, m.schedule, init_dist_sq, config.delta, n - 1)
        rows.append((m.label, m.schedule.exponent, int(m.policy is not None), config.runs, *dataclasses.astuple(s), bound))
    out = _out_dir(config)
    path = write_table(out / "montecarlo.csv", MC_COLUMNS, rows, config.comments())
    return {"spec": spec, "stats": stats, "result": res, "files": [path], "rows": rows}


BOUNDS_COLUMNS = (
    "observations", "exponent", "prob_lower_bound", "prob_lower_bound_raw",
    "A_k_lo", "A_k_hi", "log_decay_product_lo", "log_decay_product_hi", "exact",
)


def bounds_table(spec, exponents, observations, delta, init_dist_sq):
    """Rows of clamped/raw lower bounds for the iterate after ``n`` observations."""
    rows = []
    obs = sorted(int(n) for n in observations)
    for p in exponents:
        if not obs:
            break
        t = decay_terms(ScheduleSpec.power_law(p), IdealMode(spec.d), [max(n - 1, 0) for n in obs])
        for i, n in enumerate(obs):
            raw = 1.0 - (init_dist_sq * math.exp(t.logp_hi[i]) + spec.noise_variance * t.a_hi[i]) / delta**2
            rows.append((n, p, min(1.0, max(0.0, raw)), raw, t.a_lo[i], t.a_hi[i], t.logp_lo[i], t.logp_hi[i], int(t.exact[i])))
    return rows


def run_bounds(config):
    spec = _problem(config)
    init_dist_sq = float(spec.beta_star @ spec.beta_star)
    rows = bounds_table(spec, config.exponents, config.bound_observations, config.delta, init_dist_sq)
    comments = config.comments() | {
        "assumption": f"theta0=0 so ||theta0-beta*||^2=beta_norm^2={init_dist_sq!r}",
        "noise_variance": repr(spec.noise_variance),
    }
    path = write_table(_out_dir(config) / "bounds.csv", BOUNDS_COLUMNS, rows, comments)
    return {"spec": spec, "rows": rows, "files": [path]}


# ---------------------------------------------------------------------------
# Neutrino network experiment
# ---------------------------------------------------------------------------


def load_dataset(config):
    if config.dataset:
        path = Path(config.dataset)
        if path.exists():
            return load_raw(path)
        if not config.synthetic:
            raise DatasetMissingError(f"dataset {path} not found; {DOWNLOAD_HINT}")
    elif not config.synthetic:
        raise DatasetMissingError(f"no dataset given; {DOWNLOAD_HINT}")
    log.warning("using the synthetic stand-in dataset, not MiniBooNE")
    return synthetic_fallback(config.seed, MINIBOONE_N_SIGNAL, MINIBOONE_N_BACKGROUND)


NEUTRINO_METRIC_COLUMNS = ("method", "k", "train_loss", "train_error", "test_loss", "test_error")
NEUTRINO_FINAL_COLUMNS = ("method", "total_gradient_norm", "train_loss", "train_error", "test_loss", "test_error", "n_snapshots", "n_restarts", "status")


def run_neutrino(config, raw=None):
    raw = raw if raw is not None else load_dataset(config)
    split = label_and_split(raw, config.split_seed, config.train_fraction)
    if config.zscore:
        split = zscore(split)
    params0 = init_params(config.seed)
    n_iters = config.epochs * split.n_train
    order = example_order(split.n_train, n_iters, config.seed)
    schedule = ScheduleSpec.power_law(config.sgd_exponent)
    runs = []
    for name in STOCHASTIC_METHODS:
        log.info("training %s for %d iterations", name, n_iters)
        runs.append(train_stochastic(
            name, params0, split.train_X, split.train_y, order, config.record_every,
            schedule=schedule, policy=config.policy(), eta=config.eta, loss=config.loss,
        ))
    log.info("running BFGS for at most %d iterations", config.bfgs_iters)
    runs.append(train_bfgs(params0, split.train_X, split.train_y, BFGSConfig(1.0, 0.5, 1e-4, 1e-10, config.bfgs_iters), config.loss))

    out = _out_dir(config)
    comments = config.comments() | {
        "data_source": "synthetic" if raw.synthetic else "miniboone",
        "source_checksum": split.source_checksum,
        "n_train": split.n_train,
        "n_test": split.n_test,
        "iterations": n_iters,
    }
    files, metric_rows, final_rows, final = [], [], [], {}
    for run in runs:
        m = snapshot_metrics(run, split, config.loss)
        for i, k in enumerate(run.ks):
            metric_rows.append((run.name, int(k), m.train_loss[i], m.train_error[i], m.test_loss[i], m.test_error[i]))
        gnorm = final_gradient_norm(run, split, config.loss)
        final[run.name] = gnorm
        final_rows.append((run.name, gnorm, m.train_loss[-1], m.train_error[-1], m.test_loss[-1], m.test_error[-1],
                           len(run.ks), len(run.triggers), run.status))
        if config.save_trajectories:
            path = out / f"neutrino_trajectory_{run.name}.csv"
            with open(path, "w") as fh:
                write_trajectory_csv(fh, run.ks, run.params, comments | {"method": run.name})
            files.append(path)
    files.append(write_table(out / "neutrino_metrics.csv", NEUTRINO_METRIC_COLUMNS, metric_rows, comments))
    files.append(write_table(out / "neutrino_final.csv", NEUTRINO_FINAL_COLUMNS, final_rows, comments))
    return {"runs": runs, "final_gradient_norm": final, "synthetic": raw.synthetic, "files": files, "split": split}


def backend_note():
    return _accel.get_backend()


def expected_final_error(spec, exponent, n):
    """Exact ``E||theta_n - beta*||^2`` for standard SGD from ``theta0 = 0``."""
    gap = float(spec.beta_star @ spec.beta_star) / spec.d
    return float(expected_gap_after(spec, ScheduleSpec.power_law(exponent), gap, [n])[0]) * spec.d
