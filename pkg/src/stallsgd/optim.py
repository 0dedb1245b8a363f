"""Stochastic steppers, learning-rate schedules, restarts and a BFGS baseline.

The restart controller follows the loop::

    k, s, j <- 1, 0, 0
    while true:
        theta <- theta - alpha_s * grad(Z_k, theta)
        if k is a trigger: s, j <- 0, j + 1  else: s <- s + 1
        k <- k + 1

so the iterate is carried across a trigger untouched and only the
within-epoch counter ``s`` (and with it the step size) starts over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

SATISFIED = "satisfied"
VIOLATED = "violated"


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate law: ``alpha_s = (s + 1) ** -exponent`` or a constant."""

    kind: str = "power"
    exponent: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind == "power":
            if not self.exponent > 0:
                raise ValueError(f"power-law exponent must be > 0, got {self.exponent}")
        elif self.kind == "constant":
            if not self.value > 0:
                raise ValueError(f"constant step must be > 0, got {self.value}")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def power_law(cls, exponent):
        return cls("power", float(exponent), 0.0)

    @classmethod
    def constant(cls, value):
        return cls("constant", 0.0, float(value))

    @classmethod
    def unchecked(cls, kind, exponent=0.0, value=0.0):
        """Build without validation (degenerate schedules such as alpha = 0 in tests)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "kind", kind)
        object.__setattr__(obj, "exponent", float(exponent))
        object.__setattr__(obj, "value", float(value))
        return obj

    def alpha(self, s):
        return schedule_alpha(self, s)

    def alphas(self, s):
        """Vectorized :meth:`alpha` over an integer array of within-epoch steps."""
        s = np.asarray(s)
        if self.kind == "constant":
            return np.full(s.shape, self.value, dtype=np.float64)
        return (s.astype(np.float64) + 1.0) ** (-self.exponent)

    def label(self):
        if self.kind == "constant":
            return f"const{self.value:g}"
        return f"p{self.exponent:g}"


def schedule_alpha(spec: ScheduleSpec, s: int) -> float:
    if s < 0:
        raise ValueError("step index must be non-negative")
    if spec.kind == "constant":
        return spec.value
    # same arithmetic path as the vectorized form, so both agree bitwise
    return float(spec.alphas(np.array([s]))[0])


def robbins_monro_check(spec: ScheduleSpec) -> str:
    """Analytic check of ``sum alpha = inf`` and ``sum alpha^2 < inf``.

    ``(s+1)^-p`` satisfies both exactly when ``0.5 < p <= 1``.
    """
    if spec.kind == "power" and 0.5 < spec.exponent <= 1.0:
        return SATISFIED
    return VIOLATED


# ---------------------------------------------------------------------------
# Restart triggers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RestartPolicy:
    """Deterministic trigger iterations ``t_1 = first_trigger``, ``t_{m+1} ~ growth * t_m``."""

    first_trigger: int = 100
    growth_factor: float = 1.56

    def __post_init__(self):
        if int(self.first_trigger) != self.first_trigger or self.first_trigger < 1:
            raise ValueError(f"first_trigger must be a positive integer, got {self.first_trigger}")
        if not self.growth_factor > 1:
            raise ValueError(f"growth_factor must be > 1, got {self.growth_factor}")

    def triggers(self, n_max):
        return restart_trigger_iterations(self, n_max)


def restart_trigger_iterations(policy: RestartPolicy, n_max: int) -> np.ndarray:
    """All trigger iterations ``<= n_max``.

    ``t_{m+1} = max(t_m + 1, floor(growth_factor * t_m))``; the ``max`` keeps
    the sequence strictly increasing for growth factors close to one.
    """
    out = []
    t = int(policy.first_trigger)
    while t <= n_max:
        out.append(t)
        t = max(t + 1, math.floor(policy.growth_factor * t))
    return np.asarray(out, dtype=np.int64)


def within_epoch_steps(k_start: int, m: int, triggers: np.ndarray) -> np.ndarray:
    """Within-epoch counter ``s`` used by global steps ``k_start+1 .. k_start+m``.

    Step ``k`` (1-based) uses ``s = k - 1 - S`` where ``S`` is the last trigger
    strictly before ``k`` (0 if none).
    """
    ks = np.arange(k_start + 1, k_start + m + 1, dtype=np.int64)
    if len(triggers) == 0:
        return ks - 1
    idx = np.searchsorted(triggers, ks, side="left")
    last = np.where(idx > 0, triggers[np.maximum(idx - 1, 0)], 0)
    return ks - 1 - last


def step_sizes(schedule: ScheduleSpec, triggers: np.ndarray, k_start: int, m: int) -> np.ndarray:
    return schedule.alphas(within_epoch_steps(k_start, m, triggers))


def record_iterations(n_steps: int, record_every: int) -> np.ndarray:
    """Multiples of ``record_every`` up to ``n_steps``, plus ``n_steps`` itself."""
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    ks = np.arange(record_every, n_steps + 1, record_every, dtype=np.int64)
    if len(ks) == 0 or ks[-1] != n_steps:
        ks = np.append(ks, np.int64(n_steps))
    return ks


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------


class GradientOracle(Protocol):
    """Callable returning the stochastic gradient at ``theta`` for the next example."""

    def __call__(self, theta: np.ndarray) -> np.ndarray: ...


def _check_dims(theta, grad):
    if np.shape(theta) != np.shape(grad):
        raise ValueError(f"dimension mismatch: theta {np.shape(theta)} vs grad {np.shape(grad)}")


def sgd_step(theta: np.ndarray, alpha: float, grad: np.ndarray) -> np.ndarray:
    _check_dims(theta, grad)
    return theta - alpha * grad


@dataclass(frozen=True)
class AdaGradState:
    accumulator: np.ndarray
    eta: float = 0.001
    eps_guard: float = 1e-12

    @classmethod
    def fresh(cls, d, eta=0.001, eps_guard=1e-12):
        # a fresh run starts exactly where a restart would put it
        return cls(np.ones(d), float(eta), float(eps_guard))

    def reset(self):
        return AdaGradState(np.ones_like(self.accumulator), self.eta, self.eps_guard)


def adagrad_step(state: AdaGradState, theta: np.ndarray, grad: np.ndarray):
    _check_dims(theta, grad)
    _check_dims(state.accumulator, grad)
    acc = state.accumulator + grad * grad
    new_theta = theta - state.eta * grad / np.sqrt(acc + state.eps_guard)
    return AdaGradState(acc, state.eta, state.eps_guard), new_theta


# ---------------------------------------------------------------------------
# Generic restart loop
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    theta: np.ndarray
    s: int = 0
    j: int = 0
    k: int = 0
    # S_j: global iteration of the last restart, so k == restart_offset + s
    restart_offset: int = 0


@dataclass
class Trajectory:
    ks: np.ndarray
    thetas: np.ndarray
    triggers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    alphas: np.ndarray | None = None

    @property
    def final(self):
        return self.thetas[-1]


def run_optimizer(
    oracle: GradientOracle,
    stepper: str,
    schedule: ScheduleSpec | None,
    policy: RestartPolicy | None,
    theta0,
    n_steps: int,
    record_every: int,
    *,
    eta: float = 0.001,
    eps_guard: float = 1e-12,
    keep_alphas: bool = False,
) -> Trajectory:
    """Run SGD or AdaGrad for ``n_steps`` oracle calls, restarting at triggers.

    For SGD the step at within-epoch counter ``s`` is ``schedule.alpha(s)``;
    for AdaGrad ``schedule`` is ignored and a restart resets the accumulator
    to ones. Snapshots are taken at :func:`record_iterations`. This is the
    reference loop; the experiment drivers use the kernels in
    :mod:`stallsgd.kernels` for speed.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stepper not in ("sgd", "adagrad"):
        raise ValueError(f"unknown stepper {stepper!r}")
    if stepper == "sgd" and schedule is None:
        raise ValueError("sgd needs a schedule")
    theta = np.array(theta0, dtype=np.float64)
    triggers = policy.triggers(n_steps) if policy is not None else np.zeros(0, dtype=np.int64)
    trigger_set = set(triggers.tolist())
    rec = record_iterations(n_steps, record_every)
    rec_set = set(rec.tolist())
    state = OptimizerState(theta)
    ada = AdaGradState.fresh(theta.size, eta, eps_guard) if stepper == "adagrad" else None
    snaps, used = [], []
    for k in range(1, n_steps + 1):
        grad = np.asarray(oracle(state.theta), dtype=np.float64)
        if stepper == "sgd":
            alpha = schedule_alpha(schedule, state.s)
            state.theta = sgd_step(state.theta, alpha, grad)
            if keep_alphas:
                used.append(alpha)
        else:
            ada, state.theta = adagrad_step(ada, state.theta, grad)
        state.k = k
        if k in trigger_set:
            state.s, state.j, state.restart_offset = 0, state.j + 1, k
            if ada is not None:
                ada = ada.reset()
        else:
            state.s += 1
        if k in rec_set:
            snaps.append(state.theta.copy())
    return Trajectory(rec, np.array(snaps), triggers, np.array(used) if keep_alphas else None)


def write_trajectory_csv(fh, ks, thetas, comments=None):
    """Write ``k,theta_0,...,theta_{d-1}`` rows; ``comments`` become ``# key=value`` lines."""
    thetas = np.atleast_2d(thetas)
    for key, value in (comments or {}).items():
        fh.write(f"# {key}={value}\n")
    d = thetas.shape[1]
    fh.write("k," + ",".join(f"theta_{i}" for i in range(d)) + "\n")
    for k, row in zip(ks, thetas):
        fh.write(f"{int(k)}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_trajectory_csv(fh):
    rows = [line for line in fh if line.strip() and not line.startswith("#")]
    header = rows[0].strip().split(",")
    if header[0] != "k" or any(h != f"theta_{i}" for i, h in enumerate(header[1:])):
        raise ValueError(f"not a trajectory header: {rows[0]!r}")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    if data.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, len(header) - 1))
    return data[:, 0].astype(np.int64), data[:, 1:]


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class BFGSConfig:
    alpha0: float = 1.0
    backtrack_rho: float = 0.5
    armijo_c: float = 1e-4
    grad_tol: float = 1e-8
    max_iters: int = 100
    # "armijo": backtracking from alpha0; "secant": step from two directional
    # derivatives (exact on quadratics), Armijo-checked, backtracking on failure
    line_search: str = "armijo"

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.backtrack_rho < 1:
            raise ValueError("backtrack_rho must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.line_search not in ("armijo", "secant"):
            raise ValueError(f"unknown line search {self.line_search!r}")


@dataclass
class BFGSResult:
    theta: np.ndarray
    trajectory: np.ndarray
    status: str
    n_iters: int
    grad_norm: float
    n_evals: int = 0


def bfgs_minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    theta0,
    config: BFGSConfig = BFGSConfig(),
) -> BFGSResult:
    """BFGS with an inverse-Hessian update (``H_0 = I``) and Armijo backtracking.

    ``status`` is ``"converged"`` (gradient norm below ``grad_tol``),
    ``"max_iters"`` or ``"line_search_failed"`` (no Armijo step within
    60 backtracks). The trajectory holds the start point and every accepted
    iterate.
    """
    x = np.array(theta0, dtype=np.float64)
    n = x.size
    H = np.eye(n)
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=np.float64)
    evals = 1
    traj = [x.copy()]
    it = 0
    status = "max_iters"
    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm < config.grad_tol:
            status = "converged"
            break
        if it >= config.max_iters:
            break
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            # H lost positive definiteness numerically; fall back to steepest descent
            H = np.eye(n)
            d = -g
            slope = -gnorm * gnorm
        step = config.alpha0
        if config.line_search == "secant":
            g_probe = np.asarray(gradient(x + d), dtype=np.float64)
            evals += 1
            curv = float(d @ (g_probe - g))
            if curv > 0:
                step = -slope / curv
        for _ in range(MAX_BACKTRACKS + 1):
            x_new = x + step * d
            f_new = float(objective(x_new))
            evals += 1
            if f_new <= f + config.armijo_c * step * slope:
                break
            step *= config.backtrack_rho
        else:
            status = "line_search_failed"
            break
        g_new = np.asarray(gradient(x_new), dtype=np.float64)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        traj.append(x.copy())
        it += 1
    return BFGSResult(x, np.array(traj), status, it, float(np.linalg.norm(g)), evals)
