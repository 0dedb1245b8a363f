"""Fast invariant suite behind ``stallsgd selfcheck``.

Each check compares a library routine with an independent computation and
returns a :class:`CheckResult`. The report is a pure function of the seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .bounds import GeneralMode, IdealMode, a_k_series, expected_gap_after, prob_lower_bound_ideal
from .ideal import OLSAccumulator, ObservationStream, generate_problem
from .kernels import BLOCK, N_FEATURES, N_HIDDEN, N_PARAMS
from .network import backprop_grad
from .optim import ScheduleSpec
from .simulate import Method, simulate_ideal

# test hook: name of an invariant to sabotage
FAULT_ENV = "STALLSGD_SELFCHECK_FAULT"

FD_STEP = 1e-6
FD_FLOOR = 1e-7


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def _sigmoid_ld(t):
    return np.longdouble(1) / (np.longdouble(1) + np.exp(-t))


def reference_loss(params, x, label, loss="squared"):
    """Per-example loss evaluated element by element in long double."""
    p = np.asarray(params, dtype=np.longdouble)
    x = np.asarray(x, dtype=np.longdouble)
    z = np.longdouble(0)
    for i in range(N_HIDDEN):
        base = i * (BLOCK + 1)
        a = p[base + BLOCK]
        for j in range(BLOCK):
            a += p[base + j] * x[i * BLOCK + j]
        z += p[N_HIDDEN * (BLOCK + 1) + i] * _sigmoid_ld(a)
    out = _sigmoid_ld(z + p[N_PARAMS - 1])
    y = np.longdouble(label)
    if loss == "squared":
        return (out - y) ** 2
    return -(y * np.log(out) + (1 - y) * np.log(1 - out))


def finite_difference_grad(params, x, label, loss="squared", h=FD_STEP):
    params = np.asarray(params, dtype=np.longdouble)
    g = np.empty(N_PARAMS, dtype=np.longdouble)
    for i in range(N_PARAMS):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        g[i] = (reference_loss(up, x, label, loss) - reference_loss(down, x, label, loss)) / (2 * np.longdouble(h))
    return g


def gradient_relative_error(grad, reference, floor=FD_FLOOR):
    grad = np.asarray(grad, dtype=np.longdouble)
    reference = np.asarray(reference, dtype=np.longdouble)
    return float(np.max(np.abs(grad - reference) / np.maximum(np.abs(reference), floor)))


def a_k_double_sum(schedule, mode, k_max):
    """``A_k = sum_{j<=k} alpha_j^2 prod_{l=j+1..k} f(alpha_l)`` term by term."""
    alphas = [schedule.alpha(s) for s in range(k_max + 1)]
    if isinstance(mode, IdealMode):
        f = [1.0 + (a * a - 2.0 * a) / mode.d for a in alphas]
    else:
        f = [1.0 - 2.0 * a * mode.sigma + a * a * mode.L * mode.L for a in alphas]
    out = []
    for k in range(k_max + 1):
        total = 0.0
        for j in range(k + 1):
            total += alphas[j] ** 2 * math.prod(f[j + 1:k + 1])
        out.append(total)
    return np.array(out)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_gradient(seed, draws=20, tol=1e-5, gradient=backprop_grad):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    worst = 0.0
    for _ in range(draws):
        params = rng.uniform(-1.0, 1.0, N_PARAMS)
        x = rng.normal(0.0, 1.0, N_FEATURES)
        label = float(rng.integers(0, 2))
        worst = max(worst, gradient_relative_error(gradient(params, x, label), finite_difference_grad(params, x, label)))
    return CheckResult("gradient_fd", worst < tol, f"max relative error {worst:.3e} over {draws} draws (tol {tol:g})")


A_K_MODES = (IdealMode(1), IdealMode(10), IdealMode(100), GeneralMode(1.0, 1.0), GeneralMode(1.0, 2.0), GeneralMode(0.5, 4.0))
EXPONENTS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)


def check_a_k(k_max=30, tol=1e-12):
    worst = 0.0
    for mode in A_K_MODES:
        for p in EXPONENTS:
            sched = ScheduleSpec.power_law(p)
            rec = a_k_series(sched, mode, k_max)
            ref = a_k_double_sum(sched, mode, k_max)
            worst = max(worst, float(np.max(np.abs(rec - ref) / np.maximum(np.abs(ref), 1.0))))
    return CheckResult("a_k_recurrence", worst <= tol, f"max deviation from double sum {worst:.3e} (tol {tol:g})")


def check_expected_error(seed, runs=400, ks=(100, 1000)):
    spec = generate_problem(10, 5.0, 1.0, seed)
    sched = ScheduleSpec.power_law(0.7)
    res = simulate_ideal(spec, [Method(sched)], max(ks), range(runs), seed, record_ks=ks)
    sq = res.errors(spec)[0] ** 2 / spec.d
    expected = expected_gap_after(spec, sched, 1.0 / spec.d, ks)
    z = np.abs(sq.mean(axis=0) - expected) / (sq.std(axis=0, ddof=1) / math.sqrt(runs))
    return CheckResult("expected_error_mc", bool(np.all(z < 4.0)), f"max |z| {z.max():.2f} at k={list(ks)} (tol 4)")


def check_bound(seed, runs=400, k=1000, delta=0.3):
    # low noise so that most exponents have a non-trivial bound
    spec = generate_problem(10, 0.5, 1.0, seed)
    methods = [Method(ScheduleSpec.power_law(p)) for p in EXPONENTS]
    res = simulate_ideal(spec, methods, k, range(runs), seed)
    err = res.errors(spec)[:, :, -1]
    slack = 4.0 * math.sqrt(0.25 / runs)
    worst, nonzero = math.inf, 0
    for mi, m in enumerate(methods):
        bound = prob_lower_bound_ideal(spec, m.schedule, 1.0, delta, k - 1)
        nonzero += bound > 0
        worst = min(worst, float(np.mean(err[mi] <= delta)) - (bound - slack))
    detail = f"min margin {worst:.3f} over {len(methods)} exponents ({nonzero} bounds non-zero)"
    return CheckResult("bound_vs_mc", worst >= 0.0, detail)


def check_ols(seed, n=10_000, tol=1e-9):
    spec = generate_problem(10, 5.0, 1.0, seed)
    stream = ObservationStream(spec, seed, 0)
    cols, y = stream.take_observations(n)
    acc = OLSAccumulator(spec.d)
    for lo in range(0, n, 1000):
        acc.update_columns(spec.Qt, cols[lo:lo + 1000], y[lo:lo + 1000])
    batch = np.linalg.lstsq(spec.Qt[cols], y, rcond=None)[0]
    dev = float(np.max(np.abs(acc.solve() - batch)))
    return CheckResult("ols_stream", dev < tol, f"max deviation from batch least squares {dev:.3e} (tol {tol:g})")


def _corrupted_gradient(params, x, label, loss="squared"):
    g = backprop_grad(params, x, label, loss)
    g[0] *= 1.01
    return g


def run_selfcheck(seed=0, fault=None):
    fault = fault if fault is not None else os.environ.get(FAULT_ENV)
    gradient = _corrupted_gradient if fault == "gradient" else backprop_grad
    return [
        check_gradient(seed, gradient=gradient),
        check_a_k(),
        check_expected_error(seed),
        check_bound(seed),
        check_ols(seed),
    ]


def format_report(results, seed):
    lines = [f"stallsgd selfcheck (seed={seed})"]
    lines += [r.line() for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append("result: " + ("PASS" if not failed else "FAIL (" + ", ".join(failed) + ")"))
    return "\n".join(lines) + "\n"
