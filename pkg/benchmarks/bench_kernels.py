"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed ``--repeat`` times; the best time is reported together
with the max absolute difference between backends.
"""

import argparse
import time

import numpy as np

from stallsgd import _accel
from stallsgd.bounds import IdealMode, decay_factor_minus_one
from stallsgd.ideal import ObservationStream, generate_problem
from stallsgd.kernels import SQUARED, decay_scan, ideal_sgd_batch, nn_adagrad, nn_sgd
from stallsgd.network import init_params
from stallsgd.optim import ScheduleSpec


def ideal_case(scale):
    spec = generate_problem(10, seed=0)
    runs, m = 50, int(20_000 * scale)
    cols = np.empty((runs, m), dtype=np.int64)
    ys = np.empty((runs, m))
    for r in range(runs):
        cols[r], ys[r] = ObservationStream(spec, 0, r).take_observations(m)
    alphas = ScheduleSpec.power_law(0.7).alphas(np.arange(m))

    def run():
        thetas = np.zeros((runs, spec.d))
        ideal_sgd_batch(thetas, spec.Qt, cols, ys, alphas)
        return thetas

    return f"ideal_sgd_batch ({runs} runs x {m} steps, d=10)", run


def scan_case(scale):
    n = int(2_000_000 * scale)
    alphas = ScheduleSpec.power_law(0.6).alphas(np.arange(n))
    factors = 1.0 + decay_factor_minus_one(IdealMode(100), alphas)
    return f"decay_scan ({n} terms)", lambda: np.stack(decay_scan(alphas, factors))


def _nn_data(scale):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5000, 50))
    y = rng.integers(0, 2, 5000).astype(float)
    order = rng.integers(0, 5000, int(20_000 * scale))
    return X, y, order


def nn_sgd_case(scale):
    X, y, order = _nn_data(scale)
    alphas = ScheduleSpec.power_law(0.7).alphas(np.arange(len(order)))

    def run():
        p = init_params(0)
        nn_sgd(p, X, y, order, alphas, SQUARED)
        return p

    return f"nn_sgd ({len(order)} steps)", run


def nn_adagrad_case(scale):
    X, y, order = _nn_data(scale)

    def run():
        p, G = init_params(0), np.ones(61)
        nn_adagrad(p, G, X, y, order, 0.001, 1e-12, SQUARED)
        return p

    return f"nn_adagrad ({len(order)} steps)", run


CASES = (ideal_case, scan_case, nn_sgd_case, nn_adagrad_case)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=float, default=1.0, help="multiplies problem sizes")
    args = parser.parse_args(argv)
    if not _accel.HAS_NUMBA:
        parser.error("numba is not installed; nothing to compare")

    print(f"{'kernel':<45} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max diff':>10}")
    original = _accel.get_backend()
    try:
        for case in CASES:
            label, fn = case(args.scale)
            timings, outputs = {}, {}
            for backend in _accel.BACKENDS:
                _accel.set_backend(backend)
                fn()
                timings[backend], outputs[backend] = best_time(fn, args.repeat)
            diff = float(np.max(np.abs(outputs["numba"] - outputs["numpy"])))
            speedup = timings["numpy"] / timings["numba"]
            print(f"{label:<45} {timings['numba']:>10.4f} {timings['numpy']:>10.4f} {speedup:>7.1f}x {diff:>10.2e}")
    finally:
        _accel.set_backend(original)


if __name__ == "__main__":
    main()
