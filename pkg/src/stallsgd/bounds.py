"""Exact error recursions and probability lower bounds for SGD.

With per-step decay factor ``f(alpha)`` (``1 + (alpha^2 - 2 alpha)/d`` on the
ideal problem, ``1 - 2 alpha sigma + alpha^2 L^2`` in general) the squared
error obeys ``e_{k+1} = f(alpha_k) e_k + c alpha_k^2`` with ``c = Var(eps)``
(ideal, exact in expectation) or ``c = C`` (general, an upper bound). Hence

    A_k = alpha_k^2 + sum_{j<k} alpha_j^2 prod_{l=j+1}^k f(alpha_l)
        = f(alpha_k) A_{k-1} + alpha_k^2,          A_{-1} = 0,
    P_k = prod_{j=0}^k f(alpha_j).

Index convention: the closed forms at index ``k`` involve ``alpha_0..alpha_k``
and therefore describe the iterate produced by ``k + 1`` updates. Helpers
taking ``n_steps`` do the shift.

For ``k`` beyond :data:`EXACT_LIMIT` the recurrence is advanced over
geometric blocks with constant-coefficient envelopes (the step size varies by
a factor at most ``BLOCK_RATIO ** p`` inside a block), which yields rigorous
lower and upper values for ``A_k`` and ``log P_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ideal import IdealProblemSpec
from .kernels import decay_scan
from .optim import ScheduleSpec

EXACT_LIMIT = 10**7
BLOCK_RATIO = 1.0 + 1e-4
_CHUNK = 1 << 20


@dataclass(frozen=True)
class IdealMode:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")


@dataclass(frozen=True)
class GeneralMode:
    sigma: float
    L: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.L > 0):
            raise ValueError("sigma and L must be positive")
        if self.sigma > self.L:
            raise ValueError(f"strong convexity {self.sigma} exceeds Lipschitz constant {self.L}")


@dataclass(frozen=True)
class GeneralProblemParams:
    sigma: float
    L: float
    C: float
    init_error_sq: float
    delta: float

    def __post_init__(self):
        GeneralMode(self.sigma, self.L)
        if self.C < 0 or self.init_error_sq < 0:
            raise ValueError("C and init_error_sq must be non-negative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def mode(self):
        return GeneralMode(self.sigma, self.L)


def decay_factor_minus_one(mode, alpha):
    """``f(alpha) - 1`` evaluated without cancellation."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if isinstance(mode, IdealMode):
        return alpha * (alpha - 2.0) / mode.d
    return alpha * (alpha * mode.L * mode.L - 2.0 * mode.sigma)


def decay_factor(mode, alpha):
    out = 1.0 + decay_factor_minus_one(mode, alpha)
    return float(out) if np.ndim(out) == 0 else out


def _vertex(mode):
    """Step size minimizing the decay factor."""
    if isinstance(mode, IdealMode):
        return 1.0
    return mode.sigma / (mode.L * mode.L)


def optimal_decay_rate(sigma: float, L: float) -> float:
    if not (sigma > 0 and L > 0):
        raise ValueError("sigma and L must be positive")
    return sigma / (L * L)


# ---------------------------------------------------------------------------
# Exact series
# ---------------------------------------------------------------------------


def _scan(schedule, mode, k_max):
    """Exact ``(A_k, log P_k)`` for ``k = 0..k_max``."""
    a_out = np.empty(k_max + 1)
    lp_out = np.empty(k_max + 1)
    a_prev, lp_prev = 0.0, 0.0
    for lo in range(0, k_max + 1, _CHUNK):
        hi = min(lo + _CHUNK, k_max + 1)
        alphas = schedule.alphas(np.arange(lo, hi))
        g = decay_factor_minus_one(mode, alphas)
        a, lp = decay_scan(alphas, 1.0 + g, _log1p_safe(g), a_prev, lp_prev)
        a_out[lo:hi], lp_out[lo:hi] = a, lp
        a_prev, lp_prev = a[-1], lp[-1]
    return a_out, lp_out


def _log1p_safe(g):
    with np.errstate(divide="ignore"):
        return np.where(g > -1.0, np.log1p(np.maximum(g, -1.0)), -np.inf)


def a_k_series(schedule: ScheduleSpec, mode, k_max: int) -> np.ndarray:
    """``A_0 .. A_{k_max}`` in ``O(k_max)`` via ``A_k = f(alpha_k) A_{k-1} + alpha_k^2``."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    return _scan(schedule, mode, k_max)[0]


def decay_product_series(schedule: ScheduleSpec, mode, k_max: int) -> np.ndarray:
    """``P_k = prod_{j=0}^k f(alpha_j)`` for ``k = 0..k_max``."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    return np.exp(_scan(schedule, mode, k_max)[1])


def expected_error_series(spec: IdealProblemSpec, schedule: ScheduleSpec, init_risk_gap: float, k_max: int):
    """``E[R] - R(beta*)`` at formula index ``k = 0..k_max``.

    ``init_risk_gap = ||theta_0 - beta*||^2 / d``. Entry ``k`` is the exact
    expected excess risk after ``k + 1`` SGD updates.
    """
    if init_risk_gap < 0:
        raise ValueError("init_risk_gap must be non-negative")
    a, lp = _scan(schedule, IdealMode(spec.d), k_max)
    return init_risk_gap * np.exp(lp) + spec.noise_variance / spec.d * a


def expected_gap_after(spec: IdealProblemSpec, schedule: ScheduleSpec, init_risk_gap: float, n_steps):
    """Exact expected excess risk after each of ``n_steps`` updates (``0`` allowed)."""
    n_steps = np.atleast_1d(np.asarray(n_steps, dtype=np.int64))
    series = expected_error_series(spec, schedule, init_risk_gap, max(int(n_steps.max()) - 1, 0))
    return np.where(n_steps == 0, init_risk_gap, series[np.maximum(n_steps - 1, 0)])


# ---------------------------------------------------------------------------
# Arbitrary k: exact prefix + block envelopes
# ---------------------------------------------------------------------------


@dataclass
class DecayTerms:
    k: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray
    logp_lo: np.ndarray
    logp_hi: np.ndarray

    @property
    def exact(self):
        return (self.a_lo == self.a_hi) & (self.logp_lo == self.logp_hi)


def _block_advance(a, lp, f_minus_one, q, m):
    """``m`` steps of ``A <- f A + q`` and ``logP += log f`` with constant ``f, q``."""
    if f_minus_one <= -1.0:
        return q, -math.inf
    logf = math.log1p(f_minus_one)
    fm = math.exp(m * logf)
    if f_minus_one == 0.0:
        geo = float(m)
    else:
        # (1 - f^m) / (1 - f)
        geo = -math.expm1(m * logf) / -f_minus_one
    return fm * a + q * geo, lp + m * logf


def decay_terms(schedule: ScheduleSpec, mode, ks, exact_limit: int = EXACT_LIMIT, block_ratio: float = BLOCK_RATIO):
    """``A_k`` and ``log P_k`` at formula indices ``ks`` (sorted, possibly huge).

    Indices up to ``exact_limit`` are computed exactly (``lo == hi``); larger
    ones carry envelopes from the block recurrence.
    """
    ks = np.asarray(ks, dtype=np.int64)
    if len(ks) and (np.any(np.diff(ks) < 0) or ks[0] < 0):
        raise ValueError("ks must be sorted and non-negative")
    n = len(ks)
    out = DecayTerms(ks, np.empty(n), np.empty(n), np.empty(n), np.empty(n))
    if n == 0:
        return out
    small = ks <= exact_limit
    top = int(min(ks[-1], exact_limit))
    a, lp = _scan(schedule, mode, top)
    out.a_lo[small] = out.a_hi[small] = a[ks[small]]
    out.logp_lo[small] = out.logp_hi[small] = lp[ks[small]]
    if small.all():
        return out

    vertex = _vertex(mode)
    a_lo = a_hi = a[-1]
    lp_lo = lp_hi = lp[-1]
    k = top  # last index processed
    targets = ks[~small].tolist()
    pos = int(small.sum())
    for target in targets:
        while k < target:
            start = k + 1
            stop = min(target, max(start, int(start * block_ratio)))
            m = stop - start + 1
            alpha_first = schedule.alpha(start)
            alpha_last = schedule.alpha(stop)
            lo_alpha, hi_alpha = min(alpha_first, alpha_last), max(alpha_first, alpha_last)
            g_ends = (float(decay_factor_minus_one(mode, lo_alpha)), float(decay_factor_minus_one(mode, hi_alpha)))
            g_max = max(g_ends)
            g_min = float(decay_factor_minus_one(mode, min(max(vertex, lo_alpha), hi_alpha)))
            a_hi, lp_hi = _block_advance(a_hi, lp_hi, g_max, hi_alpha * hi_alpha, m)
            a_lo, lp_lo = _block_advance(a_lo, lp_lo, g_min, lo_alpha * lo_alpha, m)
            k = stop
        out.a_lo[pos], out.a_hi[pos] = a_lo, a_hi
        out.logp_lo[pos], out.logp_hi[pos] = lp_lo, lp_hi
        pos += 1
    return out


# ---------------------------------------------------------------------------
# Probability bounds
# ---------------------------------------------------------------------------


def _bound(init_dist_sq, logp, c, a_k, delta):
    product = math.exp(logp) if logp > -math.inf else 0.0
    return 1.0 - (init_dist_sq * product + c * a_k) / (delta * delta)


def _clamp(x):
    return min(1.0, max(0.0, x))


def prob_lower_bound_ideal(
    spec: IdealProblemSpec,
    schedule: ScheduleSpec,
    init_dist_sq: float,
    delta: float,
    k: int,
    raw: bool = False,
) -> float:
    """Lower bound on ``P(||theta - beta*|| <= delta)`` at formula index ``k``.

    Clamped to ``[0, 1]`` unless ``raw``. Beyond the exact range the upper
    envelopes are used, so the value stays a valid lower bound.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    t = decay_terms(schedule, IdealMode(spec.d), [k])
    value = _bound(init_dist_sq, t.logp_hi[0], spec.noise_variance, t.a_hi[0], delta)
    return float(value) if raw else _clamp(float(value))


def prob_lower_bound_general(params: GeneralProblemParams, schedule: ScheduleSpec, k: int, raw: bool = False) -> float:
    t = decay_terms(schedule, params.mode, [k])
    value = _bound(params.init_error_sq, t.logp_hi[0], params.C, t.a_hi[0], params.delta)
    return float(value) if raw else _clamp(float(value))


def constant_rate_limit(params: GeneralProblemParams, alpha: float) -> float:
    """Limit of the general bound under a constant step ``alpha`` (when ``f(alpha) < 1``).

    ``A_k -> alpha^2 / (1 - f(alpha))`` and the bias term vanishes, so the
    bound approaches ``1 - C alpha^2 / (delta^2 (1 - f(alpha)))``.
    """
    g = float(decay_factor_minus_one(params.mode, alpha))
    if g >= 0:
        raise ValueError("constant step does not contract")
    return 1.0 - params.C * alpha * alpha / (params.delta**2 * -g)


@dataclass
class BoundSeries:
    k_values: np.ndarray
    alpha: np.ndarray
    a_k: np.ndarray
    decay_products: np.ndarray
    expected_error: np.ndarray
    prob_lower_bound: np.ndarray
    prob_raw: np.ndarray

    COLUMNS = ("k", "alpha", "A_k", "decay_product", "expected_error", "prob_lower_bound")

    def write_csv(self, fh, comments=None):
        for key, value in (comments or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(self.COLUMNS) + "\n")
        for row in zip(self.k_values, self.alpha, self.a_k, self.decay_products, self.expected_error, self.prob_lower_bound):
            fh.write(f"{int(row[0])}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")


def bound_series_ideal(
    spec: IdealProblemSpec,
    schedule: ScheduleSpec,
    init_dist_sq: float,
    delta: float,
    k_values,
) -> BoundSeries:
    """Bound ingredients at formula indices ``k_values`` (upper envelopes past the exact range)."""
    ks = np.asarray(k_values, dtype=np.int64)
    t = decay_terms(schedule, IdealMode(spec.d), ks)
    products = np.exp(t.logp_hi)
    expected = init_dist_sq / spec.d * products + spec.noise_variance / spec.d * t.a_hi
    raw = 1.0 - (init_dist_sq * products + spec.noise_variance * t.a_hi) / (delta * delta)
    return BoundSeries(
        ks,
        schedule.alphas(ks),
        t.a_hi,
        products,
        expected,
        np.clip(raw, 0.0, 1.0),
        raw,
    )
