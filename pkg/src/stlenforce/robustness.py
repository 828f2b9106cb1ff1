"""Quantitative semantics for rule formulas over discrete traces.

Two evaluators share the same window arithmetic:

* ``robustness`` uses exact min/max.  A value <= 0 means the trace
  violates the formula.
* ``smooth_robustness`` replaces min/max with log-sum-exp softmin/softmax
  at sharpness ``a`` so the result is differentiable in every signal value.

Interval bounds are given in seconds and convert to scene offsets by
rounding half-up at the trace spacing.  A temporal operator whose window
falls entirely beyond the trace yields NaN at that position; if the NaN
reaches the queried position a HorizonError is raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsl import (
    And,
    Always,
    Eventually,
    Formula,
    Not,
    Or,
    Prop,
    Until,
    referenced_signals,
)


class HorizonError(ValueError):
    """The trace is too short to evaluate the formula at the requested step."""


class PlaceholderError(ValueError):
    """The formula references command placeholders that were never resolved."""


@dataclass(frozen=True)
class RobustnessConfig:
    a: float = 10.0  # softmin/softmax sharpness
    theta: float = 0.4  # enforcement threshold
    dt: float = 0.5  # scene spacing, seconds

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("sharpness a must be positive")
        if self.theta < 0:
            raise ValueError("threshold must be non-negative")
        if self.dt <= 0:
            raise ValueError("scene spacing must be positive")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _offsets(lo_s: float, hi_s: float, dt: float):
    """Interval in seconds -> (lo_offset, hi_offset or None for unbounded)."""
    lo = _round_half_up(lo_s / dt)
    hi = None if math.isinf(hi_s) else _round_half_up(hi_s / dt)
    return lo, hi


def _check_resolved(formula: Formula, trace) -> None:
    pending = set(trace.placeholder_names) & referenced_signals(formula)
    if pending:
        raise PlaceholderError(
            "unresolved command placeholders: " + ", ".join(sorted(pending))
        )


def _signal_array(trace, name: str) -> np.ndarray:
    try:
        return trace.signals[name]
    except KeyError:
        raise KeyError(f"trace has no signal {name!r}") from None


# ---------------------------------------------------------------------------
# exact evaluation


def _prop_values(f: Prop, trace) -> np.ndarray:
    vals = np.full(len(trace.times), f.expr.const, dtype=float)
    for name, coef in f.expr.terms:
        vals = vals + coef * _signal_array(trace, name)
    if f.op in ("<", "<="):
        return -vals
    if f.op in (">", ">="):
        return vals
    if f.op == "!=":
        return np.abs(vals)
    return -np.abs(vals)  # "=="


def _window_extreme(x: np.ndarray, lo: int, hi, mode: str) -> np.ndarray:
    """mode 'max' -> out[i] = max(x[i+lo : min(i+hi, n-1)]), NaN when empty."""
    n = len(x)
    out = np.full(n, np.nan)
    if mode == "max":
        pad, reducer, acc = -np.inf, np.max, np.maximum.accumulate
    else:
        pad, reducer, acc = np.inf, np.min, np.minimum.accumulate
    if hi is None:
        suffix = acc(x[::-1])[::-1]
        if lo == 0:
            return suffix
        if lo < n:
            out[: n - lo] = suffix[lo:]
        return out
    width = hi - lo + 1
    y = np.concatenate([x, np.full(hi, pad)])
    windows = np.lib.stride_tricks.sliding_window_view(y, width)
    vals = reducer(windows, axis=1)
    out[:] = vals[lo : lo + n]
    if lo > 0:
        out[max(n - lo, 0):] = np.nan
    return out


def _until_exact(left: np.ndarray, right: np.ndarray, lo: int, hi) -> np.ndarray:
    n = len(left)
    out = np.full(n, np.nan)
    for i in range(n):
        lo_i = i + lo
        hi_i = n - 1 if hi is None else min(i + hi, n - 1)
        if lo_i > n - 1:
            continue
        runmin = np.minimum.accumulate(left[i : hi_i + 1])
        cand = np.minimum(right[lo_i : hi_i + 1], runmin[lo_i - i :])
        out[i] = np.max(cand)
    return out


def _eval_exact(f: Formula, trace, memo) -> np.ndarray:
    key = id(f)
    hit = memo.get(key)
    if hit is not None:
        return hit
    dt = trace.dt
    if isinstance(f, Prop):
        out = _prop_values(f, trace)
    elif isinstance(f, Not):
        out = -_eval_exact(f.child, trace, memo)
    elif isinstance(f, And):
        out = np.minimum.reduce([_eval_exact(c, trace, memo) for c in f.children])
    elif isinstance(f, Or):
        out = np.maximum.reduce([_eval_exact(c, trace, memo) for c in f.children])
    elif isinstance(f, Always):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _window_extreme(_eval_exact(f.child, trace, memo), lo, hi, "min")
    elif isinstance(f, Eventually):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _window_extreme(_eval_exact(f.child, trace, memo), lo, hi, "max")
    elif isinstance(f, Until):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _until_exact(
            _eval_exact(f.left, trace, memo), _eval_exact(f.right, trace, memo), lo, hi
        )
    else:
        raise TypeError(f"not a formula node: {f!r}")
    memo[key] = out
    return out


# ---------------------------------------------------------------------------
# smooth evaluation

# Softmax is (1/a) ln sum exp(a x_i) computed with the usual max-shift;
# softmin negates through.  A window of one element is exact.


def _lse_rows(rows: np.ndarray, a: float) -> np.ndarray:
    m = np.max(rows, axis=1)
    shifted = rows - m[:, None]
    with np.errstate(invalid="ignore"):
        s = np.sum(np.exp(a * shifted), axis=1)
    return m + np.log(s) / a


def _window_soft(x: np.ndarray, lo: int, hi, a: float, mode: str) -> np.ndarray:
    if mode == "min":
        return -_window_soft(-x, lo, hi, a, "max")
    n = len(x)
    out = np.full(n, np.nan)
    if hi is None:
        # running log-sum-exp over the suffix, scanned from the end
        m, s = -np.inf, 0.0
        bad = False
        vals = np.empty(n)
        for i in range(n - 1, -1, -1):
            xi = x[i]
            if bad or math.isnan(xi):
                bad = True
                vals[i] = np.nan
                continue
            mn = xi if xi > m else m
            s = s * math.exp(a * (m - mn)) + math.exp(a * (xi - mn))
            m = mn
            vals[i] = m + math.log(s) / a
        if lo == 0:
            return vals
        if lo < n:
            out[: n - lo] = vals[lo:]
        return out
    width = hi - lo + 1
    y = np.concatenate([x, np.full(hi, -np.inf)])
    windows = np.lib.stride_tricks.sliding_window_view(y, width)
    vals = _lse_rows(windows, a)
    out[:] = vals[lo : lo + n]
    if lo > 0:
        out[max(n - lo, 0):] = np.nan
    return out


def _soft_extreme_stack(arrays: list[np.ndarray], a: float, mode: str) -> np.ndarray:
    rows = np.stack(arrays, axis=1)
    if mode == "max":
        return _lse_rows(rows, a)
    return -_lse_rows(-rows, a)


def _softmin_pair(u: float, v: float, a: float) -> float:
    if math.isnan(u) or math.isnan(v):
        return math.nan
    m = u if u < v else v
    return m - math.log1p(math.exp(-a * abs(u - v))) / a


def _until_soft(left: np.ndarray, right: np.ndarray, lo: int, hi, a: float) -> np.ndarray:
    n = len(left)
    out = np.full(n, np.nan)
    for i in range(n):
        lo_i = i + lo
        hi_i = n - 1 if hi is None else min(i + hi, n - 1)
        if lo_i > n - 1:
            continue
        # running softmin of `left` over [i, t1], extended one step at a time
        m, s = math.inf, 0.0
        bad = False
        pairs = []
        for t1 in range(i, hi_i + 1):
            lv = left[t1]
            if bad or math.isnan(lv):
                bad = True
            else:
                mn = lv if lv < m else m
                s = s * math.exp(a * (mn - m)) + math.exp(a * (mn - lv))
                m = mn
            if t1 < lo_i:
                continue
            if bad:
                pairs = None
                break
            inf_v = m - math.log(s) / a
            pairs.append(_softmin_pair(right[t1], inf_v, a))
        if pairs is None or any(math.isnan(p) for p in pairs):
            continue
        shift = max(pairs)
        acc = sum(math.exp(a * (p - shift)) for p in pairs)
        out[i] = shift + math.log(acc) / a
    return out


def _eval_smooth(f: Formula, trace, a: float, memo) -> np.ndarray:
    key = id(f)
    hit = memo.get(key)
    if hit is not None:
        return hit
    dt = trace.dt
    if isinstance(f, Prop):
        out = _prop_values(f, trace)
    elif isinstance(f, Not):
        out = -_eval_smooth(f.child, trace, a, memo)
    elif isinstance(f, And):
        out = _soft_extreme_stack([_eval_smooth(c, trace, a, memo) for c in f.children], a, "min")
    elif isinstance(f, Or):
        out = _soft_extreme_stack([_eval_smooth(c, trace, a, memo) for c in f.children], a, "max")
    elif isinstance(f, Always):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _window_soft(_eval_smooth(f.child, trace, a, memo), lo, hi, a, "min")
    elif isinstance(f, Eventually):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _window_soft(_eval_smooth(f.child, trace, a, memo), lo, hi, a, "max")
    elif isinstance(f, Until):
        lo, hi = _offsets(f.lo, f.hi, dt)
        out = _until_soft(
            _eval_smooth(f.left, trace, a, memo),
            _eval_smooth(f.right, trace, a, memo),
            lo,
            hi,
            a,
        )
    else:
        raise TypeError(f"not a formula node: {f!r}")
    memo[key] = out
    return out


# ---------------------------------------------------------------------------
# public API


def _pick(arr: np.ndarray, trace, t) -> float:
    idx = trace.index_of(t)
    val = arr[idx]
    if math.isnan(val):
        raise HorizonError(f"trace too short to evaluate the formula at t={t}")
    return float(val)


def robustness(formula: Formula, trace, t: float = 0.0) -> float:
    """Exact robustness degree at timestep ``t`` (seconds from trace start)."""
    _check_resolved(formula, trace)
    return _pick(_eval_exact(formula, trace, {}), trace, t)


def smooth_robustness(formula: Formula, trace, t: float = 0.0, a: float = 10.0) -> float:
    """Differentiable robustness at sharpness ``a``; approaches the exact
    value from a bounded distance as ``a`` grows."""
    _check_resolved(formula, trace)
    if a <= 0:
        raise ValueError("sharpness a must be positive")
    return _pick(_eval_smooth(formula, trace, a, {}), trace, t)


def robustness_series(formula: Formula, trace) -> np.ndarray:
    """Exact robustness at every scene position (NaN where unevaluable)."""
    _check_resolved(formula, trace)
    return _eval_exact(formula, trace, {}).copy()


def smooth_series(formula: Formula, trace, a: float = 10.0) -> np.ndarray:
    _check_resolved(formula, trace)
    return _eval_smooth(formula, trace, a, {}).copy()


def prefix_robustness(formula: Formula, trace, k: float) -> float:
    """Robustness of the prefix through the scene at timestep ``k``."""
    return robustness(formula, trace.prefix(k), 0.0)


def prefix_series(formula: Formula, trace) -> list[tuple[float, float]]:
    """(timestep, prefix robustness) per scene; skips horizon-short prefixes."""
    out = []
    for i in range(len(trace.times)):
        try:
            out.append((float(trace.times[i]), prefix_robustness(formula, trace, trace.times[i])))
        except HorizonError:
            continue
    return out


def smoothing_error_bound(formula: Formula, trace, a: float = 10.0) -> float:
    """Analytic upper bound on |smooth - exact| from the log-sum-exp gaps.

    Each m-way soft aggregation sits within ln(m)/a of the exact extreme
    and min/max are 1-Lipschitz, so gaps add along the nesting depth.
    """
    n = max(len(trace.times), 2)

    def bound(f: Formula) -> float:
        if isinstance(f, Prop):
            return 0.0
        if isinstance(f, Not):
            return bound(f.child)
        if isinstance(f, (And, Or)):
            return max(bound(c) for c in f.children) + math.log(len(f.children)) / a
        if isinstance(f, (Always, Eventually)):
            return bound(f.child) + math.log(n) / a
        if isinstance(f, Until):
            return (
                max(bound(f.left), bound(f.right))
                + (2 * math.log(n) + math.log(2)) / a
            )
        raise TypeError(f"not a formula node: {f!r}")

    return bound(formula)


# short operator-style names used by the CLI and much of the test suite
rho = robustness
rho_smooth = smooth_robustness
rho_prefix = prefix_robustness
