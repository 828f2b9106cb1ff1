"""Reference implementations the suite cross-checks the package against.

Everything here is rebuilt from the evaluation rules with plain loops and
the math module: no window arithmetic, log-sum-exp helper, or search code
is shared with the package.  Slow is fine; independent is the point.
"""

from __future__ import annotations

import itertools
import math
import random

from stlenforce.dsl import (
    Always,
    And,
    Eventually,
    Formula,
    LinExpr,
    Not,
    Or,
    Prop,
    Until,
)
from stlenforce.trace import Assignment, Trace

NUM_OPS = ("<", "<=", ">", ">=")
ALL_OPS = NUM_OPS + ("==", "!=")


class OracleHorizon(Exception):
    """Trace too short for some temporal window, per the reference rules."""


def _steps(seconds: float, dt: float) -> int:
    # interval bounds land on the scene grid by half-up rounding
    return int(math.floor(seconds / dt + 0.5))


def window(i: int, lo_s: float, hi_s: float, dt: float, n: int) -> range:
    start = i + _steps(lo_s, dt)
    stop = n - 1 if math.isinf(hi_s) else min(i + _steps(hi_s, dt), n - 1)
    if start > n - 1 or start > stop:
        raise OracleHorizon(f"empty window [{lo_s}, {hi_s}] at scene {i}")
    return range(start, stop + 1)


def prop_value(f: Prop, trace, i: int) -> float:
    v = f.expr.const
    for name, coef in f.expr.terms:
        v += coef * float(trace.signals[name][i])
    if f.op in ("<", "<="):
        return -v
    if f.op in (">", ">="):
        return v
    if f.op == "!=":
        return abs(v)
    return -abs(v)  # "=="


def disc(f: Formula, trace, i: int = 0) -> float:
    """Exact robustness at scene ``i`` by direct recursion."""
    if isinstance(f, Prop):
        return prop_value(f, trace, i)
    if isinstance(f, Not):
        return -disc(f.child, trace, i)
    if isinstance(f, And):
        return min(disc(c, trace, i) for c in f.children)
    if isinstance(f, Or):
        return max(disc(c, trace, i) for c in f.children)
    n = len(trace.times)
    if isinstance(f, Always):
        return min(disc(f.child, trace, j) for j in window(i, f.lo, f.hi, trace.dt, n))
    if isinstance(f, Eventually):
        return max(disc(f.child, trace, j) for j in window(i, f.lo, f.hi, trace.dt, n))
    if isinstance(f, Until):
        best = -math.inf
        for t1 in window(i, f.lo, f.hi, trace.dt, n):
            hold = min(disc(f.left, trace, j) for j in range(i, t1 + 1))
            best = max(best, min(disc(f.right, trace, t1), hold))
        return best
    raise TypeError(f"not a formula node: {f!r}")


def _softmax_list(vals, a: float) -> float:
    m = max(vals)
    return m + math.log(sum(math.exp(a * (v - m)) for v in vals)) / a


def _softmin_list(vals, a: float) -> float:
    return -_softmax_list([-v for v in vals], a)


def soft(f: Formula, trace, i: int = 0, a: float = 10.0) -> float:
    """Smooth robustness: the same recursion with soft extremes."""
    if isinstance(f, Prop):
        return prop_value(f, trace, i)
    if isinstance(f, Not):
        return -soft(f.child, trace, i, a)
    if isinstance(f, And):
        return _softmin_list([soft(c, trace, i, a) for c in f.children], a)
    if isinstance(f, Or):
        return _softmax_list([soft(c, trace, i, a) for c in f.children], a)
    n = len(trace.times)
    if isinstance(f, Always):
        vals = [soft(f.child, trace, j, a) for j in window(i, f.lo, f.hi, trace.dt, n)]
        return _softmin_list(vals, a)
    if isinstance(f, Eventually):
        vals = [soft(f.child, trace, j, a) for j in window(i, f.lo, f.hi, trace.dt, n)]
        return _softmax_list(vals, a)
    if isinstance(f, Until):
        pairs = []
        for t1 in window(i, f.lo, f.hi, trace.dt, n):
            hold = _softmin_list(
                [soft(f.left, trace, j, a) for j in range(i, t1 + 1)], a
            )
            pairs.append(_softmin_list([soft(f.right, trace, t1, a), hold], a))
        return _softmax_list(pairs, a)
    raise TypeError(f"not a formula node: {f!r}")


def central_diff(fn, trace, k: float, name: str, h: float = 5e-6) -> float:
    """Symmetric difference of ``fn`` in one trace sample."""
    x = trace.value(name, k)
    up = fn(trace.with_value(name, k, x + h))
    dn = fn(trace.with_value(name, k, x - h))
    return (up - dn) / (2.0 * h)


def exhaustive_best(formula: Formula, trace, rho_fn=None) -> float:
    """Best achievable robustness over every placeholder assignment."""
    fn = rho_fn or (lambda tr: disc(formula, tr, 0))
    slots = [(float(t), nm) for t in trace.times for nm in trace.placeholder_names]
    best = None
    for bits in itertools.product((False, True), repeat=len(slots)):
        asg = Assignment({s: b for s, b in zip(slots, bits)})
        val = fn(trace.substitute(asg))
        if best is None or val > best:
            best = val
    return best


def error_bound(f: Formula, n: int, dt: float, a: float) -> float:
    """Bound on |soft - disc| at any scene.

    One m-way soft extreme sits within ln(m)/a of the exact extreme, and
    min/max are 1-Lipschitz in each argument, so per-operator gaps add
    along the deepest nesting path.
    """

    def width(lo_s, hi_s):
        if math.isinf(hi_s):
            return n
        return max(min(_steps(hi_s, dt) - _steps(lo_s, dt) + 1, n), 1)

    if isinstance(f, Prop):
        return 0.0
    if isinstance(f, Not):
        return error_bound(f.child, n, dt, a)
    if isinstance(f, (And, Or)):
        inner = max(error_bound(c, n, dt, a) for c in f.children)
        return math.log(len(f.children)) / a + inner
    if isinstance(f, (Always, Eventually)):
        return math.log(width(f.lo, f.hi)) / a + error_bound(f.child, n, dt, a)
    if isinstance(f, Until):
        hold_len = n if math.isinf(f.hi) else max(min(_steps(f.hi, dt) + 1, n), 1)
        via_left = math.log(hold_len) / a + error_bound(f.left, n, dt, a)
        via_right = error_bound(f.right, n, dt, a)
        return (
            math.log(width(f.lo, f.hi)) / a
            + math.log(2.0) / a
            + max(via_left, via_right)
        )
    raise TypeError(f"not a formula node: {f!r}")


# ---------------------------------------------------------------------------
# randomized case generation


def random_trace(rng: random.Random, names, n: int, dt: float = 0.5,
                 lo: float = -8.0, hi: float = 8.0) -> Trace:
    times = [i * dt for i in range(n)]
    cols = {nm: [rng.uniform(lo, hi) for _ in range(n)] for nm in names}
    return Trace(times, cols, dt=dt)


def _random_prop(rng: random.Random, names, ops) -> Prop:
    k = 1 if rng.random() < 0.7 or len(names) == 1 else 2
    chosen = rng.sample(list(names), k)
    terms = tuple(
        sorted((nm, rng.choice((-1.0, 1.0)) * rng.uniform(0.25, 2.0)) for nm in chosen)
    )
    return Prop(LinExpr(terms, rng.uniform(-4.0, 4.0)), rng.choice(ops))


def random_formula(rng: random.Random, names, depth: int, budget: int,
                   dt: float = 0.5, ops=NUM_OPS) -> Formula:
    """Random formula evaluable at scene 0 of any trace with at least
    ``budget`` + 1 scenes.

    ``budget`` is the lookahead still available in scene steps; every
    bounded window spends its upper offset, and unbounded tails force
    zero-lookahead children so the trailing scenes stay evaluable.
    """
    if depth <= 0 or rng.random() < 0.25:
        return _random_prop(rng, names, ops)
    kind = rng.choice(("not", "and", "or", "G", "F", "U"))
    if kind == "not":
        return Not(random_formula(rng, names, depth - 1, budget, dt, ops))
    if kind in ("and", "or"):
        count = rng.choice((2, 2, 3))
        kids = tuple(
            random_formula(rng, names, depth - 1, budget, dt, ops)
            for _ in range(count)
        )
        return And(kids) if kind == "and" else Or(kids)
    if kind in ("G", "F"):
        cls = Always if kind == "G" else Eventually
        if budget > 0 and rng.random() < 0.15:
            lo_off = rng.randint(0, min(2, budget))
            child = random_formula(rng, names, depth - 1, 0, dt, ops)
            return cls(lo_off * dt, math.inf, child)
        lo_off = rng.randint(0, budget)
        hi_off = rng.randint(lo_off, budget)
        child = random_formula(rng, names, depth - 1, budget - hi_off, dt, ops)
        return cls(lo_off * dt, hi_off * dt, child)
    lo_off = rng.randint(0, budget)
    hi_off = rng.randint(lo_off, budget)
    left = random_formula(rng, names, depth - 1, budget - hi_off, dt, ops)
    right = random_formula(rng, names, depth - 1, budget - hi_off, dt, ops)
    return Until(lo_off * dt, hi_off * dt, left, right)
