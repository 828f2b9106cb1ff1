"""Reverse-mode differentiation of the smooth robustness value.

A forward pass records every primitive soft aggregation on a flat tape;
the backward pass pushes softmin/softmax weights back down to the trace
signals that fed the formula.  Gradients are exact derivatives of the
smooth semantics (up to the usual subgradient choice at |x| kinks), so
they double as sensitivity scores for repair-signal selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dsl import Always, And, Eventually, Formula, Not, Or, Prop, Until
from .robustness import HorizonError, _check_resolved, _offsets, smooth_series

__all__ = [
    "Node",
    "Tape",
    "GradientMap",
    "forward_record",
    "backward",
    "node_adjoints",
    "closed_form_until_partial",
]


class Node:
    """One primitive operation on the tape.

    kind is one of:
      input   leaf signal sample; meta = (time label, signal name)
      affine  offset + sum(coeff * operand value)
      abs     |operand|
      smin    soft minimum of operands at sharpness a
      smax    soft maximum of operands at sharpness a
    """

    __slots__ = ("kind", "operands", "value", "coeffs", "offset", "meta")

    def __init__(self, kind, operands=(), value=0.0, coeffs=None, offset=0.0, meta=None):
        self.kind = kind
        self.operands = operands
        self.value = value
        self.coeffs = coeffs
        self.offset = offset
        self.meta = meta

    def __repr__(self):
        return f"Node({self.kind}, ops={self.operands}, value={self.value:.6g})"


@dataclass
class Tape:
    """Append-only record of one smooth-robustness evaluation."""

    a: float
    nodes: list = field(default_factory=list)
    output: int = -1
    # (time label, signal name) -> input node id
    inputs: dict = field(default_factory=dict)
    # (id(formula node), scene index) -> tape node id
    formula_nodes: dict = field(default_factory=dict)
    times: tuple = ()

    @property
    def value(self) -> float:
        return self.nodes[self.output].value

    def node_value(self, i: int) -> float:
        return self.nodes[i].value

    def replay(self) -> float:
        """Recompute every node from the recorded inputs, in tape order."""
        vals = np.empty(len(self.nodes))
        a = self.a
        for i, n in enumerate(self.nodes):
            if n.kind == "input":
                vals[i] = n.value
            elif n.kind == "affine":
                acc = n.offset
                for c, op in zip(n.coeffs, n.operands):
                    acc += c * vals[op]
                vals[i] = acc
            elif n.kind == "abs":
                vals[i] = abs(vals[n.operands[0]])
            elif n.kind == "smin":
                x = vals[list(n.operands)]
                m = x.min()
                vals[i] = m - math.log(np.exp(-a * (x - m)).sum()) / a
            elif n.kind == "smax":
                x = vals[list(n.operands)]
                m = x.max()
                vals[i] = m + math.log(np.exp(a * (x - m)).sum()) / a
            else:
                raise ValueError(f"unknown node kind {n.kind}")
        return float(vals[self.output])


class GradientMap(dict):
    """(time label, signal name) -> d rho_smooth / d sample value."""

    def at(self, t, name: str) -> float:
        return self.get((float(t), name), 0.0)

    def by_signal(self, name: str) -> dict:
        return {t: g for (t, s), g in self.items() if s == name}


# ---------------------------------------------------------------------------
# forward recording


class _Recorder:
    def __init__(self, trace, a: float):
        self.trace = trace
        self.a = a
        self.tape = Tape(a=a, times=tuple(float(t) for t in trace.times))
        self.n = len(trace.times)

    def emit(self, node: Node) -> int:
        self.tape.nodes.append(node)
        return len(self.tape.nodes) - 1

    def input_node(self, j: int, name: str) -> int:
        key = (self.tape.times[j], name)
        nid = self.tape.inputs.get(key)
        if nid is None:
            v = float(self.trace.signals[name][j])
            nid = self.emit(Node("input", value=v, meta=key))
            self.tape.inputs[key] = nid
        return nid

    def smin(self, ops: tuple) -> int:
        if len(ops) == 1:
            return ops[0]
        x = np.array([self.tape.nodes[i].value for i in ops])
        m = x.min()
        v = m - math.log(np.exp(-self.a * (x - m)).sum()) / self.a
        return self.emit(Node("smin", operands=ops, value=float(v)))

    def smax(self, ops: tuple) -> int:
        if len(ops) == 1:
            return ops[0]
        x = np.array([self.tape.nodes[i].value for i in ops])
        m = x.max()
        v = m + math.log(np.exp(self.a * (x - m)).sum()) / self.a
        return self.emit(Node("smax", operands=ops, value=float(v)))

    def affine(self, ops: tuple, coeffs: tuple, offset: float) -> int:
        v = offset + sum(c * self.tape.nodes[i].value for c, i in zip(coeffs, ops))
        return self.emit(Node("affine", operands=ops, value=float(v), coeffs=coeffs, offset=offset))

    def window(self, i: int, lo_s: float, hi_s) -> range:
        lo, hi = _offsets(lo_s, hi_s, self.trace.dt)
        start = i + lo
        stop = self.n - 1 if hi is None else min(i + hi, self.n - 1)
        if start > stop or start > self.n - 1:
            raise HorizonError(
                f"temporal window [{lo_s}, {hi_s}] is empty at scene {i} "
                f"on a {self.n}-scene trace"
            )
        return range(start, stop + 1)

    def record(self, f: Formula, i: int) -> int:
        key = (id(f), i)
        hit = self.tape.formula_nodes.get(key)
        if hit is not None:
            return hit

        if isinstance(f, Prop):
            ops = tuple(self.input_node(i, nm) for nm, _ in f.expr.terms)
            coeffs = tuple(c for _, c in f.expr.terms)
            base = self.affine(ops, coeffs, f.expr.const)
            if f.op in (">", ">="):
                nid = base
            elif f.op in ("<", "<="):
                nid = self.affine((base,), (-1.0,), 0.0)
            elif f.op == "!=":
                b = self.tape.nodes[base].value
                nid = self.emit(Node("abs", operands=(base,), value=abs(b)))
            elif f.op == "==":
                b = self.tape.nodes[base].value
                ab = self.emit(Node("abs", operands=(base,), value=abs(b)))
                nid = self.affine((ab,), (-1.0,), 0.0)
            else:
                raise ValueError(f"unknown comparator {f.op}")
        elif isinstance(f, Not):
            nid = self.affine((self.record(f.child, i),), (-1.0,), 0.0)
        elif isinstance(f, And):
            nid = self.smin(tuple(self.record(c, i) for c in f.children))
        elif isinstance(f, Or):
            nid = self.smax(tuple(self.record(c, i) for c in f.children))
        elif isinstance(f, Always):
            win = self.window(i, f.lo, f.hi)
            nid = self.smin(tuple(self.record(f.child, j) for j in win))
        elif isinstance(f, Eventually):
            win = self.window(i, f.lo, f.hi)
            nid = self.smax(tuple(self.record(f.child, j) for j in win))
        elif isinstance(f, Until):
            win = self.window(i, f.lo, f.hi)
            left = {}
            pairs = []
            for t1 in win:
                for j in range(i, t1 + 1):
                    if j not in left:
                        left[j] = self.record(f.left, j)
                inner = self.smin(tuple(left[j] for j in range(i, t1 + 1)))
                pairs.append(self.smin((self.record(f.right, t1), inner)))
            nid = self.smax(tuple(pairs))
        else:
            raise TypeError(f"not a formula node: {f!r}")

        self.tape.formula_nodes[key] = nid
        return nid


def forward_record(formula: Formula, trace, a: float = 10.0, t: float = 0.0):
    """Record the smooth evaluation of ``formula`` at timestep ``t``.

    Returns (smooth robustness value, tape).
    """
    if a <= 0:
        raise ValueError("sharpness a must be positive")
    _check_resolved(formula, trace)
    rec = _Recorder(trace, a)
    out = rec.record(formula, trace.index_of(t))
    rec.tape.output = out
    return rec.tape.nodes[out].value, rec.tape


# ---------------------------------------------------------------------------
# backward sweep


def node_adjoints(tape: Tape) -> np.ndarray:
    """d(output)/d(node value) for every tape node."""
    adj = np.zeros(len(tape.nodes))
    adj[tape.output] = 1.0
    a = tape.a
    for i in range(len(tape.nodes) - 1, -1, -1):
        g = adj[i]
        if g == 0.0:
            continue
        n = tape.nodes[i]
        if n.kind == "input":
            continue
        if n.kind == "affine":
            for c, op in zip(n.coeffs, n.operands):
                adj[op] += c * g
        elif n.kind == "abs":
            x = tape.nodes[n.operands[0]].value
            # subgradient 0 at the kink
            adj[n.operands[0]] += g * (1.0 if x > 0 else -1.0 if x < 0 else 0.0)
        elif n.kind == "smin":
            x = np.array([tape.nodes[j].value for j in n.operands])
            w = np.exp(-a * (x - x.min()))
            w /= w.sum()
            for wj, op in zip(w, n.operands):
                adj[op] += wj * g
        elif n.kind == "smax":
            x = np.array([tape.nodes[j].value for j in n.operands])
            w = np.exp(a * (x - x.max()))
            w /= w.sum()
            for wj, op in zip(w, n.operands):
                adj[op] += wj * g
        else:
            raise ValueError(f"unknown node kind {n.kind}")
    return adj


def backward(tape: Tape) -> GradientMap:
    """Gradient of the recorded smooth robustness w.r.t. every trace sample
    the formula touched."""
    adj = node_adjoints(tape)
    out = GradientMap()
    for key, nid in tape.inputs.items():
        out[key] = float(adj[nid])
    return out


# ---------------------------------------------------------------------------
# independent closed form for Until partials (test oracle)


def _softmin_weights(x: np.ndarray, a: float) -> np.ndarray:
    w = np.exp(-a * (x - x.min()))
    return w / w.sum()


def closed_form_until_partial(
    f1: Formula,
    f2: Formula,
    interval,
    trace,
    t: float,
    t_prime: float,
    which: str,
    a: float = 10.0,
) -> float:
    """Partial derivative of the smooth Until value at ``t`` w.r.t. the
    smooth value of one operand formula at ``t_prime``.

    Written directly from the nested softmax/softmin decomposition rather
    than from the tape, so it can cross-check the reverse sweep.
    ``which`` selects the operand: "phi1" (the invariant side) or "phi2"
    (the trigger side).
    """
    if which not in ("phi1", "phi2"):
        raise ValueError("which must be 'phi1' or 'phi2'")
    lo_s, hi_s = interval
    i = trace.index_of(t)
    ip = trace.index_of(t_prime)
    n = len(trace.times)
    lo, hi = _offsets(lo_s, hi_s, trace.dt)
    start = i + lo
    stop = n - 1 if hi is None else min(i + hi, n - 1)
    if start > stop or start > n - 1:
        raise HorizonError("empty Until window")

    left = smooth_series(f1, trace, a)
    right = smooth_series(f2, trace, a)

    window = list(range(start, stop + 1))
    inners = []
    inner_w = {}
    pairs = []
    pair_w = []
    for t1 in window:
        seg = left[i : t1 + 1]
        wseg = _softmin_weights(seg, a)
        m = seg.min()
        inner = m - math.log(np.exp(-a * (seg - m)).sum()) / a
        inners.append(inner)
        inner_w[t1] = wseg
        pv = np.array([right[t1], inner])
        pw = _softmin_weights(pv, a)
        m2 = pv.min()
        pairs.append(m2 - math.log(np.exp(-a * (pv - m2)).sum()) / a)
        pair_w.append(pw)
    pairs = np.array(pairs)
    outer = np.exp(a * (pairs - pairs.max()))
    outer /= outer.sum()

    total = 0.0
    for idx, t1 in enumerate(window):
        if which == "phi2":
            if t1 == ip:
                total += outer[idx] * pair_w[idx][0]
        else:
            if i <= ip <= t1:
                total += outer[idx] * pair_w[idx][1] * inner_w[t1][ip - i]
    return float(total)
