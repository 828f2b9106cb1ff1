"""Exact and smooth quantitative semantics against the reference
recursion, plus the documented equivalences."""

import math
import random

import numpy as np
import pytest

from stlenforce import laws
from stlenforce.dsl import (
    Always,
    And,
    Eventually,
    LinExpr,
    Not,
    Or,
    Prop,
    TRUE,
    Until,
    parse_formula,
)
from stlenforce.robustness import (
    HorizonError,
    RobustnessConfig,
    prefix_robustness,
    prefix_series,
    rho,
    rho_prefix,
    rho_smooth,
    robustness,
    robustness_series,
    smooth_robustness,
    smooth_series,
    smoothing_error_bound,
)
from stlenforce.trace import Trace

import oracles


def _rand_case(rng, depth=4, ops=oracles.NUM_OPS):
    n = rng.randint(3, 16)
    names = ("s0", "s1", "s2")
    tr = oracles.random_trace(rng, names, n)
    f = oracles.random_formula(rng, names, depth=depth, budget=n - 1, ops=ops)
    return f, tr


def test_highway_speed_margin_is_exact(highway_trace):
    f = parse_formula("G (speed < 90)")
    assert robustness(f, highway_trace) == 5.0


def test_junction_trace_sits_on_the_boundary(junction_trace):
    f = laws.traffic_light_law()
    assert robustness(f, junction_trace) == 0.0


def test_matches_reference_recursion_on_random_cases():
    rng = random.Random(411)
    for _ in range(200):
        f, tr = _rand_case(rng, ops=oracles.ALL_OPS)
        assert robustness(f, tr) == oracles.disc(f, tr)


def test_smooth_matches_reference_recursion():
    rng = random.Random(412)
    for _ in range(150):
        f, tr = _rand_case(rng)
        got = smooth_robustness(f, tr, a=10.0)
        want = oracles.soft(f, tr, 0, a=10.0)
        assert got == pytest.approx(want, abs=1e-9)


def test_de_morgan_is_exact():
    rng = random.Random(413)
    for _ in range(60):
        f1, tr = _rand_case(rng, depth=2)
        f2, _ = _rand_case(rng, depth=2)
        f2 = oracles.random_formula(rng, ("s0", "s1", "s2"), 2, len(tr) - 1)
        lhs = Not(And((f1, f2)))
        rhs = Or((Not(f1), Not(f2)))
        assert robustness(lhs, tr) == robustness(rhs, tr)


def test_eventually_equals_true_until():
    rng = random.Random(414)
    for _ in range(60):
        n = rng.randint(3, 12)
        tr = oracles.random_trace(rng, ("s0",), n)
        child = oracles.random_formula(rng, ("s0",), 1, 0)
        lo = rng.randint(0, n - 1)
        hi = rng.randint(lo, n - 1)
        ev = Eventually(lo * tr.dt, hi * tr.dt, child)
        un = Until(lo * tr.dt, hi * tr.dt, TRUE, child)
        assert robustness(ev, tr) == robustness(un, tr)


def test_prefix_monotone_for_always_only_formulas():
    rng = random.Random(415)

    def gen(depth, budget):
        if depth == 0 or rng.random() < 0.3:
            return oracles._random_prop(rng, ("s0", "s1"), oracles.NUM_OPS)
        kind = rng.choice(("and", "or", "G"))
        if kind == "G":
            lo = rng.randint(0, budget)
            hi = rng.randint(lo, budget)
            return Always(lo * 0.5, hi * 0.5, gen(depth - 1, budget - hi))
        kids = tuple(gen(depth - 1, budget) for _ in range(2))
        return And(kids) if kind == "and" else Or(kids)

    for _ in range(40):
        n = rng.randint(4, 14)
        tr = oracles.random_trace(rng, ("s0", "s1"), n)
        f = gen(3, 0)  # zero lookahead so every prefix is evaluable
        series = [prefix_robustness(f, tr, t) for t in tr.times]
        for a, b in zip(series, series[1:]):
            assert b <= a + 1e-12


def test_prefix_series_skips_short_prefixes(junction_trace):
    f = parse_formula("F[4,4] (speed < 5)")
    series = prefix_series(f, junction_trace)
    # prefixes shorter than the 4 s lookahead cannot be evaluated
    assert [t for t, _ in series] == [4.0, 6.0, 8.0]


def test_series_marks_unevaluable_positions(junction_trace):
    f = parse_formula("F[4,4] (speed < 5)")
    vals = robustness_series(f, junction_trace)
    assert np.isnan(vals[-2:]).all() and not np.isnan(vals[:-2]).any()
    with pytest.raises(HorizonError):
        robustness(f, junction_trace, t=8.0)


def test_horizon_error_when_window_starts_past_the_trace():
    tr = Trace([0.0, 0.5, 1.0], {"speed": [1.0, 2.0, 3.0]}, dt=0.5)
    with pytest.raises(HorizonError):
        robustness(parse_formula("F[2,3] (speed > 0)"), tr)
    with pytest.raises(HorizonError):
        smooth_robustness(parse_formula("G[2,2] (speed > 0)"), tr)


def test_interval_bounds_round_half_up_to_scene_offsets():
    # [0.74, 1.26] s at dt 0.5 -> scene offsets 1..3
    tr = Trace([0.0, 0.5, 1.0, 1.5, 2.0],
               {"s0": [100.0, 1.0, 2.0, 3.0, 100.0]}, dt=0.5)
    f = Always(0.74, 1.26, Prop(LinExpr.of("s0"), ">"))
    assert robustness(f, tr) == 1.0
    g = Eventually(0.74, 1.26, Prop(LinExpr.of("s0"), ">"))
    assert robustness(g, tr) == 3.0


def test_soft_extreme_of_equal_pair_is_log2_over_a():
    tr = Trace([0.0], {"s0": [0.0], "s1": [0.0]}, dt=1.0)
    f = Or((Prop(LinExpr.of("s0"), ">"), Prop(LinExpr.of("s1"), ">")))
    assert smooth_robustness(f, tr, a=10.0) == pytest.approx(math.log(2) / 10, abs=1e-15)
    g = And((Prop(LinExpr.of("s0"), ">"), Prop(LinExpr.of("s1"), ">")))
    assert smooth_robustness(g, tr, a=10.0) == pytest.approx(-math.log(2) / 10, abs=1e-15)


def test_smooth_error_within_both_bounds():
    rng = random.Random(416)
    for _ in range(80):
        f, tr = _rand_case(rng, ops=oracles.ALL_OPS)
        exact = robustness(f, tr)
        for a in (10.0, 20.0, 80.0):
            err = abs(smooth_robustness(f, tr, a=a) - exact)
            assert err <= smoothing_error_bound(f, tr, a=a) + 1e-9
            assert err <= oracles.error_bound(f, len(tr), tr.dt, a) + 1e-9


def test_bound_shrinks_with_sharpness(junction_trace):
    f = laws.traffic_light_law()
    bounds = [smoothing_error_bound(f, junction_trace, a=a) for a in (10, 20, 40, 80)]
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_evaluation_at_interior_timesteps(junction_trace):
    f = parse_formula("speed < 6")
    assert robustness(f, junction_trace, t=4.0) == pytest.approx(6 - 5.44)
    with pytest.raises(ValueError):
        robustness(f, junction_trace, t=3.0)  # off the scene grid


def test_operator_style_aliases_are_the_same_functions():
    assert rho is robustness
    assert rho_smooth is smooth_robustness
    assert rho_prefix is prefix_robustness
    smooth_series  # re-exported alongside robustness_series


def test_config_validation():
    with pytest.raises(ValueError):
        RobustnessConfig(a=0.0)
    with pytest.raises(ValueError):
        RobustnessConfig(theta=-0.1)
    with pytest.raises(ValueError):
        RobustnessConfig(dt=0.0)
    with pytest.raises(ValueError):
        smooth_robustness(parse_formula("speed < 5"),
                          Trace([0.0], {"speed": [1.0]}, dt=1.0), a=-1.0)
