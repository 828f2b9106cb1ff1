"""Sanity checks of the reference implementations against hand-worked
values, before they are trusted to judge the package."""

import math
import random

import pytest

from stlenforce.dsl import Always, Eventually, LinExpr, Or, Prop, Until
from stlenforce.trace import Trace

import oracles


def _lt(name, c):  # name < c
    return Prop(LinExpr.of(name) - LinExpr.constant(c), "<")


def _gt(name, c):
    return Prop(LinExpr.of(name) - LinExpr.constant(c), ">")


@pytest.fixture()
def tri():
    return Trace([0.0, 1.0, 2.0], {"speed": [3.0, 7.0, 5.0]}, dt=1.0)


def test_disc_always_is_min_of_margins(tri):
    # margins 10 - v: 7, 3, 5
    assert oracles.disc(Always(0.0, math.inf, _lt("speed", 10.0)), tri) == 3.0


def test_disc_eventually_is_max_of_margins(tri):
    # margins v - 6: -3, 1, -1
    assert oracles.disc(Eventually(0.0, math.inf, _gt("speed", 6.0)), tri) == 1.0


def test_disc_until_hand_case(tri):
    # left margins v-2: 1, 5, 3; right margins v-6: -3, 1, -1
    # t1=0: min(-3, 1) = -3; t1=1: min(1, 1) = 1; t1=2: min(-1, 1) = -1
    f = Until(0.0, math.inf, _gt("speed", 2.0), _gt("speed", 6.0))
    assert oracles.disc(f, tri) == 1.0


def test_disc_bounded_window_selects_scenes(tri):
    assert oracles.disc(Always(1.0, 2.0, _lt("speed", 10.0)), tri) == 3.0
    assert oracles.disc(Eventually(2.0, 2.0, _gt("speed", 6.0)), tri) == -1.0


def test_disc_comparator_margins(tri):
    eq = Prop(LinExpr.of("speed") - LinExpr.constant(7.0), "==")
    ne = Prop(LinExpr.of("speed") - LinExpr.constant(7.0), "!=")
    assert oracles.disc(eq, tri, 1) == 0.0
    assert oracles.disc(ne, tri, 0) == 4.0
    ge = Prop(LinExpr.of("speed") - LinExpr.constant(5.0), ">=")
    assert oracles.disc(ge, tri, 2) == 0.0


def test_empty_window_raises(tri):
    with pytest.raises(oracles.OracleHorizon):
        oracles.disc(Eventually(3.0, 5.0, _gt("speed", 0.0)), tri)
    with pytest.raises(oracles.OracleHorizon):
        oracles.disc(Always(2.0, 2.0, _lt("speed", 10.0)), tri, 1)


def test_soft_always_sits_just_under_exact(tri):
    v = oracles.soft(Always(0.0, math.inf, _lt("speed", 10.0)), tri)
    assert v < 3.0
    assert abs(v - 3.0) < 1e-8  # margins 3,5,7 are far apart at a=10


def test_softmax_of_two_zeros_is_log2_over_a():
    tr = Trace([0.0], {"s0": [0.0], "s1": [0.0]}, dt=1.0)
    f = Or((_gt("s0", 0.0), _gt("s1", 0.0)))
    got = oracles.soft(f, tr, 0, a=10.0)
    assert abs(got - math.log(2.0) / 10.0) < 1e-15


def test_central_diff_matches_softmin_weight(tri):
    f = Always(0.0, math.inf, _lt("speed", 10.0))
    # weight of the binding scene (speed 7, margin 3)
    w = 1.0 / (1.0 + math.exp(-40.0) + math.exp(-20.0))
    fd = oracles.central_diff(lambda tr: oracles.soft(f, tr), tri, 1.0, "speed")
    assert abs(fd - (-w)) < 1e-7


def test_exhaustive_best_turns_the_switch_on():
    tr = Trace(
        [0.0, 1.0],
        {"ph": [math.nan, math.nan]},
        dt=1.0,
        placeholder_names=("ph",),
    )
    f = Always(0.0, math.inf, Prop(LinExpr.of("ph"), ">"))
    assert oracles.exhaustive_best(f, tr) == 1.0


def test_error_bound_tight_on_flat_signals():
    tr = Trace([0.0, 1.0, 2.0], {"speed": [4.0, 4.0, 4.0]}, dt=1.0)
    f = Always(0.0, math.inf, _lt("speed", 10.0))
    err = abs(oracles.soft(f, tr) - oracles.disc(f, tr))
    bound = oracles.error_bound(f, 3, 1.0, 10.0)
    assert bound == pytest.approx(math.log(3.0) / 10.0, abs=1e-15)
    assert err <= bound + 1e-15
    assert bound - err < 1e-12  # equal margins make the bound tight


def test_random_cases_respect_budget_and_bound():
    rng = random.Random(20260815)
    names = ("s0", "s1", "s2")
    for _ in range(100):
        n = rng.randint(3, 12)
        tr = oracles.random_trace(rng, names, n)
        f = oracles.random_formula(rng, names, depth=4, budget=n - 1, ops=oracles.ALL_OPS)
        d = oracles.disc(f, tr)  # budget invariant: never raises at scene 0
        for a in (10.0, 40.0):
            s = oracles.soft(f, tr, 0, a)
            assert math.isfinite(s)
            assert abs(s - d) <= oracles.error_bound(f, n, tr.dt, a) + 1e-9
