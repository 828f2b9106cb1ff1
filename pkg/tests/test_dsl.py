"""Rule-language parsing, printing and the signal registry."""

import math

import pytest

from stlenforce.dsl import (
    And,
    Always,
    Eventually,
    LinExpr,
    Not,
    Or,
    Prop,
    SpecSyntaxError,
    TRUE,
    UnknownSignalError,
    Until,
    default_registry,
    parse_formula,
    parse_spec,
    to_source,
)

ROUND_TRIP_CASES = [
    "speed < 16.7",
    "G (speed < 90)",
    "G[0,4] (acc >= -2)",
    "F[1,3] (TL(color) == GREEN)",
    "(speed > 2) U[0,5] (D(stopline) < 1)",
    "!(fog >= 0.5) || (fogLight && warningFlash)",
    "G ((8 * Lane(current) > 4) -> (speed < 4 + 0.15 * D(junction)))",
    "(speed < 5) && (speed > 1) && (acc != 0)",
    "G[0.5,2.5] (NPCAhead.range > 3 + 0.5 * speed)",
    "true U[0,2] (speed >= 0)",
]


@pytest.mark.parametrize("src", ROUND_TRIP_CASES)
def test_print_parse_round_trip(src):
    f = parse_formula(src)
    assert parse_formula(to_source(f)) == f


def test_round_trip_whole_rule_file(rules_text, rules_spec):
    reparsed = parse_spec(rules_spec.to_source())
    assert reparsed.formulas == rules_spec.formulas
    assert reparsed.top_name == rules_spec.top_name == "laws"


def test_unicode_and_ascii_spellings_agree():
    pairs = [
        ("□ (speed ≤ 10)", "G (speed <= 10)"),
        ("◇[0,2] (speed ≥ 3)", "F[0,2] (speed >= 3)"),
        ("¬(fog ≥ 1)", "!(fog >= 1)"),
        ("(speed < 5) ∧ (speed > 1)", "(speed < 5) && (speed > 1)"),
        ("(speed < 5) ∨ (speed > 1)", "(speed < 5) || (speed > 1)"),
        ("(fog ≥ 0.5) → fogLight", "(fog >= 0.5) -> fogLight"),
        ("speed ≠ 0", "speed != 0"),
        ("G[1,∞] fogLight", "G[1,inf] fogLight"),
    ]
    for uni, ascii_ in pairs:
        assert parse_formula(uni) == parse_formula(ascii_)


def test_implication_is_stored_desugared():
    f = parse_formula("(fog >= 0.5) -> fogLight")
    assert isinstance(f, Or)
    assert isinstance(f.children[0], Not)
    # right-associative: a -> b -> c == a -> (b -> c)
    g = parse_formula("(fog >= 1) -> (fog >= 0.5) -> fogLight")
    assert isinstance(g.children[1], Or)


def test_boolean_operator_precedence():
    f = parse_formula("(speed < 1) && (speed < 2) || (speed < 3)")
    assert isinstance(f, Or)
    assert isinstance(f.children[0], And)


def test_and_or_flatten_to_nary():
    f = parse_formula("(speed < 1) && (speed < 2) && (speed < 3)")
    assert isinstance(f, And) and len(f.children) == 3


def test_temporal_defaults_to_unbounded():
    f = parse_formula("G (speed < 5)")
    assert isinstance(f, Always) and f.lo == 0.0 and math.isinf(f.hi)
    g = parse_formula("(speed > 0) U (speed > 5)")
    assert isinstance(g, Until) and math.isinf(g.hi)


def test_enum_literal_resolves_against_either_side():
    a = parse_formula("TL(color) == RED")
    b = parse_formula("RED == TL(color)")
    reg = default_registry()
    code = float(reg.enum_code("TL(color)", "RED"))
    assert a == Prop(LinExpr.of("TL(color)") - LinExpr.constant(code), "==")
    # flipped operands keep the flipped expression
    assert b == Prop(LinExpr.constant(code) - LinExpr.of("TL(color)"), "==")


def test_chained_comparison_becomes_conjunction():
    f = parse_formula("0 < speed < 10")
    assert isinstance(f, And) and len(f.children) == 2
    assert all(isinstance(c, Prop) for c in f.children)


def test_bare_boolean_signal_is_an_atom():
    f = parse_formula("fogLight")
    assert f == Prop(LinExpr.of("fogLight"), ">")
    with pytest.raises(SpecSyntaxError):
        parse_formula("speed")  # numeric signals need a comparison


def test_linear_arithmetic_canonicalizes():
    f = parse_formula("2 * speed + 3 - speed < 1")
    assert f == Prop(LinExpr((("speed", 1.0),), 2.0), "<")
    g = parse_formula("speed - speed < 1")
    assert g.expr.terms == ()


def test_true_false_literals():
    assert parse_formula("true") == TRUE
    f = parse_formula("true U[0,2] (speed >= 0)")
    assert isinstance(f, Until) and f.left == TRUE


def test_top_formula_prefers_laws_then_last():
    spec = parse_spec("a = G (speed < 5); b = G (speed < 9);")
    assert spec.top_name == "b"
    spec = parse_spec("laws = G (speed < 5); b = G (speed < 9);")
    assert spec.top_name == "laws"
    with pytest.raises(KeyError):
        spec.formula("missing")


def test_named_formulas_substitute_inline():
    spec = parse_spec("slow = G (speed < 5); laws = slow && (fog < 1);")
    assert spec.top.children[0] == spec.formulas["slow"]


@pytest.mark.parametrize(
    "src",
    [
        "bogus < 5;",  # unknown signal
        "a = speed < 5; a = speed < 9;",  # duplicate name
        "a = speed < 5",  # missing semicolon
        "a = G[5,2] (speed < 5);",  # backwards interval
        "a = G[-1,2] (speed < 5);",  # negative lower bound
        "",  # empty file
        "speed = G (acc < 1);",  # name shadows a signal
        "a = speed * speed < 5;",  # nonlinear
        "a = TL(color) + 1 == GREEN;",  # enum literal in arithmetic
        "a = TL(color) == BLUE;",  # not an enum value
        "a = (speed < 5;",  # unbalanced paren
        "a = speed @ 5;",  # stray character
    ],
)
def test_malformed_sources_raise(src):
    with pytest.raises(SpecSyntaxError):
        parse_spec(src)


def test_parse_formula_rejects_trailing_input():
    with pytest.raises(SpecSyntaxError):
        parse_formula("speed < 5 speed")


def test_syntax_errors_carry_position():
    try:
        parse_spec("a = speed <\n 5 &&;")
    except SpecSyntaxError as e:
        assert e.line == 2
    else:
        pytest.fail("expected a syntax error")


def test_registry_families_resolve_on_demand():
    reg = default_registry()
    assert reg.resolve("D(stopline)").controllable
    assert reg.resolve("D(exit_ramp)").unit == "m"
    assert reg.resolve("Lane(current)").controllable
    assert not reg.resolve("PriorityP(20)").controllable
    assert not reg.resolve("fog").controllable
    with pytest.raises(UnknownSignalError):
        reg.resolve("Q(stopline)")
    with pytest.raises(UnknownSignalError):
        reg.enum_code("speed", "RED")


def test_enum_orders_are_stable():
    reg = default_registry()
    assert [reg.enum_code("TL(color)", c) for c in ("YELLOW", "GREEN", "RED", "BLACK")] == [0, 1, 2, 3]
    assert [reg.enum_code("direction", d) for d in ("FORWARD", "LEFT", "RIGHT")] == [0, 1, 2]


def test_comment_and_whitespace_tolerance():
    spec = parse_spec(
        """
        // a trailing comment
        slow = G (speed < 5);   // inline note
        laws = slow;
        """
    )
    assert isinstance(spec.top, Always)
