"""Rule language for temporal constraints over vehicle traces.

A rule file is a sequence of named assignments::

    law46_2 = G (speed < 16.7);
    laws    = law46_2;            // last one named "laws" is the default top formula

Formulas combine linear comparisons over trace signals with boolean
connectives and interval-bounded temporal operators.  Both unicode and
ASCII spellings are accepted for every operator.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

TRUE_MAGNITUDE = 1e6  # robustness assigned to the literal `true`

COMPARATORS = ("<=", ">=", "==", "!=", "<", ">")


class SpecSyntaxError(ValueError):
    """Raised for any malformed rule text, with line/column context."""

    def __init__(self, message, line=None, col=None):
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


class UnknownSignalError(SpecSyntaxError):
    pass


# ---------------------------------------------------------------------------
# signal registry


@dataclass(frozen=True)
class SignalInfo:
    name: str
    kind: str  # "num" | "enum" | "bool"
    source: str  # "trajectory" | "environment" | "command"
    controllable: bool = False
    unit: str = ""
    enum_values: tuple[str, ...] = ()

    def code(self, literal: str) -> int:
        try:
            return self.enum_values.index(literal.upper())
        except ValueError:
            raise UnknownSignalError(
                f"{literal!r} is not a value of enum signal {self.name}"
            ) from None


_TL_COLORS = ("YELLOW", "GREEN", "RED", "BLACK")
_DIRECTIONS = ("FORWARD", "LEFT", "RIGHT")

# families are matched by prefix, e.g. "D(stopline)", "PriorityV(20)"
_FAMILIES = {
    "D(": dict(kind="num", source="trajectory", controllable=True, unit="m"),
    "Lane(": dict(kind="num", source="trajectory", controllable=True),
    "PriorityV(": dict(kind="bool", source="environment"),
    "PriorityP(": dict(kind="bool", source="environment"),
}

_COMMAND_SWITCHES = (
    "fogLight",
    "warningFlash",
    "highBeam",
    "lowBeam",
    "leftTurnSignal",
    "rightTurnSignal",
)


class SignalRegistry:
    """Vocabulary of trace signals: kind, provenance and controllability.

    Signals are either listed explicitly or derived from a family prefix
    (``D(``, ``Lane(``, ``PriorityV(``, ``PriorityP(``), so ``D(stopline)``
    and ``D(exit_ramp)`` resolve without prior registration.
    """

    def __init__(self):
        self._table: dict[str, SignalInfo] = {}

    def register(self, info: SignalInfo) -> None:
        self._table[info.name] = info

    def resolve(self, name: str) -> SignalInfo:
        info = self._table.get(name)
        if info is not None:
            return info
        for prefix, attrs in _FAMILIES.items():
            if name.startswith(prefix) and name.endswith(")") and len(name) > len(prefix) + 1:
                info = SignalInfo(name=name, **attrs)
                self._table[name] = info
                return info
        raise UnknownSignalError(f"unknown signal {name!r}")

    def has(self, name: str) -> bool:
        try:
            self.resolve(name)
            return True
        except UnknownSignalError:
            return False

    def is_controllable(self, name: str) -> bool:
        return self.resolve(name).controllable

    def enum_code(self, signal: str, literal: str) -> int:
        info = self.resolve(signal)
        if info.kind != "enum":
            raise UnknownSignalError(f"signal {signal!r} is not enum-kinded")
        return info.code(literal)

    def names(self):
        return list(self._table)


def default_registry() -> SignalRegistry:
    reg = SignalRegistry()
    reg.register(SignalInfo("speed", "num", "trajectory", controllable=True, unit="m/s"))
    reg.register(SignalInfo("acc", "num", "trajectory", controllable=True, unit="m/s^2"))
    reg.register(
        SignalInfo("direction", "enum", "trajectory", controllable=True, enum_values=_DIRECTIONS)
    )
    reg.register(SignalInfo("TL(color)", "enum", "environment", enum_values=_TL_COLORS))
    reg.register(SignalInfo("TL(blink)", "bool", "environment"))
    reg.register(SignalInfo("fog", "num", "environment"))
    reg.register(SignalInfo("snow", "num", "environment"))
    reg.register(SignalInfo("NPCAhead.speed", "num", "environment", unit="m/s"))
    reg.register(SignalInfo("NPCAhead.range", "num", "environment", unit="m"))
    for name in _COMMAND_SWITCHES:
        reg.register(SignalInfo(name, "bool", "command"))
    return reg


def enum_code(registry: SignalRegistry, signal: str, literal: str) -> int:
    return registry.enum_code(signal, literal)


# ---------------------------------------------------------------------------
# formula tree


@dataclass(frozen=True)
class LinExpr:
    """Linear expression sum(coef * signal) + const, canonically ordered."""

    terms: tuple[tuple[str, float], ...] = ()
    const: float = 0.0

    @staticmethod
    def of(signal: str) -> "LinExpr":
        return LinExpr(((signal, 1.0),), 0.0)

    @staticmethod
    def constant(value: float) -> "LinExpr":
        return LinExpr((), float(value))

    def _merged(self, other: "LinExpr", sign: float) -> "LinExpr":
        acc = dict(self.terms)
        for name, coef in other.terms:
            acc[name] = acc.get(name, 0.0) + sign * coef
        terms = tuple(sorted((n, c) for n, c in acc.items() if c != 0.0))
        return LinExpr(terms, self.const + sign * other.const)

    def __add__(self, other):
        return self._merged(other, 1.0)

    def __sub__(self, other):
        return self._merged(other, -1.0)

    def scaled(self, k: float) -> "LinExpr":
        return LinExpr(tuple((n, k * c) for n, c in self.terms), k * self.const)

    @property
    def signals(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.terms)

    def sole_signal(self):
        """The signal name if this is exactly 1.0 * signal, else None."""
        if not self.terms or len(self.terms) != 1 or self.const != 0.0:
            return None
        name, coef = self.terms[0]
        return name if coef == 1.0 else None

    def to_source(self) -> str:
        parts = []
        for name, coef in self.terms:
            if coef == 1.0:
                parts.append(("+ " if parts else "") + name)
            elif coef == -1.0:
                parts.append(("- " if parts else "-") + name)
            else:
                lead = "" if not parts else ("+ " if coef >= 0 else "- ")
                mag = coef if not parts else abs(coef)
                parts.append(f"{lead}{_fmt_num(mag)} * {name}")
        if self.const or not parts:
            lead = "" if not parts else ("+ " if self.const >= 0 else "- ")
            mag = self.const if not parts else abs(self.const)
            parts.append(f"{lead}{_fmt_num(mag)}")
        return " ".join(parts)


def _fmt_num(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


@dataclass(frozen=True)
class Formula:
    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True)
class Prop(Formula):
    """Atomic constraint `expr op 0`."""

    expr: LinExpr
    op: str  # one of COMPARATORS

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"bad comparator {self.op!r}")


@dataclass(frozen=True)
class Not(Formula):
    child: Formula


@dataclass(frozen=True)
class And(Formula):
    children: tuple[Formula, ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or(Formula):
    children: tuple[Formula, ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


def _check_interval(lo, hi):
    if lo < 0 or math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise ValueError(f"malformed interval [{lo}, {hi}]")


@dataclass(frozen=True)
class Always(Formula):
    lo: float
    hi: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Eventually(Formula):
    lo: float
    hi: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Until(Formula):
    lo: float
    hi: float
    left: Formula
    right: Formula

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


TRUE = Prop(LinExpr.constant(TRUE_MAGNITUDE), ">")
FALSE = Prop(LinExpr.constant(-TRUE_MAGNITUDE), ">")


def implies(antecedent: Formula, consequent: Formula) -> Formula:
    # `p -> q` is stored desugared
    return Or((Not(antecedent), consequent))


def referenced_signals(formula: Formula) -> set[str]:
    out: set[str] = set()
    _collect_signals(formula, out)
    return out


def _collect_signals(f: Formula, out: set[str]) -> None:
    if isinstance(f, Prop):
        out.update(f.expr.signals)
    elif isinstance(f, Not):
        _collect_signals(f.child, out)
    elif isinstance(f, (And, Or)):
        for c in f.children:
            _collect_signals(c, out)
    elif isinstance(f, (Always, Eventually)):
        _collect_signals(f.child, out)
    elif isinstance(f, Until):
        _collect_signals(f.left, out)
        _collect_signals(f.right, out)
    else:
        raise TypeError(f"not a formula node: {f!r}")


def contains_temporal(f: Formula) -> bool:
    if isinstance(f, (Always, Eventually, Until)):
        return True
    if isinstance(f, Prop):
        return False
    if isinstance(f, Not):
        return contains_temporal(f.child)
    if isinstance(f, (And, Or)):
        return any(contains_temporal(c) for c in f.children)
    raise TypeError(f"not a formula node: {f!r}")


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<name>[A-Za-z_]\w*(?:\.[A-Za-z_]\w*)?)
  | (?P<op>->|→|&&|\|\||==|!=|<=|>=|≤|≥|≠|[∧∨¬□◇⋄∞!<>=()\[\],;*+\-])
    """,
    re.VERBOSE,
)

_OP_CANON = {
    "∧": "&&",
    "∨": "||",
    "¬": "!",
    "→": "->",
    "≤": "<=",
    "≥": ">=",
    "≠": "!=",
    "□": "G",
    "◇": "F",
    "⋄": "F",
}


@dataclass
class _Token:
    kind: str  # "number" | "name" | "op" | "end"
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            canon = _OP_CANON.get(text, text)
            if canon in ("G", "F"):
                tokens.append(_Token("name", canon, line, col))
            else:
                tokens.append(_Token(kind, canon, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# parser


@dataclass
class Specification:
    """Named formulas from one rule file plus the designated top formula."""

    formulas: dict[str, Formula]
    top_name: str
    registry: SignalRegistry = field(default_factory=default_registry)

    @property
    def top(self) -> Formula:
        return self.formulas[self.top_name]

    def formula(self, name: str | None = None) -> Formula:
        if name is None:
            return self.top
        try:
            return self.formulas[name]
        except KeyError:
            raise KeyError(f"no formula named {name!r} in specification") from None

    def to_source(self) -> str:
        lines = [f"{name} = {to_source(f)};" for name, f in self.formulas.items()]
        return "\n".join(lines) + "\n"


class _Unknown:
    """Bare identifier that resolved to neither a signal nor a formula name.

    Kept around so `TL(color) == red` can resolve `red` against the enum
    on the other side of the comparison.
    """

    def __init__(self, name, token):
        self.name = name
        self.token = token


class _Parser:
    def __init__(self, tokens: list[_Token], registry: SignalRegistry, formulas=None):
        self.tokens = tokens
        self.i = 0
        self.registry = registry
        self.formulas = formulas if formulas is not None else {}

    # -- token helpers

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text!r}", tok)
        return tok

    def at(self, text: str) -> bool:
        return self.peek().text == text

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise SpecSyntaxError(msg, tok.line, tok.col)

    # -- statements

    def parse_spec(self) -> Specification:
        order = []
        while self.peek().kind != "end":
            name_tok = self.next()
            if name_tok.kind != "name":
                self.fail("expected a formula name", name_tok)
            name = name_tok.text
            if self.registry.has(name):
                self.fail(f"formula name {name!r} shadows a signal", name_tok)
            if name in self.formulas:
                self.fail(f"duplicate formula name {name!r}", name_tok)
            self.expect("=")
            formula = self.formula()
            self.expect(";")
            self.formulas[name] = formula
            order.append(name)
        if not order:
            raise SpecSyntaxError("specification is empty")
        top = "laws" if "laws" in self.formulas else order[-1]
        return Specification(self.formulas, top, self.registry)

    # -- formula grammar, loosest binding first

    def formula(self) -> Formula:
        left = self.or_expr()
        if self.at("->"):
            self.next()
            return implies(left, self.formula())
        return left

    def or_expr(self) -> Formula:
        parts = [self.and_expr()]
        while self.at("||"):
            self.next()
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def and_expr(self) -> Formula:
        parts = [self.until_expr()]
        while self.at("&&"):
            self.next()
            parts.append(self.until_expr())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def until_expr(self) -> Formula:
        left = self.unary()
        if self.peek().kind == "name" and self.peek().text == "U":
            self.next()
            lo, hi = self.interval_opt()
            right = self.until_expr()
            return Until(lo, hi, left, right)
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.text == "!":
            self.next()
            return Not(self.unary())
        if tok.kind == "name" and tok.text in ("G", "F"):
            self.next()
            lo, hi = self.interval_opt()
            child = self.unary()
            return Always(lo, hi, child) if tok.text == "G" else Eventually(lo, hi, child)
        return self.primary()

    def interval_opt(self):
        if not self.at("["):
            return 0.0, math.inf
        open_tok = self.expect("[")
        lo = self.number()
        self.expect(",")
        if self.at("∞") or (self.peek().kind == "name" and self.peek().text == "inf"):
            self.next()
            hi = math.inf
        else:
            hi = self.number()
        self.expect("]")
        try:
            _check_interval(lo, hi)
        except ValueError as exc:
            self.fail(str(exc), open_tok)
        return lo, hi

    def number(self) -> float:
        sign = 1.0
        if self.at("-"):
            self.next()
            sign = -1.0
        tok = self.next()
        if tok.kind != "number":
            self.fail("expected a number", tok)
        return sign * float(tok.text)

    def primary(self) -> Formula:
        tok = self.peek()
        if tok.text == "(":
            # could be a parenthesized formula; comparisons handle their own atoms
            self.next()
            inner = self.formula()
            self.expect(")")
            return inner
        if tok.kind == "name":
            if tok.text == "true":
                self.next()
                return TRUE
            if tok.text == "false":
                self.next()
                return FALSE
            if tok.text in self.formulas:
                self.next()
                return self.formulas[tok.text]
        return self.comparison()

    def comparison(self) -> Formula:
        first_tok = self.peek()
        lhs = self.additive()
        if self.peek().text not in COMPARATORS and not self.at("="):
            # bare atom: only boolean signals stand alone
            if isinstance(lhs, _Unknown):
                self.fail(f"unknown signal {lhs.name!r}", lhs.token)
            name = lhs.sole_signal()
            if name is not None and self.registry.resolve(name).kind == "bool":
                return Prop(lhs, ">")
            self.fail("expected a comparison", first_tok)
        chain = [lhs]
        ops = []
        while self.peek().text in COMPARATORS or self.at("="):
            op = self.next().text
            ops.append("==" if op == "=" else op)
            chain.append(self.additive())
        props = []
        for left, op, right in zip(chain, ops, chain[1:]):
            props.append(self._prop(left, op, right))
        return props[0] if len(props) == 1 else And(tuple(props))

    def _prop(self, left, op, right) -> Prop:
        left, right = self._resolve_enum_pair(left, op, right)
        return Prop(left - right, op)

    def _resolve_enum_pair(self, left, op, right):
        # one side may be an enum literal for the enum signal on the other side
        if isinstance(left, _Unknown) and isinstance(right, _Unknown):
            self.fail(f"unknown signal {left.name!r}", left.token)
        for a, b, flip in ((left, right, False), (right, left, True)):
            if isinstance(b, _Unknown):
                name = a.sole_signal() if isinstance(a, LinExpr) else None
                info = self.registry.resolve(name) if name else None
                if info is None or info.kind != "enum":
                    self.fail(f"unknown signal {b.name!r}", b.token)
                try:
                    code = info.code(b.name)
                except UnknownSignalError as exc:
                    self.fail(str(exc), b.token)
                lit = LinExpr.constant(code)
                return (a, lit) if not flip else (lit, a)
        return left, right

    # -- linear arithmetic

    def additive(self):
        expr = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.term()
            if isinstance(expr, _Unknown) or isinstance(rhs, _Unknown):
                self.fail("enum literals cannot appear in arithmetic")
            expr = expr + rhs if op == "+" else expr - rhs
        return expr

    def term(self):
        expr = self.factor()
        while self.at("*"):
            self.next()
            rhs = self.factor()
            if isinstance(expr, _Unknown) or isinstance(rhs, _Unknown):
                self.fail("enum literals cannot appear in arithmetic")
            if not rhs.terms:
                expr = expr.scaled(rhs.const)
            elif not expr.terms:
                expr = rhs.scaled(expr.const)
            else:
                self.fail("only linear expressions are supported")
        return expr

    def factor(self):
        tok = self.peek()
        if tok.text == "-":
            self.next()
            inner = self.factor()
            if isinstance(inner, _Unknown):
                self.fail("enum literals cannot be negated", tok)
            return inner.scaled(-1.0)
        if tok.kind == "number":
            self.next()
            return LinExpr.constant(float(tok.text))
        if tok.kind == "name":
            return self.signal_atom()
        self.fail(f"unexpected token {tok.text!r}", tok)

    def signal_atom(self):
        tok = self.next()
        name = tok.text
        if self.at("("):
            self.next()
            arg = self.next()
            if arg.kind not in ("name", "number"):
                self.fail("expected a signal argument", arg)
            self.expect(")")
            name = f"{name}({arg.text})"
        if self.registry.has(name):
            return LinExpr.of(name)
        return _Unknown(name, tok)


def parse_spec(source: str, registry: SignalRegistry | None = None) -> Specification:
    """Parse a full rule file into a Specification."""
    registry = registry or default_registry()
    return _Parser(_tokenize(source), registry).parse_spec()


def parse_formula(source: str, registry: SignalRegistry | None = None) -> Formula:
    """Parse a single formula (no assignments, no trailing semicolon)."""
    registry = registry or default_registry()
    parser = _Parser(_tokenize(source), registry)
    formula = parser.formula()
    if parser.peek().kind != "end":
        parser.fail("trailing input after formula")
    return formula


# ---------------------------------------------------------------------------
# printing


def to_source(f: Formula) -> str:
    if isinstance(f, Prop):
        if f == TRUE:
            return "true"
        if f == FALSE:
            return "false"
        return f"{f.expr.to_source()} {f.op} 0"
    if isinstance(f, Not):
        return f"!({to_source(f.child)})"
    if isinstance(f, And):
        return " && ".join(f"({to_source(c)})" for c in f.children)
    if isinstance(f, Or):
        return " || ".join(f"({to_source(c)})" for c in f.children)
    if isinstance(f, Always):
        return f"G{_interval_src(f.lo, f.hi)} ({to_source(f.child)})"
    if isinstance(f, Eventually):
        return f"F{_interval_src(f.lo, f.hi)} ({to_source(f.child)})"
    if isinstance(f, Until):
        return f"({to_source(f.left)}) U{_interval_src(f.lo, f.hi)} ({to_source(f.right)})"
    raise TypeError(f"not a formula node: {f!r}")


def _interval_src(lo, hi):
    if lo == 0.0 and math.isinf(hi):
        return ""
    hi_s = "inf" if math.isinf(hi) else _fmt_num(hi)
    return f"[{_fmt_num(lo)},{hi_s}]"
