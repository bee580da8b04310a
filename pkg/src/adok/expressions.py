"""Symbolic expression trees for rate laws and concentration profiles.

Trees are built from constants, variables, the binary arithmetic operators
``+ - * /`` and the unary ``exp``.  They are immutable, hashable, and cheap
to copy, which lets the evolutionary search share subtrees freely.  All
evaluation follows IEEE double semantics: division by zero and overflow
produce ``inf``/``nan`` values that propagate to the caller instead of
raising, so that singular candidate models can be penalized rather than
crash a search.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "ADD",
    "SUB",
    "MUL",
    "DIV",
    "EXP",
    "BINARY_OPS",
    "UNARY_OPS",
    "OPERATOR_ARITY",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Param",
    "Expr",
    "ExprGrammar",
    "ParamTemplate",
    "ParseError",
    "profile_grammar",
    "rate_grammar",
    "evaluate",
    "complexity",
    "differentiate",
    "simplify",
    "constants",
    "extract_template",
    "template_from_skeleton",
    "substitute",
    "format_expr",
    "parse_expr",
    "compile_template",
    "compile_expr",
]

# Operator kinds.  Arity is fixed: the four arithmetic operators are binary,
# exp is the only unary special function.
ADD = "add"
SUB = "sub"
MUL = "mul"
DIV = "div"
EXP = "exp"

BINARY_OPS = (ADD, SUB, MUL, DIV)
UNARY_OPS = (EXP,)
OPERATOR_ARITY = {ADD: 2, SUB: 2, MUL: 2, DIV: 2, EXP: 1}

_OP_SYMBOL = {ADD: "+", SUB: "-", MUL: "*", DIV: "/"}


@dataclass(frozen=True)
class Const:
    """Numeric leaf; ``value`` is a double-precision real."""

    value: float
    size: int = field(default=1, init=False, repr=False, compare=False)


@dataclass(frozen=True)
class Var:
    """Variable leaf referring to slot ``index`` of the owning grammar."""

    index: int
    size: int = field(default=1, init=False, repr=False, compare=False)


@dataclass(frozen=True)
class Param:
    """Indexed parameter slot; appears only inside :class:`ParamTemplate`."""

    index: int
    size: int = field(default=1, init=False, repr=False, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"
    size: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary operator {self.op!r}")
        object.__setattr__(self, "size", 1 + self.child.size)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    size: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {self.op!r}")
        object.__setattr__(self, "size", 1 + self.left.size + self.right.size)


Expr = Union[Const, Var, Param, Unary, Binary]


@dataclass(frozen=True)
class ExprGrammar:
    """Construction rules for a family of expressions.

    ``operators`` is the allowed operator subset, ``variables`` the ordered
    variable names, ``constant_range`` the closed interval new constants are
    sampled from, and ``complexity_cap`` the maximum node count.
    """

    operators: tuple[str, ...]
    variables: tuple[str, ...]
    constant_range: tuple[float, float] = (-10.0, 10.0)
    complexity_cap: int = 25

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "variables", tuple(self.variables))
        for op in self.operators:
            if op not in OPERATOR_ARITY:
                raise ValueError(f"unknown operator {op!r}")
        if not self.variables:
            raise ValueError("grammar needs at least one variable")
        lo, hi = self.constant_range
        if not lo <= hi:
            raise ValueError("constant_range lower bound exceeds upper bound")
        if self.complexity_cap < 1:
            raise ValueError("complexity_cap must be >= 1")

    @property
    def binary_operators(self) -> tuple[str, ...]:
        return tuple(op for op in self.operators if OPERATOR_ARITY[op] == 2)

    @property
    def unary_operators(self) -> tuple[str, ...]:
        return tuple(op for op in self.operators if OPERATOR_ARITY[op] == 1)


def profile_grammar(complexity_cap: int = 15) -> ExprGrammar:
    """Grammar for concentration-vs-time profiles: {+,-,*,/,exp} over t."""
    return ExprGrammar((ADD, SUB, MUL, DIV, EXP), ("t",), complexity_cap=complexity_cap)


def rate_grammar(species: Sequence[str], complexity_cap: int = 25) -> ExprGrammar:
    """Grammar for rate laws: {+,-,*,/} over the species concentrations."""
    return ExprGrammar((ADD, SUB, MUL, DIV), tuple(species), complexity_cap=complexity_cap)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(expr: Expr, bindings: Sequence[float]) -> float:
    """Evaluate ``expr`` at the given variable values.

    Non-finite intermediates (division by zero, exp overflow) are carried
    through as IEEE ``inf``/``nan`` and returned, never raised.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return float(bindings[expr.index])
    if isinstance(expr, Param):
        raise ValueError("parameter slot encountered; substitute a theta first")
    if isinstance(expr, Unary):
        v = evaluate(expr.child, bindings)
        try:
            return math.exp(v)
        except OverflowError:
            return math.inf
        except ValueError:  # exp(nan)
            return math.nan
    a = evaluate(expr.left, bindings)
    b = evaluate(expr.right, bindings)
    op = expr.op
    if op == ADD:
        return a + b
    if op == SUB:
        return a - b
    if op == MUL:
        return a * b
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or a != a:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def complexity(expr: Expr) -> int:
    """Node count of the tree (each leaf and operator counts once)."""
    return expr.size


# ---------------------------------------------------------------------------
# Calculus and rewriting


def differentiate(expr: Expr, var: int) -> Expr:
    """Exact symbolic derivative with respect to variable slot ``var``."""
    return simplify(_diff(expr, var))


def _diff(expr: Expr, var: int) -> Expr:
    if isinstance(expr, (Const, Param)):
        return Const(0.0)
    if isinstance(expr, Var):
        return Const(1.0) if expr.index == var else Const(0.0)
    if isinstance(expr, Unary):
        return Binary(MUL, _diff(expr.child, var), expr)
    dl = _diff(expr.left, var)
    dr = _diff(expr.right, var)
    if expr.op == ADD:
        return Binary(ADD, dl, dr)
    if expr.op == SUB:
        return Binary(SUB, dl, dr)
    if expr.op == MUL:
        return Binary(ADD, Binary(MUL, dl, expr.right), Binary(MUL, expr.left, dr))
    num = Binary(SUB, Binary(MUL, dl, expr.right), Binary(MUL, expr.left, dr))
    return Binary(DIV, num, Binary(MUL, expr.right, expr.right))


def _is_const(expr: Expr, value: float | None = None) -> bool:
    if not isinstance(expr, Const):
        return False
    return value is None or expr.value == value


def simplify(expr: Expr) -> Expr:
    """Conservative simplification: constant folding plus identity rules.

    Only ``x+0``, ``0+x``, ``x-0``, ``x*1``, ``1*x``, ``x*0``, ``0*x`` and
    ``x/1`` are rewritten, and two-constant arithmetic is folded when the
    result is finite.  No algebraic rearrangement is attempted, so node
    counts (and hence complexity rankings) stay meaningful.
    """
    if isinstance(expr, (Const, Var, Param)):
        return expr
    if isinstance(expr, Unary):
        child = simplify(expr.child)
        return expr if child is expr.child else Unary(expr.op, child)
    left = simplify(expr.left)
    right = simplify(expr.right)
    op = expr.op
    if isinstance(left, Const) and isinstance(right, Const):
        folded = evaluate(Binary(op, left, right), ())
        if math.isfinite(folded):
            return Const(folded)
    if op == ADD:
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif op == SUB:
        if _is_const(right, 0.0):
            return left
    elif op == MUL:
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return Const(0.0)
    elif op == DIV:
        if _is_const(right, 1.0):
            return left
    if left is expr.left and right is expr.right:
        return expr
    return Binary(op, left, right)


# ---------------------------------------------------------------------------
# Parameter templates


@dataclass(frozen=True)
class ParamTemplate:
    """Expression skeleton whose constant leaves are indexed slots.

    Slot order is depth-first left-to-right, so a parameter vector keeps its
    meaning across serialization round-trips.
    """

    skeleton: Expr
    dimension: int

    @property
    def complexity(self) -> int:
        return self.skeleton.size


def constants(expr: Expr) -> list[float]:
    """Constant leaf values in depth-first left-to-right order."""
    out: list[float] = []

    def walk(node: Expr) -> None:
        if isinstance(node, Const):
            out.append(node.value)
        elif isinstance(node, Unary):
            walk(node.child)
        elif isinstance(node, Binary):
            walk(node.left)
            walk(node.right)

    walk(expr)
    return out


def template_from_skeleton(skeleton: Expr) -> ParamTemplate:
    """Wrap a hand-written skeleton whose ``Param`` slots may repeat."""
    seen: set[int] = set()

    def walk(node: Expr) -> None:
        if isinstance(node, Param):
            seen.add(node.index)
        elif isinstance(node, Unary):
            walk(node.child)
        elif isinstance(node, Binary):
            walk(node.left)
            walk(node.right)

    walk(skeleton)
    dimension = max(seen) + 1 if seen else 0
    if seen != set(range(dimension)):
        raise ValueError("parameter slots must be numbered contiguously from p1")
    return ParamTemplate(skeleton, dimension)


def extract_template(expr: Expr) -> ParamTemplate:
    """Replace every constant leaf by an indexed parameter slot."""
    counter = [0]

    def walk(node: Expr) -> Expr:
        if isinstance(node, Const):
            slot = Param(counter[0])
            counter[0] += 1
            return slot
        if isinstance(node, (Var, Param)):
            return node
        if isinstance(node, Unary):
            return Unary(node.op, walk(node.child))
        return Binary(node.op, walk(node.left), walk(node.right))

    skeleton = walk(expr)
    return ParamTemplate(skeleton, counter[0])


def substitute(template: ParamTemplate, theta: Sequence[float]) -> Expr:
    """Instantiate a template with a parameter vector of matching length."""
    if len(theta) != template.dimension:
        raise ValueError(
            f"theta has length {len(theta)}, template expects {template.dimension}"
        )

    def walk(node: Expr) -> Expr:
        if isinstance(node, Param):
            return Const(float(theta[node.index]))
        if isinstance(node, (Const, Var)):
            return node
        if isinstance(node, Unary):
            return Unary(node.op, walk(node.child))
        return Binary(node.op, walk(node.left), walk(node.right))

    return walk(template.skeleton)


# ---------------------------------------------------------------------------
# Canonical text form

_PRECEDENCE = {ADD: 1, SUB: 1, MUL: 2, DIV: 2}


def _format_number(v: float) -> str:
    if v == int(v) and abs(v) <= 1e16:
        return str(int(v))
    return repr(v)


def format_expr(expr: Expr, variables: Sequence[str]) -> str:
    """Canonical infix rendering; ``parse_expr`` inverts it exactly.

    Equal-precedence right operands are always parenthesized so that the
    default left associativity of the parser reproduces the tree structure.
    Negative constants are parenthesized except at the start of a
    (sub)expression.
    """

    def prec(node: Expr) -> int:
        return _PRECEDENCE[node.op] if isinstance(node, Binary) else 3

    def render(node: Expr, leftmost: bool) -> str:
        if isinstance(node, Const):
            text = _format_number(node.value)
            if node.value < 0 and not leftmost:
                return f"({text})"
            return text
        if isinstance(node, Var):
            return variables[node.index]
        if isinstance(node, Param):
            return f"p{node.index + 1}"
        if isinstance(node, Unary):
            return f"exp({render(node.child, True)})"
        p = _PRECEDENCE[node.op]
        left = render(node.left, leftmost)
        if prec(node.left) < p:
            left = f"({left})"
        right = render(node.right, False)
        if prec(node.right) <= p:
            right = f"({right})"
        return f"{left}{_OP_SYMBOL[node.op]}{right}"

    return render(expr, True)


class ParseError(ValueError):
    """Malformed expression text; carries the character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", pos)
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


_PARAM_NAME_RE = re.compile(r"^p([1-9]\d*)$")


def parse_expr(text: str, grammar: ExprGrammar) -> Expr:
    """Parse infix text into a tree over ``grammar``'s variables.

    Identifiers ``p1, p2, ...`` denote parameter slots (unless shadowed by a
    grammar variable of the same name), so template skeletons round-trip too.
    Raises :class:`ParseError` with the offending offset for malformed input
    or unknown identifiers.
    """
    tokens = _tokenize(text)
    var_index = {name: i for i, name in enumerate(grammar.variables)}
    idx = [0]

    def peek() -> tuple[str, str, int]:
        return tokens[idx[0]]

    def advance() -> tuple[str, str, int]:
        tok = tokens[idx[0]]
        idx[0] += 1
        return tok

    def expect(op: str) -> None:
        kind, value, pos = peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", pos)
        advance()

    def parse_sum() -> Expr:
        node = parse_term()
        while True:
            kind, value, _ = peek()
            if kind == "op" and value in "+-":
                advance()
                rhs = parse_term()
                node = Binary(ADD if value == "+" else SUB, node, rhs)
            else:
                return node

    def parse_term() -> Expr:
        node = parse_primary()
        while True:
            kind, value, _ = peek()
            if kind == "op" and value in "*/":
                advance()
                rhs = parse_primary()
                node = Binary(MUL if value == "*" else DIV, node, rhs)
            else:
                return node

    def parse_primary() -> Expr:
        kind, value, pos = advance()
        if kind == "num":
            return Const(float(value))
        if kind == "op" and value == "-":
            inner_kind, inner_value, _ = peek()
            if inner_kind == "num":
                advance()
                return Const(-float(inner_value))
            return Binary(SUB, Const(0.0), parse_primary())
        if kind == "op" and value == "(":
            node = parse_sum()
            expect(")")
            return node
        if kind == "name":
            if value == "exp":
                expect("(")
                child = parse_sum()
                expect(")")
                return Unary(EXP, child)
            if value in var_index:
                return Var(var_index[value])
            m = _PARAM_NAME_RE.match(value)
            if m:
                return Param(int(m.group(1)) - 1)
            raise ParseError(f"unknown identifier {value!r}", pos)
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected token {value!r}", pos)

    node = parse_sum()
    kind, value, pos = peek()
    if kind != "end":
        raise ParseError(f"trailing input {value!r}", pos)
    return node


# ---------------------------------------------------------------------------
# Compilation to numpy callables

_NP_ENV = {"np": np, "__builtins__": {}}


def _codegen(node: Expr, theta_name: str) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Param):
        return f"{theta_name}[{node.index}]"
    if isinstance(node, Unary):
        return f"np.exp({_codegen(node.child, theta_name)})"
    left = _codegen(node.left, theta_name)
    right = _codegen(node.right, theta_name)
    return f"({left}{_OP_SYMBOL[node.op]}{right})"


def compile_template(template: ParamTemplate, n_vars: int) -> Callable:
    """Compile a template into ``f(theta, x0, x1, ...) -> ndarray``.

    The returned callable broadcasts over array-valued variable columns.
    Callers are expected to run it inside ``np.errstate`` suppression; the
    fitting and integration layers do.
    """
    args = ", ".join(["theta"] + [f"x{i}" for i in range(n_vars)])
    src = f"lambda {args}: {_codegen(template.skeleton, 'theta')}"
    return eval(src, dict(_NP_ENV))  # noqa: S307 - generated from our own AST


def compile_expr(expr: Expr, n_vars: int) -> Callable:
    """Compile a fully-instantiated expression into ``f(x0, x1, ...)``."""
    template = ParamTemplate(expr, 0)
    inner = compile_template(template, n_vars)
    return lambda *cols: inner((), *cols)
