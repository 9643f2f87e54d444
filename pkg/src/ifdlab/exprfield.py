"""Analytic expressions of (x, t) for environment and strategy inputs.

Grammar (EBNF)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = "-" , unary | power ;
    power   = primary , [ "^" , unary ] ;          (* right-associative *)
    primary = number
            | name , "(" , expr , { "," , expr } , ")"
            | name
            | "(" , expr , ")" ;
    number  = digits , [ "." , [ digits ] ] , [ exponent ]
            | "." , digits , [ exponent ] ;
    exponent = ("e" | "E") , [ "+" | "-" ] , digits ;

Names are the variables ``x`` and ``t``, the constants ``pi`` and ``e``,
the functions listed in ``FUNCTIONS`` and free parameters bound at
evaluation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

VARIABLES = ("x", "t")
CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> (arity, scalar implementation, array implementation)
FUNCTIONS = {
    "sin": (1, math.sin, np.sin),
    "cos": (1, math.cos, np.cos),
    "exp": (1, math.exp, np.exp),
    "log": (1, math.log, np.log),
    "abs": (1, abs, np.abs),
    "tanh": (1, math.tanh, np.tanh),
    "min": (2, min, np.minimum),
    "max": (2, max, np.maximum),
}

BINARY_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
UNARY_PREC = 3
ATOM_PREC = 5


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f"; expected one of: {', '.join(self.expected)}"
        super().__init__(detail)


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int, known: Iterable[str]):
        self.name = name
        self.offset = offset
        self.known = tuple(sorted(known))
        super().__init__(
            f"unknown identifier {name!r} at offset {offset}; known names: {', '.join(self.known)}"
        )


class UnboundParameterError(ExprError):
    def __init__(self, names: Iterable[str]):
        self.names = tuple(sorted(names))
        super().__init__(f"unbound parameter(s): {', '.join(self.names)}")


class NonFiniteError(ExprError):
    def __init__(self, subexpr: str, value: float | None = None):
        self.subexpr = subexpr
        self.value = value
        super().__init__(f"non-finite result in subexpression {subexpr!r}")


# --- syntax tree -----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0):
            raise ValueError("numeric literals are finite and non-negative")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Const, Param, Neg, BinOp, Call]


# --- tokenizer -------------------------------------------------------------

_PUNCT = set("+-*/^(),")


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "name", one of _PUNCT, or "end"
    text: str
    offset: int


def _describe(tok: _Tok) -> str:
    return "end of input" if tok.kind == "end" else repr(tok.text)


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
        elif c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
                else:
                    raise ExprSyntaxError("malformed exponent", k, ["digit"])
            toks.append(_Tok("num", source[i:j], i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            toks.append(_Tok("name", source[i:j], i))
            i = j
        elif c in _PUNCT:
            toks.append(_Tok(c, c, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    toks.append(_Tok("end", "", n))
    return toks


# --- parser ----------------------------------------------------------------

_PRIMARY_START = ["number", "name", "("]


class _Parser:
    def __init__(self, source: str, parameters):
        self.toks = _tokenize(source)
        self.pos = 0
        self.parameters = None if parameters is None else frozenset(parameters)

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def advance(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Tok:
        if self.tok.kind != kind:
            raise ExprSyntaxError(f"unexpected {_describe(self.tok)}", self.tok.offset, [kind])
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            expected = ["+", "-", "*", "/", "^", "end of input"]
            raise ExprSyntaxError(f"unexpected {_describe(self.tok)}", self.tok.offset, expected)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.tok.kind == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "(":
            self.advance()
            node = self.expr()
            if self.tok.kind != ")":
                raise ExprSyntaxError(
                    f"unexpected {_describe(self.tok)}", self.tok.offset,
                    [")", "+", "-", "*", "/", "^"],
                )
            self.advance()
            return node
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "(":
                return self.call(tok)
            return self.name(tok)
        raise ExprSyntaxError(f"unexpected {_describe(tok)}", tok.offset, _PRIMARY_START + ["-"])

    def call(self, name_tok: _Tok) -> Expr:
        if name_tok.text not in FUNCTIONS:
            raise UnknownIdentifierError(name_tok.text, name_tok.offset, FUNCTIONS)
        arity = FUNCTIONS[name_tok.text][0]
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == ",":
            self.advance()
            args.append(self.expr())
        if self.tok.kind != ")":
            raise ExprSyntaxError(
                f"unexpected {_describe(self.tok)}", self.tok.offset,
                [")", ",", "+", "-", "*", "/", "^"],
            )
        close = self.advance()
        if len(args) != arity:
            raise ExprSyntaxError(
                f"{name_tok.text}() takes {arity} argument(s), got {len(args)}", close.offset
            )
        return Call(name_tok.text, tuple(args))

    def name(self, tok: _Tok) -> Expr:
        text = tok.text
        if text in VARIABLES:
            return Var(text)
        if text in CONSTANTS:
            return Const(text)
        if text in FUNCTIONS:
            raise ExprSyntaxError(f"function {text!r} used without arguments", self.tok.offset, ["("])
        if self.parameters is not None and text not in self.parameters:
            known = set(VARIABLES) | set(CONSTANTS) | self.parameters
            raise UnknownIdentifierError(text, tok.offset, known)
        return Param(text)


def parse(source: str, parameters: Iterable[str] | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    If ``parameters`` is given, any name that is not a variable, constant,
    function or listed parameter is rejected at parse time. Otherwise free
    names become parameters that must be bound when evaluating.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0, _PRIMARY_START + ["-"])
    return _Parser(source, parameters).parse()


# --- unparsing -------------------------------------------------------------


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return BINARY_PREC[e.op]
    if isinstance(e, Neg):
        return UNARY_PREC
    return ATOM_PREC


def unparse(e: Expr, minimal: bool = True) -> str:
    """Render a tree as source text that parses back to the same tree.

    With ``minimal=False`` every binary and unary operation is parenthesized.
    """
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, (Var, Const, Param)):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(unparse(a, minimal) for a in e.args)})"
    if isinstance(e, Neg):
        inner = unparse(e.operand, minimal)
        if not minimal:
            return f"(-{inner})"
        if _prec(e.operand) < UNARY_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    left = unparse(e.left, minimal)
    right = unparse(e.right, minimal)
    if not minimal:
        return f"({left} {e.op} {right})"
    p = BINARY_PREC[e.op]
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < UNARY_PREC:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def free_parameters(e: Expr) -> frozenset:
    if isinstance(e, Param):
        return frozenset([e.name])
    if isinstance(e, Neg):
        return free_parameters(e.operand)
    if isinstance(e, BinOp):
        return free_parameters(e.left) | free_parameters(e.right)
    if isinstance(e, Call):
        out = frozenset()
        for a in e.args:
            out |= free_parameters(a)
        return out
    return frozenset()


# --- evaluation ------------------------------------------------------------


def _check_bound(e: Expr, params: Mapping[str, float]) -> None:
    missing = free_parameters(e) - set(params)
    if missing:
        raise UnboundParameterError(missing)


def _eval(e: Expr, x: float, t: float, params: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x if e.name == "x" else t
    if isinstance(e, Const):
        return CONSTANTS[e.name]
    if isinstance(e, Param):
        return float(params[e.name])
    if isinstance(e, Neg):
        value = -_eval(e.operand, x, t, params)
    elif isinstance(e, Call):
        args = [_eval(a, x, t, params) for a in e.args]
        try:
            value = FUNCTIONS[e.func][1](*args)
        except (ValueError, OverflowError):
            raise NonFiniteError(unparse(e)) from None
    else:
        a = _eval(e.left, x, t, params)
        b = _eval(e.right, x, t, params)
        try:
            if e.op == "+":
                value = a + b
            elif e.op == "-":
                value = a - b
            elif e.op == "*":
                value = a * b
            elif e.op == "/":
                value = a / b
            else:
                value = math.pow(a, b)
        except (ZeroDivisionError, ValueError, OverflowError):
            raise NonFiniteError(unparse(e)) from None
    if not math.isfinite(value):
        raise NonFiniteError(unparse(e), value)
    return value


def evaluate(e: Expr, x: float, t: float, params: Mapping[str, float] | None = None) -> float:
    """Value of ``e`` at ``(x, t)`` in IEEE double arithmetic."""
    params = {} if params is None else params
    _check_bound(e, params)
    return _eval(e, float(x), float(t), params)


class _NonFiniteNode(Exception):
    def __init__(self, mask):
        self.mask = mask


def _eval_array(e: Expr, x: np.ndarray, t: np.ndarray, params) -> np.ndarray:
    shape = np.broadcast(x, t).shape
    if isinstance(e, Num):
        return np.full(shape, e.value)
    if isinstance(e, Var):
        return np.broadcast_to(x if e.name == "x" else t, shape).astype(float)
    if isinstance(e, Const):
        return np.full(shape, CONSTANTS[e.name])
    if isinstance(e, Param):
        return np.full(shape, float(params[e.name]))
    if isinstance(e, Neg):
        return -_eval_array(e.operand, x, t, params)
    if isinstance(e, Call):
        args = [_eval_array(a, x, t, params) for a in e.args]
        out = FUNCTIONS[e.func][2](*args)
    else:
        a = _eval_array(e.left, x, t, params)
        b = _eval_array(e.right, x, t, params)
        if e.op == "+":
            out = a + b
        elif e.op == "-":
            out = a - b
        elif e.op == "*":
            out = a * b
        elif e.op == "/":
            out = a / b
        else:
            out = np.power(a, b)
    ok = np.isfinite(out)
    if not ok.all():
        # stop at the innermost failing node, as the scalar evaluator does
        raise _NonFiniteNode(~ok)
    return out


def evaluate_array(e: Expr, x, t, params: Mapping[str, float] | None = None) -> np.ndarray:
    """Vectorized evaluation over broadcastable arrays ``x`` and ``t``.

    Any non-finite intermediate is re-evaluated pointwise so the error names
    the offending subexpression; the index of the first bad point is
    attached as ``err.index``.
    """
    params = {} if params is None else params
    _check_bound(e, params)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    try:
        with np.errstate(all="ignore"):
            return _eval_array(e, x, t, params)
    except _NonFiniteNode as bad:
        shape = bad.mask.shape
        idx = tuple(int(i) for i in np.unravel_index(int(np.argmax(bad.mask)), shape))
        xb = np.broadcast_to(x, shape)[idx]
        tb = np.broadcast_to(t, shape)[idx]
        try:
            _eval(e, float(xb), float(tb), params)
        except NonFiniteError as err:
            err.index = idx
            raise
        err = NonFiniteError(unparse(e))
        err.index = idx
        raise err from None


def compile_expr(source: str, parameters: Iterable[str] | None = None):
    """Parse once and return a vectorized callable ``f(x, t, params)``."""
    tree = parse(source, parameters)

    def f(x, t, params=None):
        return evaluate_array(tree, x, t, params)

    f.tree = tree
    return f
