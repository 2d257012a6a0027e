"""Field-definition DSL: parsing, unparsing and evaluation with exact derivatives.

Grammar (whitespace ignored, ``−`` accepted for ``-`` and ``·`` for ``*``)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | base ("^" ["-"] int)?
    base   := number | ident | "(" expr ")" | func "(" expr ")"
    func   := sin | cos | exp | tanh | sqrt | log

Identifiers are the state variables ``x1 .. xn`` and declared parameter
names.  Unary minus binds looser than ``^`` so ``-x1^2`` is ``-(x1^2)``.

Expressions compile to plain Python closures.  First derivatives come from
forward-mode dual arithmetic unrolled into straight-line code at compile time;
second derivatives run the same code on nested :class:`~gasflow.dual.Dual`
numbers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
import numpy as np

from gasflow import dual as _dual

FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt", "log")
_VAR_RE = re.compile(r"x([0-9]+)\Z")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ExprError(Exception):
    """Base class for DSL errors."""


class ParseError(ExprError):
    """Malformed source text.  ``offset`` is a byte offset into the UTF-8 source."""

    def __init__(self, message, offset=None, component=None):
        self.message = message
        self.offset = offset
        self.component = component
        super().__init__(self._render())

    def _render(self):
        parts = []
        if self.component is not None:
            parts.append(f"component {self.component}")
        if self.offset is not None:
            parts.append(f"byte {self.offset}")
        where = f" ({', '.join(parts)})" if parts else ""
        return f"{self.message}{where}"

    def with_component(self, index):
        self.component = index
        self.args = (self._render(),)
        return self


class UnknownIdentifierError(ParseError):
    pass


class ArityError(ParseError):
    pass


class DimensionError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the natural domain of a primitive."""

    def __init__(self, function, offset, point, detail=""):
        self.function = function
        self.offset = offset
        self.point = tuple(float(v) for v in point)
        msg = f"domain violation in {function} at byte {offset}, point {self.point}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    offset: int = 0


@dataclass(frozen=True)
class Var:
    index: int  # zero-based
    offset: int = 0


@dataclass(frozen=True)
class Param:
    name: str
    offset: int = 0


@dataclass(frozen=True)
class Neg:
    arg: object
    offset: int = 0


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object
    offset: int = 0


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int
    offset: int = 0


@dataclass(frozen=True)
class Call:
    func: str
    arg: object
    offset: int = 0


# ------------------------------------------------------------------------ parser

_SINGLE = {"+": "+", "-": "-", "−": "-", "*": "*", "·": "*", "/": "/",
           "^": "^", "(": "(", ")": ")", ",": ","}
_NUMBER_RE = re.compile(r"(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+\-]?[0-9]+)?")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _tokenize(src):
    tokens = []
    i = 0
    byte = 0
    while i < len(src):
        ch = src[i]
        if ch.isspace():
            byte += len(ch.encode("utf-8"))
            i += 1
            continue
        m = _NUMBER_RE.match(src, i)
        if m:
            tokens.append(("num", m.group(), byte))
        else:
            m = _NAME_RE.match(src, i)
            if m:
                tokens.append(("name", m.group(), byte))
            elif ch in _SINGLE:
                tokens.append((_SINGLE[ch], ch, byte))
                byte += len(ch.encode("utf-8"))
                i += 1
                continue
            else:
                raise ParseError(f"unexpected character {ch!r}", byte)
        byte += len(m.group().encode("utf-8"))
        i = m.end()
    tokens.append(("end", "", byte))
    return tokens


class _Parser:
    def __init__(self, src, dimension, params):
        self.tokens = _tokenize(src)
        self.pos = 0
        self.dimension = dimension
        self.params = set(params)

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            want = "end of input" if kind == "end" else repr(kind)
            got = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {want}, found {got}", tok[2])
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        self.take("end")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op, _, off = self.take()
            node = Bin(op, node, self.term(), off)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] in ("*", "/"):
            op, _, off = self.take()
            node = Bin(op, node, self.factor(), off)
        return node

    def factor(self):
        if self.peek()[0] == "-":
            off = self.take()[2]
            return Neg(self.factor(), off)
        node = self.base()
        if self.peek()[0] == "^":
            off = self.take()[2]
            sign = 1
            if self.peek()[0] == "-":
                self.take()
                sign = -1
            tok = self.peek()
            if tok[0] != "num" or not tok[1].isdigit():
                raise ParseError("exponent must be an integer literal", tok[2])
            self.take()
            node = Pow(node, sign * int(tok[1]), off)
            if self.peek()[0] == "^":
                raise ParseError("chained exponents need parentheses", self.peek()[2])
        return node

    def base(self):
        kind, text, off = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text), off)
        if kind == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            self.take()
            if self.peek()[0] == "(":
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {text!r}", off)
                self.take("(")
                args = [self.expr()]
                while self.peek()[0] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != 1:
                    raise ArityError(f"{text} takes 1 argument, got {len(args)}", off)
                return Call(text, args[0], off)
            if text in FUNCTIONS:
                raise ArityError(f"function {text} used without an argument", off)
            return self.identifier(text, off)
        if kind == "end":
            raise ParseError("unexpected end of input", off)
        raise ParseError(f"unexpected token {text!r}", off)

    def identifier(self, text, off):
        if text in self.params:
            return Param(text, off)
        m = _VAR_RE.match(text)
        if m:
            idx = int(m.group(1))
            if 1 <= idx <= self.dimension:
                return Var(idx - 1, off)
        raise UnknownIdentifierError(f"unknown identifier {text!r}", off)


def _check_params(params, dimension):
    params = tuple(params)
    for name in params:
        if not isinstance(name, str) or not _IDENT_RE.match(name):
            raise ExprError(f"invalid parameter name {name!r}")
        if name in FUNCTIONS or _VAR_RE.match(name):
            raise ExprError(f"parameter name {name!r} clashes with a reserved identifier")
    if len(set(params)) != len(params):
        raise ExprError("duplicate parameter names")
    if dimension < 0:
        raise DimensionError("dimension must be non-negative")
    return params


# ---------------------------------------------------------------------- unparse


def unparse_node(node):
    """Fully parenthesized source for an AST node."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return f"(-{unparse_node(node.arg)})"
    if isinstance(node, Bin):
        return f"({unparse_node(node.left)} {node.op} {unparse_node(node.right)})"
    if isinstance(node, Pow):
        return f"({unparse_node(node.base)}^{node.exponent})"
    if isinstance(node, Call):
        return f"{node.func}({unparse_node(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# -------------------------------------------------------------------- code gen


class _ValueEmitter:
    """Straight-line code for plain evaluation; one temporary per operation."""

    def __init__(self, params):
        self.params = params
        self.lines = []
        self.counter = 0

    def tmp(self, code):
        name = f"_v{self.counter}"
        self.counter += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def emit(self, node):
        if isinstance(node, Num):
            return repr(node.value)
        if isinstance(node, Var):
            return f"x[{node.index}]"
        if isinstance(node, Param):
            return f"p[{self.params.index(node.name)}]"
        if isinstance(node, Neg):
            return self.tmp(f"-{self.emit(node.arg)}")
        if isinstance(node, Bin):
            a = self.emit(node.left)
            b = self.emit(node.right)
            return self.tmp(f"{a} {node.op} {b}")
        if isinstance(node, Pow):
            return self.tmp(f"{self.emit(node.base)}**{node.exponent}")
        if isinstance(node, Call):
            return self.tmp(f"_{node.func}({self.emit(node.arg)})")
        raise TypeError(node)


class _JetEmitter:
    """Unrolls first-order dual arithmetic into straight-line float code.

    Each node yields a value temporary and a tangent list whose entries are
    code strings, or None for a structural zero.
    """

    def __init__(self, n, params):
        self.n = n
        self.params = params
        self.lines = []
        self.counter = 0

    def tmp(self, code):
        name = f"_t{self.counter}"
        self.counter += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def scaled(self, factor, tangent):
        return [None if d is None else self.tmp(f"{factor} * {d}") for d in tangent]

    def emit(self, node):
        n = self.n
        if isinstance(node, Num):
            return repr(node.value), [None] * n
        if isinstance(node, Var):
            tangent = [None] * n
            tangent[node.index] = "1.0"
            return f"x[{node.index}]", tangent
        if isinstance(node, Param):
            return f"p[{self.params.index(node.name)}]", [None] * n
        if isinstance(node, Neg):
            v, d = self.emit(node.arg)
            return self.tmp(f"-{v}"), [None if e is None else self.tmp(f"-{e}") for e in d]
        if isinstance(node, Bin):
            va, da = self.emit(node.left)
            vb, db = self.emit(node.right)
            op = node.op
            if op in "+-":
                v = self.tmp(f"{va} {op} {vb}")
                out = []
                for a, b in zip(da, db):
                    if a is None and b is None:
                        out.append(None)
                    elif b is None:
                        out.append(a)
                    elif a is None:
                        out.append(b if op == "+" else self.tmp(f"-{b}"))
                    else:
                        out.append(self.tmp(f"{a} {op} {b}"))
                return v, out
            if op == "*":
                v = self.tmp(f"{va} * {vb}")
                out = []
                for a, b in zip(da, db):
                    terms = []
                    if a is not None:
                        terms.append(f"{a} * {vb}")
                    if b is not None:
                        terms.append(f"{va} * {b}")
                    out.append(self.tmp(" + ".join(terms)) if terms else None)
                return v, out
            # division
            v = self.tmp(f"{va} / {vb}")
            out = []
            for a, b in zip(da, db):
                if a is None and b is None:
                    out.append(None)
                elif b is None:
                    out.append(self.tmp(f"{a} / {vb}"))
                elif a is None:
                    out.append(self.tmp(f"-{v} * {b} / {vb}"))
                else:
                    out.append(self.tmp(f"({a} - {v} * {b}) / {vb}"))
            return v, out
        if isinstance(node, Pow):
            va, da = self.emit(node.base)
            k = node.exponent
            if k == 0:
                return "1.0", [None] * n
            v = self.tmp(f"{va}**{k}")
            if all(d is None for d in da):
                return v, da
            c = self.tmp(f"{k} * {va}**{k - 1}") if k != 1 else "1.0"
            return v, self.scaled(c, da)
        if isinstance(node, Call):
            va, da = self.emit(node.arg)
            f = node.func
            v = self.tmp(f"_{f}({va})")
            if all(d is None for d in da):
                return v, da
            if f == "sin":
                c = self.tmp(f"_cos({va})")
            elif f == "cos":
                c = self.tmp(f"-_sin({va})")
            elif f == "exp":
                c = v
            elif f == "tanh":
                c = self.tmp(f"1.0 - {v} * {v}")
            elif f == "sqrt":
                c = self.tmp(f"0.5 / {v}")
            else:
                c = self.tmp(f"1.0 / {va}")
            return v, self.scaled(c, da)
        raise TypeError(node)


_FLOAT_NS = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp,
    "_tanh": math.tanh, "_sqrt": math.sqrt, "_log": math.log,
}
_DUAL_NS = {f"_{name}": fn for name, fn in _dual.FUNCTIONS.items()}
_EVAL_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


def _build(src, name, ns):
    scope = dict(ns)
    exec(src, scope)  # noqa: S102 - source is generated from a validated AST
    return scope[name]


def _locate_failure(node, x, p, params, derivative):
    """Re-evaluate ``node`` by tree walk to find the first offending primitive.

    Returns ``(value, failure)`` where failure is ``(function, offset, detail)``.
    """
    if isinstance(node, Num):
        return node.value, None
    if isinstance(node, Var):
        return x[node.index], None
    if isinstance(node, Param):
        return p[params.index(node.name)], None
    if isinstance(node, Neg):
        v, fail = _locate_failure(node.arg, x, p, params, derivative)
        return (None, fail) if fail else (-v, None)
    if isinstance(node, Bin):
        a, fail = _locate_failure(node.left, x, p, params, derivative)
        if fail:
            return None, fail
        b, fail = _locate_failure(node.right, x, p, params, derivative)
        if fail:
            return None, fail
        if node.op == "/" and b == 0.0:
            return None, ("/", node.offset, "division by zero")
        if node.op == "+":
            return a + b, None
        if node.op == "-":
            return a - b, None
        if node.op == "*":
            return a * b, None
        return a / b, None
    if isinstance(node, Pow):
        a, fail = _locate_failure(node.base, x, p, params, derivative)
        if fail:
            return None, fail
        k = node.exponent
        if a == 0.0 and k < 0:
            return None, ("^", node.offset, "zero raised to a negative power")
        try:
            return a**k, None
        except OverflowError:
            return None, ("^", node.offset, "overflow")
    if isinstance(node, Call):
        a, fail = _locate_failure(node.arg, x, p, params, derivative)
        if fail:
            return None, fail
        f = node.func
        if f == "sqrt" and (a < 0.0 or (derivative and a == 0.0)):
            return None, (f, node.offset, f"argument {a!r} outside domain")
        if f == "log" and a <= 0.0:
            return None, (f, node.offset, f"argument {a!r} outside domain")
        if f == "exp" and a > 709.78:
            return None, (f, node.offset, "overflow")
        return _FLOAT_NS["_" + f](a), None
    raise TypeError(node)


def _resolve_params(declared, values):
    if not declared:
        return ()
    values = values or {}
    try:
        return tuple(float(values[name]) for name in declared)
    except KeyError as exc:
        raise ExprError(f"unbound parameter {exc.args[0]!r}") from None


# ------------------------------------------------------------------ public types


@dataclass(frozen=True)
class DualJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray | None = None


class ScalarExpr:
    """Immutable scalar expression over ``x1 .. xn`` and named parameters."""

    def __init__(self, ast, dimension, params=(), source=None):
        self.ast = ast
        self.dimension = dimension
        self.params = tuple(params)
        self.source = source if source is not None else unparse_node(ast)
        self._cache = {}

    def __getstate__(self):
        return {"ast": self.ast, "dimension": self.dimension,
                "params": self.params, "source": self.source}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._cache = {}

    def __repr__(self):
        return f"ScalarExpr({self.source!r}, n={self.dimension})"

    # compiled closures, built lazily
    def _compiled(self, kind):
        fn = self._cache.get(kind)
        if fn is None:
            fn = self._cache[kind] = _compile([self.ast], self.dimension, self.params, kind)
        return fn

    def _check_point(self, x):
        if len(x) != self.dimension:
            raise DimensionError(f"point has dimension {len(x)}, expression expects {self.dimension}")

    def function(self, params=None):
        """Fast evaluator ``x -> float`` with parameters bound."""
        raw = self._compiled("value")
        p = _resolve_params(self.params, params)
        nodes = [self.ast]

        def f(x):
            try:
                return raw(x, p)[0]
            except _EVAL_ERRORS as exc:
                _raise_domain(nodes, x, p, self.params, False, exc)

        return f

    def gradient_function(self, params=None):
        """Fast evaluator ``x -> (value, grad tuple)``."""
        raw = self._compiled("jet")
        p = _resolve_params(self.params, params)
        nodes = [self.ast]

        def f(x):
            try:
                vals, jac = raw(x, p)
            except _EVAL_ERRORS as exc:
                _raise_domain(nodes, x, p, self.params, True, exc)
            return vals[0], jac[0]

        return f

    def __call__(self, x, params=None):
        x = _as_point(x)
        self._check_point(x)
        return self.function(params)(x)

    def jet(self, x, params=None, order=1):
        return eval_jet(self, x, params, order)

    def unparse(self):
        return unparse_node(self.ast)


class VectorExpr:
    """Vector field given by ``dimension`` scalar component expressions."""

    def __init__(self, components, dimension, params=()):
        components = list(components)
        if len(components) != dimension:
            raise DimensionError(f"{len(components)} components for dimension {dimension}")
        if dimension < 1:
            raise DimensionError("vector fields need dimension >= 1")
        self.components = components
        self.dimension = dimension
        self.params = tuple(params)
        self._cache = {}

    def __getstate__(self):
        return {"components": self.components, "dimension": self.dimension, "params": self.params}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._cache = {}

    def __repr__(self):
        srcs = [c.source for c in self.components]
        return f"VectorExpr({srcs!r})"

    @property
    def sources(self):
        return [c.source for c in self.components]

    def _compiled(self, kind):
        fn = self._cache.get(kind)
        if fn is None:
            fn = self._cache[kind] = _compile(
                [c.ast for c in self.components], self.dimension, self.params, kind
            )
        return fn

    def function(self, params=None):
        """Fast evaluator ``x -> tuple`` with parameters bound."""
        raw = self._compiled("value")
        p = _resolve_params(self.params, params)
        nodes = [c.ast for c in self.components]
        names = self.params

        def f(x):
            try:
                return raw(x, p)
            except _EVAL_ERRORS as exc:
                _raise_domain(nodes, x, p, names, False, exc)

        return f

    def jacobian_function(self, params=None):
        """Fast evaluator ``x -> (values, jacobian rows)``."""
        raw = self._compiled("jet")
        p = _resolve_params(self.params, params)
        nodes = [c.ast for c in self.components]
        names = self.params

        def f(x):
            try:
                return raw(x, p)
            except _EVAL_ERRORS as exc:
                _raise_domain(nodes, x, p, names, True, exc)

        return f

    def __call__(self, x, params=None):
        x = _as_point(x)
        if len(x) != self.dimension:
            raise DimensionError(f"point has dimension {len(x)}, field expects {self.dimension}")
        return np.array(self.function(params)(x), dtype=float)

    def jacobian(self, x, params=None):
        x = _as_point(x)
        _, jac = self.jacobian_function(params)(x)
        return np.array(jac, dtype=float)

    def jet(self, x, params=None, order=1):
        return eval_jet(self, x, params, order)


def _as_point(x):
    if isinstance(x, np.ndarray):
        return x.astype(float).ravel().tolist()
    if isinstance(x, (int, float)):
        return [float(x)]
    return [float(v) for v in x]


def _raise_domain(nodes, x, p, params, derivative, exc):
    for node in nodes:
        _, fail = _locate_failure(node, x, p, params, derivative)
        if fail:
            raise DomainError(fail[0], fail[1], x, fail[2]) from exc
    raise DomainError("?", None, x, str(exc)) from exc


def _compile(nodes, n, params, kind):
    if kind in ("value", "dual"):
        em = _ValueEmitter(params)
        outs = [em.emit(node) for node in nodes]
        lines = ["def _f(x, p):"] + em.lines
        lines.append(f"    return ({''.join(o + ', ' for o in outs)})")
        return _build("\n".join(lines) + "\n", "_f", _FLOAT_NS if kind == "value" else _DUAL_NS)
    em = _JetEmitter(n, params)
    vals, rows = [], []
    for node in nodes:
        v, d = em.emit(node)
        vals.append(v)
        rows.append("(" + "".join(f"{e if e is not None else '0.0'}, " for e in d) + ")")
    lines = ["def _f(x, p):"] + em.lines
    lines.append(f"    return ({''.join(v + ', ' for v in vals)}), ({''.join(r + ', ' for r in rows)})")
    return _build("\n".join(lines) + "\n", "_f", _FLOAT_NS)


# ------------------------------------------------------------------- operations


MAX_DEPTH = 400


def _depth(root):
    best = 0
    stack = [(root, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        for child in (getattr(node, a, None) for a in ("arg", "left", "right", "base")):
            if child is not None:
                stack.append((child, d + 1))
    return best


def parse_scalar(src, dimension, params=()):
    """Parse one scalar expression in ``dimension`` variables."""
    params = _check_params(params, dimension)
    if not isinstance(src, str):
        raise ParseError("expression source must be text", 0)
    try:
        ast = _Parser(src, dimension, params).parse()
    except RecursionError:
        raise ParseError("expression nested too deeply", 0) from None
    if _depth(ast) > MAX_DEPTH:
        raise ParseError(f"expression nested deeper than {MAX_DEPTH} levels", 0)
    return ScalarExpr(ast, dimension, params, source=src)


def parse_vector(srcs, dimension, params=()):
    """Parse one expression per component; errors carry the component index."""
    if isinstance(srcs, str):
        raise DimensionError("vector field needs a list of component expressions")
    srcs = list(srcs)
    if len(srcs) != dimension:
        raise DimensionError(f"component count {len(srcs)} != dimension {dimension}")
    comps = []
    for i, src in enumerate(srcs):
        try:
            comps.append(parse_scalar(src, dimension, params))
        except ParseError as exc:
            raise exc.with_component(i)
    return VectorExpr(comps, dimension, params)


def unparse(expr):
    if isinstance(expr, VectorExpr):
        return [c.unparse() for c in expr.components]
    if isinstance(expr, ScalarExpr):
        return expr.unparse()
    return unparse_node(expr)


def _order2(nodes, n, params, fn, x, p):
    seeds = []
    for i in range(n):
        inner = _dual.Dual(x[i], [1.0 if j == i else 0.0 for j in range(n)])
        outer_grad = [_dual.Dual(1.0 if j == i else 0.0, (0.0,) * n) for j in range(n)]
        seeds.append(_dual.Dual(inner, outer_grad))
    try:
        out = fn(seeds, p)
    except _EVAL_ERRORS as exc:
        _raise_domain(nodes, x, p, params, True, exc)
    jets = []
    for y in out:
        if not isinstance(y, _dual.Dual):  # constant expression
            jets.append(DualJet(float(y), np.zeros(n), np.zeros((n, n))))
            continue
        value = _dual.value_of(y)
        grad = np.array([_dual.value_of(g) for g in y.grad], dtype=float)
        hess = np.zeros((n, n))
        for j, g in enumerate(y.grad):
            if isinstance(g, _dual.Dual):
                hess[j] = [float(_dual.value_of(h)) for h in g.grad]
        hess = 0.5 * (hess + hess.T)
        jets.append(DualJet(float(value), grad, hess))
    return jets


def eval_jet(expr, x, params=None, order=1):
    """Value and exact derivatives of ``expr`` at ``x``.

    Returns a :class:`DualJet` for a scalar expression and a list of jets (one
    per component) for a vector expression.  ``order`` is 0, 1 or 2.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x = _as_point(x)
    scalar = isinstance(expr, ScalarExpr)
    comps = [expr] if scalar else expr.components
    n = expr.dimension
    if len(x) != n:
        raise DimensionError(f"point has dimension {len(x)}, expression expects {n}")
    p = _resolve_params(expr.params, params)
    nodes = [c.ast for c in comps]
    if order == 0:
        vals = expr.function(params)(x)
        vals = [vals] if scalar else vals
        jets = [DualJet(float(v), np.zeros(n)) for v in vals]
    elif order == 1:
        if scalar:
            v, g = expr.gradient_function(params)(x)
            jets = [DualJet(float(v), np.array(g, dtype=float))]
        else:
            vals, jac = expr.jacobian_function(params)(x)
            jets = [DualJet(float(v), np.array(g, dtype=float)) for v, g in zip(vals, jac)]
    else:
        fn = expr._compiled("dual")
        jets = _order2(nodes, n, expr.params, fn, x, p)
    return jets[0] if scalar else jets
