"""A tiny arithmetic expression language for weight fields and boundary data.

Expressions are strings such as ``"abs(x1 - 0.5)^0.5"`` or
``"min(dist_quadrant(1), dist_quadrant(3))"``. They compile to vectorised
callables ``f(X) -> array`` where ``X`` has shape ``(N, n)``.

Grammar::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | NAME | NAME '(' [expr (',' expr)*] ')' | '(' expr ')'

Variables are ``x1 .. xn`` (``x``/``y`` alias ``x1``/``x2``) and ``pi``.
Geometric helpers refer to the box the expression is compiled against:
``dist_corner(k)`` is the distance to corner ``k`` (binary encoding of
upper/lower per axis, ``0`` = lower-left), ``dist_quadrant(k)`` the distance
to the closed quadrant ``k`` (1..4, counter-clockwise from upper-right, taken
about the box centre) and ``dist_half(s)`` the distance to the closed half
``{s * (x1 - x2) <= 0}`` shifted to the box centre; ``angle()`` is the polar
angle in (-pi, pi] about the box centre.
"""
import re

import numpy as np

from .errors import InvalidArgument

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


def _tokenize(text):
    text = text.replace("−", "-").replace("·", "*").replace("**", "^")
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        pos = m.end()
        num, name, op = m.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif name is not None:
            tokens.append(("name", name))
        elif op is not None and not op.isspace():
            if op not in "+-*/^(),":
                raise InvalidArgument(f"unexpected character {op!r} in {text!r}")
            tokens.append(("op", op))
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind or value is not None and tok[1] != value:
            raise InvalidArgument(f"parse error in {self.text!r} near token {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        self.take("end")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return ("num", val)
        if kind == "name":
            self.take()
            if self.peek() == ("op", "("):
                self.take()
                if self.peek() == ("op", ")"):
                    self.take()
                    return ("call", val, [])
                args = [self.expr()]
                while self.peek() == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.take("op", ")")
                return ("call", val, args)
            return ("var", val)
        if (kind, val) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise InvalidArgument(f"parse error in {self.text!r} near token {val!r}")


def _dist_to_box(X, lo, hi):
    d = np.maximum(np.maximum(lo - X, X - hi), 0.0)
    return np.sqrt((d ** 2).sum(axis=1))


class Expression:
    """Compiled expression; callable on ``(N, n)`` point arrays."""

    def __init__(self, text, box):
        self.text = str(text)
        self.box = np.asarray(box, dtype=float).reshape(-1, 2)
        self.tree = _Parser(self.text).parse()
        self._check(self.tree)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = self._eval(self.tree, X)
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    @property
    def n(self):
        return self.box.shape[0]

    def _check(self, node):
        tag = node[0]
        if tag == "var":
            name = node[1]
            if name not in ("pi", "x", "y") and not re.fullmatch(r"x[1-9]", name):
                raise InvalidArgument(f"unknown variable {name!r}")
            if self._axis(name) is not None and self._axis(name) >= self.n:
                raise InvalidArgument(f"variable {name!r} exceeds dimension {self.n}")
        elif tag == "call":
            if node[1] not in _FUNCS:
                raise InvalidArgument(f"unknown function {node[1]!r}")
            lo, hi = _ARITY.get(node[1], (1, 1))
            if not lo <= len(node[2]) <= hi:
                raise InvalidArgument(f"{node[1]} takes {lo}..{hi} arguments, got {len(node[2])}")
            for a in node[2]:
                self._check(a)
        elif tag in "+-*/^":
            self._check(node[1])
            self._check(node[2])
        elif tag == "neg":
            self._check(node[1])

    @staticmethod
    def _axis(name):
        if name == "x":
            return 0
        if name == "y":
            return 1
        if name.startswith("x") and name[1:].isdigit():
            return int(name[1:]) - 1
        return None

    def _eval(self, node, X):
        tag = node[0]
        if tag == "num":
            return node[1]
        if tag == "var":
            if node[1] == "pi":
                return np.pi
            return X[:, self._axis(node[1])]
        if tag == "neg":
            return -self._eval(node[1], X)
        if tag == "call":
            return _FUNCS[node[1]](self, X, [self._eval(a, X) for a in node[2]])
        a = self._eval(node[1], X)
        b = self._eval(node[2], X)
        if tag == "+":
            return a + b
        if tag == "-":
            return a - b
        if tag == "*":
            return a * b
        if tag == "/":
            return a / b
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.power(a, b)

    # geometric helpers
    def corner(self, k):
        k = int(k)
        return np.array([self.box[i, (k >> i) & 1] for i in range(self.n)])

    def center(self):
        return self.box.mean(axis=1)


def _scalar(v):
    v = np.asarray(v, dtype=float)
    if v.ndim and not np.all(v == v.flat[0]):
        raise InvalidArgument("geometric helper arguments must be constants")
    return float(v.flat[0])


def _dist_corner(e, X, args):
    c = e.corner(_scalar(args[0]))
    return np.sqrt(((X - c) ** 2).sum(axis=1))


def _dist_quadrant(e, X, args):
    if e.n != 2:
        raise InvalidArgument("dist_quadrant needs n = 2")
    k = int(_scalar(args[0]))
    if k not in (1, 2, 3, 4):
        raise InvalidArgument("quadrant index must be 1..4")
    c = e.center()
    big = 1e300
    sx = 1 if k in (1, 4) else -1
    sy = 1 if k in (1, 2) else -1
    lo = np.array([c[0] if sx > 0 else -big, c[1] if sy > 0 else -big])
    hi = np.array([big if sx > 0 else c[0], big if sy > 0 else c[1]])
    return _dist_to_box(X, lo, hi)


def _dist_half(e, X, args):
    if e.n != 2:
        raise InvalidArgument("dist_half needs n = 2")
    s = 1.0 if _scalar(args[0]) >= 0 else -1.0
    c = e.center()
    t = s * ((X[:, 0] - c[0]) - (X[:, 1] - c[1])) / np.sqrt(2.0)
    return np.maximum(t, 0.0)


def _angle(e, X, args):
    if e.n != 2:
        raise InvalidArgument("angle needs n = 2")
    c = e.center()
    return np.arctan2(X[:, 1] - c[1], X[:, 0] - c[0])


def _unary(f):
    return lambda e, X, a: f(a[0])


_FUNCS = {
    "abs": _unary(np.abs),
    "sqrt": _unary(np.sqrt),
    "exp": _unary(np.exp),
    "log": _unary(np.log),
    "sin": _unary(np.sin),
    "cos": _unary(np.cos),
    "max": lambda e, X, a: np.maximum(a[0], a[1]) if len(a) == 2 else np.maximum.reduce(a),
    "min": lambda e, X, a: np.minimum(a[0], a[1]) if len(a) == 2 else np.minimum.reduce(a),
    "dist_corner": _dist_corner,
    "dist_quadrant": _dist_quadrant,
    "dist_half": _dist_half,
    "angle": _angle,
}


_ARITY = {"max": (2, 64), "min": (2, 64), "angle": (0, 0)}


def compile_expr(text, box):
    """Parse ``text`` against ``box`` (``(n, 2)`` array of bounds)."""
    return Expression(text, box)


def as_field(obj, box):
    """Normalise a weight specification into a vectorised callable.

    Accepts an expression string, a number, an :class:`Expression` or any
    callable taking an ``(N, n)`` array.
    """
    if obj is None:
        return None
    if isinstance(obj, Expression):
        return obj
    if isinstance(obj, str):
        return compile_expr(obj, box)
    if callable(obj):
        return obj
    return compile_expr(repr(float(obj)), box)
