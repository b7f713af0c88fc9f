"""Small arithmetic expression language for problem files.

Grammar (a whitelisted subset of Python expression syntax)::

    expr   := number | name | expr op expr | -expr | call | [expr, ...]
    op     := + - * / ^ **          (^ is exponentiation)
    call   := abs | min | max | exp | log | sqrt | sin | cos | tan | atan
              | tanh | sign | clip          applied elementwise
    names  := variables supplied by the caller, pi, e, and user constants

Expressions compile to vectorized callables over numpy arrays.
"""

import ast

import numpy as np

from .exceptions import ConfigError

_FUNCS = {
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "atan": np.arctan,
    "arctan": np.arctan,
    "tanh": np.tanh,
    "sign": np.sign,
}
_NARY = {"min": np.minimum, "max": np.maximum}
CONSTANTS = {"pi": np.pi, "e": np.e}


class Expression:
    """A compiled expression; call with keyword arrays for its variables."""

    def __init__(self, text, variables=(), constants=None, line=None, source=None):
        self.text = text
        self.variables = tuple(variables)
        self.constants = dict(CONSTANTS)
        if constants:
            self.constants.update(constants)
        self.line = line
        self.source = source
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"syntax error in expression {text!r}: {exc.msg}", line,
                              max(exc.offset or 1, 1), source) from None
        self._check(tree.body)
        self.tree = tree.body
        self.is_vector = isinstance(self.tree, ast.List)

    def _fail(self, node, msg):
        col = getattr(node, "col_offset", None)
        raise ConfigError(f"{msg} in {self.text!r}", self.line, None if col is None else col + 1, self.source)

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                self._fail(node, "only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in self.constants:
                self._fail(node, f"unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                self._fail(node, "unsupported operator")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                self._fail(node, "unsupported unary operator")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or (node.func.id not in _FUNCS and node.func.id not in _NARY
                                                      and node.func.id != "clip"):
                self._fail(node, "unknown function")
            if node.keywords:
                self._fail(node, "keyword arguments are not supported")
            name = node.func.id
            if name in _FUNCS and len(node.args) != 1:
                self._fail(node, f"{name} takes one argument")
            if name in _NARY and len(node.args) < 2:
                self._fail(node, f"{name} takes at least two arguments")
            if name == "clip" and len(node.args) != 3:
                self._fail(node, "clip takes three arguments")
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.List):
            for a in node.elts:
                self._check(a)
        else:
            self._fail(node, f"unsupported syntax {type(node).__name__}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else self.constants[node.id]
        if isinstance(node, ast.BinOp):
            a, b = self._eval(node.left, env), self._eval(node.right, env)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b
            if isinstance(op, ast.Sub):
                return a - b
            if isinstance(op, ast.Mult):
                return a * b
            if isinstance(op, ast.Div):
                return a / b
            return np.power(a, b)
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            args = [self._eval(a, env) for a in node.args]
            name = node.func.id
            if name in _FUNCS:
                return _FUNCS[name](args[0])
            if name == "clip":
                return np.clip(*args)
            out = args[0]
            for a in args[1:]:
                out = _NARY[name](out, a)
            return out
        if isinstance(node, ast.List):
            return [self._eval(a, env) for a in node.elts]
        raise AssertionError("unchecked node")

    def __call__(self, **env):
        missing = [v for v in self.variables if v not in env]
        if missing:
            raise ValueError(f"missing variables {missing}")
        with np.errstate(all="ignore"):
            return self._eval(self.tree, env)


def parse_expression(text, variables=(), constants=None, line=None, source=None):
    return Expression(text, variables, constants, line, source)


def evaluate_constant(text, constants=None, line=None, source=None):
    """Evaluate an expression without variables to a float (or list)."""
    return _floats(Expression(text, (), constants, line, source)())


def _floats(val):
    if isinstance(val, list):
        return [_floats(v) for v in val]
    return float(np.asarray(val))


def interval_field(expr):
    """Wrap ``expr`` in variable ``x`` as ``s (P,) -> (P,)``."""

    def fn(s):
        s = np.asarray(s, float)
        return np.broadcast_to(np.asarray(expr(x=s, x1=s), float), s.shape).copy()

    return fn
