"""Problem-definition files: ``key = value`` lines with expression strings.

Example::

    # unit-speed interval dynamics
    let c = 1
    name = eikonal1d
    dim = 1
    dynamics = interval
    f = -c
    g = c
    phi = abs(x)
    phi_grad = [sign(x)]
    t0 = 0
    T = 1
    box = [-2, 2]

Coordinates are ``x1 .. xn`` (``x`` is an alias in one dimension). Keys:

* ``dynamics = interval``: ``f``, ``g`` and optional ``df``, ``dg``, ``kinks``;
* ``dynamics = ball``: ``center`` (vector), ``radius`` and optional
  ``center_jac`` (matrix), ``radius_grad`` (vector), ``constant``;
* ``dynamics = polytope``: ``vertices`` (list of vectors);
* ``dynamics = body``: ``body = disk(R) | quartic(R) | polygon([[..], ..])``;
* common: ``name``, ``dim``, ``phi``, ``phi_grad``, ``phi_kinks``, ``t0``,
  ``T``, ``box`` and grid defaults ``grid_nt``, ``grid_nx``, ``grid_pad``,
  ``directions``.
"""

from dataclasses import dataclass, field
import re

import numpy as np

from . import dynamics as dyn
from .exceptions import ConfigError
from .expr import Expression, evaluate_constant, interval_field
from .hjb import GridSpec, MayerProblem

_KEYS = {
    "name", "dim", "dynamics", "f", "g", "df", "dg", "kinks", "center", "radius", "center_jac",
    "radius_grad", "constant", "vertices", "body", "phi", "phi_grad", "phi_kinks", "t0", "T", "box",
    "grid_nt", "grid_nx", "grid_pad", "directions", "description",
}
_LINE = re.compile(r"^\s*(let\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_BODY = re.compile(r"^\s*(disk|quartic|polygon)\s*\((.*)\)\s*$")


@dataclass
class ProblemDefinition:
    problem: MayerProblem
    grid: GridSpec
    entries: dict = field(default_factory=dict)
    source: str = None


def _tokenize(text, source):
    entries = {}
    constants = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError("expected 'key = value'", lineno, 1, source)
        is_let, key, value = m.groups()
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno, len(line) + 1, source)
        if is_let:
            if key in constants or key in ("pi", "e"):
                raise ConfigError(f"constant {key!r} redefined", lineno, line.index(key) + 1, source)
            constants[key] = evaluate_constant(value, constants, lineno, source)
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, line.index(key) + 1, source)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, line.index(key) + 1, source)
        entries[key] = (value, lineno)
    return entries, constants


class _Builder:
    def __init__(self, entries, constants, source):
        self.entries = entries
        self.constants = constants
        self.source = source

    def has(self, key):
        return key in self.entries

    def raw(self, key, default=None, required=True):
        if key not in self.entries:
            if required and default is None:
                raise ConfigError(f"missing required key {key!r}", source=self.source)
            return default, None
        return self.entries[key]

    def const(self, key, default=None):
        text, line = self.raw(key, default)
        if line is None:
            return default
        return evaluate_constant(text, self.constants, line, self.source)

    def expr(self, key, names, required=True):
        text, line = self.raw(key, None, required)
        if text is None:
            return None
        return Expression(text, names, self.constants, line, self.source)


def _names(dim):
    names = [f"x{i + 1}" for i in range(dim)]
    if dim == 1:
        names.append("x")
    return names


def _bind(dim):
    """Environment builder for points ``X (P, n)``; also binds ``x`` in 1D."""

    def env(X):
        X = np.atleast_2d(np.asarray(X, float))
        d = {f"x{i + 1}": X[:, i] for i in range(dim)}
        if dim == 1:
            d["x"] = X[:, 0]
        return d

    return env


def _scalar(expr, dim):
    env = _bind(dim)

    def fn(X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.broadcast_to(np.asarray(expr(**env(X)), float), (X.shape[0],)).copy()

    return fn


def _vector(expr, dim, length):
    env = _bind(dim)
    if not expr.is_vector:
        raise ConfigError(f"expected a vector expression [..] in {expr.text!r}", expr.line, None, expr.source)

    def fn(X):
        X = np.atleast_2d(np.asarray(X, float))
        comps = expr(**env(X))
        if len(comps) != length or any(isinstance(c, list) for c in comps):
            raise ConfigError(f"expected a vector of length {length}", expr.line, None, expr.source)
        return np.column_stack([np.broadcast_to(np.asarray(c, float), (X.shape[0],)) for c in comps])

    return fn


def _matrix(expr, dim, rows, cols):
    env = _bind(dim)

    def fn(X):
        X = np.atleast_2d(np.asarray(X, float))
        M = expr(**env(X))
        if not isinstance(M, list) or len(M) != rows or any(not isinstance(r, list) or len(r) != cols for r in M):
            raise ConfigError(f"expected a {rows}x{cols} nested list", expr.line, None, expr.source)
        P = X.shape[0]
        return np.stack([np.column_stack([np.broadcast_to(np.asarray(c, float), (P,)) for c in r]) for r in M], axis=1)

    return fn


def _build_dynamics(b, dim):
    kind, line = b.raw("dynamics")
    names = _names(dim)
    kind = kind.strip()
    if kind == "interval":
        if dim != 1:
            raise ConfigError("interval dynamics need dim = 1", line, None, b.source)
        f = interval_field(b.expr("f", ["x", "x1"]))
        g = interval_field(b.expr("g", ["x", "x1"]))
        df = b.expr("df", ["x", "x1"], required=False)
        dg = b.expr("dg", ["x", "x1"], required=False)
        kinks = tuple(np.atleast_1d(b.const("kinks", [])).tolist()) if b.has("kinks") else ()
        return dyn.Interval1D(f, g, interval_field(df) if df else None, interval_field(dg) if dg else None, kinks)
    if kind == "ball":
        center = _vector(b.expr("center", names), dim, dim)
        radius = _scalar(b.expr("radius", names), dim)
        jac = b.expr("center_jac", names, required=False)
        rg = b.expr("radius_grad", names, required=False)
        const = bool(b.const("constant", 0.0)) if b.has("constant") else False
        return dyn.Ball(center, radius, dim, _matrix(jac, dim, dim, dim) if jac else None,
                        _vector(rg, dim, dim) if rg else None, const)
    if kind == "polytope":
        ex = b.expr("vertices", names)
        m = len(ex.tree.elts) if ex.is_vector else 0
        if m == 0:
            raise ConfigError("vertices must be a list of vectors", ex.line, None, b.source)
        return dyn.Polytope(_matrix(ex, dim, m, dim), dim)
    if kind == "body":
        text, bline = b.raw("body")
        m = _BODY.match(text)
        if not m:
            raise ConfigError("body must be disk(R), quartic(R) or polygon([[..], ..])", bline, None, b.source)
        shape, arg = m.groups()
        val = evaluate_constant(arg, b.constants, bline, b.source)
        if shape == "disk":
            if dim != 2:
                raise ConfigError("disk bodies are planar", bline, None, b.source)
            return dyn.FixedBody.disk(val)
        if shape == "quartic":
            if dim != 2:
                raise ConfigError("quartic bodies are planar", bline, None, b.source)
            return dyn.FixedBody.quartic(val)
        verts = np.asarray(val, float)
        if verts.ndim != 2 or verts.shape[1] != dim:
            raise ConfigError("polygon vertices must have the problem dimension", bline, None, b.source)
        return dyn.FixedBody.polygon(verts)
    raise ConfigError(f"unknown dynamics {kind!r}", line, None, b.source)


def parse_problem(text, source=None):
    """Parse problem text into a :class:`ProblemDefinition`."""
    entries, constants = _tokenize(text, source)
    b = _Builder(entries, constants, source)
    dim = int(b.const("dim", 1))
    if dim < 1 or dim > 3:
        raise ConfigError("dim must be 1, 2 or 3", b.raw("dim", "1")[1], None, source)
    F = _build_dynamics(b, dim)
    names = _names(dim)
    phi = _scalar(b.expr("phi", names), dim)
    ge = b.expr("phi_grad", names, required=False)
    phi_grad = _vector(ge, dim, dim) if ge else None
    box_text, box_line = b.raw("box")
    box = np.asarray(evaluate_constant(box_text, constants, box_line, source), float)
    if dim == 1 and box.shape == (2,):
        box = box[None]
    if box.shape != (dim, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError("box must list [lo, hi] per axis with lo < hi", box_line, None, source)
    t0 = b.const("t0", 0.0) if b.has("t0") else 0.0
    T = b.const("T")
    if not t0 < T:
        raise ConfigError("need t0 < T", b.raw("T")[1], None, source)
    kinks = tuple(np.atleast_1d(b.const("phi_kinks")).tolist()) if b.has("phi_kinks") else ()
    problem = MayerProblem(F, phi, t0, T, box[:, 0], box[:, 1], phi_grad,
                           b.raw("name", "problem", required=False)[0], kinks)
    nt = int(b.const("grid_nt")) if b.has("grid_nt") else 101
    nx_val = b.const("grid_nx") if b.has("grid_nx") else 101
    nx = int(nx_val) if np.isscalar(nx_val) else tuple(int(v) for v in nx_val)
    pad = b.const("grid_pad") if b.has("grid_pad") else "auto"
    dirs = int(b.const("directions")) if b.has("directions") else None
    grid = GridSpec(nt, nx, pad, dirs)
    return ProblemDefinition(problem, grid, {k: v[0] for k, v in entries.items()}, source)


def load_problem(path):
    with open(path) as fh:
        text = fh.read()
    return parse_problem(text, str(path))
