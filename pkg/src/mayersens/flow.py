"""Hamiltonian characteristics and dual arcs.

State flow ``y' = grad_p H(y, p)``, adjoint inclusion ``-p' in d_x H(x, p)``
(one element selected per evaluation), fixed-step RK4 throughout.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
import hashlib

import numpy as np

from .exceptions import DichotomyError, DomainExitError, SubgradientError
from .sampling import min_norm_point

POLICIES = ("min_norm", "first", "last")
ZERO_REL = 1e-10
_RECORDERS = []


@contextmanager
def record_arcs():
    """Collect ``(problem, pair)`` for every arc integrated inside the block."""
    log = []
    _RECORDERS.append(log)
    try:
        yield log
    finally:
        _RECORDERS.remove(log)


@dataclass(frozen=True, eq=False)
class ArcPair:
    """State ``x`` and dual ``p`` sampled on a shared time mesh ``t``."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    method: str = "rk4"
    step: float = 0.0
    policy: str = "min_norm"
    stationary: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("t", "x", "p"):
            a = np.array(getattr(self, name), dtype=float)
            if name != "t" and a.ndim == 1:
                a = a[:, None]
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not (len(self.t) == len(self.x) == len(self.p)):
            raise ValueError("t, x and p must share the time mesh")

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def arc_id(self):
        h = hashlib.sha256()
        for a in (self.t, self.x, self.p):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    @property
    def dual_norms(self):
        return np.linalg.norm(self.p, axis=1)

    def state_at(self, s):
        return _interp_rows(self.t, self.x, s)

    def dual_at(self, s):
        return _interp_rows(self.t, self.p, s)

    def with_dual(self, p, **info):
        return ArcPair(self.t, self.x, p, self.method, self.step, self.policy,
                       bool(np.all(np.asarray(p) == 0)), {**self.info, **info})

    def to_csv(self, path=None):
        n = self.dim
        head = ",".join(["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)])
        lines = [head]
        for tk, xk, pk in zip(self.t, self.x, self.p):
            lines.append(",".join(repr(float(v)) for v in (tk, *xk, *pk)))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _record(problem, pair):
    for log in _RECORDERS:
        log.append((problem, pair))
    return pair


def _interp_rows(t, Y, s):
    s = float(s)
    if s <= t[0]:
        return Y[0].copy()
    if s >= t[-1]:
        return Y[-1].copy()
    k = int(np.searchsorted(t, s, side="right") - 1)
    w = (s - t[k]) / (t[k + 1] - t[k])
    return (1 - w) * Y[k] + w * Y[k + 1]


def select(G, policy):
    """Pick one covector from the rows of ``G`` according to ``policy``."""
    G = np.atleast_2d(G)
    if G.shape[0] == 0:
        raise SubgradientError("empty computable subgradient set")
    if policy == "min_norm":
        return min_norm_point(G)
    if policy == "first":
        return G[0].copy()
    if policy == "last":
        return G[-1].copy()
    raise ValueError(f"unknown selection policy {policy!r}")


def _grad_p(F, x, p):
    ev = F.support(x, p)
    if ev.p_gradient is None:
        if not np.any(p):
            raise DichotomyError("grad_p H requested at p = 0")
        raise ValueError(f"grad_p H undefined at x={x}, p={p} (maximizer not unique)")
    return ev.p_gradient


def _rk4(fun, y0, ts):
    Y = np.empty((len(ts), y0.size))
    Y[0] = y0
    for k in range(len(ts) - 1):
        s, h = ts[k], ts[k + 1] - ts[k]
        y = Y[k]
        k1 = fun(s, y)
        k2 = fun(s + h / 2, y + h / 2 * k1)
        k3 = fun(s + h / 2, y + h / 2 * k2)
        k4 = fun(s + h, y + h * k3)
        Y[k + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def check_dichotomy(p):
    """``"never_zero"`` or ``"all_zero"``; raises :class:`DichotomyError` otherwise."""
    norms = np.linalg.norm(np.atleast_2d(p), axis=1)
    top = norms.max() if norms.size else 0.0
    if top == 0.0:
        return "all_zero"
    small = norms < ZERO_REL * top
    if np.any(small):
        k = int(np.argmax(small))
        raise DichotomyError(f"dual arc vanishes at mesh index {k} although it is nonzero elsewhere")
    return "never_zero"


def gronwall_ratio(pair, c_K):
    """``max_k |p(t_k)| / (|p(T)| exp(c_K (T - t_k)))``; at most 1 when the
    envelope holds."""
    norms = pair.dual_norms
    pT = norms[-1]
    if pT == 0.0:
        return 0.0 if norms.max() == 0.0 else np.inf
    env = pT * np.exp(c_K * (pair.t[-1] - pair.t))
    return float(np.max(norms / env))


def _check_bounds(X, bounds, what):
    if bounds is None:
        return
    lo, hi = (np.asarray(b, float) for b in bounds)
    bad = np.any((X < lo - 1e-12) | (X > hi + 1e-12), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DomainExitError(f"{what} leaves the domain at mesh index {k}: {X[k]}")


def integrate_characteristics(problem, z, steps=1000, policy="min_norm", bounds=None):
    """Backward RK4 for ``x' = grad_p H``, ``p' = -d_x H`` from
    ``(x, p)(T) = (z, -grad phi(z))`` down to ``t0``."""
    F = problem.F
    n = F.dim
    z = np.atleast_1d(np.asarray(z, float))
    ts = np.linspace(problem.t0, problem.T, steps + 1)
    h = (problem.T - problem.t0) / steps
    pT = -problem.phi_gradient(z)
    if not np.any(pT):
        K = len(ts)
        return _record(problem, ArcPair(ts, np.tile(z, (K, 1)), np.zeros((K, n)), "rk4", h, policy, True,
                       {"terminal_point": z.tolist(), "note": "zero terminal dual"}))

    def fun(s, y):
        x, p = y[:n], y[n:]
        if not np.any(p):
            raise DichotomyError("dual reached 0 during integration")
        return np.concatenate([_grad_p(F, x, p), -select(F.x_subgradient(x, p), policy)])

    back = ts[::-1]
    Y = _rk4(fun, np.concatenate([z, pT]), back)[::-1]
    X, P = Y[:, :n], Y[:, n:]
    check_dichotomy(P)
    _check_bounds(X, bounds, "characteristic")
    return _record(problem, ArcPair(ts, X, P, "rk4", h, policy, False, {"terminal_point": z.tolist()}))


def integrate_forward(problem, start_t, x, p, steps=None, policy="min_norm", bounds=None, ts=None):
    """Forward RK4 of ``y' = grad_p H(y, p)``, ``p' = -d_x H(y, p)`` from
    ``(y, p)(start_t) = (x, p)`` to ``T``; ``ts`` overrides the uniform mesh."""
    F = problem.F
    x = np.atleast_1d(np.asarray(x, float))
    p = np.atleast_1d(np.asarray(p, float))
    n = x.size
    if ts is None:
        if steps is None:
            raise ValueError("give steps or ts")
        ts = np.linspace(start_t, problem.T, steps + 1)
    ts = np.asarray(ts, float)
    if not np.any(p):
        raise DichotomyError("forward characteristics need a nonzero initial dual")

    def fun(s, y):
        xs, ps = y[:n], y[n:]
        if not np.any(ps):
            raise DichotomyError("dual reached 0 during integration")
        return np.concatenate([_grad_p(F, xs, ps), -select(F.x_subgradient(xs, ps), policy)])

    Y = _rk4(fun, np.concatenate([x, p]), ts)
    X, P = Y[:, :n], Y[:, n:]
    check_dichotomy(P)
    _check_bounds(X, bounds, "characteristic")
    return _record(problem, ArcPair(ts, X, P, "rk4", float(ts[1] - ts[0]), policy, False,
                   {"start": [float(start_t)] + x.tolist(), "initial_dual": p.tolist()}))


def solve_dual_terminal(xbar, q, problem, policy="min_norm", t=None):
    """Backward RK4 for ``-p' in d_x H(xbar(s), p)`` with ``-p(T) = q``.

    ``xbar`` is an :class:`ArcPair`, a trajectory with ``s``/``y``
    attributes, or an array of states on the mesh ``t``.
    """
    F = problem.F
    if hasattr(xbar, "x") and hasattr(xbar, "t"):
        ts, X = np.asarray(xbar.t), np.asarray(xbar.x)
    elif hasattr(xbar, "s") and hasattr(xbar, "y"):
        ts, X = np.asarray(xbar.s), np.asarray(xbar.y)
    else:
        ts, X = np.asarray(t, float), np.asarray(xbar, float)
    X = X.reshape(len(ts), -1)
    n = X.shape[1]
    q = np.atleast_1d(np.asarray(q, float))
    h = float(ts[1] - ts[0])
    if not np.any(q):
        return _record(problem, ArcPair(ts, X, np.zeros_like(X), "rk4", h, policy, True, {"q": q.tolist()}))

    def fun(s, p):
        if not np.any(p):
            raise DichotomyError("dual reached 0 during integration")
        return -select(F.x_subgradient(_interp_rows(ts, X, s), p), policy)

    P = _rk4(fun, -q, ts[::-1])[::-1]
    check_dichotomy(P)
    return _record(problem, ArcPair(ts, X, P, "rk4", h, policy, False, {"q": q.tolist()}))


def _flow(F, ts, x0, P):
    def fun(s, y):
        return _grad_p(F, y, _interp_rows(ts, P, s))

    return _rk4(fun, x0, ts)


def forward_flow(problem, start_t, x, dual, compare=None, bounds=None, perturbation=1e-6):
    """Forward RK4 of ``y' = grad_p H(y, p(s))`` from ``(start_t, x)``.

    ``dual`` is an :class:`ArcPair` (its ``p`` is used) whose mesh must
    contain ``start_t``. The fitted stability exponent ``k`` with
    ``|y(s; x) - y(s; z)| <= exp(k (s - t)) |x - z|`` is reported in
    ``info``; ``compare`` adds an explicit second start ``z``.
    """
    F = problem.F
    if dual.stationary or not np.all(dual.dual_norms > 0):
        raise DichotomyError("forward flow needs a dual arc that never vanishes")
    k0 = int(np.searchsorted(dual.t, start_t - 1e-12 * (1 + abs(start_t))))
    if k0 >= len(dual.t) or abs(dual.t[k0] - start_t) > 1e-9 * (1 + abs(start_t)):
        raise ValueError("start time must lie on the dual arc's mesh")
    ts = dual.t[k0:]
    P = dual.p[k0:]
    x = np.atleast_1d(np.asarray(x, float))
    Y = _flow(F, ts, x, P)
    _check_bounds(Y, bounds, "trajectory")

    starts = []
    d = perturbation * (1.0 + np.abs(x).max())
    for e in np.eye(x.size):
        starts.append(x + d * e)
    if compare is not None:
        starts.append(np.atleast_1d(np.asarray(compare, float)))
    k_fit = 0.0
    sep_max = 0.0
    for z in starts:
        Z = _flow(F, ts, z, P)
        gap0 = np.linalg.norm(z - x)
        if gap0 == 0:
            continue
        ratio = np.linalg.norm(Z - Y, axis=1) / gap0
        sep_max = max(sep_max, float(ratio.max()))
        dt = ts[1:] - ts[0]
        with np.errstate(divide="ignore"):
            k_fit = max(k_fit, float(np.max(np.log(np.maximum(ratio[1:], 1e-300)) / dt)))
    info = {"start": [float(start_t)] + x.tolist(), "stability_exponent": max(k_fit, 0.0),
            "max_separation_ratio": sep_max}
    return ArcPair(ts, Y, P, "rk4", float(ts[1] - ts[0]), dual.policy, False, info)


@dataclass(frozen=True)
class MPResidual:
    max: float
    mean: float
    per_time: np.ndarray


def maximum_principle_residual(pair, problem, include_endpoints=False):
    """``|H(x(t_k), p(t_k)) - <p(t_k), x'(t_k)>|`` with ``x'`` from mesh
    central differences (second-order one-sided at the ends)."""
    if len(pair.t) < 3:
        raise ValueError("mesh too short for central differences")
    F = problem.F
    xd = np.gradient(pair.x, pair.t, axis=0, edge_order=2)
    res = np.array([abs(F.support(x, p).value - float(p @ v)) for x, p, v in zip(pair.x, pair.p, xd)])
    core = res if include_endpoints else res[1:-1]
    return MPResidual(float(core.max()), float(core.mean()), res)


def rotated_dual(pair, angle=np.pi / 2):
    """Corrupt a dual arc on purpose: planar rotation by ``angle`` (sign flip
    in 1D) for rejection-power checks."""
    p = np.asarray(pair.p)
    if pair.dim == 1:
        return pair.with_dual(-p, corrupted=True)
    if pair.dim != 2:
        raise ValueError("rotation implemented for n <= 2")
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return pair.with_dual(p @ R.T, corrupted=True)
