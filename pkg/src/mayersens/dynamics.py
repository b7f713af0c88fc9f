"""Set-valued dynamics ``F`` and the Hamiltonian ``H(x, p) = sup_{v in F(x)} <v, p>``.

Four closed-form variants are provided:

* :class:`Interval1D`   ``F(x) = [f(x), g(x)]`` on the real line,
* :class:`Ball`         ``F(x) = B(c(x), r(x))``,
* :class:`Polytope`     ``F(x) = co{v_1(x), ..., v_m(x)}``,
* :class:`FixedBody`    a constant convex body given by boundary samples.

Field callables are vectorized. ``Interval1D`` fields take a scalar array of
shape ``(P,)``; the other variants take points of shape ``(P, n)``.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import optimize

from .exceptions import DimensionError, InvalidDynamicsError, SubgradientError
from .nonsmooth import fit_midpoint_constant
from .sampling import box_points, directions, unique_rows

_FD_STEP = 1e-6
_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    argmax_set: np.ndarray
    is_singleton: bool
    p_gradient: np.ndarray = None


def _points(x, n):
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        if X.size != n:
            raise DimensionError(f"expected a point in R^{n}, got shape {X.shape}")
        X = X.reshape(1, n)
    if X.shape[-1] != n:
        raise DimensionError(f"expected points in R^{n}, got shape {X.shape}")
    return X


def _covector(p, n):
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (n,):
        raise DimensionError(f"expected a covector in R^{n}, got shape {p.shape}")
    return p


def _scalar(fn, arg, P):
    return np.broadcast_to(np.asarray(fn(arg), dtype=float), (P,)).copy()


class SetValuedMap(ABC):
    """Common interface; every method is a pure function of its inputs."""

    kind = "abstract"
    dim = 0
    constant = False

    @abstractmethod
    def support_points(self, X, D):
        """First maximizers of ``<v, d>`` over ``F(x)``: shape ``(P, S, n)``."""

    @abstractmethod
    def centroid(self, X):
        """A point of ``F(x)`` near its center: shape ``(P, n)``."""

    @abstractmethod
    def support(self, x, p):
        """Exact (or resolution-limited for FixedBody) Hamiltonian evaluation."""

    @abstractmethod
    def x_subgradient(self, x, p):
        """Computable inner description of the Frechet x-subdifferential."""

    def validate(self, X):
        pass

    def support_values(self, X, D):
        X = _points(X, self.dim)
        D = np.atleast_2d(D)
        pts = self.support_points(X, D)
        return np.einsum("psn,sn->ps", pts, D)

    def boundary_pairs(self, x, count=None):
        """Boundary points ``z`` with unit outer normals ``n``."""
        D = directions(self.dim, count)
        Z = self.support_points(_points(x, self.dim), D)[0]
        return Z, D.copy()

    def body_samples(self, x, count=None):
        D = directions(self.dim, count if count else 4 * len(directions(self.dim)))
        X = _points(x, self.dim)
        pts = self.support_points(X, D)[0]
        return np.vstack([pts, self.centroid(X)])

    def velocity_samples(self, X, count=None):
        """Support points in a direction fan plus the centroid, ``(P, S+1, n)``."""
        X = _points(X, self.dim)
        D = directions(self.dim, count)
        pts = self.support_points(X, D)
        return np.concatenate([pts, self.centroid(X)[:, None, :]], axis=1)

    def max_speed(self, X, count=None):
        V = self.velocity_samples(X, count)
        return float(np.max(np.linalg.norm(V, axis=-1))) if V.size else 0.0

    def _generic_support(self, x, p, pts):
        """Support over a finite candidate set ``pts`` (k, n)."""
        vals = pts @ p
        vmax = float(vals.max())
        scale = 1.0 + np.abs(pts).max() * (1.0 + np.linalg.norm(p))
        am = unique_rows(pts[vals >= vmax - 1e-12 * scale])
        single = am.shape[0] == 1
        pnz = np.any(p != 0.0)
        if not pnz:
            return HamiltonianEval(0.0, pts, pts.shape[0] == 1, None)
        return HamiltonianEval(vmax, am, single, am[0].copy() if single else None)


@dataclass(frozen=True, eq=False)
class Interval1D(SetValuedMap):
    """``F(x) = [f(x), g(x)]`` with optional derivatives and kink locations."""

    f: object
    g: object
    df: object = None
    dg: object = None
    kinks: tuple = ()

    kind = "interval"
    dim = 1

    @property
    def constant(self):
        return False

    def _fg(self, X):
        s = X[..., 0]
        P = s.shape[0]
        return _scalar(self.f, s, P), _scalar(self.g, s, P)

    def validate(self, X):
        X = _points(X, 1)
        lo, hi = self._fg(X)
        bad = lo > hi + _GEOM_TOL * (1 + np.abs(hi))
        if np.any(bad):
            raise InvalidDynamicsError(f"f(x) > g(x) at x={X[np.argmax(bad), 0]!r}")

    def support_points(self, X, D):
        X = _points(X, 1)
        lo, hi = self._fg(X)
        d = np.asarray(D)[:, 0]
        pick = np.where(d[None, :] > 0, hi[:, None], lo[:, None])
        return pick[..., None]

    def centroid(self, X):
        lo, hi = self._fg(_points(X, 1))
        return (0.5 * (lo + hi))[:, None]

    def body_samples(self, x, count=None):
        lo, hi = self._fg(_points(x, 1))
        return np.array([[lo[0]], [0.5 * (lo[0] + hi[0])], [hi[0]]])

    def boundary_pairs(self, x, count=None):
        lo, hi = self._fg(_points(x, 1))
        return np.array([[lo[0]], [hi[0]]]), np.array([[-1.0], [1.0]])

    def support(self, x, p):
        X = _points(x, 1)
        self.validate(X)
        p = _covector(p, 1)
        lo, hi = self._fg(X)
        lo, hi = lo[0], hi[0]
        if p[0] > 0:
            v = hi
        elif p[0] < 0:
            v = lo
        else:
            pts = np.array([[lo], [0.5 * (lo + hi)], [hi]])
            return HamiltonianEval(0.0, unique_rows(pts), lo == hi, None)
        return HamiltonianEval(float(v * p[0]), np.array([[v]]), True, np.array([v]))

    def _derivatives(self, fn, dfn, s):
        h = _FD_STEP * (1.0 + abs(s))
        ev = _scalar(fn, np.array([s - h, s, s + h]), 3)
        for k in self.kinks:
            if abs(s - k) <= 1e-9 * (1.0 + abs(k)):
                # one-sided derivatives bracket the Clarke interval at a kink
                return [(ev[1] - ev[0]) / h, (ev[2] - ev[1]) / h]
        if dfn is not None:
            return [float(_scalar(dfn, np.array([s]), 1)[0])]
        left, right = (ev[1] - ev[0]) / h, (ev[2] - ev[1]) / h
        # smooth data: one-sided quotients differ by ~ f'' h; a jump means an unannotated kink
        if abs(right - left) > 1e-3 * (1.0 + abs(left) + abs(right)):
            raise SubgradientError(f"field data not differentiable near x={s:.6g}; annotate the kink")
        return [float((ev[2] - ev[0]) / (2 * h))]

    def x_subgradient(self, x, p):
        s = float(_points(x, 1)[0, 0])
        p = _covector(p, 1)[0]
        if p == 0.0:
            raise ValueError("x-subgradient of H requires p != 0")
        fn, dfn = (self.g, self.dg) if p > 0 else (self.f, self.df)
        vals = sorted(d * p for d in self._derivatives(fn, dfn, s))
        return unique_rows(np.array(vals)[:, None])


@dataclass(frozen=True, eq=False)
class Ball(SetValuedMap):
    """``F(x) = B(c(x), r(x))``; Jacobians default to central differences."""

    center: object
    radius: object
    dim: int = 2
    center_jac: object = None
    radius_grad: object = None
    constant: bool = False

    kind = "ball"

    def _cr(self, X):
        P = X.shape[0]
        c = np.broadcast_to(np.asarray(self.center(X), float), (P, self.dim)).copy()
        r = _scalar(self.radius, X, P)
        return c, r

    def validate(self, X):
        X = _points(X, self.dim)
        _, r = self._cr(X)
        if np.any(r < 0):
            raise InvalidDynamicsError(f"negative radius at x={X[np.argmax(r < 0)]!r}")

    def support_points(self, X, D):
        X = _points(X, self.dim)
        c, r = self._cr(X)
        return c[:, None, :] + r[:, None, None] * np.asarray(D)[None, :, :]

    def centroid(self, X):
        return self._cr(_points(X, self.dim))[0]

    def support(self, x, p):
        X = _points(x, self.dim)
        self.validate(X)
        p = _covector(p, self.dim)
        c, r = self._cr(X)
        c, r = c[0], r[0]
        norm = np.linalg.norm(p)
        if norm == 0.0:
            pts = c + r * directions(self.dim)
            pts = np.vstack([pts, c]) if r > 0 else c[None]
            return HamiltonianEval(0.0, pts, r == 0.0, None)
        v = c + r * p / norm
        return HamiltonianEval(float(c @ p + r * norm), v[None], True, v)

    def _jac(self, x):
        if self.center_jac is not None:
            return np.asarray(self.center_jac(x[None]), float).reshape(self.dim, self.dim)
        n = self.dim
        h = _FD_STEP * (1.0 + np.abs(x).max())
        E = np.eye(n) * h
        cp = self._cr(x[None] + E)[0]
        cm = self._cr(x[None] - E)[0]
        return ((cp - cm) / (2 * h)).T  # J[i, j] = d c_i / d x_j

    def _rgrad(self, x):
        if self.radius_grad is not None:
            return np.asarray(self.radius_grad(x[None]), float).reshape(self.dim)
        n = self.dim
        h = _FD_STEP * (1.0 + np.abs(x).max())
        E = np.eye(n) * h
        return (self._cr(x[None] + E)[1] - self._cr(x[None] - E)[1]) / (2 * h)

    def x_subgradient(self, x, p):
        x = _points(x, self.dim)[0]
        p = _covector(p, self.dim)
        norm = np.linalg.norm(p)
        if norm == 0.0:
            raise ValueError("x-subgradient of H requires p != 0")
        if self.constant:
            return np.zeros((1, self.dim))
        return (self._jac(x).T @ p + norm * self._rgrad(x))[None]


@dataclass(frozen=True, eq=False)
class Polytope(SetValuedMap):
    """Convex hull of vertex fields ``vertices(X) -> (P, m, n)``."""

    vertices: object
    dim: int = 2
    vertices_jac: object = None
    constant: bool = False

    kind = "polytope"

    def _verts(self, X):
        V = np.asarray(self.vertices(X), float)
        if V.ndim == 2:
            V = np.broadcast_to(V, (X.shape[0],) + V.shape)
        return V

    def support_points(self, X, D):
        X = _points(X, self.dim)
        V = self._verts(X)
        vals = np.einsum("pmn,sn->psm", V, np.asarray(D))
        idx = np.argmax(vals, axis=2)
        return np.take_along_axis(V[:, None, :, :], idx[:, :, None, None], axis=2)[:, :, 0, :]

    def centroid(self, X):
        return self._verts(_points(X, self.dim)).mean(axis=1)

    def body_samples(self, x, count=None):
        return self._verts(_points(x, self.dim))[0]

    def support(self, x, p):
        X = _points(x, self.dim)
        p = _covector(p, self.dim)
        return self._generic_support(X[0], p, self._verts(X)[0])

    def x_subgradient(self, x, p):
        X = _points(x, self.dim)
        p = _covector(p, self.dim)
        if not np.any(p):
            raise ValueError("x-subgradient of H requires p != 0")
        if self.constant:
            return np.zeros((1, self.dim))
        V = self._verts(X)[0]
        vals = V @ p
        scale = 1.0 + np.abs(V).max() * (1.0 + np.linalg.norm(p))
        active = np.flatnonzero(vals >= vals.max() - 1e-12 * scale)
        x0 = X[0]
        if self.vertices_jac is not None:
            J = np.asarray(self.vertices_jac(X), float)[0]  # (m, n, n)
            grads = [J[i].T @ p for i in active]
        else:
            h = _FD_STEP * (1.0 + np.abs(x0).max())
            E = np.eye(self.dim) * h
            Vp = self._verts(x0[None] + E)  # (n, m, n)
            Vm = self._verts(x0[None] - E)
            grads = [((Vp[:, i, :] - Vm[:, i, :]) @ p) / (2 * h) for i in active]
        return unique_rows(np.array(grads))


@dataclass(frozen=True, eq=False)
class FixedBody(SetValuedMap):
    """Constant convex body represented by boundary samples.

    Support evaluations are exact for the sampled polygon; with a smooth
    boundary sampler the resolution is the sample spacing. When ``normals``
    are given they are the outer unit normals of the smooth body and are used
    for R-convexity tests.
    """

    points: np.ndarray
    normals: np.ndarray = None
    name: str = "body"

    kind = "fixed_body"
    constant = True

    @property
    def dim(self):
        return self.points.shape[1]

    def support_points(self, X, D):
        X = _points(X, self.dim)
        D = np.ascontiguousarray(D, dtype=float)
        # state independent: memoize the argmax per direction set
        cache = self.__dict__.setdefault("_support_cache", {})
        key = (D.shape, D.tobytes())
        pts = cache.get(key)
        if pts is None:
            pts = self.points[np.argmax(self.points @ D.T, axis=0)]
            pts.flags.writeable = False
            if len(cache) < 64:
                cache[key] = pts
        return np.broadcast_to(pts, (X.shape[0],) + pts.shape)

    def centroid(self, X):
        X = _points(X, self.dim)
        return np.broadcast_to(self.points.mean(axis=0), X.shape).copy()

    def body_samples(self, x, count=None):
        return self.points

    def boundary_pairs(self, x, count=None):
        D = directions(self.dim, count)
        if self.normals is None:
            idx = np.argmax(self.points @ D.T, axis=0)
            return self.points[idx], D.copy()
        idx = np.argmax(self.normals @ D.T, axis=0)
        return self.points[idx], self.normals[idx]

    def support(self, x, p):
        _points(x, self.dim)
        p = _covector(p, self.dim)
        ev = self._generic_support(None, p, self.points)
        if self.normals is None or ev.is_singleton or not np.any(p):
            return ev
        # a smooth sampled boundary is strictly convex up to resolution:
        # split sampling ties by normal alignment
        vals = self.points @ p
        cand = np.flatnonzero(vals >= ev.value - 1e-12 * (1.0 + abs(ev.value)))
        best = cand[np.argmax(self.normals[cand] @ p)]
        v = self.points[best]
        return HamiltonianEval(float(v @ p), v[None].copy(), True, v.copy())

    def x_subgradient(self, x, p):
        _points(x, self.dim)
        p = _covector(p, self.dim)
        if not np.any(p):
            raise ValueError("x-subgradient of H requires p != 0")
        return np.zeros((1, self.dim))

    # -- factories ----------------------------------------------------------

    @classmethod
    def disk(cls, radius, center=(0.0, 0.0), count=2048):
        ang = 2 * np.pi * np.arange(count) / count
        nrm = np.column_stack([np.cos(ang), np.sin(ang)])
        return cls(np.asarray(center, float) + radius * nrm, nrm, name=f"disk({radius})")

    @classmethod
    def polygon(cls, vertices):
        return cls(np.asarray(vertices, float), None, name="polygon")

    @classmethod
    def quartic(cls, cap_radius=1.0, count=8001):
        """``epigraph(s**4)`` intersected with ``B(0, cap_radius)``.

        Curve samples cluster quadratically at the flat bottom so curvature
        defects at the origin are resolved down to ``~1e-7``.
        """
        R = float(cap_radius)
        s_star = optimize.brentq(lambda s: s * s + s ** 8 - R * R, 0.0, R)
        u = np.linspace(-1.0, 1.0, count)
        s = s_star * np.sign(u) * u * u
        curve = np.column_stack([s, s ** 4])
        cn = np.column_stack([4 * s ** 3, -np.ones_like(s)])
        cn /= np.linalg.norm(cn, axis=1, keepdims=True)
        th0 = np.arctan2(s_star ** 4, s_star)
        th = np.linspace(th0, np.pi - th0, count // 2 | 1)[1:-1]
        arc = R * np.column_stack([np.cos(th), np.sin(th)])
        an = arc / R
        # normal cones at the two corners
        corners, cnorm = [], []
        for sign in (-1.0, 1.0):
            z = np.array([sign * s_star, s_star ** 4])
            n_curve = np.array([4 * (sign * s_star) ** 3, -1.0])
            n_curve /= np.linalg.norm(n_curve)
            n_arc = z / R
            for w in np.linspace(0.0, 1.0, 17)[1:-1]:
                m = (1 - w) * n_curve + w * n_arc
                corners.append(z)
                cnorm.append(m / np.linalg.norm(m))
        pts = np.vstack([curve, arc, corners])
        nrm = np.vstack([cn, an, cnorm])
        return cls(pts, nrm, name=f"quartic({R})")


# ---------------------------------------------------------------------------
# module-level operations

def support(F, x, p):
    """Hamiltonian ``H(x, p)`` with its maximizer set."""
    return F.support(x, p)


def hamiltonian(F, x, p):
    return F.support(x, p).value


def grad_p(F, x, p):
    """``grad_p H(x, p)``; raises if the maximizer is not unique or ``p == 0``."""
    ev = F.support(x, p)
    if ev.p_gradient is None:
        raise ValueError("grad_p H undefined (p = 0 or non-unique maximizer)")
    return ev.p_gradient


def hamiltonian_x_subgradient(F, x, p):
    """Rows span (by convex hull) the computable part of the x-subdifferential."""
    return F.x_subgradient(x, p)


def _box(box, dim):
    lo, hi = (np.atleast_1d(np.asarray(b, float)) for b in box)
    if lo.shape != (dim,) or hi.shape != (dim,):
        raise DimensionError(f"box does not match dimension {dim}")
    return lo, hi


@dataclass(frozen=True)
class MidpointResult:
    constant: float
    diverges: bool
    worst_x: np.ndarray
    worst_z: np.ndarray
    level_maxima: np.ndarray


def check_midpoint_semiconvexity(F, box, sample_count=64, levels=14, direction_count=None):
    """Fit ``c`` in ``dist+_H(2F(x), F(x+z) + F(x-z)) <= c |z|^2`` on samples.

    The Hausdorff semidistance between convex bodies is evaluated through
    support functions on a fixed direction fan.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    lo, hi = _box(box, F.dim)
    D = directions(F.dim, direction_count)

    def gap(X, Z):
        h0 = F.support_values(X, D)
        hp = F.support_values(X + Z, D)
        hm = F.support_values(X - Z, D)
        # rounding in the support values must not read as curvature at tiny |z|
        scale = np.max(np.abs(h0) + np.abs(hp) + np.abs(hm), axis=1, keepdims=True)
        noise = 256 * np.finfo(float).eps * (1.0 + scale)
        return np.max(np.maximum(2 * h0 - hp - hm - noise, 0.0), axis=1)

    fit = fit_midpoint_constant(gap, lo, hi, sample_count, levels)
    return MidpointResult(fit.constant, fit.diverges, fit.worst_x, fit.worst_h, fit.level_maxima)


@dataclass(frozen=True)
class RConvexityResult:
    verdict: bool
    worst_residual: float
    worst_pair: tuple
    char4_verdict: bool
    agree: bool
    vacuous: bool = False


def _rconvex_residuals(Z, N, Vb, R):
    diff = Z[:, None, :] - Vb[None, :, :]
    d2 = np.einsum("kmn,kmn->km", diff, diff)
    ip = np.maximum(np.einsum("kmn,kn->km", diff, N), 0.0)
    num = d2 - 2.0 * R * ip
    den = np.sqrt(d2) + np.sqrt(2.0 * R * ip)
    res5 = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    ctr = Z - R * N
    res4 = np.linalg.norm(ctr[:, None, :] - Vb[None, :, :], axis=2) - R
    return res5, res4


def check_r_convexity(F, x, R, direction_samples=64, tol=None):
    """Test R-convexity of ``F(x)`` via the ball-inequality characterization.

    Residual per boundary pair ``(z, n)`` and body point ``v`` is
    ``|z - v| - sqrt(2R) <z - v, n>^(1/2)`` (evaluated in a cancellation-free
    form); containment in the ball ``B(z - R n, R)`` is cross-checked on the
    same samples.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    Z, N = F.boundary_pairs(x, direction_samples)
    Vb = F.body_samples(x)
    diam = float(np.max(np.ptp(Vb, axis=0))) if Vb.shape[0] > 1 else 0.0
    if diam == 0.0:
        warnings.warn("degenerate (singleton) body: vacuously R-convex", stacklevel=2)
        return RConvexityResult(True, 0.0, (), True, True, vacuous=True)
    if tol is None:
        tol = _GEOM_TOL * diam
    res5, res4 = _rconvex_residuals(Z, N, Vb, R)
    k, m = np.unravel_index(np.argmax(res5), res5.shape)
    v5 = bool(res5.max() <= tol)
    v4 = bool(res4.max() <= tol)
    clash = ((res5 > tol) & (res4 < -tol)) | ((res4 > tol) & (res5 < -tol))
    return RConvexityResult(
        verdict=v5,
        worst_residual=float(res5.max()),
        worst_pair=(Z[k].copy(), N[k].copy(), Vb[m].copy()),
        char4_verdict=v4,
        agree=bool(v4 == v5 and not clash.any()),
    )


def r_convexity_radius(F, x, R_max=1e3, direction_samples=64, rel_tol=1e-6):
    """Smallest ``R <= R_max`` passing :func:`check_r_convexity` (bisection), else inf."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if not check_r_convexity(F, x, R_max, direction_samples).verdict:
            return np.inf
        lo, hi = 0.0, R_max
        while hi - lo > rel_tol * max(hi, 1e-12):
            mid = 0.5 * (lo + hi)
            if mid > 0 and check_r_convexity(F, x, mid, direction_samples).verdict:
                hi = mid
            else:
                lo = mid
    return hi


def h2_modulus(F, x, direction_count=None):
    """Largest ``c'`` with ``<v - v_p, p> <= -c' |p| |v - v_p|^2`` on samples.

    Uses maximizers of ``<., p>`` for a direction fan rotated half a step
    against the one used by the R-convexity test.
    """
    n = F.dim
    if direction_count is None and n == 2:
        direction_count = 4 * len(directions(n))
    D = directions(n, direction_count)
    if n == 2:
        ang = np.arctan2(D[:, 1], D[:, 0]) + np.pi / len(D)
        D = np.column_stack([np.cos(ang), np.sin(ang)])
    Vb = F.body_samples(x)
    best = np.inf
    for p in D:
        ev = F.support(x, p)
        vp = ev.argmax_set[0]
        diff = Vb - vp
        d2 = np.einsum("mn,mn->m", diff, diff)
        ok = d2 > 1e-24
        if not np.any(ok):
            continue
        ratio = -(diff[ok] @ p) / d2[ok]
        best = min(best, float(ratio.min()))
    return max(best, 0.0) if np.isfinite(best) else np.inf


@dataclass
class HypothesisAudit:
    sh_ok: bool
    sh_witnesses: dict
    h1_semiconvexity_constant: float
    h1_pgrad_lipschitz: float
    h2_modulus: float
    r_convexity_radius: float
    counterexample_points: list = field(default_factory=list)
    partial: bool = False

    @property
    def h1_ok(self):
        return bool(np.isfinite(self.h1_semiconvexity_constant) and np.isfinite(self.h1_pgrad_lipschitz))

    @property
    def h2_ok(self):
        return bool(np.isfinite(self.r_convexity_radius) and self.h2_modulus > 0)

    @property
    def strongly_convex(self):
        return self.h2_ok

    @property
    def growth_constant(self):
        return self.sh_witnesses.get("growth_constant", np.inf)

    @property
    def lipschitz_constant(self):
        return self.sh_witnesses.get("lipschitz_constant", np.inf)

    def consistency_gap(self):
        """``|2 R c' - 1|`` when both estimates are finite, else None."""
        if np.isfinite(self.r_convexity_radius) and self.h2_modulus > 0 and np.isfinite(self.h2_modulus):
            return abs(2.0 * self.r_convexity_radius * self.h2_modulus - 1.0)
        return None

    def to_dict(self):
        def clean(v):
            if isinstance(v, (float, np.floating)):
                return float(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf")
            if isinstance(v, np.ndarray):
                return [clean(a) for a in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(a) for a in v]
            if isinstance(v, dict):
                return {k: clean(a) for k, a in v.items()}
            return v

        return clean({
            "sh_ok": self.sh_ok,
            "sh_witnesses": self.sh_witnesses,
            "h1_semiconvexity_constant": self.h1_semiconvexity_constant,
            "h1_pgrad_lipschitz": self.h1_pgrad_lipschitz,
            "h1_ok": self.h1_ok,
            "h2_modulus": self.h2_modulus,
            "r_convexity_radius": self.r_convexity_radius,
            "h2_ok": self.h2_ok,
            "counterexample_points": self.counterexample_points,
            "partial": self.partial,
        })


def lipschitz_constant(F, box, sample_count=32, direction_count=None):
    """Hausdorff-Lipschitz estimate ``max |h(x,d) - h(y,d)| / |x - y|``."""
    lo, hi = _box(box, F.dim)
    X = box_points(lo, hi, sample_count)
    D = directions(F.dim, direction_count)
    H = F.support_values(X, D)
    best = 0.0
    for i in range(len(X)):
        dx = np.linalg.norm(X[i + 1:] - X[i], axis=1)
        if dx.size == 0:
            continue
        dh = np.max(np.abs(H[i + 1:] - H[i]), axis=1)
        best = max(best, float(np.max(dh / np.maximum(dx, 1e-300))))
    # close pairs catch local slopes the scattered pairs miss
    h = 1e-4 * float(np.max(hi - lo))
    for e in np.eye(F.dim):
        Xp = np.clip(X + h * e, lo, hi)
        step = np.linalg.norm(Xp - X, axis=1)
        ok = step > 0
        if np.any(ok):
            dh = np.max(np.abs(F.support_values(Xp[ok], D) - H[ok]), axis=1)
            best = max(best, float(np.max(dh / step[ok])))
    return best


def pgrad_lipschitz(F, box, sample_count=32, direction_count=None):
    """Finite-difference Lipschitz modulus of ``x -> grad_p H(x, p)`` for
    ``p`` on an annulus bounded away from 0; inf if the gradient fails to exist."""
    lo, hi = _box(box, F.dim)
    X = box_points(lo, hi, sample_count)
    D = directions(F.dim, direction_count)
    h = 1e-4 * float(np.max(hi - lo))
    best = 0.0
    for scale in (0.5, 1.0, 2.0):
        for p in D * scale:
            for x in X:
                g0 = F.support(x, p)
                if not g0.is_singleton:
                    return np.inf, x
                for e in np.eye(F.dim):
                    y = np.clip(x + h * e, lo, hi)
                    step = np.linalg.norm(y - x)
                    if step == 0:
                        continue
                    g1 = F.support(y, p)
                    if not g1.is_singleton:
                        return np.inf, y
                    best = max(best, float(np.linalg.norm(g1.p_gradient - g0.p_gradient) / step))
    return best, None


def audit_hypotheses(F, box, budget=32, R_max=1e3):
    """Estimate the standing hypotheses, (H1) and (H2) on ``box``."""
    lo, hi = _box(box, F.dim)
    partial = budget < 8
    n_x = max(2, min(budget, 32))
    X = box_points(lo, hi, n_x)
    counter = []

    nonempty = True
    try:
        F.validate(X)
    except InvalidDynamicsError as exc:
        nonempty = False
        counter.append({"hypothesis": "SH(i)", "detail": str(exc)})
    V = F.velocity_samples(X)
    speeds = np.max(np.linalg.norm(V, axis=-1), axis=1)
    growth = float(np.max(speeds / (1.0 + np.linalg.norm(X, axis=1))))
    lip = lipschitz_constant(F, (lo, hi), n_x)
    witnesses = {
        "nonempty_convex_compact": nonempty,
        "growth_constant": growth,
        "lipschitz_constant": lip,
        "max_speed": float(speeds.max()),
    }
    sh_ok = nonempty and np.isfinite(growth) and np.isfinite(lip)

    mid = check_midpoint_semiconvexity(F, (lo, hi), sample_count=n_x)
    c_semi = np.inf if mid.diverges else mid.constant
    if mid.diverges:
        counter.append({"hypothesis": "H1(i)", "x": mid.worst_x, "z": mid.worst_z})

    n_small = max(2, min(n_x, 6))
    lip_grad, bad = pgrad_lipschitz(F, (lo, hi), n_small, direction_count=16 if F.dim > 1 else None)
    if bad is not None:
        counter.append({"hypothesis": "H1(ii)", "x": bad})

    Xr = box_points(lo, hi, max(2, min(n_x, 8)))
    radii = [r_convexity_radius(F, x, R_max) for x in Xr]
    R = float(max(radii))
    cprime = float(min(h2_modulus(F, x) for x in Xr))
    if not np.isfinite(R):
        counter.append({"hypothesis": "H2", "x": Xr[int(np.argmax(radii))]})

    return HypothesisAudit(
        sh_ok=bool(sh_ok),
        sh_witnesses=witnesses,
        h1_semiconvexity_constant=float(c_semi),
        h1_pgrad_lipschitz=float(lip_grad),
        h2_modulus=cprime,
        r_convexity_radius=R,
        counterexample_points=counter,
        partial=partial,
    )
