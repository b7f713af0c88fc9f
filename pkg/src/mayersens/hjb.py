"""Value function of the Mayer problem by backward dynamic programming.

The scheme is semi-Lagrangian: on a uniform space-time grid

    V(t_k, x) = min_{v in S(x)} V~(t_j, x + (t_j - t_k) v),   j = min(k + m, N_t - 1),

where ``S(x)`` holds support points of ``F(x)`` on a direction fan plus a
central point, ``V~`` is the multilinear interpolant and the lookback ``m``
is, node by node, the largest number of time steps keeping every foot of that
node inside one spatial cell. The lookback removes the numerical diffusion a one-step update would
accumulate when ``dt * speed`` is much smaller than ``dx``.
"""

from dataclasses import dataclass, field
import hashlib
import io
import struct

import numpy as np

from . import kernels
from .exceptions import CFLError, DomainError, DomainExitError, InvalidDynamicsError
from .nonsmooth import SampledFunction
from .sampling import box_points

_MAGIC = b"VFLD"
_VERSION = 1
# a node is affected when more than this fraction of its value is carried
# (through interpolation weights) from clamped feet
INFLUENCE_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class MayerProblem:
    """Minimize ``phi(x(T))`` over trajectories of ``x' in F(x)`` from ``(t0, x0)``.

    ``phi`` and ``phi_grad`` are vectorized over points ``(P, n)``.
    """

    F: object
    phi: object
    t0: float
    T: float
    lo: np.ndarray
    hi: np.ndarray
    phi_grad: object = None
    name: str = "problem"
    phi_kinks: tuple = ()

    def __post_init__(self):
        if not self.t0 < self.T:
            raise ValueError("need t0 < T")
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if lo.shape != (self.F.dim,) or hi.shape != (self.F.dim,) or np.any(lo >= hi):
            raise ValueError("domain box must be nonempty and match the dimension of F")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.F.dim

    def phi_values(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.broadcast_to(np.asarray(self.phi(X), float), (X.shape[0],)).copy()

    def phi_gradient(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        if self.phi_grad is None:
            raise ValueError("terminal cost has no exact-gradient callback")
        return np.asarray(self.phi_grad(x[None]), float).reshape(self.dim)

    def terminal_gradient(self, x):
        """Exact gradient of the terminal cost when available, else a
        central-difference estimate."""
        x = np.atleast_1d(np.asarray(x, float))
        if self.phi_grad is not None:
            return self.phi_gradient(x)
        h = 1e-6 * (1.0 + np.abs(x))
        E = np.diag(h)
        return (self.phi_values(x + E) - self.phi_values(x - E)) / (2 * h)

    def phi_function(self, lo=None, hi=None):
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        return SampledFunction(self.phi_values, lo, hi, grad=self.phi_grad)


@dataclass(frozen=True)
class GridSpec:
    """``nt`` time nodes and ``nx`` nodes per axis over the user box.

    ``pad`` is ``"auto"`` (reachability envelope) or a distance added on
    every side; padded axes keep the user-box spacing.
    """

    nt: int
    nx: object
    pad: object = "auto"
    directions: int = None

    def nodes(self, dim):
        nx = self.nx
        nx = (int(nx),) * dim if np.isscalar(nx) else tuple(int(a) for a in nx)
        if len(nx) != dim or min(nx) < 2 or self.nt < 2:
            raise ValueError("grid needs at least two nodes per axis")
        return nx


# ---------------------------------------------------------------------------
# padding and CFL

def _speed_on(F, lo, hi, count):
    pts = box_points(lo, hi, 64 if F.dim == 1 else 128)
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(F.dim, -1).T
    return F.max_speed(np.vstack([pts, corners]), count)


def _outward_speed(F, lo, hi, count, per_face=16):
    """Max outward normal velocity over the faces of the box ``[lo, hi]``."""
    n = F.dim
    best = 0.0
    for a in range(n):
        others = [i for i in range(n) if i != a]
        if others:
            pts = box_points(lo[others], hi[others], per_face)
            corners = np.array(np.meshgrid(*[(lo[i], hi[i]) for i in others], indexing="ij")).reshape(len(others), -1).T
            face = np.vstack([pts, corners])
        else:
            face = np.zeros((1, 0))
        for side, val in ((-1.0, lo[a]), (1.0, hi[a])):
            X = np.empty((len(face), n))
            X[:, others] = face
            X[:, a] = val
            V = F.velocity_samples(X, count)
            best = max(best, float(np.max(side * V[..., a])))
    return best


def reachability_pad(F, lo, hi, horizon, count=None, steps=32, safety=1.05):
    """Distance ``d(horizon)`` solving ``d' = M(d)`` where ``M`` bounds the
    outward normal speed on the faces of the box enlarged by ``d``; states
    reachable from the box within the horizon stay in the enlarged box."""
    d = 0.0
    h = horizon / steps
    for _ in range(steps):
        m0 = safety * _outward_speed(F, lo - d, hi + d, count)
        guess = d + h * m0
        m1 = safety * _outward_speed(F, lo - guess, hi + guess, count)
        d += h * max(m0, m1)
    return d


def lookback(dt, dx_min, speed):
    if speed <= 0:
        return 1
    return max(1, int(np.floor(dx_min / (dt * speed) + 1e-9)))


# ---------------------------------------------------------------------------
# value fields

@dataclass(frozen=True, eq=False)
class ValueField:
    """Space-time samples of ``V`` (time-major) with multilinear interpolation."""

    t: np.ndarray
    axes: tuple
    values: np.ndarray
    affected: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.t, self.values, self.affected, self.box_lo, self.box_hi, *self.axes):
            a.flags.writeable = False

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def origin(self):
        return np.array([a[0] for a in self.axes])

    @property
    def lo(self):
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self):
        return np.array([a[-1] for a in self.axes])

    @property
    def t0(self):
        return float(self.t[0])

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def field_id(self):
        h = hashlib.sha256(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]

    def _st_grid(self):
        origin = np.concatenate([[self.t[0]], self.origin])
        spacing = np.concatenate([[self.dt], self.spacing])
        return origin, spacing

    def interpolate(self, ts, X):
        """``V(t_i, x_i)`` for paired rows; ``ts`` broadcasts against ``X``."""
        X = np.atleast_2d(np.asarray(X, float))
        ts = np.broadcast_to(np.asarray(ts, float), (X.shape[0],))
        origin, spacing = self._st_grid()
        vals, _ = kernels.interp_multilinear(self.values, origin, spacing, np.column_stack([ts, X]))
        return vals

    def __call__(self, t, x):
        return float(self.interpolate(t, np.atleast_1d(np.asarray(x, float))[None])[0])

    def inside(self, ts, X, slack=1e-12):
        X = np.atleast_2d(X)
        ts = np.broadcast_to(np.asarray(ts, float), (X.shape[0],))
        ok = (ts >= self.t[0] - slack) & (ts <= self.t[-1] + slack)
        return ok & np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=1)

    def trusted(self, ts, X):
        """Inside the grid and not influenced by clamped boundary data."""
        X = np.atleast_2d(np.asarray(X, float))
        ts = np.broadcast_to(np.asarray(ts, float), (X.shape[0],))
        inside = self.inside(ts, X)
        out = np.zeros(X.shape[0], bool)
        if np.any(inside):
            origin, spacing = self._st_grid()
            Z = np.column_stack([ts, X])[inside]
            m, _ = kernels.interp_multilinear(self.affected.astype(float), origin, spacing, Z)
            out[inside] = m == 0.0
        return out

    def spacetime_function(self):
        """The interpolant as a :class:`SampledFunction` of ``(t, x)``."""
        lo = np.concatenate([[self.t[0]], self.lo])
        hi = np.concatenate([[self.t[-1]], self.hi])
        return SampledFunction(lambda Z: self.interpolate(Z[:, 0], Z[:, 1:]), lo, hi)

    def space_function(self, t):
        return SampledFunction(lambda X: self.interpolate(t, X), self.lo, self.hi)

    def time_index(self, t):
        k = int(round((t - self.t[0]) / self.dt))
        if not 0 <= k < len(self.t) or abs(self.t[k] - t) > 1e-9 * (1 + abs(t)):
            raise DomainError(f"t={t} is not a mesh time")
        return k

    def user_slice(self):
        """Index slices of the spatial nodes lying in the user box."""
        out = []
        for a, lo, hi in zip(self.axes, self.box_lo, self.box_hi):
            tol = 1e-9 * (a[1] - a[0])
            idx = np.flatnonzero((a >= lo - tol) & (a <= hi + tol))
            out.append(slice(idx[0], idx[-1] + 1))
        return tuple(out)

    # -- tolerance budgets --------------------------------------------------

    def _curvature(self, kind):
        """Per-node ``sum_a w_a |Delta_a^2 V|`` over space-time axes with
        ``w_a = 1/2`` (``"value"``) or ``1/h_a`` (``"slope"``); cached."""
        cache = self.__dict__.setdefault("_curv_cache", {})
        if kind in cache:
            return cache[kind]
        V = self.values
        steps = np.concatenate([[self.dt], self.spacing])
        tot = np.zeros_like(V)
        for a in range(V.ndim):
            d2 = np.abs(np.diff(V, 2, axis=a))
            # edge nodes inherit their neighbour's second difference
            d2 = np.concatenate([np.take(d2, [0], axis=a), d2, np.take(d2, [-1], axis=a)], axis=a)
            tot += d2 * (0.5 if kind == "value" else 1.0 / steps[a])
        tot[self.affected] = 0.0
        tot.flags.writeable = False
        cache[kind] = tot
        return tot

    def _local_max(self, kind, t_range=None, center=None, radius=None):
        tot = self._curvature(kind)
        sl = [slice(None)] * tot.ndim
        if t_range is not None:
            k = np.flatnonzero((self.t >= t_range[0] - 1e-12) & (self.t <= t_range[1] + 1e-12))
            if k.size == 0:
                return 0.0
            sl[0] = slice(k[0], k[-1] + 1)
        if center is not None:
            c = np.atleast_1d(np.asarray(center, float))
            r = np.inf if radius is None else float(radius)
            for a, (ax, h) in enumerate(zip(self.axes, self.spacing)):
                i0 = int(np.searchsorted(ax, c[a] - r - h - 1e-12 * h, side="left"))
                i1 = int(np.searchsorted(ax, c[a] + r + h + 1e-12 * h, side="right"))
                if i1 <= i0:
                    return 0.0
                sl[a + 1] = slice(i0, i1)
        vals = tot[tuple(sl)]
        return float(vals.max()) if vals.size else 0.0

    def interpolation_error(self, t_range=None, center=None, radius=None):
        """Tolerance budget for interpolated values in a region.

        Max over nodes of ``sum_a |Delta_a^2 V| / 2`` (time axis included),
        restricted to mesh times in ``t_range`` and nodes within ``radius``
        (max-norm, plus one cell) of ``center`` when given. Affected nodes
        are ignored.
        """
        return self._local_max("value", t_range, center, radius)

    def slope_error(self, t_range=None, center=None, radius=None):
        """Tolerance budget for difference quotients of the interpolant:
        max over nodes of ``sum_a |Delta_a^2 V| / h_a`` (same region rules
        as :meth:`interpolation_error`)."""
        return self._local_max("slope", t_range, center, radius)

    def slope_scale(self, t, x, cells=2):
        """Median of the slope budget map over the ``(2 cells + 1)``-node
        space-time window around ``(t, x)``. A kink occupies a thin set of
        nodes, so the median reflects the smooth neighbourhood."""
        tot = self._curvature("slope")
        x = np.atleast_1d(np.asarray(x, float))
        sl = []
        for ax, c in zip((self.t,) + tuple(self.axes), np.concatenate([[t], x])):
            i = int(np.clip(np.searchsorted(ax, c), 0, len(ax) - 1))
            sl.append(slice(max(0, i - cells), min(len(ax), i + cells + 1)))
        return float(np.median(tot[tuple(sl)]))

    def sup_error(self, value, refine=2):
        """Sup of ``|V~ - value|`` over the user box and all mesh times.

        ``value(t, X)`` is a vectorized reference. Samples lie on the spatial
        grid refined ``refine`` times, so cell interiors are measured too.
        """
        axes = []
        for a, lo, hi in zip(self.axes, self.box_lo, self.box_hi):
            h = (a[1] - a[0]) / refine
            axes.append(np.linspace(lo, hi, int(round((hi - lo) / h)) + 1))
        X = np.column_stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
        err = 0.0
        for tk in self.t:
            err = max(err, float(np.max(np.abs(self.interpolate(tk, X) - value(tk, X)))))
        return err

    # -- serialization ------------------------------------------------------

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<III", _VERSION, self.dim, len(self.t)))
        buf.write(struct.pack("<" + "I" * self.dim, *self.shape))
        buf.write(np.asarray(self.t, "<f8").tobytes())
        for a in self.axes:
            buf.write(np.asarray(a, "<f8").tobytes())
        buf.write(np.asarray(self.box_lo, "<f8").tobytes())
        buf.write(np.asarray(self.box_hi, "<f8").tobytes())
        buf.write(np.ascontiguousarray(self.values, "<f8").tobytes())
        buf.write(np.ascontiguousarray(self.affected, "u1").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != _MAGIC:
            raise ValueError("not a value-field file")
        ver, dim, nt = struct.unpack_from("<III", data, 4)
        if ver != _VERSION:
            raise ValueError(f"unsupported value-field version {ver}")
        off = 16
        shape = struct.unpack_from("<" + "I" * dim, data, off)
        off += 4 * dim

        def take(count, dtype="<f8"):
            nonlocal off
            size = np.dtype(dtype).itemsize * count
            arr = np.frombuffer(data[off:off + size], dtype=dtype).copy()
            off += size
            return arr

        t = take(nt)
        axes = tuple(take(n) for n in shape)
        lo, hi = take(dim), take(dim)
        total = nt * int(np.prod(shape))
        values = take(total).reshape((nt,) + tuple(shape)).astype(float)
        affected = take(total, "u1").reshape(values.shape).astype(bool)
        return cls(t, axes, values, affected, lo, hi, {})

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path=None, t_index=None):
        """Rows ``t,x1..xn,V`` in row-major order after a ``#`` header."""
        lines = [
            "# mayersens value field v1",
            f"# dim: {self.dim}",
            f"# nt: {len(self.t)}",
            "# nx: " + ",".join(str(n) for n in self.shape),
            "# box_lo: " + ",".join(repr(float(v)) for v in self.box_lo),
            "# box_hi: " + ",".join(repr(float(v)) for v in self.box_hi),
            ",".join(["t"] + [f"x{i + 1}" for i in range(self.dim)] + ["V"]),
        ]
        grids = np.meshgrid(*self.axes, indexing="ij")
        coords = np.column_stack([g.ravel() for g in grids])
        ks = range(len(self.t)) if t_index is None else [t_index]
        for k in ks:
            vals = self.values[k].ravel()
            tk = repr(float(self.t[k]))
            for c, v in zip(coords, vals):
                lines.append(",".join([tk] + [repr(float(a)) for a in c] + [repr(float(v))]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    if ":" in line:
                        k, v = line[1:].split(":", 1)
                        header[k.strip()] = v.strip()
                    continue
                if line[0].isalpha():
                    continue
                rows.append([float(a) for a in line.split(",")])
        dim = int(header["dim"])
        nt = int(header["nt"])
        shape = tuple(int(a) for a in header["nx"].split(","))
        data = np.array(rows)
        t = data[:: int(np.prod(shape)), 0][:nt]
        axes = tuple(np.unique(data[:, 1 + i]) for i in range(dim))
        values = data[:, -1].reshape((nt,) + shape)
        lo = np.array([float(a) for a in header["box_lo"].split(",")])
        hi = np.array([float(a) for a in header["box_hi"].split(",")])
        return cls(t, axes, values, np.zeros(values.shape, bool), lo, hi, {})


# ---------------------------------------------------------------------------
# solver

def _padded_axes(lo, hi, nx, pad):
    axes = []
    for a in range(len(lo)):
        h = (hi[a] - lo[a]) / (nx[a] - 1)
        extra = int(np.ceil(pad / h - 1e-9)) if pad > 0 else 0
        axes.append(lo[a] + h * np.arange(-extra, nx[a] + extra))
    return axes


def plan_grid(problem, grid, pad=None):
    """Resolve padding, lookback and CFL for ``grid``; returns a dict."""
    F = problem.F
    lo, hi = problem.lo, problem.hi
    nx = grid.nodes(F.dim)
    tau = problem.T - problem.t0
    dt = tau / (grid.nt - 1)
    h = (hi - lo) / (np.array(nx) - 1)
    if pad is None:
        if grid.pad == "auto":
            pad = reachability_pad(F, lo, hi, tau, grid.directions) + h.max()
        else:
            pad = float(grid.pad)
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    speed = _speed_on(F, lo - pad, hi + pad, grid.directions)
    diam = float(np.sqrt(np.sum(h ** 2)))
    if dt * speed > diam * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt*max_speed = {dt * speed:.4g} > cell diameter {diam:.4g}")
    if dt * speed > h.min() * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt*max_speed = {dt * speed:.4g} > min spacing {h.min():.4g}")
    return {"nx": nx, "dt": dt, "spacing": h, "pad": pad, "speed": speed,
            "lookback": lookback(dt, h.min(), speed)}


def check_cfl(problem, grid):
    """Raise :class:`CFLError` if ``grid`` is not CFL-compatible."""
    return plan_grid(problem, grid)


def _sweep(problem, plan, count):
    F = problem.F
    axes = _padded_axes(problem.lo, problem.hi, plan["nx"], plan["pad"])
    shape = tuple(len(a) for a in axes)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    F.validate(nodes)
    vel = F.velocity_samples(nodes, count)  # (P, S, n)
    nt = int(round((problem.T - problem.t0) / plan["dt"])) + 1
    t = problem.t0 + plan["dt"] * np.arange(nt)
    t[-1] = problem.T
    values = np.empty((nt,) + shape)
    weight = np.zeros((nt,) + shape)
    values[-1] = problem.phi_values(nodes).reshape(shape)
    origin = np.array([a[0] for a in axes])
    spacing = np.array([a[1] - a[0] for a in axes])
    speeds = np.linalg.norm(vel, axis=2).max(axis=1)
    strides = np.array([min(lookback(plan["dt"], plan["spacing"].min(), v), nt - 1) for v in speeds])
    groups = [(m, np.flatnonzero(strides == m)) for m in np.unique(strides)]
    flat_v = values.reshape(nt, -1)
    flat_w = weight.reshape(nt, -1)
    for k in range(nt - 2, -1, -1):
        for m, idx in groups:
            j = min(k + m, nt - 1)
            feet = nodes[idx, None, :] + (t[j] - t[k]) * vel[idx]
            out, _, w = kernels.sl_min(values[j], weight[j], origin, spacing, feet)
            flat_v[k, idx] = out
            flat_w[k, idx] = w
    return t, tuple(axes), values, weight > INFLUENCE_TOL, vel, strides


def solve_hjb(problem, grid, velocity_count=None, strict=True, max_repad=6):
    """Backward semi-Lagrangian recursion; returns a :class:`ValueField`.

    With ``grid.pad == "auto"`` the padding starts at the reachability
    envelope and grows until no user-box node is influenced by clamped feet.
    With ``strict`` an explicit pad that is too small raises
    :class:`DomainExitError`.
    """
    count = velocity_count if velocity_count is not None else grid.directions
    plan = plan_grid(problem, grid)
    auto = grid.pad == "auto"
    for attempt in range(max_repad + 1):
        t, axes, values, affected, vel, strides = _sweep(problem, plan, count)
        field = ValueField(t, axes, values, affected, problem.lo.copy(), problem.hi.copy(), {})
        bad = affected[(slice(None),) + field.user_slice()]
        if not np.any(bad) or not (auto or strict):
            break
        if not auto or attempt == max_repad:
            k = int(np.argmax(bad.reshape(len(t), -1).any(axis=1)))
            raise DomainExitError(
                f"characteristics exit the padded domain (user box affected at t={t[k]:.4g}); increase pad")
        grown = plan["pad"] + max(0.25 * plan["pad"], 4 * plan["spacing"].max())
        try:
            plan = plan_grid(problem, grid, pad=grown)
        except CFLError as exc:
            raise DomainExitError(f"user box still affected at pad {plan['pad']:.4g} and the grown pad "
                                  f"breaks the CFL condition ({exc}); use more time steps") from None
    degenerate = bool(np.all(np.abs(vel - vel[:, :1, :]) <= 1e-14 * (1 + np.abs(vel).max())))
    field.meta.update({
        "scheme": "semi-lagrangian-multilinear",
        "lookback": int(strides.min()),
        "lookback_max": int(strides.max()),
        "dt": plan["dt"],
        "pad": float(plan["pad"]),
        "max_speed": float(plan["speed"]),
        "velocity_samples": vel.shape[1],
        "degenerate_dynamics": degenerate,
        "problem": problem.name,
    })
    return field


# ---------------------------------------------------------------------------
# residuals and dynamic programming checks

@dataclass(frozen=True)
class ResidualStats:
    max: float
    mean: float
    quantiles: dict
    count: int
    rejected: int


def grid_differentiable(field, ts, X, jump_tol=0.05):
    """Kink screen for the interpolant: one-sided slopes one cell apart must
    agree within ``jump_tol (1 + |slope|)`` along every space-time axis."""
    X = np.atleast_2d(X)
    ts = np.broadcast_to(np.asarray(ts, float), (X.shape[0],))
    ok = np.ones(X.shape[0], bool)
    steps = np.concatenate([[field.dt], field.spacing])
    Z = np.column_stack([ts, X])
    fn = field.spacetime_function()
    v0 = fn(Z)
    for a, h in enumerate(steps):
        e = np.zeros(Z.shape[1])
        e[a] = h
        inside = fn.contains(Z + e) & fn.contains(Z - e)
        ok &= inside
        zp = np.where(inside[:, None], Z + e, Z)
        zm = np.where(inside[:, None], Z - e, Z)
        dp = (fn(zp) - v0) / h
        dm = (v0 - fn(zm)) / h
        ok &= np.abs(dp - dm) <= jump_tol * (1.0 + np.maximum(np.abs(dp), np.abs(dm)))
    return ok


def viscosity_residual(field, F, ts=None, X=None, count=200, seed=0, jump_tol=0.05):
    """``|-V_t + H(x, -V_x)|`` by central differences at certified points.

    Points default to seeded random samples of the user box at interior
    times; samples failing the kink screen or touching affected data are
    rejected.
    """
    if X is None:
        rng = np.random.default_rng(seed)
        n = field.dim
        X = field.box_lo + rng.random((count, n)) * (field.box_hi - field.box_lo)
        ts = field.t[0] + field.dt + rng.random(count) * (field.T - field.t[0] - 2 * field.dt)
    X = np.atleast_2d(np.asarray(X, float))
    ts = np.broadcast_to(np.asarray(ts, float), (X.shape[0],)).copy()
    ok = grid_differentiable(field, ts, X, jump_tol) & field.trusted(ts, X)
    if not np.any(ok):
        raise DomainError("all residual samples were rejected as nondifferentiable")
    fn = field.spacetime_function()
    Z = np.column_stack([ts, X])[ok]
    steps = np.concatenate([[field.dt], field.spacing])
    grad = np.empty_like(Z)
    for a, h in enumerate(steps):
        e = np.zeros(Z.shape[1])
        e[a] = h
        grad[:, a] = (fn(Z + e) - fn(Z - e)) / (2 * h)
    res = np.array([abs(-g[0] + F.support(z[1:], -g[1:]).value) for z, g in zip(Z, grad)])
    qs = {str(q): float(np.quantile(res, q)) for q in (0.5, 0.9, 0.99)}
    return ResidualStats(float(res.max()), float(res.mean()), qs, int(ok.sum()), int((~ok).sum()))


@dataclass(frozen=True)
class Trajectory:
    """Discrete trajectory ``y(s_k)``; velocities are the forward differences."""

    s: np.ndarray
    y: np.ndarray
    optimal: bool = False
    label: str = ""


def check_admissible(F, traj, tol=1e-8):
    """Max violation of ``y'(s_k) in F(y(s_k))`` via support functions."""
    from .sampling import directions

    D = np.asarray(directions(F.dim))
    ds = np.diff(traj.s)
    V = np.diff(traj.y, axis=0) / ds[:, None]
    H = F.support_values(traj.y[:-1], D)
    viol = np.max(V @ D.T - H, axis=1)
    scale = 1.0 + np.linalg.norm(V, axis=1)
    return float(np.max(viol / scale)) if len(viol) else 0.0


@dataclass(frozen=True)
class DPPReport:
    max_decrease: float
    max_total_variation: float
    max_optimal_deviation: float
    tolerance: float
    per_trajectory: tuple
    passed: bool


def dpp_check(field, F, trajectories, tol=None, adm_tol=1e-8):
    """Monotonicity of ``s -> V(s, y(s))``; near-constancy for optimal ones."""
    if tol is None:
        tol = 3.0 * field.interpolation_error()
    rows = []
    max_dec = 0.0
    max_tv = 0.0
    max_dev = 0.0
    ok = True
    # rounding of interpolated values, accumulated over the samples of a trajectory
    eps_v = 64 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(field.values))))
    for tr in trajectories:
        viol = check_admissible(F, tr)
        if viol > adm_tol:
            raise ValueError(f"inadmissible trajectory {tr.label!r}: velocity outside F by {viol:.3g}")
        v = field.interpolate(tr.s, tr.y)
        inc = np.diff(v)
        dec = float(max(0.0, -inc.min())) if inc.size else 0.0
        tv = float(np.abs(inc).sum())
        dev = float(np.abs(v - v[0]).max())
        floor = eps_v * len(tr.s)
        good = dec <= tol + floor and (not tr.optimal or tv <= tol + floor)
        ok &= good
        max_dec = max(max_dec, dec)
        if tr.optimal:
            max_tv = max(max_tv, tv)
            max_dev = max(max_dev, dev)
        rows.append({"label": tr.label, "optimal": tr.optimal, "max_decrease": dec,
                     "total_variation": tv, "passed": bool(good)})
    return DPPReport(max_dec, max_tv, max_dev, float(tol), tuple(rows), bool(ok))


def random_admissible_trajectories(problem, count=100, steps=100, seed=0, velocity_count=None):
    """Euler trajectories with velocities drawn as random convex combinations
    of support points; starts uniform in the user box at ``t0``."""
    F = problem.F
    rng = np.random.default_rng(seed)
    n = F.dim
    s = np.linspace(problem.t0, problem.T, steps + 1)
    out = []
    for i in range(count):
        y = np.empty((steps + 1, n))
        y[0] = problem.lo + rng.random(n) * (problem.hi - problem.lo)
        for k in range(steps):
            S = F.velocity_samples(y[k][None], velocity_count)[0]
            w = rng.dirichlet(np.full(len(S), 0.3))
            # favour extreme velocities now and then
            if rng.random() < 0.5:
                w = np.zeros(len(S))
                w[rng.integers(len(S))] = 1.0
            y[k + 1] = y[k] + (s[k + 1] - s[k]) * (w @ S)
        out.append(Trajectory(s, y, False, f"random-{i}"))
    return out


def synthesize_trajectory(field, F, t_start, x0, steps=None, velocity_count=None):
    """Greedy feedback trajectory: each step picks the sampled velocity that
    minimizes the interpolated value at the next mesh time; near-ties go to
    the slowest velocity, then to the lowest sample index."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    if steps is None:
        steps = int(round((field.T - t_start) / field.dt))
    s = np.linspace(t_start, field.T, steps + 1)
    y = np.empty((steps + 1, x0.size))
    y[0] = x0
    for k in range(steps):
        S = F.velocity_samples(y[k][None], velocity_count)[0]
        cand = y[k] + (s[k + 1] - s[k]) * S
        vals = field.interpolate(s[k + 1], cand)
        near = np.flatnonzero(vals <= vals.min() + 1e-12 * (1.0 + abs(vals.min())))
        speeds = np.linalg.norm(S[near], axis=1)
        y[k + 1] = cand[near[int(np.argmin(speeds))]]
    return Trajectory(s, y, True, "synthesized")
