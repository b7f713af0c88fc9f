"""Registry of test problems with closed-form values and optimal arcs.

Each problem is shipped as a problem-definition file under ``data/`` and is
loaded through the same parser the command line uses. The Python side only
adds what a text file cannot carry: closed-form ``V``, optimal trajectories,
their dual arcs and the expected hypothesis profile.
"""

from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .flow import ArcPair
from .hjb import GridSpec, MayerProblem
from .nonsmooth import SampledFunction
from .problem_file import parse_problem

# ball_linear constants, mirrored from data/ball_linear.prob
BALL_A = np.array([[-0.2, -0.5], [0.5, -0.2]])
BALL_DECAY = 0.2
BALL_OMEGA = 0.5
BALL_RADIUS = 0.5
BALL_TARGET = np.array([1.5, 0.0])

# quartic_body: minimizer of <a, v> over the capped epigraph for a = (1,1)/sqrt(2)
QUARTIC_DIRECTION = np.array([1.0, 1.0]) / np.sqrt(2.0)
_QS = -4.0 ** (-1.0 / 3.0)
QUARTIC_VELOCITY = np.array([_QS, _QS ** 4])

_PROFILE_ALL = {"SH": True, "H1": True, "H2": True, "H3": True, "H4": True}


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A registry entry.

    ``value(t, X)`` is vectorized over rows of ``X``. ``trajectory(t, x, s)``
    returns optimal states at times ``s`` (rows) and ``dual(t, x, s)`` the
    matching dual arc ``p`` with ``-p(T) in`` the terminal superdifferential;
    both return ``None`` where no closed form is provided.
    """

    name: str
    problem: MayerProblem
    grid: GridSpec
    value: Optional[Callable] = None
    trajectory: Optional[Callable] = None
    dual: Optional[Callable] = None
    profile: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def dim(self):
        return self.problem.F.dim

    def V(self, t, x):
        if self.value is None:
            raise ValueError(f"{self.name} has no closed-form value")
        return float(self.value(float(t), np.atleast_2d(np.asarray(x, float)))[0])

    def value_function(self, t):
        """Closed-form ``V(t, .)`` on the user box as a :class:`SampledFunction`."""
        if self.value is None:
            raise ValueError(f"{self.name} has no closed-form value")
        return SampledFunction(lambda X: self.value(t, X), self.problem.lo, self.problem.hi,
                               f"{self.name} closed form at t={t}")

    def optimal_pair(self, t, x, steps=1000):
        """Closed-form optimal arc from ``(t, x)`` with its dual on a uniform mesh."""
        if self.trajectory is None:
            raise ValueError(f"{self.name} has no closed-form trajectories")
        s = np.linspace(t, self.problem.T, steps + 1)
        x = np.atleast_1d(np.asarray(x, float))
        X = self.trajectory(t, x, s)
        P = self.dual(t, x, s) if self.dual is not None else None
        if X is None:
            raise ValueError(f"no closed-form trajectory of {self.name} from ({t}, {x})")
        if P is None:
            P = np.full_like(X, np.nan)
        return ArcPair(s, X, P, "closed_form", (self.problem.T - t) / steps, "closed_form",
                       bool(np.all(P == 0)), {"benchmark": self.name, "start": [float(t)] + x.tolist()})


# ---------------------------------------------------------------------------
# closed forms

def _col(s):
    return np.asarray(s, float)[:, None]


def _eikonal_value(T):
    def V(t, X):
        return np.maximum(np.abs(X[:, 0]) - (T - t), 0.0)
    return V


def _eikonal_traj(T):
    def traj(t, x, s):
        x0 = float(x[0])
        return _col(np.sign(x0) * np.maximum(abs(x0) - (s - t), 0.0))

    def dual(t, x, s):
        x0 = float(x[0])
        if abs(x0) <= T - t:
            return None  # the arc ends at the kink of |x|: no proximal supergradient
        return np.full((len(s), 1), -np.sign(x0))

    return traj, dual


def _two_ray_value(T):
    def V(t, X):
        return -(np.abs(X[:, 0]) + T - t) ** 2
    return V


def _two_ray_traj(T, branch=1.0):
    """Rays running away from 0; ``branch`` picks the direction at ``x = 0``."""

    def sgn(x0):
        return np.sign(x0) if x0 != 0 else float(branch)

    def traj(t, x, s):
        x0 = float(x[0])
        return _col(x0 + sgn(x0) * (s - t))

    def dual(t, x, s):
        x0 = float(x[0])
        return np.full((len(s), 1), 2.0 * sgn(x0) * (abs(x0) + T - t))

    return traj, dual


def _expm_ball(tau):
    """``exp(A tau)`` for the rotation-contraction ``A``."""
    c, sn = np.cos(BALL_OMEGA * tau), np.sin(BALL_OMEGA * tau)
    return np.exp(-BALL_DECAY * tau) * np.array([[c, -sn], [sn, c]])


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _ball_reach(tau):
    return BALL_RADIUS * (1.0 - np.exp(-BALL_DECAY * tau)) / BALL_DECAY


def _ball_value(T):
    def V(t, X):
        tau = T - t
        Y = X @ _expm_ball(tau).T
        d = np.linalg.norm(Y - BALL_TARGET, axis=1)
        return np.maximum(d - _ball_reach(tau), 0.0) ** 2
    return V


def _ball_traj(T):
    def parts(t, x):
        tau = T - t
        y = _expm_ball(tau) @ x
        gap = BALL_TARGET - y
        d = np.linalg.norm(gap)
        if d <= _ball_reach(tau) or d == 0:
            return None
        return gap / d, d

    def traj(t, x, s):
        pr = parts(t, x)
        if pr is None:
            return None
        u, _ = pr
        out = np.empty((len(s), 2))
        for k, sk in enumerate(s):
            out[k] = _expm_ball(sk - t) @ x + _ball_reach(sk - t) * (_rot(BALL_OMEGA * (sk - T)) @ u)
        return out

    def dual(t, x, s):
        pr = parts(t, x)
        if pr is None:
            return None
        u, d = pr
        pT = 2.0 * (d - _ball_reach(T - t)) * u
        return np.array([np.exp(-BALL_DECAY * (T - sk)) * (_rot(-BALL_OMEGA * (T - sk)) @ pT) for sk in s])

    return traj, dual


_QUARTIC_H = float(-QUARTIC_DIRECTION @ QUARTIC_VELOCITY)


def _quartic_value(T):
    def V(t, X):
        return X @ QUARTIC_DIRECTION - (T - t) * _QUARTIC_H
    return V


def _quartic_traj(T):
    def traj(t, x, s):
        return x[None, :] + _col(s - t) * QUARTIC_VELOCITY

    def dual(t, x, s):
        return np.tile(-QUARTIC_DIRECTION, (len(s), 1))

    return traj, dual


def _fg_angle(t, x0, s):
    return np.arctan(x0 / 2.0) - (np.asarray(s, float) - t) / 2.0


def _fg_value(T):
    def V(t, X):
        return 2.0 * np.tan(np.arctan(X[:, 0] / 2.0) - (T - t) / 2.0)
    return V


def fg_lower_trajectory(t, x0, s):
    """Solution of ``y' = f(y) = -1 - y^2/4`` from ``(t, x0)``."""
    return 2.0 * np.tan(_fg_angle(t, float(x0), s))


def fg_lower_dual(t, x0, s, T, q=1.0):
    """Dual arc along :func:`fg_lower_trajectory` with ``-p(T) = q > 0``."""
    th = _fg_angle(t, float(x0), s)
    thT = _fg_angle(t, float(x0), T)
    return -q * np.cos(th) ** 2 / np.cos(thT) ** 2


def _fg_traj(T):
    def traj(t, x, s):
        return _col(fg_lower_trajectory(t, x[0], s))

    def dual(t, x, s):
        return _col(fg_lower_dual(t, x[0], s, T))

    return traj, dual


def _flat_value(T):
    def V(t, X):
        return np.maximum(np.abs(X[:, 0]) - 0.5 - (T - t), 0.0)
    return V


def _flat_traj(T):
    def traj(t, x, s):
        x0 = float(x[0])
        if abs(x0) <= 0.5:
            return np.full((len(s), 1), x0)
        return _col(np.sign(x0) * np.maximum(abs(x0) - (s - t), 0.5))

    def dual(t, x, s):
        x0 = float(x[0])
        if abs(x0) < 0.5:
            return np.zeros((len(s), 1))
        if abs(x0) - (T - t) > 0.5:
            return np.full((len(s), 1), -np.sign(x0))
        return None

    return traj, dual


def _flat_grad(X):
    X = np.atleast_2d(X)
    return (np.sign(X[:, 0]) * (np.abs(X[:, 0]) > 0.5))[:, None].astype(float)


_SPECS = {
    "eikonal1d": (_eikonal_value, _eikonal_traj, dict(_PROFILE_ALL),
                  "nonsmooth V; smooth optimal rays off the kink"),
    "two_ray": (_two_ray_value, _two_ray_traj, dict(_PROFILE_ALL),
                "two reachable gradients and two optimal rays at x = 0"),
    "ball_linear": (_ball_value, _ball_traj, dict(_PROFILE_ALL),
                    "linear adjoint; V vanishes where the target is reachable"),
    "quartic_body": (_quartic_value, _quartic_traj,
                     {"SH": True, "H1": True, "H2": False, "H3": "partial", "H4": True},
                     "boundary flat to fourth order at the origin; C1 except at the cap corners"),
    "interval_fg": (_fg_value, _fg_traj, dict(_PROFILE_ALL),
                    "growth bound holds on the working box only"),
    "flat_eikonal1d": (_flat_value, _flat_traj, dict(_PROFILE_ALL),
                       "terminal cost flat on [-1/2, 1/2]; zero dual arcs"),
}

NAMES = tuple(_SPECS)


def problem_text(name):
    """Raw problem-definition text of a registry entry."""
    if name not in _SPECS:
        raise KeyError(f"unknown benchmark {name!r}; known: {', '.join(NAMES)}")
    return resources.files(__package__).joinpath("data", f"{name}.prob").read_text()


def instance(name):
    """Fully specified :class:`Benchmark` for a registry name."""
    text = problem_text(name)
    d = parse_problem(text, f"{name}.prob")
    problem = d.problem
    if name == "flat_eikonal1d":
        problem = MayerProblem(problem.F, problem.phi, problem.t0, problem.T, problem.lo, problem.hi,
                               _flat_grad, problem.name, problem.phi_kinks)
    value_fn, traj_fn, profile, notes = _SPECS[name]
    traj, dual = traj_fn(problem.T)
    return Benchmark(name, problem, d.grid, value_fn(problem.T), traj, dual, profile, notes)


def two_ray_branches(T=1.0):
    """Both optimal rays of ``two_ray`` from ``x = 0``: ``[(traj, dual), ...]``."""
    return [_two_ray_traj(T, 1.0), _two_ray_traj(T, -1.0)]


# ---------------------------------------------------------------------------
# cone-cost variant of interval_fg for the dual fan

CONE_SLOPE = 1.5
CONE_KINK = 1.0


@dataclass(frozen=True, eq=False)
class ConeVariant:
    """``interval_fg`` with ``phi(x) = 1.5 (x - z) - |x - z|``.

    ``z`` is the endpoint of the lower trajectory from ``(t, x0)``, which
    stays optimal; the proximal superdifferential of ``phi`` at ``z`` is
    ``[0.5, 2.5]``.
    """

    problem: MayerProblem
    start: tuple
    endpoint: float
    superdifferential: tuple

    def trajectory(self, steps=1000):
        t, x0 = self.start
        s = np.linspace(t, self.problem.T, steps + 1)
        X = _col(fg_lower_trajectory(t, x0, s))
        return s, X

    def dual(self, q, steps=1000):
        t, x0 = self.start
        s = np.linspace(t, self.problem.T, steps + 1)
        return _col(fg_lower_dual(t, x0, s, self.problem.T, q))


def cone_variant(t=0.0, x0=0.5):
    base = instance("interval_fg").problem
    T = base.T
    z = float(fg_lower_trajectory(t, x0, [T])[0])

    def phi(X):
        d = np.atleast_2d(X)[:, 0] - z
        return CONE_SLOPE * d - CONE_KINK * np.abs(d)

    def phi_grad(X):
        d = np.atleast_2d(X)[:, 0] - z
        return (CONE_SLOPE - CONE_KINK * np.sign(d))[:, None]

    problem = MayerProblem(base.F, phi, base.t0, T, base.lo, base.hi, phi_grad, "interval_fg_cone", (z,))
    return ConeVariant(problem, (float(t), float(x0)), z,
                       (CONE_SLOPE - CONE_KINK, CONE_SLOPE + CONE_KINK))
