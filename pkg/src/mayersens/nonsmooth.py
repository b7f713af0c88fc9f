"""Numerical estimators for generalized differentials of sampled functions.

All limits are realized on the fixed radius schedule ``r_k = r0 * 2**-k``,
``k = 0..20``; a ``limsup`` is the maximum over the tail ``k >= 10``. Limit
verdicts are three-valued: ``True``, ``False`` or ``None`` (inconclusive).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster import hierarchy

from .exceptions import DomainError, NoDifferentiabilityPointsError
from .sampling import box_points, directions, geometric_radii

LEVELS = 21
TAIL = 10
DIFF_CERT = 1e-6


@dataclass(frozen=True)
class SampledFunction:
    """Deterministic scalar function on a box.

    ``fn`` is vectorized: it maps points of shape ``(P, n)`` to ``(P,)``.
    ``hint`` is informational (``"lipschitz"``, ``"smooth"``, ...).
    """

    fn: object
    lo: np.ndarray
    hi: np.ndarray
    hint: str = "lipschitz"
    grad: object = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("empty domain box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.broadcast_to(np.asarray(self.fn(X), float), (X.shape[0],))

    def value(self, x):
        return float(self(np.asarray(x, float).reshape(1, -1))[0])

    def contains(self, X, slack=0.0):
        X = np.atleast_2d(X)
        return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=1)

    def negated(self):
        g = self.grad
        return SampledFunction(lambda X: -self.fn(X), self.lo, self.hi, self.hint,
                               None if g is None else (lambda X: -np.asarray(g(X))))


def _check_ball(u, x, r):
    if np.any(x - r < u.lo - 1e-12) or np.any(x + r > u.hi + 1e-12):
        raise DomainError(f"ball of radius {r:g} around {x} leaves the domain")


def _shell_offsets(n, count=None):
    D = directions(n, count)
    return np.asarray(D)


# ---------------------------------------------------------------------------
# midpoint fits (shared with the dynamics module)

@dataclass(frozen=True)
class MidpointFit:
    constant: float
    diverges: bool
    worst_x: np.ndarray
    worst_h: np.ndarray
    level_maxima: np.ndarray


def fit_midpoint_constant(gap, lo, hi, samples=64, levels=14, growth=1.5):
    """Fit the smallest ``c`` with ``gap(x, h) <= c |h|^2`` on sampled pairs.

    ``gap(X, H)`` evaluates the midpoint defect for paired rows. Offsets run
    over a direction fan scaled by ``rho_k = rho_0 2**-k``; after each level a
    few points are added around the current worst ``x`` so isolated kinks are
    chased as the scale shrinks. Divergence is flagged when the last three
    level maxima each grow by at least ``growth``.
    """
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    n = lo.size
    X = box_points(lo, hi, samples)
    D = np.asarray(directions(n))
    if n == 1:
        D = D[1:]
    else:
        D = D[: max(1, len(D) // 2)]  # h and -h give the same pair
    rho0 = 0.25 * float(np.min(hi - lo))
    if rho0 <= 0:
        raise ValueError("degenerate box")
    maxima = []
    worst = (-np.inf, X[0], D[0] * rho0)
    for k in range(levels):
        rho = rho0 * 0.5 ** k
        Xk = X
        if k > 0:
            Xk = np.vstack([X, worst[1] + 0.5 * rho * np.vstack([D, -D])])
        XX = np.repeat(Xk, len(D), axis=0)
        HH = np.tile(D * rho, (len(Xk), 1))
        ok = np.all((XX - HH >= lo) & (XX + HH <= hi) & (XX >= lo) & (XX <= hi), axis=1)
        if not np.any(ok):
            maxima.append(0.0)
            continue
        XX, HH = XX[ok], HH[ok]
        q = np.asarray(gap(XX, HH), float) / rho ** 2
        i = int(np.argmax(q))
        maxima.append(float(q[i]))
        if q[i] > worst[0]:
            worst = (float(q[i]), XX[i].copy(), HH[i].copy())
    maxima = np.array(maxima)
    tail = maxima[-4:]
    diverges = bool(
        len(tail) == 4 and tail[-1] > 1e-8 and np.all(tail[1:] >= growth * np.maximum(tail[:-1], 1e-300))
    )
    return MidpointFit(max(0.0, float(maxima.max())), diverges, worst[1], worst[2], maxima)


def semiconcavity_constant(u, box=None, samples=64, levels=14):
    """Smallest ``c`` with ``u(x+h) + u(x-h) - 2u(x) <= c|h|^2`` on samples."""
    lo, hi = (u.lo, u.hi) if box is None else (np.atleast_1d(np.asarray(b, float)) for b in box)
    if np.any(lo < u.lo - 1e-12) or np.any(hi > u.hi + 1e-12):
        raise DomainError("box not contained in the function's domain")

    def gap(X, H):
        a, b, c = u(X + H), u(X - H), u(X)
        g = a + b - 2.0 * c
        noise = 64 * np.finfo(float).eps * (np.abs(a) + np.abs(b) + 2 * np.abs(c))
        return np.where(np.abs(g) <= noise, 0.0, g)

    return fit_midpoint_constant(gap, lo, hi, samples, levels)


# ---------------------------------------------------------------------------
# super/sub-differential tests

@dataclass(frozen=True)
class SupergradientCertificate:
    p: np.ndarray
    c: float
    rho: float
    max_violation: float
    verdict: str
    tolerance: float
    shell_constants: np.ndarray = field(repr=False, default=None)

    @property
    def proximal(self):
        return self.verdict == "proximal"


def _proximal_samples(n, rho, sample_count):
    radii = geometric_radii(rho, LEVELS)
    D = _shell_offsets(n)
    H = (radii[:, None, None] * D[None, :, :])  # (levels, S, n)
    extra = max(0, sample_count - H.shape[0] * H.shape[1])
    fill = None
    if extra:
        g = box_points(-np.ones(n), np.ones(n), 4 * extra, include_center=False)
        g = g[np.linalg.norm(g, axis=1) <= 1.0][:extra]
        fill = rho * g
    return radii, H, fill


def proximal_supergradient_test(u, x, p, rho, sample_count=None, tol=None):
    """Check ``u(y) - u(x) - <p, y-x> <= c|y-x|^2`` on ``B(x, rho)``.

    ``tol`` is an absolute slack on function values (e.g. interpolation error
    of a grid function). The verdict is ``proximal`` when the per-shell
    quadratic constants stay bounded along the radius schedule,
    ``frechet_only`` when they blow up but the first-order quotients vanish,
    ``rejected`` otherwise.
    """
    x = np.atleast_1d(np.asarray(x, float))
    p = np.atleast_1d(np.asarray(p, float))
    n = x.size
    if sample_count is None:
        sample_count = max(8 ** n, 64)
    if sample_count < 8 ** n:
        raise ValueError(f"sample_count must be at least 8**n = {8 ** n}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    _check_ball(u, x, rho)
    u0 = u.value(x)
    if tol is None:
        tol = 1e-12 * (1.0 + abs(u0))
    radii, H, fill = _proximal_samples(n, rho, sample_count)
    L, S = H.shape[:2]
    flat = H.reshape(L * S, n)
    slack = (u(x + flat) - u0 - flat @ p).reshape(L, S)
    shell = np.max(np.maximum(slack - tol, 0.0), axis=1) / radii ** 2
    first = np.max(slack - tol, axis=1) / radii
    c = float(shell.max())
    allh = flat
    allslack = slack.ravel()
    if fill is not None and len(fill):
        fs = u(x + fill) - u0 - fill @ p
        nf = np.einsum("ij,ij->i", fill, fill)
        ok = nf > 0
        if np.any(ok):
            c = max(c, float(np.max(np.maximum(fs[ok] - tol, 0.0) / nf[ok])))
        allh = np.vstack([allh, fill])
        allslack = np.concatenate([allslack, fs])
    # bounded quadratic constants: no sustained growth over the tail
    t10, t20 = shell[TAIL], shell[-1]
    unbounded = t20 > 1e-12 and t20 >= 4.0 * max(t10, 1e-300)
    if not unbounded:
        verdict = "proximal"
    elif _limit_verdict(first, 1e-8 * (1.0 + np.abs(p).sum())).verdict is True:
        verdict = "frechet_only"
    else:
        verdict = "rejected"
    viol = allslack - c * np.einsum("ij,ij->i", allh, allh)
    return SupergradientCertificate(p.copy(), c, float(rho), float(viol.max()), verdict, float(tol), shell)


def proximal_subgradient_test(u, x, p, rho, sample_count=None, tol=None):
    """Mirror of :func:`proximal_supergradient_test` by sign flip."""
    return proximal_supergradient_test(u.negated(), x, -np.atleast_1d(p), rho, sample_count, tol)


@dataclass(frozen=True)
class LimitVerdict:
    verdict: object  # True / False / None
    limsup: float
    sequence: np.ndarray


def _limit_verdict(seq, tol):
    tail = seq[TAIL:]
    limsup = float(tail.max())
    if limsup <= tol:
        return LimitVerdict(True, limsup, seq)
    last, first = tail[-1], tail[0]
    if first > 0 and last <= max(tol, first / 16.0) and np.all(np.diff(tail) <= 1e-12 * (1 + abs(first))):
        return LimitVerdict(True, limsup, seq)
    if last > tol and tail.min() >= 0.5 * limsup:
        return LimitVerdict(False, limsup, seq)
    return LimitVerdict(None, limsup, seq)


def frechet_superdiff_membership(u, x, p, r0=None, tol=None, value_tol=0.0, direction_count=None):
    """Is ``p`` a Frechet supergradient of ``u`` at ``x``?

    Evaluates sphere maxima ``m_k = max_{|h|=r_k} (u(x+h) - u(x) - <p,h>) / r_k``.
    ``True`` when the tail is ``<= tol`` or decays monotonically by a factor
    16 or more; ``False`` when it stays above ``tol`` at a stable level;
    ``None`` otherwise.
    """
    x = np.atleast_1d(np.asarray(x, float))
    p = np.atleast_1d(np.asarray(p, float))
    n = x.size
    if r0 is None:
        r0 = 0.25 * float(np.min(np.minimum(x - u.lo, u.hi - x)))
        if r0 <= 0:
            raise DomainError("point on the domain boundary; pass r0 explicitly")
    _check_ball(u, x, r0)
    if tol is None:
        tol = 1e-8 * (1.0 + np.abs(p).sum())
    radii = geometric_radii(r0, LEVELS)
    D = _shell_offsets(n, direction_count)
    H = (radii[:, None, None] * D[None]).reshape(-1, n)
    u0 = u.value(x)
    slack = (u(x + H) - u0 - H @ p - value_tol).reshape(LEVELS, len(D))
    seq = slack.max(axis=1) / radii
    return _limit_verdict(seq, tol)


def frechet_subdiff_membership(u, x, p, r0=None, tol=None, value_tol=0.0, direction_count=None):
    return frechet_superdiff_membership(u.negated(), x, -np.atleast_1d(p), r0, tol, value_tol, direction_count)


# ---------------------------------------------------------------------------
# reachable gradients

def _affine_fit(u, y, delta):
    n = y.size
    E = np.vstack([np.zeros(n), np.eye(n) * delta, -np.eye(n) * delta])
    vals = u(y + E)
    A = np.hstack([np.ones((2 * n + 1, 1)), E])
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    res = float(np.max(np.abs(A @ coef - vals)))
    floor = 64 * np.finfo(float).eps * (1.0 + np.max(np.abs(vals)))
    return coef[1:], res, floor


def certify_differentiable(u, y, delta):
    """Affine least-squares fit on the ``2n+1`` stencil around ``y``.

    Returns ``(ok, gradient, residual)``. ``ok`` iff the max residual is at
    most ``1e-6 * delta`` (plus a float-noise floor), or it decays by
    factors near 4 over two halvings of ``delta`` (curved but differentiable;
    a kink inside the stencil only decays linearly). In the second case the
    gradient comes from the smallest stencil.
    """
    y = np.atleast_1d(np.asarray(y, float))
    grad, res, floor = _affine_fit(u, y, delta)
    if res <= DIFF_CERT * delta + floor:
        return True, grad, res
    g2, r2, f2 = _affine_fit(u, y, delta / 2)
    g4, r4, f4 = _affine_fit(u, y, delta / 4)
    # residual ratios near 1/4 and stable gradients; noise fails both
    quad = r2 > f2 and r4 > f4 and 0.2 <= r2 / res <= 0.3 and 0.2 <= r4 / r2 <= 0.3
    ok = bool(quad and np.linalg.norm(g2 - g4) <= 1e-3 * (1.0 + np.linalg.norm(g4)))
    return ok, g4, r4


@dataclass(frozen=True)
class GradientCluster:
    gradient: np.ndarray
    multiplicity: int
    points: np.ndarray


@dataclass(frozen=True)
class ReachableGradientSet:
    base: np.ndarray
    clusters: tuple
    radii: np.ndarray
    certified: int

    @property
    def gradients(self):
        if not self.clusters:
            return np.zeros((0, self.base.size))
        return np.array([c.gradient for c in self.clusters])

    def __len__(self):
        return len(self.clusters)


def reachable_gradients(u, x, radii=None, cluster_tol=None, direction_count=None, tail_levels=4):
    """Limits of certified gradients at probes ``x + r d`` as ``r -> 0``.

    Probes run over a direction fan at each radius of ``radii`` (default
    ``r0 2**-k``). Gradients from the ``tail_levels`` smallest radii that
    produced certified samples are clustered by complete linkage with
    threshold ``cluster_tol`` (default ``1e-3 (1 + max|grad|)``).
    """
    x = np.atleast_1d(np.asarray(x, float))
    n = x.size
    if radii is None:
        r0 = 0.25 * float(np.min(u.hi - u.lo))
        radii = geometric_radii(r0, LEVELS)
    radii = np.asarray(radii, float)
    D = np.asarray(directions(n, direction_count))
    if n > 1:
        # stagger the fan so probes avoid coordinate axes, where grid kinks sit
        D = _rotate_fan(D)
    per_level = []
    for r in radii:
        delta = r / 100.0
        grads, pts = [], []
        for d in D:
            y = x + r * d
            if not np.all(u.contains(np.vstack([y - delta, y + delta]))):
                continue
            ok, g, _ = certify_differentiable(u, y, delta)
            if ok:
                grads.append(g)
                pts.append(y)
        per_level.append((np.array(grads).reshape(-1, n), np.array(pts).reshape(-1, n)))
    used = [i for i, (g, _) in enumerate(per_level) if len(g)]
    if not used:
        raise NoDifferentiabilityPointsError(f"no certified differentiability points near {x}")
    keep = used[-tail_levels:]
    G = np.vstack([per_level[i][0] for i in keep])
    P = np.vstack([per_level[i][1] for i in keep])
    if cluster_tol is None:
        cluster_tol = 1e-3 * (1.0 + float(np.max(np.linalg.norm(G, axis=1))))
    if len(G) == 1:
        labels = np.array([1])
    else:
        Z = hierarchy.linkage(G, method="complete")
        labels = hierarchy.fcluster(Z, t=cluster_tol, criterion="distance")
    clusters = []
    for lab in np.unique(labels):
        m = labels == lab
        clusters.append(GradientCluster(G[m].mean(axis=0), int(m.sum()), P[m]))
    # deterministic order: lexicographic on the gradient
    clusters.sort(key=lambda c: tuple(np.round(c.gradient, 12)))
    return ReachableGradientSet(x.copy(), tuple(clusters), radii[keep], int(len(G)))


def _rotate_fan(D):
    if D.shape[1] != 2:
        return D
    ang = np.arctan2(D[:, 1], D[:, 0]) + np.pi / (2 * len(D)) + 0.0123
    return np.column_stack([np.cos(ang), np.sin(ang)])


# ---------------------------------------------------------------------------
# Dini derivatives

@dataclass(frozen=True)
class DiniEstimate:
    value: float
    conclusive: bool
    quotients: np.ndarray

    def __float__(self):
        return self.value


def dini_upper_derivative(u, point, direction, taus=None, spread_tol=None):
    """Upper Dini derivative ``limsup_{tau -> 0+} (u(z + tau theta) - u(z)) / tau``.

    A genuine one-sided limsup: the maximum of the forward quotients over
    the tail of the schedule. ``conclusive`` is False when the tail spread
    exceeds ``spread_tol``.
    """
    z = np.atleast_1d(np.asarray(point, float))
    th = np.atleast_1d(np.asarray(direction, float))
    if th.shape != z.shape:
        raise ValueError("direction and point dimensions differ")
    if taus is None:
        taus = geometric_radii(0.25 * float(np.min(u.hi - u.lo)) / max(1.0, float(np.linalg.norm(th))), LEVELS)
    taus = np.asarray(taus, float)
    if np.any(np.diff(taus) >= 0) or taus[-1] <= 0:
        raise ValueError("tau schedule must decrease to 0")
    Y = z + taus[:, None] * th
    if not np.all(u.contains(Y, 1e-12)) or not np.all(u.contains(z[None], 1e-12)):
        raise DomainError("Dini schedule leaves the domain")
    q = (u(Y) - u.value(z)) / taus
    tail = q[min(TAIL, len(q) - 1):]
    val = float(tail.max())
    if spread_tol is None:
        spread_tol = 1e-3 * (1.0 + abs(val))
    return DiniEstimate(val, bool(tail.max() - tail.min() <= spread_tol), q)
