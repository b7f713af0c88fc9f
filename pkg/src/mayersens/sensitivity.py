"""Numerical checks of sensitivity relations, sufficient optimality, dual
fans and the reachable-gradient to optimal-trajectory map.

Every verdict compares against an explicit tolerance budget derived from
the value field itself (second differences of the grid data), so scheme
error is never read as a violation.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import flow
from .dynamics import audit_hypotheses
from .exceptions import DomainError, NumericalError, SubgradientError
from .hjb import Trajectory, dpp_check, synthesize_trajectory
from .nonsmooth import (dini_upper_derivative, frechet_superdiff_membership, proximal_supergradient_test,
                        reachable_gradients)
from .sampling import directions, geometric_radii

RELATIONS = ("partial_proximal", "partial_frechet", "full_frechet", "full_proximal")
# relations checked as stated by a theorem; full_proximal is reported without one
THEOREM_BACKED = ("partial_proximal", "partial_frechet", "full_frechet")
FLOAT_FLOOR = 1e-9
# Dini schedule: tau_k = (min step / 2) 2**-k; the quotients of a piecewise
# multilinear interpolant settle once tau is below one cell
DINI_LEVELS = 14


def _dini_schedule(field_):
    steps = np.concatenate([[field_.dt], field_.spacing])
    taus = geometric_radii(0.5 * steps.min(), DINI_LEVELS)
    # rounding of V values, amplified by 1/tau
    noise = 64 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(field_.values)))) / taus[-1]
    return taus, noise


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    """Outcome of one relation check along one arc pair.

    ``residuals[k]`` is the worst residual at ``times[k]`` and
    ``tolerances[k]`` the budget it is compared against.
    """

    relation: str
    times: np.ndarray
    residuals: np.ndarray
    tolerances: np.ndarray
    constants: dict
    passed: bool
    worst: dict
    provenance: dict
    details: dict = field(default_factory=dict)

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def table_csv(self):
        lines = ["t,residual,tolerance"]
        for t, r, tol in zip(self.times, self.residuals, self.tolerances):
            lines.append(f"{float(t)!r},{float(r)!r},{float(tol)!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return _clean({
            "relation": self.relation,
            "verdict": self.verdict,
            "constants": self.constants,
            "worst": self.worst,
            "provenance": self.provenance,
            "details": self.details,
            "max_residual": float(np.max(self.residuals)) if len(self.residuals) else 0.0,
            "times": len(self.times),
        })


def _clean(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (list, tuple)):
        return [_clean(a) for a in v]
    if isinstance(v, dict):
        return {str(k): _clean(a) for k, a in v.items()}
    return v


def _provenance(field_, pair):
    return {"value_field": field_.field_id, "arc_pair": pair.arc_id}


def _offsets(n, r, count, levels=8):
    """Perturbations ``h`` in the closed ball ``B(0, r)``: a direction fan on
    shells ``r 2**-k`` plus ``count`` seeded interior points."""
    D = np.asarray(directions(n))
    shells = [D * rho for rho in r * 0.5 ** np.arange(levels)]
    rng = np.random.default_rng(12345)
    G = rng.standard_normal((count, n))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    inner = G * (r * rng.random(count) ** (1.0 / n))[:, None]
    return np.vstack(shells + [inner])


def _check_points(field_, ts, X, what):
    ok = field_.trusted(ts, X)
    if not np.all(ok):
        k = int(np.argmin(ok))
        raise DomainError(f"{what} leaves the trusted field domain at t={np.broadcast_to(ts, ok.shape)[k]:.4g}, "
                          f"x={np.atleast_2d(X)[k]}")


def _time_consistency(field_, F, t, x):
    """Largest change of ``H(x, -V_x)`` between adjacent mesh rows near ``t``.

    The scheme's value is close to piecewise linear in time between rows,
    so its time slope is a secant whose distance from the tangent is about
    ``dt |V_tt|``; that error does not show in second differences of the
    grid data. ``V_tt = d/dt H(x, -V_x)`` makes it measurable from the field.
    """
    k = np.flatnonzero((field_.t >= t - 2 * field_.dt - 1e-12) & (field_.t <= t + 2 * field_.dt + 1e-12))
    n = x.size
    E = np.diag(field_.spacing)
    hs = []
    for tk in field_.t[k]:
        P = np.vstack([x + E, x - E])
        if not np.all(field_.trusted(tk, P)):
            continue
        vals = field_.interpolate(tk, P)
        gx = (vals[:n] - vals[n:]) / (2 * field_.spacing)
        hs.append(F.support(x, -gx).value)
    return float(np.max(np.abs(np.diff(hs)))) if len(hs) > 1 else 0.0


def _select_times(t, count, interior):
    idx = np.arange(len(t))
    if interior:
        idx = idx[1:-1]
    if count is not None and len(idx) > count:
        idx = idx[np.unique(np.round(np.linspace(0, len(idx) - 1, count)).astype(int))]
    return idx


# ---------------------------------------------------------------------------
# partial sensitivity

def verify_partial_sensitivity(field_, pair, r=0.1, h_samples=64, c0_max=10.0, tol=None, tol_factor=3.0,
                               relation="partial_proximal", time_count=None):
    """Check ``V(t, x(t)+h) - V(t, x(t)) <= <-p(t), h> + c0 |h|^2`` for
    ``|h| <= r`` at every selected mesh time of ``pair``.

    The smallest ``c0 >= 0`` making every slack at most the tolerance is
    fitted; the check passes when ``c0 <= c0_max``. The tolerance at time
    ``t`` is ``tol_factor`` times the local interpolation error of the field
    around ``x(t)`` unless ``tol`` is given. ``relation="partial_frechet"``
    instead runs the shrinking-radius Fréchet membership test at each time.
    """
    if relation not in ("partial_proximal", "partial_frechet"):
        raise ValueError(f"not a partial relation: {relation!r}")
    if r <= 0 or c0_max < 0:
        raise ValueError("need r > 0 and c0_max >= 0")
    n = pair.dim
    if np.any(~np.isfinite(pair.p)):
        raise ValueError("pair has no dual arc")
    idx = _select_times(pair.t, time_count, interior=False)
    H = _offsets(n, r, h_samples)
    hn2 = np.einsum("ij,ij->i", H, H)
    times, res, tols, c0s = [], [], [], []
    worst = {"c0": 0.0}
    details = {}
    for k in idx:
        t, x, p = float(pair.t[k]), pair.x[k], pair.p[k]
        loc = field_.interpolation_error((t - field_.dt, t + field_.dt), x, r)
        tk = tol if tol is not None else tol_factor * loc + FLOAT_FLOOR
        X = x + H
        _check_points(field_, t, X, "x(t) + h")
        _check_points(field_, t, x[None], "arc")
        slack = field_.interpolate(t, X) - field_(t, x) + H @ p
        if relation == "partial_proximal":
            need = np.where(hn2 > 0, (slack - tk) / np.where(hn2 > 0, hn2, 1.0), 0.0)
            i = int(np.argmax(need))
            c0 = max(0.0, float(need[i]))
            if c0 > worst["c0"]:
                worst = {"c0": c0, "t": t, "h": H[i].tolist(), "slack": float(slack[i])}
            c0s.append(c0)
            res.append(float(max(0.0, np.max(slack - c0 * hn2))))
        else:
            cert = frechet_superdiff_membership(field_.space_function(t), x, -p, r0=r, value_tol=tk)
            c0s.append(0.0)
            res.append(float(cert.limsup))
            if cert.verdict is not True:
                details.setdefault("rejected_times", []).append(t)
        times.append(t)
        tols.append(tk)
    times, res, tols = np.array(times), np.array(res), np.array(tols)
    if relation == "partial_proximal":
        c0 = float(max(c0s)) if c0s else 0.0
        # with the fitted c0 every slack sits within tolerance by construction
        passed = c0 <= c0_max
        constants = {"c0": c0, "r": float(r), "c0_max": float(c0_max)}
    else:
        passed = not details.get("rejected_times")
        constants = {"r": float(r)}
        tols = np.zeros_like(res)
    return SensitivityReport(relation, times, res, tols, constants, bool(passed), worst,
                             _provenance(field_, pair), details)


# ---------------------------------------------------------------------------
# full sensitivity

def spacetime_directions(n, count, seed=0):
    """Unit vectors ``(alpha, theta)`` in ``R x R^n``: coordinate axes in
    both signs followed by seeded random directions."""
    E = np.vstack([np.eye(n + 1), -np.eye(n + 1)])
    m = max(0, count - len(E))
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((m, n + 1))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    return np.vstack([E, G])[:max(count, 1)]


def verify_full_sensitivity(field_, pair, problem, direction_count=16, time_count=20, seed=0, tol_factor=3.0,
                            pass_fraction=0.95, max_inconclusive=0.10, relation="full_frechet", rho=None):
    """Dini bound ``D^V(t, x(t))(a, th) <= a H(x(t), p(t)) + <-p(t), th>`` on
    sampled unit directions at interior mesh times of ``pair``.

    The gap is compared against ``tol_factor`` times the local slope budget
    of the field. With a nonvanishing dual the check passes when at least
    ``pass_fraction`` of the conclusive samples are within budget; with a
    zero dual every sample must be. ``relation="full_proximal"`` instead
    runs the proximal supergradient test on ``V`` in space-time with the
    covector ``(H, -p)`` and radius ``rho``.
    """
    if relation not in ("full_frechet", "full_proximal"):
        raise ValueError(f"not a full relation: {relation!r}")
    F = problem.F
    n = pair.dim
    if np.any(~np.isfinite(pair.p)):
        raise ValueError("pair has no dual arc")
    idx = _select_times(pair.t, time_count, interior=True)
    if len(idx) == 0:
        raise ValueError("pair has no interior mesh times")
    D = spacetime_directions(n, direction_count, seed)
    u = field_.spacetime_function()
    steps = np.concatenate([[field_.dt], field_.spacing])
    zero = bool(np.all(pair.p == 0))
    times, res, tols = [], [], []
    total = good = inconclusive = 0
    worst = {"gap": -np.inf}
    details = {}
    for k in idx:
        t, x, p = float(pair.t[k]), pair.x[k], pair.p[k]
        Hval = F.support(x, p).value
        z = np.concatenate([[t], x])
        budget = tol_factor * field_.slope_error((t - 2 * field_.dt, t + 2 * field_.dt), x,
                                                 2 * field_.spacing.max()) + FLOAT_FLOOR * (1 + abs(Hval))
        if relation == "full_proximal":
            r = rho if rho is not None else 4 * steps.max()
            tol_v = tol_factor * field_.interpolation_error((t - r, t + r), x, r) + FLOAT_FLOOR
            cert = proximal_supergradient_test(u, z, np.concatenate([[Hval], -p]), r, tol=tol_v)
            total += 1
            ok = cert.proximal
            good += int(ok)
            times.append(t)
            res.append(cert.max_violation)
            tols.append(tol_v)
            if not ok:
                details.setdefault("rejected_times", []).append(t)
            continue
        taus, noise = _dini_schedule(field_)
        budget += noise + tol_factor * _time_consistency(field_, F, t, x)
        gaps = []
        for d in D:
            if not np.all(u.contains(z + taus[0] * d, 1e-12)):
                continue
            try:
                est = dini_upper_derivative(u, z, d, taus=taus)
            except DomainError:
                continue
            total += 1
            if not est.conclusive:
                inconclusive += 1
                continue
            bound = d[0] * Hval - d[1:] @ p
            gap = est.value - bound
            gaps.append(gap)
            if gap <= budget:
                good += 1
            if gap > worst["gap"]:
                worst = {"gap": float(gap), "t": t, "direction": d.tolist(), "dini": est.value,
                         "bound": float(bound)}
        times.append(t)
        res.append(max(gaps) if gaps else 0.0)
        tols.append(budget)
    if total == 0:
        raise DomainError("no direction sample stayed inside the field")
    if relation == "full_frechet" and inconclusive > max_inconclusive * total:
        raise NumericalError(f"Dini estimator inconclusive at {inconclusive}/{total} samples")
    conclusive = total - inconclusive
    frac = good / conclusive if conclusive else 0.0
    if relation == "full_proximal":
        passed = good == total
    else:
        passed = frac >= (1.0 if zero else pass_fraction)
    details.update({"samples": total, "inconclusive": inconclusive, "within_budget": good,
                    "fraction": frac, "zero_dual": zero,
                    "theorem_backed": relation in THEOREM_BACKED})
    return SensitivityReport(relation, np.array(times), np.array(res), np.array(tols),
                             {"pass_fraction": pass_fraction if not zero else 1.0}, bool(passed),
                             worst, _provenance(field_, pair), details)


# ---------------------------------------------------------------------------
# sufficient optimality

@dataclass(frozen=True)
class OptimalityVerdict:
    certified: bool
    verdict: str
    failed_times: tuple
    mp_residual: float
    dini_gap: float
    dpp_constant: bool
    consistent: bool
    duals: Optional[np.ndarray] = None

    def to_dict(self):
        return _clean({"verdict": self.verdict, "failed_times": list(self.failed_times),
                       "mp_residual": self.mp_residual, "dini_gap": self.dini_gap,
                       "dpp_constant": self.dpp_constant, "consistent": self.consistent})


def _superdiff_candidates(field_, t, x):
    """``-p`` candidates from one-sided and central differences of ``V(t, .)``."""
    n = x.size
    h = field_.spacing
    fwd, bwd, ctr = np.empty(n), np.empty(n), np.empty(n)
    v0 = field_(t, x)
    for a in range(n):
        e = np.zeros(n)
        e[a] = h[a]
        if not np.all(field_.trusted(t, np.vstack([x + e, x - e]))):
            return np.zeros((0, n))
        vp, vm = field_(t, x + e), field_(t, x - e)
        fwd[a], bwd[a], ctr[a] = (vp - v0) / h[a], (v0 - vm) / h[a], (vp - vm) / (2 * h[a])
    cands = [ctr]
    for mask in range(1 << n):
        cands.append(np.array([fwd[a] if (mask >> a) & 1 else bwd[a] for a in range(n)]))
    return -np.unique(np.round(np.array(cands), 12), axis=0)


def sufficient_optimality_check(traj, field_, problem, duals=None, mp_tol=1e-3, tol_factor=3.0,
                                direction_count=16, time_count=20, seed=0):
    """Certify optimality of an admissible trajectory through a dual arc
    satisfying the maximum principle and ``(H, -p) in d+V`` at sampled
    interior mesh times.

    ``traj`` is an :class:`~mayersens.hjb.Trajectory` or an
    :class:`~mayersens.flow.ArcPair` (whose finite dual is used as a
    candidate). ``duals`` is a list of arrays or arc pairs on the same mesh.
    Without candidates ``-p`` is estimated from difference quotients of V.
    """
    F = problem.F
    if isinstance(traj, flow.ArcPair):
        s, Y = traj.t, traj.x
        if duals is None and np.all(np.isfinite(traj.p)):
            duals = [traj.p]
    else:
        s, Y = np.asarray(traj.s), np.asarray(traj.y)
    cand_arcs = [np.asarray(d.p if isinstance(d, flow.ArcPair) else d, float).reshape(Y.shape)
                 for d in (duals or [])]
    Yd = np.gradient(Y, s, axis=0, edge_order=2)
    idx = _select_times(s, time_count, interior=True)
    D = spacetime_directions(F.dim, direction_count, seed)
    u = field_.spacetime_function()
    taus, noise = _dini_schedule(field_)
    failed = []
    worst_mp = 0.0
    worst_gap = -np.inf
    chosen = np.full(Y.shape, np.nan)
    for k in idx:
        t, x, v = float(s[k]), Y[k], Yd[k]
        cands = [c[k] for c in cand_arcs] if cand_arcs else list(_superdiff_candidates(field_, t, x))
        if not cands:
            raise SubgradientError(f"no dual candidates and empty superdifferential estimate at t={t:.4g}")
        budget = tol_factor * field_.slope_error((t - 2 * field_.dt, t + 2 * field_.dt), x,
                                                 2 * field_.spacing.max()) + noise
        budget += tol_factor * _time_consistency(field_, F, t, x)
        z = np.concatenate([[t], x])
        best = None
        for p in cands:
            Hval = F.support(x, p).value
            mp = abs(Hval - float(p @ v))
            gap = -np.inf
            for d in D:
                if not np.all(u.contains(z + taus[0] * d, 1e-12)):
                    continue
                est = dini_upper_derivative(u, z, d, taus=taus)
                gap = max(gap, est.value - (d[0] * Hval - d[1:] @ p))
            score = (mp <= mp_tol * (1 + np.linalg.norm(p)) and gap <= budget + FLOAT_FLOOR * (1 + abs(Hval)))
            if best is None or score > best[0] or (score == best[0] and mp + max(gap, 0) < best[1] + max(best[2], 0)):
                best = (score, mp, gap, p)
        ok, mp, gap, p = best
        chosen[k] = p
        worst_mp = max(worst_mp, mp)
        worst_gap = max(worst_gap, gap)
        if not ok:
            failed.append(t)
    certified = not failed
    rep = dpp_check(field_, F, [Trajectory(s, Y, True, "candidate")],
                    adm_tol=max(1e-8, 10 * float(np.max(np.diff(s)))))
    return OptimalityVerdict(certified, "optimal-certified" if certified else "not-certified", tuple(failed),
                             float(worst_mp), float(worst_gap), bool(rep.passed),
                             bool(certified == rep.passed), chosen)


# ---------------------------------------------------------------------------
# dual fan

@dataclass(frozen=True, eq=False)
class FanMember:
    q: np.ndarray
    certified: bool
    pair: Optional[flow.ArcPair]
    mp_residual: float
    passed: bool


@dataclass(frozen=True, eq=False)
class DualFan:
    members: tuple
    hypothesis_met: bool
    label: str
    mp_tol: float
    audit: object = None

    @property
    def passed(self):
        return all(m.passed for m in self.members if m.certified)

    def to_dict(self):
        return _clean({
            "label": self.label,
            "hypothesis_met": self.hypothesis_met,
            "mp_tol": self.mp_tol,
            "passed": self.passed,
            "members": [{"q": m.q, "certified": m.certified, "mp_residual": m.mp_residual,
                         "passed": m.passed, "arc_pair": m.pair.arc_id if m.pair is not None else None}
                        for m in self.members],
        })


def dual_fan(problem, xbar, q_samples, policy="min_norm", audit=None, rho=0.1, certify=True, mp_tol=1e-4,
             t=None):
    """One dual arc per terminal covector ``q`` with ``-p(T) = q``.

    ``xbar`` is an optimal trajectory (see
    :func:`~mayersens.flow.solve_dual_terminal`). Each ``q`` is first tested
    as a proximal supergradient of the terminal cost at ``xbar(T)``; every
    certified member must satisfy the maximum principle within ``mp_tol``.
    The fan is labeled ``hypothesis-unmet`` when the strong-convexity audit
    of ``F`` fails; it still runs.
    """
    if audit is None:
        audit = audit_hypotheses(problem.F, (problem.lo, problem.hi))
    met = bool(audit.strongly_convex)
    if hasattr(xbar, "x") and hasattr(xbar, "t"):
        zT = np.asarray(xbar.x)[-1]
    elif hasattr(xbar, "y"):
        zT = np.asarray(xbar.y)[-1]
    else:
        zT = np.asarray(xbar, float).reshape(len(t), -1)[-1]
    phi = problem.phi_function()
    members = []
    for q in np.atleast_2d(np.asarray(q_samples, float).reshape(len(q_samples), -1)):
        cert = True
        if certify:
            cert = proximal_supergradient_test(phi, zT, q, rho).proximal
        pair = flow.solve_dual_terminal(xbar, q, problem, policy, t)
        if pair.stationary:
            res = 0.0  # the maximum principle is trivial along a zero dual
        else:
            res = flow.maximum_principle_residual(pair, problem).max
        members.append(FanMember(q.copy(), bool(cert), pair, float(res), bool(res <= mp_tol)))
    return DualFan(tuple(members), met, "hypothesis-met" if met else "hypothesis-unmet", mp_tol, audit)


# ---------------------------------------------------------------------------
# gradient / trajectory atlas

def audit_h4(problem, arcs, eps=1e-6):
    """Sampled check that no difference of two computed x-subgradients of
    ``H`` is a positive multiple of ``p`` along the arcs."""
    F = problem.F
    worst = 0.0
    samples = 0
    for pair in arcs:
        for x, p in zip(pair.x, pair.p):
            if not np.any(p):
                continue
            G = np.atleast_2d(F.x_subgradient(x, p))
            pn2 = float(p @ p)
            for i in range(len(G)):
                for j in range(len(G)):
                    d = G[i] - G[j]
                    dn2 = float(d @ d)
                    if dn2 == 0.0:
                        continue
                    samples += 1
                    ip = float(d @ p)
                    if ip > 0:
                        worst = max(worst, ip * ip / (dn2 * pn2))
    return {"ok": bool(worst < 1.0 - eps), "worst_alignment": worst, "pairs": samples}


@dataclass(frozen=True, eq=False)
class AtlasEntry:
    gradient: np.ndarray
    trajectories: tuple
    hjb_residual: float
    zero: bool
    status: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class GradientTrajectoryAtlas:
    base: np.ndarray
    entries: tuple
    distance: np.ndarray
    separation_tol: float
    h4: dict
    failures: tuple

    @property
    def strongly_injective(self):
        k = len(self.entries)
        off = self.distance[~np.eye(k, dtype=bool)] if k > 1 else np.zeros(0)
        return bool(np.all(off >= self.separation_tol))

    @property
    def min_cross_distance(self):
        k = len(self.entries)
        if k < 2:
            return np.inf
        return float(self.distance[~np.eye(k, dtype=bool)].min())

    def to_dict(self):
        return _clean({
            "base": self.base,
            "entries": [{"gradient": e.gradient, "trajectories": len(e.trajectories),
                         "arc_pairs": [a.arc_id for a in e.trajectories], "hjb_residual": e.hjb_residual,
                         "zero": e.zero, "status": e.status, "diagnostics": e.diagnostics}
                        for e in self.entries],
            "distance": self.distance,
            "separation_tol": self.separation_tol,
            "min_cross_distance": self.min_cross_distance,
            "strongly_injective": self.strongly_injective,
            "h4": self.h4,
            "failures": list(self.failures),
        })


def _sup_distance(a, b):
    return float(np.max(np.linalg.norm(a.x - b.x, axis=1)))


def _dedupe(arcs, tol):
    out = []
    for a in arcs:
        if all(_sup_distance(a, b) > tol for b in out):
            out.append(a)
    return out


def gradient_trajectory_atlas(field_, problem, t, x, policies=flow.POLICIES, sep_factor=1e3, sep_floor=None,
                              dpp_tol=None, radii=None, zero_tol=None, zero_probes=4, cluster_tol=None):
    """Map each reachable gradient of ``V`` at ``(t, x)`` to the optimal
    trajectories it generates.

    Nonzero gradients ``(pt, px)`` seed forward characteristics with
    ``p(t) = -px`` under every selection policy; trajectories whose value
    stays constant (within ``dpp_tol``) are kept. A zero gradient is
    handled by greedy trajectories from nearby certified points, accepted
    when ``|grad phi(y(T))| <= zero_tol``.

    The interpolant has a gradient per adjacent grid cell, so gradients are
    clustered at three times the local slope budget (``cluster_tol``).
    """
    F = problem.F
    x = np.atleast_1d(np.asarray(x, float))
    u = field_.spacetime_function()
    if radii is None:
        radii = geometric_radii(0.25 * float(np.min(field_.hi - field_.lo)), 21)
    if cluster_tol is None:
        cluster_tol = 3.0 * field_.slope_scale(t, x) + 1e-6
    rg = reachable_gradients(u, np.concatenate([[t], x]), radii=radii, cluster_tol=cluster_tol)
    ts = np.linspace(t, field_.T, int(round((field_.T - t) / field_.dt)) + 1)
    mesh_err = field_.interpolation_error((t, field_.T))
    if dpp_tol is None:
        dpp_tol = 3.0 * mesh_err + FLOAT_FLOOR
    if sep_floor is None:
        sep_floor = 2.0 * float(max(field_.dt, field_.spacing.max()))
    gnorm = np.linalg.norm(rg.gradients, axis=1)
    if zero_tol is None:
        zero_tol = 1e-2 * (1.0 + float(gnorm.max()))
    adm = max(1e-8, 10.0 * float(field_.dt))
    entries, failures, all_arcs = [], [], []
    for g in rg.gradients:
        pt, px = float(g[0]), g[1:]
        hjb_res = abs(-pt + F.support(x, -px).value)
        if np.linalg.norm(g) <= zero_tol:
            arcs, diag = _zero_family(field_, problem, rg, g, zero_probes, zero_tol, dpp_tol, adm)
            status = "ok" if arcs else "no_zero_trajectory"
            if not arcs:
                failures.append({"gradient": g.tolist(), "reason": status, **diag})
            entries.append(AtlasEntry(g.copy(), tuple(arcs), float(hjb_res), True, status, diag))
            all_arcs += arcs
            continue
        diag = {"px_nonzero": bool(np.any(px)), "rejected": []}
        arcs = []
        for pol in policies:
            try:
                pair = flow.integrate_forward(problem, t, x, -px, policy=pol, ts=ts)
            except (NumericalError, ValueError) as exc:
                diag["rejected"].append({"policy": pol, "reason": str(exc)})
                continue
            rep = dpp_check(field_, F, [Trajectory(pair.t, pair.x, True, pol)], tol=dpp_tol, adm_tol=adm)
            if rep.passed:
                arcs.append(pair)
            else:
                diag["rejected"].append({"policy": pol, "reason": "value not constant",
                                         "total_variation": rep.max_total_variation})
        arcs = _dedupe(arcs, 1e-9 * (1.0 + float(np.abs(x).max())))
        status = "ok" if arcs else "no_optimal_trajectory"
        if not arcs:
            failures.append({"gradient": g.tolist(), "reason": status})
        entries.append(AtlasEntry(g.copy(), tuple(arcs), float(hjb_res), False, status, diag))
        all_arcs += arcs
    # interpolation error along the stored trajectories; the median keeps a
    # kink at the base point from setting the scale
    along = [field_.interpolation_error((s - field_.dt, s + field_.dt), y, 0.0)
             for a in all_arcs for s, y in zip(a.t, a.x)]
    sep_tol = max(sep_factor * float(np.median(along)) if along else 0.0, sep_floor)
    k = len(entries)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i != j:
                pairs = [_sup_distance(a, b) for a in entries[i].trajectories for b in entries[j].trajectories]
                dist[i, j] = min(pairs) if pairs else np.inf
    h4 = audit_h4(problem, [a for a in all_arcs if not a.stationary])
    return GradientTrajectoryAtlas(np.concatenate([[t], x]), tuple(entries), dist,
                                   float(sep_tol), h4, tuple(failures))


def _zero_family(field_, problem, rg, g, probes, zero_tol, dpp_tol, adm):
    """Greedy optimal trajectories from certified points whose gradient
    clusters at ``g`` (= 0), kept when ``grad phi`` vanishes at the end."""
    F = problem.F
    diag = {"probes": 0, "grad_phi": []}
    cl = min(rg.clusters, key=lambda c: float(np.linalg.norm(c.gradient - g)))
    pts = cl.points[:probes]
    arcs = []
    for z in pts:
        diag["probes"] += 1
        t0, x0 = float(z[0]), z[1:]
        tr = synthesize_trajectory(field_, F, t0, x0)
        gphi = problem.terminal_gradient(tr.y[-1])
        diag["grad_phi"].append(float(np.linalg.norm(gphi)))
        if np.linalg.norm(gphi) > zero_tol:
            continue
        rep = dpp_check(field_, F, [tr], tol=dpp_tol, adm_tol=adm)
        if rep.passed:
            arcs.append(flow.ArcPair(tr.s, tr.y, np.zeros_like(tr.y), "greedy", float(tr.s[1] - tr.s[0]),
                                     "zero", True, {"start": [t0] + x0.tolist()}))
    return _dedupe(arcs, 1e-9), diag
