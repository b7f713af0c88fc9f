"""Deterministic direction sets, quasi-random point sets and small convex
helpers shared by the estimators."""

from functools import lru_cache

import numpy as np
from scipy import optimize, stats

DEFAULT_DIRECTIONS = {1: 2, 2: 64, 3: 256}


@lru_cache(maxsize=64)
def _directions_cached(dim, count):
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(1.0 - z * z)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # higher dimensions: normalized quasi-random gaussians, axes first
    h = stats.qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    g = stats.norm.ppf(np.clip(h, 1e-12, 1 - 1e-12))
    g = np.vstack([np.eye(dim), -np.eye(dim), g])[:count]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def directions(dim, count=None):
    """Unit direction fan: equispaced circle in 2D, Fibonacci sphere in 3D."""
    if count is None:
        count = DEFAULT_DIRECTIONS.get(dim, 32 * dim)
    d = _directions_cached(int(dim), int(count))
    d = d.copy()
    d.flags.writeable = False
    return d


def box_points(lo, hi, count, include_center=True):
    """Deterministic Halton points in the box ``[lo, hi]``."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    h = stats.qmc.Halton(d=lo.size, scramble=False).random(count + 1)[1:]
    pts = lo + h * (hi - lo)
    if include_center:
        pts = np.vstack([0.5 * (lo + hi), pts])
    return pts


def geometric_radii(r0, levels=21):
    """``r0 * 2**-k`` for ``k = 0 .. levels-1``."""
    return r0 * 0.5 ** np.arange(levels)


def min_norm_point(points):
    """Minimal-norm point of the convex hull of the rows of ``points``."""
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.shape[0] == 1:
        return pts[0].copy()
    if pts.shape[1] == 1:
        lo, hi = pts.min(), pts.max()
        return np.array([min(max(0.0, lo), hi)])
    scale = 1.0 + np.abs(pts).max()
    M = 1e4 * scale
    A = np.vstack([pts.T, M * np.ones((1, pts.shape[0]))])
    b = np.concatenate([np.zeros(pts.shape[1]), [M]])
    lam, _ = optimize.nnls(A, b)
    lam = lam / lam.sum()
    return lam @ pts


def unique_rows(a, tol=1e-12):
    """Rows of ``a`` with near-duplicates (max-norm ``tol``) removed, order kept."""
    a = np.atleast_2d(a)
    keep = []
    for i, row in enumerate(a):
        if all(np.max(np.abs(row - a[j])) > tol for j in keep):
            keep.append(i)
    return a[keep]
