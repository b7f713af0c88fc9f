"""Hot numeric kernels: multilinear interpolation on regular grids and the
semi-Lagrangian min-over-velocities step.

Each kernel has a numba implementation and a pure-numpy twin with identical
semantics (including tie-breaking). The backend is chosen at import time from
``MAYERSENS_DISABLE_NUMBA`` and can be switched with :func:`set_backend`.
"""

import numpy as np

from . import _accel
from ._accel import try_njit

# grid-unit slack for clamping and for snapping onto nodes
_CLAMP_EPS = 1e-9

_backend = "numba" if _accel.USE_NUMBA else "numpy"


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _accel.HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def _grid_arrays(origin, spacing, shape):
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    spacing = np.ascontiguousarray(spacing, dtype=np.float64)
    shape = np.ascontiguousarray(shape, dtype=np.int64)
    if np.any(shape < 2):
        raise ValueError("every grid axis needs at least two nodes")
    return origin, spacing, shape


# ---------------------------------------------------------------------------
# numba path

@try_njit
def _strides(shape):
    d = shape.shape[0]
    st = np.empty(d, np.int64)
    s = 1
    for a in range(d - 1, -1, -1):
        st[a] = s
        s *= shape[a]
    return st


@try_njit
def _locate(x, origin, spacing, shape, base, frac):
    """Fill cell index/fraction for one point; return True if clamped."""
    d = shape.shape[0]
    clamped = False
    for a in range(d):
        n = shape[a]
        u = (x[a] - origin[a]) / spacing[a]
        if u < 0.0:
            if u < -_CLAMP_EPS:
                clamped = True
            u = 0.0
        elif u > n - 1:
            if u > n - 1 + _CLAMP_EPS:
                clamped = True
            u = float(n - 1)
        r = np.floor(u + 0.5)
        if abs(u - r) <= _CLAMP_EPS:
            u = r
        j = int(np.floor(u))
        if j > n - 2:
            j = n - 2
        base[a] = j
        frac[a] = u - j
    return clamped


@try_njit
def _blend(values, strides, base, frac):
    d = base.shape[0]
    acc = 0.0
    for c in range(1 << d):
        w = 1.0
        idx = 0
        for a in range(d):
            if (c >> a) & 1:
                w *= frac[a]
                idx += (base[a] + 1) * strides[a]
            else:
                w *= 1.0 - frac[a]
                idx += base[a] * strides[a]
        if w != 0.0:
            acc += w * values[idx]
    return acc


@try_njit
def _interp_nb(values, origin, spacing, shape, pts, out, clamped):
    P, d = pts.shape
    st = _strides(shape)
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    for i in range(P):
        clamped[i] = _locate(pts[i], origin, spacing, shape, base, frac)
        out[i] = _blend(values, st, base, frac)


@try_njit
def _sl_min_nb(values, mask, origin, spacing, shape, feet, out, arg, affected):
    P, S, d = feet.shape
    st = _strides(shape)
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    for i in range(P):
        best = np.inf
        bi = 0
        clamp = False
        wbest = 0.0
        for s in range(S):
            if _locate(feet[i, s], origin, spacing, shape, base, frac):
                clamp = True
            v = _blend(values, st, base, frac)
            if v < best:
                best = v
                bi = s
                wbest = _blend(mask, st, base, frac)
        out[i] = best
        arg[i] = bi
        affected[i] = 1.0 if clamp else wbest


# ---------------------------------------------------------------------------
# numpy path

def _interp_np(values, origin, spacing, shape, pts):
    P, d = pts.shape
    u = (pts - origin) / spacing
    hi = (shape - 1).astype(np.float64)
    clamped = np.any((u < -_CLAMP_EPS) | (u > hi + _CLAMP_EPS), axis=1)
    u = np.clip(u, 0.0, hi)
    r = np.floor(u + 0.5)
    u = np.where(np.abs(u - r) <= _CLAMP_EPS, r, u)
    base = np.minimum(np.floor(u).astype(np.int64), shape - 2)
    frac = u - base
    st = np.empty(d, np.int64)
    s = 1
    for a in range(d - 1, -1, -1):
        st[a] = s
        s *= shape[a]
    out = np.zeros(P)
    for c in range(1 << d):
        w = np.ones(P)
        idx = np.zeros(P, np.int64)
        for a in range(d):
            if (c >> a) & 1:
                w = w * frac[:, a]
                idx += (base[:, a] + 1) * st[a]
            else:
                w = w * (1.0 - frac[:, a])
                idx += base[:, a] * st[a]
        out += np.where(w != 0.0, w * values[idx], 0.0)
    return out, clamped


def _sl_min_np(values, mask, origin, spacing, shape, feet):
    P, S, d = feet.shape
    flat = feet.reshape(P * S, d)
    v, cl = _interp_np(values, origin, spacing, shape, flat)
    m, _ = _interp_np(mask, origin, spacing, shape, flat)
    v = v.reshape(P, S)
    arg = np.argmin(v, axis=1)
    out = v[np.arange(P), arg]
    w = m.reshape(P, S)[np.arange(P), arg]
    return out, arg, np.where(np.any(cl.reshape(P, S), axis=1), 1.0, w)


# ---------------------------------------------------------------------------
# public entry points

def interp_multilinear(values, origin, spacing, pts):
    """Multilinear interpolation of a C-ordered grid at points ``pts`` (P, d).

    Returns ``(vals, clamped)``; points outside the grid are projected onto
    it and flagged.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    origin, spacing, shape = _grid_arrays(origin, spacing, values.shape)
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    if pts.shape[1] != values.ndim:
        raise ValueError(f"points have dimension {pts.shape[1]}, grid has {values.ndim}")
    flat = values.ravel()
    if _backend == "numba":
        out = np.empty(pts.shape[0])
        cl = np.empty(pts.shape[0], np.bool_)
        _interp_nb(flat, origin, spacing, shape, pts, out, cl)
        return out, cl
    return _interp_np(flat, origin, spacing, shape, pts)


def sl_min(values, mask, origin, spacing, feet):
    """One semi-Lagrangian update.

    For each node ``i`` returns ``min_s I[values](feet[i, s])``, the index of
    the first minimizing sample, and the node's influence weight: 1 if any
    foot was clamped, else ``mask`` interpolated at the minimizing foot.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    origin, spacing, shape = _grid_arrays(origin, spacing, values.shape)
    feet = np.ascontiguousarray(feet, dtype=np.float64)
    if feet.ndim != 3 or feet.shape[2] != values.ndim:
        raise ValueError("feet must have shape (nodes, samples, dim)")
    if _backend == "numba":
        P = feet.shape[0]
        out = np.empty(P)
        arg = np.empty(P, np.int64)
        aff = np.empty(P)
        _sl_min_nb(values.ravel(), mask.ravel(), origin, spacing, shape, feet, out, arg, aff)
        return out, arg, aff
    return _sl_min_np(values.ravel(), mask.ravel(), origin, spacing, shape, feet)
