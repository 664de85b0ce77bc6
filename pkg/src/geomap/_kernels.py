"""Hot per-element kernels with numba and pure-numpy lanes.

Every public function here has two implementations: a numba ``@njit`` kernel
and a vectorized numpy fallback. The lane is picked once at import from the
``GEOMAP_NUMBA`` environment variable:

    GEOMAP_NUMBA=1   force numba (ImportError if numba is missing)
    GEOMAP_NUMBA=0   force the numpy fallback
    unset / auto     numba when importable, numpy otherwise

``use_numba()`` reports the active lane; ``set_lane()`` flips it at runtime
(used by the lane-equivalence tests and the benchmark).
"""
from __future__ import annotations

import os

import numpy as np

_FORCE = os.environ.get("GEOMAP_NUMBA", "auto").lower()

try:
    if _FORCE == "0":
        raise ImportError("numba disabled via GEOMAP_NUMBA=0")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    if _FORCE in ("1", "true"):
        raise
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # no-op decorator so the kernels still define
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_ACTIVE = _HAVE_NUMBA


def use_numba() -> bool:
    """True when the numba lane is active."""
    return _ACTIVE


def set_lane(numba_on: bool) -> None:
    """Switch lanes at runtime. Raises if numba was requested but unavailable."""
    global _ACTIVE
    if numba_on and not _HAVE_NUMBA:
        raise RuntimeError("numba lane requested but numba is not importable")
    _ACTIVE = bool(numba_on)


# ---------------------------------------------------------------------------
# signed element measures


def _signed_measures_2d_np(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0 = points[tris[:, 0]]
    e1 = points[tris[:, 1]] - p0
    e2 = points[tris[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@njit(cache=True)
def _signed_measures_2d_nb(points, tris):
    n = tris.shape[0]
    out = np.empty(n, dtype=np.float64)
    for e in range(n):
        i0, i1, i2 = tris[e, 0], tris[e, 1], tris[e, 2]
        ax = points[i1, 0] - points[i0, 0]
        ay = points[i1, 1] - points[i0, 1]
        bx = points[i2, 0] - points[i0, 0]
        by = points[i2, 1] - points[i0, 1]
        out[e] = 0.5 * (ax * by - ay * bx)
    return out


def _signed_measures_3d_np(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p0 = points[tets[:, 0]]
    e1 = points[tets[:, 1]] - p0
    e2 = points[tets[:, 2]] - p0
    e3 = points[tets[:, 3]] - p0
    det = (
        e1[:, 0] * (e2[:, 1] * e3[:, 2] - e2[:, 2] * e3[:, 1])
        - e1[:, 1] * (e2[:, 0] * e3[:, 2] - e2[:, 2] * e3[:, 0])
        + e1[:, 2] * (e2[:, 0] * e3[:, 1] - e2[:, 1] * e3[:, 0])
    )
    return det / 6.0


@njit(cache=True)
def _signed_measures_3d_nb(points, tets):
    n = tets.shape[0]
    out = np.empty(n, dtype=np.float64)
    for e in range(n):
        i0 = tets[e, 0]
        a = points[tets[e, 1]] - points[i0]
        b = points[tets[e, 2]] - points[i0]
        c = points[tets[e, 3]] - points[i0]
        det = (
            a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
        )
        out[e] = det / 6.0
    return out


def signed_measures(points: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed areas (triangles) or volumes (tets) per element."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    elements = np.ascontiguousarray(elements)
    if elements.shape[1] == 3:
        fn = _signed_measures_2d_nb if _ACTIVE else _signed_measures_2d_np
    else:
        fn = _signed_measures_3d_nb if _ACTIVE else _signed_measures_3d_np
    return fn(points, elements)


# ---------------------------------------------------------------------------
# per-element affine Jacobians: J[k, j] = d(dst_k)/d(src_j)


def _affine_jacobians_2d_np(src, dst, tris):
    s0 = src[tris[:, 0]]
    e1 = src[tris[:, 1]] - s0
    e2 = src[tris[:, 2]] - s0
    d0 = dst[tris[:, 0]]
    f1 = dst[tris[:, 1]] - d0
    f2 = dst[tris[:, 2]] - d0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = 1.0 / det
    J = np.empty((tris.shape[0], 2, 2))
    # J = F E^{-1} with E columns = edge vectors, F columns = mapped edges
    J[:, 0, 0] = (f1[:, 0] * e2[:, 1] - f2[:, 0] * e1[:, 1]) * inv
    J[:, 0, 1] = (f2[:, 0] * e1[:, 0] - f1[:, 0] * e2[:, 0]) * inv
    J[:, 1, 0] = (f1[:, 1] * e2[:, 1] - f2[:, 1] * e1[:, 1]) * inv
    J[:, 1, 1] = (f2[:, 1] * e1[:, 0] - f1[:, 1] * e2[:, 0]) * inv
    return J


@njit(cache=True)
def _affine_jacobians_2d_nb(src, dst, tris):
    n = tris.shape[0]
    J = np.empty((n, 2, 2), dtype=np.float64)
    for e in range(n):
        i0, i1, i2 = tris[e, 0], tris[e, 1], tris[e, 2]
        e1x = src[i1, 0] - src[i0, 0]
        e1y = src[i1, 1] - src[i0, 1]
        e2x = src[i2, 0] - src[i0, 0]
        e2y = src[i2, 1] - src[i0, 1]
        det = e1x * e2y - e1y * e2x
        inv = 1.0 / det
        for k in range(2):
            f1 = dst[i1, k] - dst[i0, k]
            f2 = dst[i2, k] - dst[i0, k]
            J[e, k, 0] = (f1 * e2y - f2 * e1y) * inv
            J[e, k, 1] = (f2 * e1x - f1 * e2x) * inv
    return J


def _affine_jacobians_3d_np(src, dst, tets):
    s0 = src[tets[:, 0]]
    E = np.stack([src[tets[:, i]] - s0 for i in (1, 2, 3)], axis=2)  # columns
    d0 = dst[tets[:, 0]]
    F = np.stack([dst[tets[:, i]] - d0 for i in (1, 2, 3)], axis=2)
    return F @ np.linalg.inv(E)


@njit(cache=True)
def _affine_jacobians_3d_nb(src, dst, tets):
    n = tets.shape[0]
    J = np.empty((n, 3, 3), dtype=np.float64)
    E = np.empty((3, 3), dtype=np.float64)
    F = np.empty((3, 3), dtype=np.float64)
    for e in range(n):
        i0 = tets[e, 0]
        for c in range(3):
            ic = tets[e, c + 1]
            for r in range(3):
                E[r, c] = src[ic, r] - src[i0, r]
                F[r, c] = dst[ic, r] - dst[i0, r]
        J[e] = F @ np.linalg.inv(E)
    return J


def affine_jacobians(src: np.ndarray, dst: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Linear part of the per-element affine map src -> dst, shape [#E, d, d]."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    dst = np.ascontiguousarray(dst, dtype=np.float64)
    elements = np.ascontiguousarray(elements)
    if elements.shape[1] == 3:
        fn = _affine_jacobians_2d_nb if _ACTIVE else _affine_jacobians_2d_np
    else:
        fn = _affine_jacobians_3d_nb if _ACTIVE else _affine_jacobians_3d_np
    return fn(src, dst, elements)


# ---------------------------------------------------------------------------
# multilinear interpolation of grid fields at scattered points in [0,1]^d


def _interp_2d_np(values, pts):
    n1, n2 = values.shape[1], values.shape[2]
    x = np.clip(pts[:, 0], 0.0, 1.0) * (n1 - 1)
    y = np.clip(pts[:, 1], 0.0, 1.0) * (n2 - 1)
    i = np.minimum(x.astype(np.int64), n1 - 2)
    j = np.minimum(y.astype(np.int64), n2 - 2)
    fx = x - i
    fy = y - j
    v00 = values[:, i, j]
    v10 = values[:, i + 1, j]
    v01 = values[:, i, j + 1]
    v11 = values[:, i + 1, j + 1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )


@njit(cache=True)
def _interp_2d_nb(values, pts):
    c, n1, n2 = values.shape
    p = pts.shape[0]
    out = np.empty((c, p), dtype=np.float64)
    for k in range(p):
        x = min(max(pts[k, 0], 0.0), 1.0) * (n1 - 1)
        y = min(max(pts[k, 1], 0.0), 1.0) * (n2 - 1)
        i = min(int(x), n1 - 2)
        j = min(int(y), n2 - 2)
        fx = x - i
        fy = y - j
        for ch in range(c):
            out[ch, k] = (
                values[ch, i, j] * (1 - fx) * (1 - fy)
                + values[ch, i + 1, j] * fx * (1 - fy)
                + values[ch, i, j + 1] * (1 - fx) * fy
                + values[ch, i + 1, j + 1] * fx * fy
            )
    return out


def _interp_3d_np(values, pts):
    n1, n2, n3 = values.shape[1:]
    x = np.clip(pts[:, 0], 0.0, 1.0) * (n1 - 1)
    y = np.clip(pts[:, 1], 0.0, 1.0) * (n2 - 1)
    z = np.clip(pts[:, 2], 0.0, 1.0) * (n3 - 1)
    i = np.minimum(x.astype(np.int64), n1 - 2)
    j = np.minimum(y.astype(np.int64), n2 - 2)
    k = np.minimum(z.astype(np.int64), n3 - 2)
    fx, fy, fz = x - i, y - j, z - k
    out = np.zeros((values.shape[0], pts.shape[0]))
    for di, wx in ((0, 1 - fx), (1, fx)):
        for dj, wy in ((0, 1 - fy), (1, fy)):
            for dk, wz in ((0, 1 - fz), (1, fz)):
                out += values[:, i + di, j + dj, k + dk] * (wx * wy * wz)
    return out


@njit(cache=True)
def _interp_3d_nb(values, pts):
    c, n1, n2, n3 = values.shape
    p = pts.shape[0]
    out = np.empty((c, p), dtype=np.float64)
    for q in range(p):
        x = min(max(pts[q, 0], 0.0), 1.0) * (n1 - 1)
        y = min(max(pts[q, 1], 0.0), 1.0) * (n2 - 1)
        z = min(max(pts[q, 2], 0.0), 1.0) * (n3 - 1)
        i = min(int(x), n1 - 2)
        j = min(int(y), n2 - 2)
        k = min(int(z), n3 - 2)
        fx, fy, fz = x - i, y - j, z - k
        for ch in range(c):
            v = 0.0
            v += values[ch, i, j, k] * (1 - fx) * (1 - fy) * (1 - fz)
            v += values[ch, i + 1, j, k] * fx * (1 - fy) * (1 - fz)
            v += values[ch, i, j + 1, k] * (1 - fx) * fy * (1 - fz)
            v += values[ch, i, j, k + 1] * (1 - fx) * (1 - fy) * fz
            v += values[ch, i + 1, j + 1, k] * fx * fy * (1 - fz)
            v += values[ch, i + 1, j, k + 1] * fx * (1 - fy) * fz
            v += values[ch, i, j + 1, k + 1] * (1 - fx) * fy * fz
            v += values[ch, i + 1, j + 1, k + 1] * fx * fy * fz
            out[ch, q] = v
    return out


def interp_multilinear(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Interpolate channel-first grid ``values`` ([C, *res], nodes spanning
    [0,1] per axis) at points ``pts`` ([P, d]); returns [C, P]."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if values.ndim == 3:
        fn = _interp_2d_nb if _ACTIVE else _interp_2d_np
    elif values.ndim == 4:
        fn = _interp_3d_nb if _ACTIVE else _interp_3d_np
    else:
        raise ValueError(f"expected [C,*res] grid values, got shape {values.shape}")
    return fn(values, pts)
