"""Density evaluation for all four particle methods.

Evaluation is a gather: every query point sums the contributions of the
particles whose axis-aligned bounding box contains it, in ascending
particle index order, so the result is a pure function of the particle
state and the point (independent of how the acceleration structure is
laid out, and bitwise reproducible).

Candidate lookup uses a uniform bin grid whose cell size equals the
largest bounding-box half-width among active particles.  Each particle
is registered in every bin its box intersects, hence a query only has to
scan its own bin.  Bins are rebuilt lazily whenever the particle
positions changed since the last evaluation.

Bounding boxes: fixed shapes use a cube of half-width eps*rho0 around
the center; the linearly transformed method uses h*rho0*|D^-1|_inf (the
image of the reference cube under the local forward linearization); the
quadratic method replaces rho0 by its inflated support radius rho~ and
additionally restricts evaluation to points where the quadratic backward
map is locally invertible (positive Jacobian determinant).

Query points may be processed fully concurrently; particle state is
read-only here.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .errors import NumericalFailure
from .grids import EvalGrid
from .kernels import ShapeKernel
from .particles import ParticleSet, _inv2, norminf2

_METHOD_CODES = {"tsp": 0, "fsl": 0, "ltp": 1, "qtp": 2}

# bounding boxes are clamped to this half-width; larger boxes only occur
# for badly degenerated quadratic supports where the box is a bound anyway
_MAX_HALF = 4.0


@njit(cache=True, inline="always")
def _phi1d(code, x):
    t = abs(x)
    if code == 0:  # M4'
        if t >= 2.0:
            return 0.0
        if t < 1.0:
            return 1.0 + t * t * (1.5 * t - 2.5)
        s = 2.0 - t
        return 0.5 * s * s * (1.0 - t)
    elif code == 1:  # hat
        if t >= 1.0:
            return 0.0
        return 1.0 - t
    elif code == 2:  # cubic spline
        if t >= 2.0:
            return 0.0
        if t < 1.0:
            return 2.0 / 3.0 - t * t + 0.5 * t * t * t
        s = 2.0 - t
        return s * s * s / 6.0
    else:  # quintic spline
        if t >= 3.0:
            return 0.0
        t2 = t * t
        if t < 1.0:
            return (66.0 - 60.0 * t2 + 30.0 * t2 * t2 - 10.0 * t2 * t2 * t) / 120.0
        if t < 2.0:
            return (51.0 + 75.0 * t - 210.0 * t2 + 150.0 * t2 * t - 45.0 * t2 * t2 + 5.0 * t2 * t2 * t) / 120.0
        s = 3.0 - t
        s2 = s * s
        return s2 * s2 * s / 120.0


@njit(cache=True, parallel=True)
def _gather(
    pts,
    out,
    meth,
    kcode,
    inv_scale,
    centers,
    w,
    half,
    dmat,
    qten,
    cube_cap,
    bx0,
    by0,
    inv_s,
    nbx,
    nby,
    bin_start,
    bin_items,
):
    for p in prange(pts.shape[0]):
        x = pts[p, 0]
        y = pts[p, 1]
        ix = int(math.floor((x - bx0) * inv_s))
        iy = int(math.floor((y - by0) * inv_s))
        if ix < 0 or ix >= nbx or iy < 0 or iy >= nby:
            out[p] = 0.0
            continue
        b = ix * nby + iy
        acc = 0.0
        for ii in range(bin_start[b], bin_start[b + 1]):
            k = bin_items[ii]
            dx = x - centers[k, 0]
            dy = y - centers[k, 1]
            hw = half[k]
            if abs(dx) > hw or abs(dy) > hw:
                continue
            if meth == 0:
                u1 = dx * inv_scale
                u2 = dy * inv_scale
            elif meth == 1:
                u1 = (dmat[k, 0, 0] * dx + dmat[k, 0, 1] * dy) * inv_scale
                u2 = (dmat[k, 1, 0] * dx + dmat[k, 1, 1] * dy) * inv_scale
            else:
                l1 = dmat[k, 0, 0] * dx + dmat[k, 0, 1] * dy
                l2 = dmat[k, 1, 0] * dx + dmat[k, 1, 1] * dy
                cap = cube_cap[k]
                if abs(l1) > cap or abs(l2) > cap:
                    continue
                j00 = dmat[k, 0, 0] + qten[k, 0, 0, 0] * dx + qten[k, 0, 0, 1] * dy
                j01 = dmat[k, 0, 1] + qten[k, 0, 1, 0] * dx + qten[k, 0, 1, 1] * dy
                j10 = dmat[k, 1, 0] + qten[k, 1, 0, 0] * dx + qten[k, 1, 0, 1] * dy
                j11 = dmat[k, 1, 1] + qten[k, 1, 1, 0] * dx + qten[k, 1, 1, 1] * dy
                if j00 * j11 - j01 * j10 <= 0.0:
                    continue
                q1 = 0.5 * (qten[k, 0, 0, 0] * dx * dx + (qten[k, 0, 0, 1] + qten[k, 0, 1, 0]) * dx * dy + qten[k, 0, 1, 1] * dy * dy)
                q2 = 0.5 * (qten[k, 1, 0, 0] * dx * dx + (qten[k, 1, 0, 1] + qten[k, 1, 1, 0]) * dx * dy + qten[k, 1, 1, 1] * dy * dy)
                u1 = (l1 + q1) * inv_scale
                u2 = (l2 + q2) * inv_scale
            acc += w[k] * _phi1d(kcode, u1) * _phi1d(kcode, u2) * inv_scale * inv_scale
        out[p] = acc


@njit(cache=True)
def _gather_overlap(
    pts,
    out,
    meth,
    rho0,
    inv_scale,
    centers,
    half,
    dmat,
    qten,
    cube_cap,
    bx0,
    by0,
    inv_s,
    nbx,
    nby,
    bin_start,
    bin_items,
):
    for p in range(pts.shape[0]):
        x = pts[p, 0]
        y = pts[p, 1]
        ix = int(math.floor((x - bx0) * inv_s))
        iy = int(math.floor((y - by0) * inv_s))
        if ix < 0 or ix >= nbx or iy < 0 or iy >= nby:
            out[p] = 0
            continue
        b = ix * nby + iy
        cnt = 0
        for ii in range(bin_start[b], bin_start[b + 1]):
            k = bin_items[ii]
            dx = x - centers[k, 0]
            dy = y - centers[k, 1]
            hw = half[k]
            if abs(dx) > hw or abs(dy) > hw:
                continue
            if meth == 0:
                u1 = dx * inv_scale
                u2 = dy * inv_scale
            elif meth == 1:
                u1 = (dmat[k, 0, 0] * dx + dmat[k, 0, 1] * dy) * inv_scale
                u2 = (dmat[k, 1, 0] * dx + dmat[k, 1, 1] * dy) * inv_scale
            else:
                l1 = dmat[k, 0, 0] * dx + dmat[k, 0, 1] * dy
                l2 = dmat[k, 1, 0] * dx + dmat[k, 1, 1] * dy
                cap = cube_cap[k]
                if abs(l1) > cap or abs(l2) > cap:
                    continue
                j00 = dmat[k, 0, 0] + qten[k, 0, 0, 0] * dx + qten[k, 0, 0, 1] * dy
                j01 = dmat[k, 0, 1] + qten[k, 0, 1, 0] * dx + qten[k, 0, 1, 1] * dy
                j10 = dmat[k, 1, 0] + qten[k, 1, 0, 0] * dx + qten[k, 1, 0, 1] * dy
                j11 = dmat[k, 1, 1] + qten[k, 1, 1, 0] * dx + qten[k, 1, 1, 1] * dy
                if j00 * j11 - j01 * j10 <= 0.0:
                    continue
                q1 = 0.5 * (qten[k, 0, 0, 0] * dx * dx + (qten[k, 0, 0, 1] + qten[k, 0, 1, 0]) * dx * dy + qten[k, 0, 1, 1] * dy * dy)
                q2 = 0.5 * (qten[k, 1, 0, 0] * dx * dx + (qten[k, 1, 0, 1] + qten[k, 1, 1, 0]) * dx * dy + qten[k, 1, 1, 1] * dy * dy)
                u1 = (l1 + q1) * inv_scale
                u2 = (l2 + q2) * inv_scale
            if abs(u1) < rho0 and abs(u2) < rho0:
                cnt += 1
        out[p] = cnt


def bbox_half_widths(ps: ParticleSet, idx: np.ndarray | None = None) -> np.ndarray:
    """Bounding-box half-widths of the selected (default: active) particles."""
    if idx is None:
        idx = np.flatnonzero(ps.active)
    rho0 = ps.kernel.rho0
    if ps.method in ("tsp", "fsl"):
        return np.full(idx.size, ps.eps * rho0)
    dinv, bad = _inv2(ps.D[idx])
    reach = norminf2(dinv)
    reach[bad] = _MAX_HALF / ps.h  # degenerate map: fall back to the clamp
    if ps.method == "ltp":
        half = ps.h * rho0 * reach
    else:
        rho = ps.rho_tilde[idx] if ps.scheme == "direct" else np.full(idx.size, ps.rho_tilde_static)
        half = ps.h * rho * reach
    return np.minimum(half, _MAX_HALF)


def particle_bbox(ps: ParticleSet, k: int):
    """Axis-aligned box bounding particle k's deformed support."""
    half = bbox_half_widths(ps, np.array([k]))[0]
    c = ps.x[k]
    return (c[0] - half, c[1] - half), (c[0] + half, c[1] + half)


class _Bins:
    __slots__ = ("idx", "half", "bx0", "by0", "inv_s", "nbx", "nby", "start", "items", "cube_cap")


def _build_bins(ps: ParticleSet) -> _Bins | None:
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return None
    half = bbox_half_widths(ps, idx)
    c = ps.x[idx]
    s = float(half.max())
    if s <= 0.0:
        s = ps.h
    bx0 = float((c[:, 0] - half).min())
    by0 = float((c[:, 1] - half).min())
    bx1 = float((c[:, 0] + half).max())
    by1 = float((c[:, 1] + half).max())
    nbx = max(1, int(math.ceil((bx1 - bx0) / s)) + 1)
    nby = max(1, int(math.ceil((by1 - by0) / s)) + 1)

    lo_x = np.floor((c[:, 0] - half - bx0) / s).astype(np.int64)
    hi_x = np.floor((c[:, 0] + half - bx0) / s).astype(np.int64)
    lo_y = np.floor((c[:, 1] - half - by0) / s).astype(np.int64)
    hi_y = np.floor((c[:, 1] + half - by0) / s).astype(np.int64)
    np.clip(lo_x, 0, nbx - 1, out=lo_x)
    np.clip(hi_x, 0, nbx - 1, out=hi_x)
    np.clip(lo_y, 0, nby - 1, out=lo_y)
    np.clip(hi_y, 0, nby - 1, out=hi_y)

    bins_list = []
    items_list = []
    span_x = int((hi_x - lo_x).max()) + 1
    span_y = int((hi_y - lo_y).max()) + 1
    local = np.arange(idx.size, dtype=np.int64)
    for ox in range(span_x):
        for oy in range(span_y):
            sel = (lo_x + ox <= hi_x) & (lo_y + oy <= hi_y)
            if not sel.any():
                continue
            bins_list.append((lo_x[sel] + ox) * nby + (lo_y[sel] + oy))
            items_list.append(local[sel])
    bin_ids = np.concatenate(bins_list)
    items = np.concatenate(items_list)
    order = np.lexsort((items, bin_ids))
    bin_ids = bin_ids[order]
    items = items[order]
    counts = np.bincount(bin_ids, minlength=nbx * nby)
    start = np.zeros(nbx * nby + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])

    b = _Bins()
    b.idx = idx
    b.half = half
    b.bx0 = bx0
    b.by0 = by0
    b.inv_s = 1.0 / s
    b.nbx = nbx
    b.nby = nby
    b.start = start
    b.items = items
    if ps.method == "qtp":
        rho = ps.rho_tilde[idx] if ps.scheme == "direct" else np.full(idx.size, ps.rho_tilde_static)
        b.cube_cap = ps.h * rho
    else:
        b.cube_cap = np.zeros(1)
    return b


_DUMMY_D = np.zeros((1, 2, 2))
_DUMMY_Q = np.zeros((1, 2, 2, 2))


def _current_bins(ps: ParticleSet):
    cachekey = getattr(ps, "_bins_key", None)
    if cachekey == ps.pos_version:
        return getattr(ps, "_bins")
    b = _build_bins(ps)
    ps._bins = b
    ps._bins_key = ps.pos_version
    return b


def eval_points(ps: ParticleSet, kernel: ShapeKernel, pts) -> np.ndarray:
    """Numerical density at an array of points, shape (P, 2) -> (P,)."""
    pts = np.ascontiguousarray(np.asarray(pts, dtype=float).reshape(-1, 2))
    out = np.zeros(pts.shape[0])
    b = _current_bins(ps)
    if b is None:
        return out
    meth = _METHOD_CODES[ps.method]
    inv_scale = 1.0 / (ps.eps if meth == 0 else ps.h)
    dmat = ps.D[b.idx] if ps.D is not None else _DUMMY_D
    qten = ps.Q[b.idx] if ps.Q is not None else _DUMMY_Q
    _gather(
        pts,
        out,
        meth,
        kernel.code,
        inv_scale,
        np.ascontiguousarray(ps.x[b.idx]),
        np.ascontiguousarray(ps.w[b.idx]),
        b.half,
        np.ascontiguousarray(dmat),
        np.ascontiguousarray(qten),
        b.cube_cap,
        b.bx0,
        b.by0,
        b.inv_s,
        b.nbx,
        b.nby,
        b.start,
        b.items,
    )
    return out


def eval_density(ps: ParticleSet, kernel: ShapeKernel, x) -> float:
    """Numerical density at a single point."""
    return float(eval_points(ps, kernel, np.asarray(x, dtype=float).reshape(1, 2))[0])


def eval_density_grid(ps: ParticleSet, kernel: ShapeKernel, grid: EvalGrid) -> np.ndarray:
    """Density sampled on the evaluation lattice, shape (M, M)."""
    vals = eval_points(ps, kernel, grid.points())
    return vals.reshape(grid.m, grid.m)


def overlap_count(ps: ParticleSet, x) -> int:
    """Number of particles whose deformed support contains the point."""
    pts = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 2))
    out = np.zeros(pts.shape[0], dtype=np.int64)
    b = _current_bins(ps)
    if b is None:
        return 0 if pts.shape[0] == 1 else out
    meth = _METHOD_CODES[ps.method]
    inv_scale = 1.0 / (ps.eps if meth == 0 else ps.h)
    dmat = ps.D[b.idx] if ps.D is not None else _DUMMY_D
    qten = ps.Q[b.idx] if ps.Q is not None else _DUMMY_Q
    _gather_overlap(
        pts,
        out,
        meth,
        ps.kernel.rho0,
        inv_scale,
        np.ascontiguousarray(ps.x[b.idx]),
        b.half,
        np.ascontiguousarray(dmat),
        np.ascontiguousarray(qten),
        b.cube_cap,
        b.bx0,
        b.by0,
        b.inv_s,
        b.nbx,
        b.nby,
        b.start,
        b.items,
    )
    return int(out[0]) if pts.shape[0] == 1 else out


def qtp_support_indicator(ps: ParticleSet, k: int, x) -> int:
    """1 when x belongs to particle k's restricted quadratic support.

    Membership means (a) the backward linear map sends x into the cube of
    half-width h*rho~_k around the origin and (b) the Jacobian of the
    quadratic backward map has positive determinant at x.
    """
    if ps.method != "qtp":
        raise NumericalFailure("support indicator is defined for qtp particles")
    x = np.asarray(x, dtype=float)
    delta = x - ps.x[k]
    lin = ps.D[k] @ delta
    rho = ps.rho_tilde[k] if ps.scheme == "direct" else ps.rho_tilde_static
    if np.max(np.abs(lin)) > ps.h * rho:
        return 0
    jac = ps.D[k] + np.einsum("ijl,l->ij", ps.Q[k], delta)
    return int(np.linalg.det(jac) > 0.0)


def relative_linf_error(f_num: np.ndarray, f_ref: np.ndarray) -> float:
    """max |f_num - f_ref| / max |f_ref| over a shared sample lattice."""
    ref = float(np.max(np.abs(f_ref)))
    if ref == 0.0:
        raise NumericalFailure("reference field is identically zero")
    return float(np.max(np.abs(f_num - f_ref))) / ref


def check_finite(values: np.ndarray, context: str):
    if not np.isfinite(values).all():
        raise NumericalFailure(f"non-finite density values during {context}")
