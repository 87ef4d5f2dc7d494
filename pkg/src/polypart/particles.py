"""Particle state and its evolution.

A particle set carries, per grid node k: a weight, the origin x0_k = h k,
the current center, and (for the transformed methods) a 2x2 matrix D_k
approximating the Jacobian of the backward flow at the center, plus for
the quadratic method a pair of symmetric 2x2 tensors Q_k approximating
the backward-flow Hessians.

Two derivative schemes are supported.  The *direct* scheme attaches six
auxiliary markers per particle at offsets

    {(0,0), (1,0), (0,1), (1,1), (2,0), (0,2)} * h'

which are pushed with the same flow as the centers; D and Q are
recomputed from marker finite differences whenever needed, and the
mismatch of the particle's own polynomial backward map on its markers
serves as a local error indicator.  The *incremental* scheme stores D
(and Q) instead of markers and composes them with one-step finite
differences of the pusher around the current centers.

Per-particle updates are independent; everything below is vectorized
over particles with a fixed arithmetic order, so results are
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SchemeError
from .flows import TestCase
from .grids import GridSpec
from .kernels import ShapeKernel, quasi_weights

METHODS = ("tsp", "fsl", "ltp", "qtp")
SCHEMES = ("direct", "incremental")

# marker stencil offsets, in units of h'; generates all first forward
# differences, the mixed second difference (index 3) and the pure second
# differences (indices 4, 5)
MARKER_OFFSETS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0]]
)

SINGULAR_DET = 1e-12


@dataclass
class ParticleSet:
    method: str
    scheme: str
    kernel: ShapeKernel
    grid: GridSpec
    hprime: float
    eps: float                      # shape scale: h^q for tsp, h otherwise
    w: np.ndarray                   # (K,)
    x0: np.ndarray                  # (K, 2) grid origins
    x: np.ndarray                   # (K, 2) current centers
    active: np.ndarray              # (K,) bool
    D: np.ndarray | None = None     # (K, 2, 2)
    Q: np.ndarray | None = None     # (K, 2, 2, 2), Q[k, i] symmetric
    markers: np.ndarray | None = None   # (K, 6, 2), direct scheme only
    marker_err1: np.ndarray | None = None  # (K,) linear-map marker mismatch
    rho_tilde: np.ndarray | None = None    # (K,) qtp support radii, units of h
    rho_tilde_static: float | None = None  # incremental qtp fallback radius
    step: int = 0
    last_remap_step: int = 0
    degenerate: bool = False
    pos_version: int = field(default=0, repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def n_particles(self) -> int:
        return self.w.shape[0]

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.active))

    def touch(self):
        self.pos_version += 1


def default_margin(kernel: ShapeKernel, method: str, q: float, h: float) -> int:
    """Extra node rows around the unit box.

    Enough that (a) every particle whose support intersects [0,1]^2
    exists and (b) resampling artifacts created at the outer edge during
    remaps stay several decay lengths away from the unit box.
    """
    base = kernel.m + 2 * math.ceil(kernel.rho0) + 4
    if method == "tsp":
        reach = math.ceil(kernel.rho0 * h ** (q - 1.0)) + 1
        return max(base, reach)
    return base


def initialize(
    case: TestCase,
    kernel: ShapeKernel,
    h: float,
    method: str,
    scheme: str = "direct",
    hprime: float | None = None,
    w_tol: float = 1e-8,
    q: float = 0.5,
    margin: int | None = None,
    cs: float = 0.5,
) -> ParticleSet:
    """Fresh particle set for a benchmark case at mesh size h."""
    method = method.lower()
    if method == "tsp":
        q = float(q)
        if not (0.0 < q <= 1.0):
            raise ConfigError(f"tsp exponent q={q} must lie in (0, 1]")
    if margin is None:
        margin = default_margin(kernel, method, q, h)
    grid = GridSpec.unit_box(h, margin)
    pts = grid.node_points(kernel.m)
    samples = case.data.density(pts).reshape(grid.padded_shape(kernel.m))
    return init_from_samples(
        kernel, grid, samples, method, scheme, hprime=hprime, w_tol=w_tol, q=q, cs=cs
    )


def init_from_samples(
    kernel: ShapeKernel,
    grid: GridSpec,
    samples: np.ndarray,
    method: str,
    scheme: str = "direct",
    hprime: float | None = None,
    w_tol: float = 1e-8,
    q: float = 0.5,
    cs: float = 0.5,
) -> ParticleSet:
    """Build a particle set from density samples on the enlarged grid box."""
    method = method.lower()
    scheme = scheme.lower()
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}': expected one of {METHODS}")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme '{scheme}': expected one of {SCHEMES}")

    h = grid.h
    w = quasi_weights(kernel, grid, samples).ravel()
    x0 = grid.node_points()
    fmax = float(np.max(np.abs(samples))) if samples.size else 0.0
    active = np.abs(w) > w_tol * h * h * fmax

    if hprime is None:
        hprime = 0.5 * h if scheme == "direct" else h
    if hprime <= 0:
        raise ConfigError("marker resolution h' must be positive")

    ps = ParticleSet(
        method=method,
        scheme=scheme,
        kernel=kernel,
        grid=grid,
        hprime=hprime,
        eps=h**q if method == "tsp" else h,
        w=w,
        x0=x0,
        x=x0.copy(),
        active=active,
    )
    if method in ("ltp", "qtp"):
        k = ps.n_particles
        ps.D = np.tile(np.eye(2), (k, 1, 1))
        if method == "qtp":
            ps.Q = np.zeros((k, 2, 2, 2))
            ps.rho_tilde = np.full(k, kernel.rho0)
            ps.rho_tilde_static = kernel.rho0 * (1.0 + cs)
        if scheme == "direct":
            ps.markers = x0[:, None, :] + hprime * MARKER_OFFSETS[None, :, :]
            ps.marker_err1 = np.zeros(k)
    return ps


def reset_after_remap(ps: ParticleSet, new_w: np.ndarray, fmax: float, w_tol: float = 1e-8):
    """Return particles to the grid with fresh weights and identity state."""
    ps.w = new_w.ravel()
    ps.x = ps.x0.copy()
    ps.active = np.abs(ps.w) > w_tol * ps.h * ps.h * fmax
    if ps.D is not None:
        ps.D[:] = np.eye(2)
    if ps.Q is not None:
        ps.Q[:] = 0.0
    if ps.markers is not None:
        ps.markers = ps.x0[:, None, :] + ps.hprime * MARKER_OFFSETS[None, :, :]
        ps.marker_err1[:] = 0.0
    if ps.rho_tilde is not None:
        ps.rho_tilde[:] = ps.kernel.rho0
    ps.last_remap_step = ps.step
    ps.degenerate = False
    ps.touch()


def push(ps: ParticleSet, step_map):
    """Advance active centers (and markers, direct scheme) one step."""
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return
    ps.x[idx] = step_map(ps.x[idx])
    if ps.markers is not None:
        m = ps.markers[idx].reshape(-1, 2)
        ps.markers[idx] = step_map(m).reshape(idx.size, MARKER_OFFSETS.shape[0], 2)
    ps.touch()


def _inv2(mats: np.ndarray):
    """Vectorized 2x2 inverse with a singularity mask (|det| < 1e-12)."""
    a = mats[:, 0, 0]
    b = mats[:, 0, 1]
    c = mats[:, 1, 0]
    d = mats[:, 1, 1]
    det = a * d - b * c
    bad = np.abs(det) < SINGULAR_DET
    safe = np.where(bad, 1.0, det)
    inv = np.empty_like(mats)
    inv[:, 0, 0] = d / safe
    inv[:, 0, 1] = -b / safe
    inv[:, 1, 0] = -c / safe
    inv[:, 1, 1] = a / safe
    return inv, bad


def norminf2(mats: np.ndarray) -> np.ndarray:
    """Matrix max-row-sum norm, vectorized over (K, 2, 2)."""
    return np.maximum(
        np.abs(mats[:, 0, 0]) + np.abs(mats[:, 0, 1]),
        np.abs(mats[:, 1, 0]) + np.abs(mats[:, 1, 1]),
    )


def _require_markers(ps: ParticleSet):
    if ps.scheme != "direct" or ps.markers is None:
        raise SchemeError("operation requires the direct scheme (markers are absent)")


def _forward_jacobian_from_markers(ps: ParticleSet, idx: np.ndarray) -> np.ndarray:
    m = ps.markers[idx]
    hp = ps.hprime
    jac = np.empty((idx.size, 2, 2))
    jac[:, :, 0] = (m[:, 1] - m[:, 0]) / hp
    jac[:, :, 1] = (m[:, 2] - m[:, 0]) / hp
    return jac


def _forward_hessians_from_markers(ps: ParticleSet, idx: np.ndarray) -> np.ndarray:
    """Second forward differences of the flow: hess[k, i] approximates
    the Hessian of component i at the particle origin."""
    m = ps.markers[idx]
    hp2 = ps.hprime * ps.hprime
    h11 = (m[:, 0] - 2.0 * m[:, 1] + m[:, 4]) / hp2
    h22 = (m[:, 0] - 2.0 * m[:, 2] + m[:, 5]) / hp2
    h12 = (m[:, 0] - m[:, 1] - m[:, 2] + m[:, 3]) / hp2
    hess = np.empty((idx.size, 2, 2, 2))  # (k, i, j1, j2), i the component
    hess[:, :, 0, 0] = h11
    hess[:, :, 1, 1] = h22
    hess[:, :, 0, 1] = h12
    hess[:, :, 1, 0] = h12
    return hess


def _backward_hessians(D: np.ndarray, fwd_hess: np.ndarray) -> np.ndarray:
    """Map forward-flow Hessians H_i to backward ones via
    Q_i = -D^T (sum_j D_{i,j} H_j) D."""
    s = np.einsum("kij,kjab->kiab", D, fwd_hess)
    dt = np.swapaxes(D, 1, 2)
    return -np.matmul(dt[:, None], np.matmul(s, D[:, None]))


def update_D_direct(ps: ParticleSet):
    """Recompute D from marker forward differences and invert.

    For the quadratic method the forward-difference Jacobian is first
    corrected with the marker second differences,
    Jtilde_{i,j} = Jbar_{i,j} - (h'/2) H_{i,jj}, which removes the O(h')
    one-sided bias; without it the quadratic map cannot reach its design
    order.  The linear method keeps the plain forward difference.
    """
    _require_markers(ps)
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return
    jac = _forward_jacobian_from_markers(ps, idx)
    if ps.method == "qtp":
        hess = _forward_hessians_from_markers(ps, idx)
        jac = jac.copy()
        jac[:, :, 0] -= 0.5 * ps.hprime * hess[:, :, 0, 0]
        jac[:, :, 1] -= 0.5 * ps.hprime * hess[:, :, 1, 1]
    dmat, bad = _inv2(jac)
    good = ~bad
    sel = idx[good]
    ps.D[sel] = dmat[good]
    if bad.any():
        ps.degenerate = True


def update_Q_direct(ps: ParticleSet):
    """Recompute the quadratic coefficients from marker second differences."""
    _require_markers(ps)
    if ps.method != "qtp":
        raise ConfigError("quadratic coefficients exist only for the qtp method")
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return
    hess = _forward_hessians_from_markers(ps, idx)
    ps.Q[idx] = _backward_hessians(ps.D[idx], hess)


def refresh_direct(ps: ParticleSet):
    """Derivative state after a push: D, then Q, then marker indicators."""
    update_D_direct(ps)
    if ps.method == "qtp":
        update_Q_direct(ps)
    err1 = backward_flow_indicator(ps, 1, per_particle=True)
    ps.marker_err1[:] = 0.0
    idx = np.flatnonzero(ps.active)
    ps.marker_err1[idx] = err1
    if ps.method == "qtp":
        ps.rho_tilde[:] = ps.kernel.rho0
        ps.rho_tilde[idx] = ps.kernel.rho0 + err1 / ps.h


def _one_step_stencil(ps: ParticleSet, step_map, idx, hp: float, with_corners: bool):
    """Images under the one-step flow of the centered stencil around x."""
    x = ps.x[idx]
    offs = [(hp, 0.0), (-hp, 0.0), (0.0, hp), (0.0, -hp)]
    if with_corners:
        offs += [(hp, hp), (hp, -hp), (-hp, hp), (-hp, -hp)]
    pts = np.concatenate([x + np.array(o) for o in offs], axis=0)
    imgs = step_map(pts).reshape(len(offs), idx.size, 2)
    return imgs


def _one_step_jacobian(imgs, hp):
    jac = np.empty((imgs.shape[1], 2, 2))
    jac[:, :, 0] = (imgs[0] - imgs[1]) / (2.0 * hp)
    jac[:, :, 1] = (imgs[2] - imgs[3]) / (2.0 * hp)
    return jac


def update_D_incremental(ps: ParticleSet, step_map, hprime: float | None = None):
    """Compose D with the inverse one-step Jacobian at the current centers.

    Central differences of the pusher; must run before the centers are
    pushed.
    """
    if ps.scheme != "incremental":
        raise SchemeError("incremental update requested on the direct scheme")
    if ps.D is None:
        raise ConfigError("method carries no deformation matrices")
    hp = ps.hprime if hprime is None else hprime
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return
    imgs = _one_step_stencil(ps, step_map, idx, hp, with_corners=False)
    jac = _one_step_jacobian(imgs, hp)
    jinv, bad = _inv2(jac)
    good = ~bad
    sel = idx[good]
    ps.D[sel] = np.matmul(ps.D[sel], jinv[good])
    if bad.any():
        ps.degenerate = True


def update_Q_incremental(ps: ParticleSet, step_map, hprime: float | None = None):
    """Advance Q and D together from one-step finite differences.

    Runs before the centers are pushed.  One-step Hessians come from the
    9-point centered second-difference stencil (the center image is the
    pushed position itself); the Q update reads the pre-step D, then D is
    composed with the inverse one-step Jacobian.
    """
    if ps.scheme != "incremental":
        raise SchemeError("incremental update requested on the direct scheme")
    if ps.method != "qtp":
        raise ConfigError("quadratic coefficients exist only for the qtp method")
    hp = ps.hprime if hprime is None else hprime
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return
    imgs = _one_step_stencil(ps, step_map, idx, hp, with_corners=True)
    center = step_map(ps.x[idx])
    jac = _one_step_jacobian(imgs, hp)
    hp2 = hp * hp
    h11 = (imgs[0] - 2.0 * center + imgs[1]) / hp2
    h22 = (imgs[2] - 2.0 * center + imgs[3]) / hp2
    h12 = (imgs[4] - imgs[5] - imgs[6] + imgs[7]) / (4.0 * hp2)
    hess = np.empty((idx.size, 2, 2, 2))
    hess[:, :, 0, 0] = h11
    hess[:, :, 1, 1] = h22
    hess[:, :, 0, 1] = h12
    hess[:, :, 1, 0] = h12

    jinv, bad = _inv2(jac)
    good = ~bad
    sel = idx[good]
    jk = jinv[good]
    dk = ps.D[sel]
    # Q_i <- Jinv^T (Q_i - sum_{j,j'} D_{i,j} Jinv_{j,j'} H_{j'}) Jinv
    coeff = np.matmul(dk, jk)
    inner = ps.Q[sel] - np.einsum("kij,kjab->kiab", coeff, hess[good])
    jkt = np.swapaxes(jk, 1, 2)
    ps.Q[sel] = np.matmul(jkt[:, None], np.matmul(inner, jk[:, None]))
    ps.D[sel] = coeff
    if bad.any():
        ps.degenerate = True


def _polynomial_backward_map(ps: ParticleSet, idx: np.ndarray, pts: np.ndarray, r: int):
    """Apply each particle's degree-r backward map to its own points.

    pts has shape (n_idx, L, 2): L points per selected particle.
    """
    delta = pts - ps.x[idx][:, None, :]
    out = ps.x0[idx][:, None, :] + np.einsum("kij,klj->kli", ps.D[idx], delta)
    if r >= 2:
        quad = np.einsum("kiab,kla,klb->kli", ps.Q[idx], delta, delta)
        out = out + 0.5 * quad
    return out


def backward_flow_indicator(ps: ParticleSet, r: int, per_particle: bool = False):
    """Worst mismatch of the degree-r backward map on the particle markers.

    Evaluates x0_{k,l} - B_{(r),k}(x^n_{k,l}) in the max norm over the
    marker stencil; zero right after (re)initialization.  Returns the sup
    over active particles, or the per-particle maxima.
    """
    _require_markers(ps)
    if r not in (1, 2):
        raise ConfigError(f"indicator order r={r} not supported (use 1 or 2)")
    if r == 2 and ps.Q is None:
        raise ConfigError("order-2 indicator needs quadratic coefficients (qtp)")
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return np.zeros(0) if per_particle else 0.0
    mapped = _polynomial_backward_map(ps, idx, ps.markers[idx], r)
    origins = ps.x0[idx][:, None, :] + ps.hprime * MARKER_OFFSETS[None, :, :]
    err = np.max(np.abs(mapped - origins), axis=(1, 2))
    if per_particle:
        return err
    return float(err.max())


def det_D(ps: ParticleSet) -> np.ndarray:
    """det(D_k) over active particles; ones for the fixed-shape methods."""
    idx = np.flatnonzero(ps.active)
    if ps.D is None:
        return np.ones(idx.size)
    d = ps.D[idx]
    return d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]


def particles_csv_rows(ps: ParticleSet):
    """Rows (k1, k2, w, x1, x2, D11, D12, D21, D22, active) for debugging."""
    kk = ps.grid.node_indices()
    eye = np.tile(np.eye(2), (ps.n_particles, 1, 1))
    d = ps.D if ps.D is not None else eye
    for i in range(ps.n_particles):
        yield (
            int(kk[i, 0]),
            int(kk[i, 1]),
            ps.w[i],
            ps.x[i, 0],
            ps.x[i, 1],
            d[i, 0, 0],
            d[i, 0, 1],
            d[i, 1, 0],
            d[i, 1, 1],
            int(ps.active[i]),
        )
