"""Remapping onto the grid, with transport and remap error indicators.

A remap samples the current numerical density on the particle grid
(enlarged by the quasi-interpolation stencil), rebuilds the weights with
the grid approximation operator and resets centers, markers and
deformation state to their initial values.  The sampled values feed a
cache that the dynamic criterion consumes: the field maximum, and
central-difference gradients on the grid nodes.

Dynamic criterion: remap once the estimated transport error exceeds
`threshold` times the estimated remapping error.  Small thresholds
degenerate to remapping nearly every step; the remap count is
nonincreasing in the threshold.

A remap is a global barrier: particle updates for the step must be
complete before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import check_finite, eval_points
from .errors import ConfigError, SchemeError
from .kernels import ShapeKernel, quasi_weights
from .particles import ParticleSet, backward_flow_indicator, reset_after_remap


@dataclass(frozen=True)
class RemapPolicy:
    """never | static(every n_r steps) | dynamic(threshold)."""

    mode: str
    n_r: int = 0
    threshold: float = 0.0

    @classmethod
    def parse(cls, text: str, method: str = "ltp") -> "RemapPolicy":
        """Parse 'never', 'static:N' or 'dynamic[:C]' (method default C)."""
        spec = text.strip().lower()
        if spec == "never":
            return cls("never")
        if spec.startswith("static"):
            _, _, arg = spec.partition(":")
            if not arg:
                raise ConfigError("static remapping needs a period, e.g. static:10")
            n_r = int(arg)
            if n_r < 1:
                raise ConfigError(f"static remap period must be >= 1, got {n_r}")
            return cls("static", n_r=n_r)
        if spec.startswith("dynamic"):
            _, _, arg = spec.partition(":")
            if arg:
                c = float(arg)
            else:
                c = 5.0 if method == "qtp" else 1.0
            if c <= 0:
                raise ConfigError(f"dynamic remap threshold must be positive, got {c}")
            return cls("dynamic", threshold=c)
        raise ConfigError(f"cannot parse remap policy '{text}'")

    def describe(self) -> str:
        if self.mode == "static":
            return f"static:{self.n_r}"
        if self.mode == "dynamic":
            return f"dynamic:{self.threshold:g}"
        return "never"


@dataclass
class RemapCache:
    """Grid data captured at the last remap (or at initialization)."""

    samples: np.ndarray    # density values on the grid box nodes
    fmax: float            # max |density| over the sampled lattice
    grads: np.ndarray      # (K, 2) nodal gradients, central differences


def _cache_from_lattice(ps: ParticleSet, lattice_values: np.ndarray) -> RemapCache:
    m = ps.kernel.m
    fmax = float(np.abs(lattice_values).max()) if lattice_values.size else 0.0
    core = lattice_values
    if m > 0:
        core = lattice_values[m:-m, m:-m]
    # axis 0 runs along x1, axis 1 along x2; one-sided at the box edge
    g1, g2 = np.gradient(core, ps.h)
    grads = np.stack([g1.ravel(), g2.ravel()], axis=-1)
    return RemapCache(samples=core.copy(), fmax=fmax, grads=grads)


def initial_cache(ps: ParticleSet, kernel: ShapeKernel, case) -> RemapCache:
    """Cache built from the initial data samples used by the weights."""
    pts = ps.grid.node_points(kernel.m)
    vals = case.data.density(pts).reshape(ps.grid.padded_shape(kernel.m))
    return _cache_from_lattice(ps, vals)


def remap(ps: ParticleSet, kernel: ShapeKernel, w_tol: float = 1e-8) -> RemapCache:
    """Re-express the density as a fresh grid-aligned particle set."""
    if ps.method == "tsp":
        raise ConfigError("the fixed-radius tsp method is never remapped")
    m = kernel.m
    pts = ps.grid.node_points(m)
    vals = eval_points(ps, kernel, pts).reshape(ps.grid.padded_shape(m))
    check_finite(vals, "remap sampling")
    new_w = quasi_weights(kernel, ps.grid, vals)
    cache = _cache_from_lattice(ps, vals)
    reset_after_remap(ps, new_w, cache.fmax, w_tol=w_tol)
    return cache


def transport_indicator_value(e1: float, er: float, h: float, d: int, fmax: float) -> float:
    """(1 + e1/h)^d (er/h) fmax, the transport error estimate."""
    return (1.0 + e1 / h) ** d * (er / h) * fmax


def transport_error_indicator(ps: ParticleSet, r: int, cache: RemapCache) -> float:
    """Transport error estimate from the marker indicators.

    Uses the order-1 indicator in the overlap factor and the order-r
    indicator in the leading factor; the linear method uses r = 1 in
    both.  Zero right after a remap.
    """
    if ps.scheme != "direct":
        raise SchemeError("transport indicator needs marker stencils (direct scheme)")
    e1 = backward_flow_indicator(ps, 1)
    er = e1 if r == 1 else backward_flow_indicator(ps, r)
    return transport_indicator_value(e1, er, ps.h, 2, cache.fmax)


def remap_error_indicator(ps: ParticleSet, cache: RemapCache) -> float:
    """h sum_j sup_k |sum_l grad_l f(x0_k) (D_k)_{l,j}| over active particles."""
    if ps.D is None:
        raise ConfigError("remap indicator needs deformation matrices")
    idx = np.flatnonzero(ps.active)
    if idx.size == 0:
        return 0.0
    g = cache.grads[idx]
    contr = np.einsum("kl,klj->kj", g, ps.D[idx])
    return ps.h * float(np.sum(np.max(np.abs(contr), axis=0)))


def should_remap(policy: RemapPolicy, n: int, transport_ind=None, remap_ind=None, degenerate: bool = False):
    """Remap decision for step n; returns (decision, flag).

    flag: 0 none, 1 criterion or static schedule, 2 forced by a singular
    local Jacobian.  Forced remaps fire under any policy (the alternative
    is evaluating a non-invertible deformation).
    """
    if degenerate:
        return True, 2
    if policy.mode == "never":
        return False, 0
    if policy.mode == "static":
        fire = n % policy.n_r == 0
        return fire, 1 if fire else 0
    if transport_ind is None or remap_ind is None:
        raise ConfigError("dynamic policy needs both error indicators")
    fire = transport_ind >= policy.threshold * remap_ind
    return fire, 1 if fire else 0
