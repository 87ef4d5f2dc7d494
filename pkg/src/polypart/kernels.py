"""Particle shape functions and the grid approximation operator.

Reference shapes are the M4' interpolating kernel of Monaghan and the
centered cardinal B-splines of degree 1, 3 and 5, tensorized over the
space dimensions.  In 1d, with t = |x|,

    M4'(x) = 1 - 5 t^2 / 2 + 3 t^3 / 2          for t <= 1
           = (2 - t)^2 (1 - t) / 2              for 1 <= t <= 2

    B1(x)  = 1 - t                              for t <= 1
    B3(x)  = 2/3 - t^2 + t^3 / 2                for t <= 1
           = (2 - t)^3 / 6                      for 1 <= t <= 2
    B5(x)  = (66 - 60 t^2 + 30 t^4 - 10 t^5) / 120              for t <= 1
           = (51 + 75 t - 210 t^2 + 150 t^3 - 45 t^4 + 5 t^5) / 120
                                                for 1 <= t <= 2
           = (3 - t)^5 / 120                    for 2 <= t <= 3

and zero outside the stated support.  The B-spline closed forms are the
piecewise polynomials generated by repeated convolution of the unit box
with itself; tests check them once against a trapezoidal convolution.

Grid samples are turned into particle weights by a quasi-interpolation
stencil ("quasi_weights").  For M4' and the hat function the stencil is
pure sampling; for the cubic and quintic splines it is a short symmetric
coefficient list chosen so that the synthesis sum_k w_k(g) phi_h(x - hk)
reproduces polynomials of coordinate degree up to the spline degree.
All operations here are pure functions, safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError

# Symmetric quasi-interpolation coefficients (a_0, a_1, ..., a_m) with
# a_{-l} = a_l, kept as exact rationals and converted to double precision
# when the kernel object is built.  a_0 + 2 sum_{l>=1} a_l = 1 exactly.
EXACT_STENCILS: dict[str, tuple[Fraction, ...]] = {
    "m4p": (Fraction(1),),
    "b1": (Fraction(1),),
    "b3": (Fraction(8, 6), Fraction(-1, 6)),
    "b5": (
        Fraction(503, 288),
        Fraction(-1469, 3600),
        Fraction(7, 225),
        Fraction(13, 3600),
        Fraction(1, 14400),
    ),
}


def _m4p_1d(x):
    t = np.minimum(np.abs(np.asarray(x, dtype=float)), 2.0)
    core = 1.0 + t * t * (1.5 * t - 2.5)
    s = 2.0 - t
    wing = 0.5 * s * s * (1.0 - t)
    return np.where(t < 1.0, core, wing)


def _b1_1d(x):
    t = np.minimum(np.abs(np.asarray(x, dtype=float)), 1.0)
    return 1.0 - t


def _b3_1d(x):
    t = np.minimum(np.abs(np.asarray(x, dtype=float)), 2.0)
    core = 2.0 / 3.0 - t * t + 0.5 * t * t * t
    s = 2.0 - t
    wing = s * s * s / 6.0
    return np.where(t < 1.0, core, wing)


def _b5_1d(x):
    t = np.minimum(np.abs(np.asarray(x, dtype=float)), 3.0)
    t2 = t * t
    inner = (66.0 - 60.0 * t2 + 30.0 * t2 * t2 - 10.0 * t2 * t2 * t) / 120.0
    mid = (51.0 + 75.0 * t - 210.0 * t2 + 150.0 * t2 * t - 45.0 * t2 * t2 + 5.0 * t2 * t2 * t) / 120.0
    s = 3.0 - t
    s2 = s * s
    outer = s2 * s2 * s / 120.0
    return np.where(t < 1.0, inner, np.where(t < 2.0, mid, outer))


_EVAL_1D = {"m4p": _m4p_1d, "b1": _b1_1d, "b3": _b3_1d, "b5": _b5_1d}

# integer codes used by the compiled density kernels
KERNEL_CODES = {"m4p": 0, "b1": 1, "b3": 2, "b5": 3}


@dataclass(frozen=True)
class ShapeKernel:
    """A reference particle shape with its quasi-interpolation stencil.

    rho0 is the support half-width in reference coordinates: the tensor
    shape vanishes for ||x||_inf >= rho0.  `order` is the coordinate
    degree of the polynomials reproduced by the associated grid operator.
    """

    name: str
    rho0: float
    order: int
    stencil: tuple[float, ...]
    code: int

    @property
    def m(self) -> int:
        """Stencil half-width: weights use samples at offsets |l|_inf <= m."""
        return len(self.stencil) - 1

    def eval1d(self, x):
        return _EVAL_1D[self.name](x)

    def eval(self, pts):
        """Tensor-product shape value at points with shape (..., d)."""
        pts = np.asarray(pts, dtype=float)
        vals = self.eval1d(pts[..., 0])
        for i in range(1, pts.shape[-1]):
            vals = vals * self.eval1d(pts[..., i])
        return vals

    def scaled_eval(self, h, disp):
        """h^{-d} phi(disp / h) for displacements with shape (..., d)."""
        if h <= 0:
            raise ConfigError("mesh size h must be positive")
        disp = np.asarray(disp, dtype=float)
        d = disp.shape[-1]
        return self.eval(disp / h) / h**d


def get_kernel(name: str) -> ShapeKernel:
    key = name.lower()
    if key not in EXACT_STENCILS:
        raise ConfigError(
            f"unknown kernel '{name}': expected one of {sorted(EXACT_STENCILS)}"
        )
    stencil = tuple(float(a) for a in EXACT_STENCILS[key])
    rho0 = {"m4p": 2.0, "b1": 1.0, "b3": 2.0, "b5": 3.0}[key]
    order = {"m4p": 2, "b1": 1, "b3": 3, "b5": 5}[key]
    return ShapeKernel(key, rho0, order, stencil, KERNEL_CODES[key])


def _correlate_sym(g, a, axis):
    """Symmetric 1d correlation sum_l a_|l| g[i+l] along one axis.

    Shrinks the axis by 2 * (len(a) - 1); interior values only.
    """
    m = len(a) - 1
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0] - 2 * m
    out = a[0] * g[m : m + n]
    for l in range(1, m + 1):
        out = out + a[l] * (g[m - l : m - l + n] + g[m + l : m + l + n])
    return np.moveaxis(out, 0, axis)


def quasi_weights(kernel: ShapeKernel, grid, samples) -> np.ndarray:
    """Particle weights w_k = h^d sum_{|l|_inf<=m} a_l g(x_{k+l}).

    `samples` must cover the grid index box enlarged by the stencil
    half-width m on every side (shape = box shape + 2m per axis).  The
    caller supplies whatever values it has there; fields that vanish near
    the sampled boundary make zero padding equivalent to true samples.
    The coefficients tensorize, so the sum is evaluated axis by axis.
    Linear in the sample field.
    """
    g = np.asarray(samples, dtype=float)
    m = kernel.m
    box = grid.shape
    expected = tuple(s + 2 * m for s in box)
    if g.shape != expected:
        raise ConfigError(
            f"sample field shape {g.shape} does not match grid box {box} "
            f"enlarged by the stencil half-width {m} (expected {expected})"
        )
    a = kernel.stencil
    out = g
    for axis in range(g.ndim):
        out = _correlate_sym(out, a, axis)
    return grid.h ** g.ndim * out
