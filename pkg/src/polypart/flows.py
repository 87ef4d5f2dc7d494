"""Velocity fields, analytic flows, initial data and the RK4 pusher.

Three divergence-free 2d benchmark fields:

  sw   swirling deformation (LeVeque), u = (1/pi) cos(pi t / T) curl psi
       with psi(x) = -sin^2(pi x1) sin^2(pi x2); reverses over [0, T].
  rb   convection-cell roll pair, u = cos(pi t / T) curl psi with
       psi(x) = (x1 - 1/2)(x1 - x1^2)(x2 - x2^2); reverses over [0, T].
  nlr  steady nonlinear rotation about (1/2, 1/2),
       u(x) = a(x) (1/2 - x2, x1 - 1/2), a(x) = (1 - |x - c|_2 / 0.4)_+^3,
       whose backward flow is an exact local rotation by angle a(x) t.

curl psi means (d2 psi, -d1 psi); the components below are expanded by
hand and cross-checked against finite differences of psi in the tests.
All callables are vectorized over point arrays of shape (..., 2) and are
pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import ConfigError

CENTER = np.array([0.5, 0.5])


@dataclass(frozen=True)
class FlowField:
    """A velocity field u(t, x), optionally with its exact backward flow."""

    id: str
    velocity: Callable[[float, np.ndarray], np.ndarray]
    period: float | None = None
    reversible: bool = False
    backward: Callable[[float, np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class InitialData:
    id: str
    density: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestCase:
    name: str
    field: FlowField
    data: InitialData
    T: float
    dt: float


def velocity(field: FlowField, t: float, x) -> np.ndarray:
    """Velocity u(t, x) for points of shape (..., 2)."""
    return field.velocity(t, np.asarray(x, dtype=float))


def swirling_field(T: float) -> FlowField:
    def u(t, x):
        s1 = np.sin(np.pi * x[..., 0])
        s2 = np.sin(np.pi * x[..., 1])
        mod = math.cos(math.pi * t / T)
        out = np.empty_like(x)
        out[..., 0] = -mod * s1 * s1 * np.sin(2.0 * np.pi * x[..., 1])
        out[..., 1] = mod * np.sin(2.0 * np.pi * x[..., 0]) * s2 * s2
        return out

    return FlowField("sw", u, period=T, reversible=True)


def convection_cell_field(T: float) -> FlowField:
    def u(t, x):
        x1 = x[..., 0]
        x2 = x[..., 1]
        g = x1 * x1 * (1.5 - x1) - 0.5 * x1          # (x1 - 1/2)(x1 - x1^2)
        dg = 3.0 * x1 * (1.0 - x1) - 0.5
        mod = math.cos(math.pi * t / T)
        out = np.empty_like(x)
        out[..., 0] = mod * g * (1.0 - 2.0 * x2)
        out[..., 1] = -mod * dg * x2 * (1.0 - x2)
        return out

    return FlowField("rb", u, period=T, reversible=True)


def _nlr_alpha(x):
    r = np.hypot(x[..., 0] - 0.5, x[..., 1] - 0.5)
    base = np.maximum(1.0 - r / 0.4, 0.0)
    return base * base * base


def exact_backward_flow_nlr(t: float, x) -> np.ndarray:
    """Rotate x about (1/2, 1/2) backward by the local angle a(x) t.

    The rotation rate is constant along circles, so this inverts the
    forward characteristics exactly; points with |x - c| >= 0.4 are fixed.
    """
    x = np.asarray(x, dtype=float)
    theta = _nlr_alpha(x) * t
    c, s = np.cos(theta), np.sin(theta)
    y1 = x[..., 0] - 0.5
    y2 = x[..., 1] - 0.5
    out = np.empty_like(x)
    out[..., 0] = 0.5 + c * y1 + s * y2
    out[..., 1] = 0.5 - s * y1 + c * y2
    return out


def exact_forward_flow_nlr(t: float, x) -> np.ndarray:
    return exact_backward_flow_nlr(-t, x)


def rotation_field() -> FlowField:
    def u(t, x):
        a = _nlr_alpha(x)
        out = np.empty_like(x)
        out[..., 0] = a * (0.5 - x[..., 1])
        out[..., 1] = a * (x[..., 0] - 0.5)
        return out

    return FlowField("nlr", u, backward=exact_backward_flow_nlr)


def hump(center) -> InitialData:
    cx, cy = float(center[0]), float(center[1])

    def f(x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0] - cx, x[..., 1] - cy)
        return 0.5 * (1.0 + erf((11.0 - 100.0 * r) / 3.0))

    return InitialData("hump", f)


def cone(center) -> InitialData:
    cx, cy = float(center[0]), float(center[1])

    def f(x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0] - cx, x[..., 1] - cy)
        return np.maximum(1.0 - 20.0 / 3.0 * r, 0.0)

    return InitialData("cone", f)


def linear_ramp() -> InitialData:
    def f(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] - 0.5

    return InitialData("linear", f)


def initial_density(data: InitialData, x) -> np.ndarray:
    return data.density(np.asarray(x, dtype=float))


_CASE_BUILDERS = {
    "sw-cone": lambda: TestCase("sw-cone", swirling_field(5.0), cone((0.5, 0.25)), 5.0, 0.05),
    "sw-hump": lambda: TestCase("sw-hump", swirling_field(5.0), hump((0.5, 0.7)), 5.0, 0.05),
    "rb-hump": lambda: TestCase("rb-hump", convection_cell_field(3.0), hump((0.5, 0.4)), 3.0, 0.03),
    "nlr": lambda: TestCase("nlr", rotation_field(), linear_ramp(), 50.0, 0.5),
}


def get_case(name: str) -> TestCase:
    key = name.lower()
    if key not in _CASE_BUILDERS:
        raise ConfigError(f"unknown test case '{name}': expected one of {sorted(_CASE_BUILDERS)}")
    return _CASE_BUILDERS[key]()


def case_names() -> list[str]:
    return sorted(_CASE_BUILDERS)


def rk4_step(field: FlowField, t: float, dt: float, x) -> np.ndarray:
    """One classical RK4 step of X' = u(t, X), vectorized over points.

    Stage times t, t + dt/2, t + dt matter: the sw/rb fields are
    time-modulated.
    """
    if dt <= 0:
        raise ConfigError("time step dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = field.velocity(t, x)
    k2 = field.velocity(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = field.velocity(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = field.velocity(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def make_step_map(field: FlowField, t: float, dt: float):
    """The numerical forward flow on [t, t+dt] as a points -> points map."""

    def step(pts):
        return rk4_step(field, t, dt, pts)

    return step
