"""Particle transport with polynomially deformed shape functions.

Benchmarks four semi-Lagrangian particle methods for the linear
transport equation: fixed-radius translated particles (tsp), grid-scale
remapped particles (fsl), and particles whose shapes are composed with
degree-1 (ltp) or degree-2 (qtp) local approximations of the backward
characteristic flow.
"""

from .bench import RunConfig, RunReport, converge, dynamic_vs_static, reference_solution, run, sweep_remap
from .density import eval_density, eval_density_grid, eval_points, overlap_count, relative_linf_error
from .errors import ConfigError, NumericalFailure, SchemeError
from .flows import TestCase, get_case, make_step_map, rk4_step
from .grids import EvalGrid, GridSpec
from .kernels import ShapeKernel, get_kernel, quasi_weights
from .particles import ParticleSet, backward_flow_indicator, initialize, push
from .remap import RemapPolicy, remap, remap_error_indicator, should_remap, transport_error_indicator

__all__ = [
    "ConfigError",
    "EvalGrid",
    "GridSpec",
    "NumericalFailure",
    "ParticleSet",
    "RemapPolicy",
    "RunConfig",
    "RunReport",
    "SchemeError",
    "ShapeKernel",
    "TestCase",
    "backward_flow_indicator",
    "converge",
    "dynamic_vs_static",
    "eval_density",
    "eval_density_grid",
    "eval_points",
    "get_case",
    "get_kernel",
    "initialize",
    "make_step_map",
    "overlap_count",
    "push",
    "quasi_weights",
    "reference_solution",
    "relative_linf_error",
    "remap",
    "remap_error_indicator",
    "rk4_step",
    "run",
    "should_remap",
    "sweep_remap",
    "transport_error_indicator",
]
