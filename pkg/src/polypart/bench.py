"""Benchmark harness: run configurations, errors, sweeps, CSV artifacts.

A run advances a particle set from t = 0 to t = T, remapping according
to the configured policy, and reports a per-step time series plus a
summary.  Errors are relative max-norm deviations from the reference
solution on a uniform evaluation lattice over [0,1]^2; the reference is
exact for the nonlinear rotation case (analytic backward flow) and at
t in {0, T} for the reversible cases.

Per-step density sampling is controlled by `log_every`: 0 samples only
where a reference exists or a remap happens to be cheap about it, n > 0
samples every n-th step.  When unset, single runs of the rotation case
log densely (it has a reference at every step) and everything else logs
sparsely; the sweep drivers default to sparse logging.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .density import (
    check_finite,
    eval_density_grid,
    relative_linf_error,
)
from .errors import ConfigError, NumericalFailure
from .flows import TestCase, get_case, make_step_map, velocity
from .grids import EvalGrid
from .kernels import ShapeKernel, get_kernel
from .particles import (
    ParticleSet,
    backward_flow_indicator,
    det_D,
    initialize,
    particles_csv_rows,
    push,
    refresh_direct,
    update_D_incremental,
    update_Q_incremental,
)
from .remap import (
    RemapPolicy,
    initial_cache,
    remap,
    remap_error_indicator,
    should_remap,
    transport_indicator_value,
)


@dataclass(frozen=True)
class RunConfig:
    case: str = "nlr"
    method: str = "ltp"
    kernel: str = "m4p"
    scheme: str = "direct"
    h: float = 2.0**-6
    dt: float | None = None          # None: the case's tabulated step
    remap: str = "never"
    q: float = 0.5                   # tsp radius exponent, eps = h^q
    hprime: float | None = None      # marker resolution, None: scheme default
    w_tol: float = 1e-8
    eval_grid: int = 256
    midremap: bool | None = None     # remap at T/2 (reversible cases), None: on
    log_every: int | None = None     # density sampling cadence, None: auto
    margin: int | None = None        # grid rows beyond the unit box, None: auto
    cs: float = 0.5                  # incremental qtp support inflation
    out: str | None = None
    seed: int | None = None          # reserved, all algorithms deterministic


@dataclass
class StepRow:
    step: int
    t: float
    error: float | None
    mass: float | None
    e_transport: float | None
    e_remap: float | None
    remapped: int
    active: int


@dataclass
class RunReport:
    rows: list[StepRow] = field(default_factory=list)
    final_error: float = math.nan
    avg_active: float = 0.0
    remap_count: int = 0
    forced_remaps: int = 0
    det_min: float = 1.0
    det_max: float = 1.0
    wall_time: float = 0.0
    final_state: ParticleSet | None = None

    def summary(self) -> dict:
        return {
            "final_error": self.final_error,
            "avg_active": self.avg_active,
            "remap_count": self.remap_count,
            "forced_remaps": self.forced_remaps,
            "det_min": self.det_min,
            "det_max": self.det_max,
            "wall_time": self.wall_time,
        }


def validate_config(config: RunConfig, case: TestCase, policy: RemapPolicy):
    method = config.method.lower()
    scheme = config.scheme.lower()
    if method == "tsp" and policy.mode != "never":
        raise ConfigError("tsp particles are never remapped (use --remap never)")
    if policy.mode == "dynamic":
        if method not in ("ltp", "qtp"):
            raise ConfigError("dynamic remapping needs the transformed methods (ltp or qtp)")
        if scheme != "direct":
            raise ConfigError("dynamic remapping needs marker indicators (direct scheme)")
    if config.eval_grid < 2:
        raise ConfigError("evaluation lattice needs at least 2 points per side")
    dt = case.dt if config.dt is None else config.dt
    if dt <= 0:
        raise ConfigError("time step must be positive")
    n_steps = round(case.T / dt)
    if n_steps < 1 or abs(n_steps * dt - case.T) > 1e-9 * max(1.0, case.T):
        raise ConfigError(f"time step {dt} does not divide the final time {case.T}")


def reference_solution(case: TestCase, t: float, pts) -> np.ndarray:
    """Exact density at time t on the given points.

    Available at any t when the case has an analytic backward flow, and
    at t in {0, T} for the reversible cases.
    """
    pts = np.asarray(pts, dtype=float)
    if case.field.backward is not None:
        return case.data.density(case.field.backward(t, pts))
    tol = 1e-9 * max(1.0, case.T)
    if abs(t) <= tol:
        return case.data.density(pts)
    if case.field.reversible and abs(t - case.T) <= tol:
        return case.data.density(pts)
    raise ConfigError(
        f"no reference solution for case '{case.name}' at interior time t={t}"
    )


def _has_reference(case: TestCase, t: float) -> bool:
    if case.field.backward is not None:
        return True
    tol = 1e-9 * max(1.0, case.T)
    return abs(t) <= tol or (case.field.reversible and abs(t - case.T) <= tol)


def _dump_particles(ps: ParticleSet, path: str):
    write_csv(
        path,
        ("k1", "k2", "w", "x1", "x2", "D11", "D12", "D21", "D22", "active"),
        particles_csv_rows(ps),
    )


def run(
    config: RunConfig,
    case: TestCase | None = None,
    kernel: ShapeKernel | None = None,
    default_dense: bool = True,
) -> RunReport:
    """Advance one configuration from t=0 to t=T and report errors."""
    started = time.perf_counter()
    case = get_case(config.case) if case is None else case
    kernel = get_kernel(config.kernel) if kernel is None else kernel
    method = config.method.lower()
    scheme = config.scheme.lower()
    policy = RemapPolicy.parse(config.remap, method)
    validate_config(config, case, policy)

    dt = case.dt if config.dt is None else config.dt
    n_steps = round(case.T / dt)
    midremap = config.midremap
    if midremap is None:
        midremap = case.field.reversible and method != "tsp"
    half_step = n_steps // 2
    log_every = config.log_every
    if log_every is None:
        log_every = 1 if (default_dense and case.field.backward is not None) else 0

    ps = initialize(
        case,
        kernel,
        config.h,
        method,
        scheme,
        hprime=config.hprime,
        w_tol=config.w_tol,
        q=config.q,
        margin=config.margin,
        cs=config.cs,
    )
    cache = initial_cache(ps, kernel, case)
    egrid = EvalGrid(config.eval_grid)
    eval_pts = egrid.points()

    report = RunReport()
    direct_transformed = scheme == "direct" and method in ("ltp", "qtp")

    def sample_error_mass(t):
        f = eval_density_grid(ps, kernel, egrid)
        try:
            check_finite(f, f"density sampling at t={t:g}")
        except NumericalFailure:
            if config.out:
                _dump_particles(ps, config.out + ".diag.csv")
            raise
        mass = egrid.quadrature(f)
        err = None
        if _has_reference(case, t):
            ref = reference_solution(case, t, eval_pts).reshape(egrid.m, egrid.m)
            err = relative_linf_error(f, ref)
        return err, mass

    def track_det():
        if ps.D is None:
            return
        d = det_D(ps)
        if d.size:
            report.det_min = min(report.det_min, float(d.min()))
            report.det_max = max(report.det_max, float(d.max()))

    err0, mass0 = sample_error_mass(0.0)
    e_r0 = remap_error_indicator(ps, cache) if direct_transformed else None
    report.rows.append(StepRow(0, 0.0, err0, mass0, 0.0, e_r0, 1, ps.active_count))
    report.remap_count = 1

    for n in range(1, n_steps + 1):
        t_prev = (n - 1) * dt
        step_map = make_step_map(case.field, t_prev, dt)
        if scheme == "incremental" and method in ("ltp", "qtp"):
            if method == "qtp":
                update_Q_incremental(ps, step_map)
            else:
                update_D_incremental(ps, step_map)
            push(ps, step_map)
        else:
            push(ps, step_map)
            if direct_transformed:
                refresh_direct(ps)
        ps.step = n
        track_det()

        e_t = e_r = None
        if direct_transformed:
            e1 = float(ps.marker_err1[ps.active].max()) if ps.active.any() else 0.0
            if method == "qtp":
                er = backward_flow_indicator(ps, 2)
            else:
                er = e1
            e_t = transport_indicator_value(e1, er, ps.h, 2, cache.fmax)
            e_r = remap_error_indicator(ps, cache)

        fire, flag = should_remap(policy, n, e_t, e_r, degenerate=ps.degenerate)
        if not fire and midremap and n == half_step and method != "tsp":
            fire, flag = True, 1
        if fire:
            cache = remap(ps, kernel, w_tol=config.w_tol)
            report.remap_count += 1
            if flag == 2:
                report.forced_remaps += 1

        t = n * dt
        err = mass = None
        if (log_every and n % log_every == 0) or n == n_steps:
            err, mass = sample_error_mass(t)
        report.rows.append(StepRow(n, t, err, mass, e_t, e_r, flag, ps.active_count))

    report.final_error = report.rows[-1].error if report.rows[-1].error is not None else math.nan
    report.avg_active = float(np.mean([r.active for r in report.rows]))
    report.wall_time = time.perf_counter() - started
    report.final_state = ps
    return report


# ---------------------------------------------------------------------------
# sweep drivers


def converge(config: RunConfig, h_list, case=None, kernel=None) -> list[dict]:
    """One run per mesh size; rows carry the observed order between sizes."""
    if len(h_list) < 2:
        raise ConfigError("convergence sweeps need at least two mesh sizes")
    rows = []
    prev_err = None
    for h in h_list:
        rep = run(replace(config, h=float(h)), case=case, kernel=kernel, default_dense=False)
        order = None
        if prev_err is not None and prev_err > 0 and rep.final_error > 0:
            order = math.log2(prev_err / rep.final_error)
        rows.append(
            {
                "case": config.case,
                "method": config.method,
                "kernel": config.kernel,
                "h": float(h),
                "avg_active": rep.avg_active,
                "dt_r": RemapPolicy.parse(config.remap, config.method).describe(),
                "final_error": rep.final_error,
                "order": order,
            }
        )
        prev_err = rep.final_error
    return rows


def sweep_remap(config: RunConfig, periods, case=None, kernel=None) -> list[dict]:
    """One run per static remap period (in steps)."""
    if config.method.lower() == "tsp":
        raise ConfigError("remap period sweeps need a remapped method")
    resolved = get_case(config.case) if case is None else case
    dt = resolved.dt if config.dt is None else config.dt
    rows = []
    for n_r in periods:
        rep = run(
            replace(config, remap=f"static:{int(n_r)}"),
            case=case,
            kernel=kernel,
            default_dense=False,
        )
        rows.append(
            {
                "case": config.case,
                "method": config.method,
                "kernel": config.kernel,
                "h": config.h,
                "n_r": int(n_r),
                "dt_r": int(n_r) * dt,
                "final_error": rep.final_error,
                "remap_count": rep.remap_count,
                "avg_active": rep.avg_active,
            }
        )
    return rows


def dynamic_vs_static(config: RunConfig, thresholds, periods, case=None, kernel=None) -> list[dict]:
    """Static period sweep plus dynamic-criterion runs, shared row format."""
    resolved = get_case(config.case) if case is None else case
    dt = resolved.dt if config.dt is None else config.dt
    T = resolved.T
    rows = []
    for r in sweep_remap(config, periods, case=case, kernel=kernel):
        rows.append(
            {
                "case": r["case"],
                "method": r["method"],
                "kernel": r["kernel"],
                "h": r["h"],
                "mode": "static",
                "param": float(r["n_r"]),
                "avg_period": T / r["remap_count"],
                "final_error": r["final_error"],
                "remap_count": r["remap_count"],
            }
        )
    for c in thresholds:
        rep = run(
            replace(config, remap=f"dynamic:{float(c):g}"),
            case=case,
            kernel=kernel,
            default_dense=False,
        )
        rows.append(
            {
                "case": config.case,
                "method": config.method,
                "kernel": config.kernel,
                "h": config.h,
                "mode": "dynamic",
                "param": float(c),
                "avg_period": T / rep.remap_count,
                "final_error": rep.final_error,
                "remap_count": rep.remap_count,
            }
        )
    return rows


def field_samples(case: TestCase, t: float, egrid: EvalGrid) -> list[tuple]:
    """Velocity and (when available) exact density samples on the lattice."""
    pts = egrid.points()
    u = velocity(case.field, t, pts)
    ref = None
    if _has_reference(case, t):
        ref = reference_solution(case, t, pts)
    rows = []
    for i in range(pts.shape[0]):
        rows.append(
            (pts[i, 0], pts[i, 1], u[i, 0], u[i, 1], ref[i] if ref is not None else None)
        )
    return rows


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".17g")
    return str(value)


def write_csv(path: str, header, rows):
    """Atomic CSV write: comma separated, 17 significant digits, LF."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def write_report_csv(path: str, report: RunReport):
    header = ("step", "t", "error", "mass", "e_transport", "e_remap", "remapped", "active")
    rows = (
        (r.step, r.t, r.error, r.mass, r.e_transport, r.e_remap, r.remapped, r.active)
        for r in report.rows
    )
    write_csv(path, header, rows)


def write_dict_csv(path: str, rows: list[dict]):
    if not rows:
        raise ConfigError("no rows to write")
    header = tuple(rows[0].keys())
    write_csv(path, header, (tuple(r[k] for k in header) for r in rows))
