"""Command line interface.

Subcommands: run, converge, sweep-remap, dynamic, fields, dump-particles.
Every option can also come from a flat key=value config file (`--config`,
'#' starts a comment); command line flags override file values.  Mesh
sizes accept either plain floats or the shorthand 2^-L.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .bench import (
    RunConfig,
    converge,
    dynamic_vs_static,
    field_samples,
    run,
    sweep_remap,
    write_csv,
    write_dict_csv,
    write_report_csv,
)
from .errors import ConfigError, NumericalFailure
from .flows import case_names, get_case
from .grids import EvalGrid
from .kernels import get_kernel
from .particles import initialize, particles_csv_rows


def parse_size(text: str) -> float:
    """A mesh size, '0.015625' or '2^-6'."""
    s = str(text).strip()
    if "^" in s:
        base, _, expo = s.partition("^")
        return float(base) ** float(expo)
    return float(s)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean '{text}'")


def _float_list(text: str) -> list[float]:
    return [parse_size(tok) for tok in str(text).split(",") if tok.strip()]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok.strip()]


def read_config_file(path: str) -> dict:
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{raw.strip()}'")
            key, _, val = line.partition("=")
            values[key.strip().lower().replace("-", "_")] = val.strip()
    return values


_RUN_KEYS = {
    "case": str,
    "method": str,
    "kernel": str,
    "scheme": str,
    "h": parse_size,
    "dt": float,
    "remap": str,
    "q": float,
    "hprime": parse_size,
    "w_tol": float,
    "eval_grid": int,
    "midremap": _parse_bool,
    "log_every": int,
    "margin": int,
    "cs": float,
    "out": str,
    "seed": int,
}

_SWEEP_KEYS = {
    "h_list": _float_list,
    "periods": _int_list,
    "c_list": _float_list,
    "t": float,
    "dump_particles": str,
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--case", choices=case_names())
    p.add_argument("--method", choices=["tsp", "fsl", "ltp", "qtp"])
    p.add_argument("--kernel", choices=["m4p", "b1", "b3", "b5"])
    p.add_argument("--scheme", choices=["direct", "incremental"])
    p.add_argument("--h", help="mesh size, e.g. 2^-7")
    p.add_argument("--dt", type=float, help="time step (default: case table)")
    p.add_argument("--remap", help="never | static:N | dynamic[:C]")
    p.add_argument("--q", type=float, help="tsp radius exponent (eps = h^q)")
    p.add_argument("--hprime", help="marker resolution (default: h/2 direct, h incremental)")
    p.add_argument("--w-tol", type=float, dest="w_tol", help="activity threshold factor")
    p.add_argument("--eval-grid", type=int, dest="eval_grid", help="error lattice size M")
    p.add_argument("--midremap", help="force a remap at T/2 for reversible cases (0/1)")
    p.add_argument("--log-every", type=int, dest="log_every", help="density sampling cadence")
    p.add_argument("--margin", type=int, help="grid rows beyond the unit box")
    p.add_argument("--cs", type=float, help="incremental qtp support inflation")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--seed", type=int, help="reserved; runs are deterministic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polypart", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single benchmark run, per-step CSV")
    _add_common(p)
    p.add_argument("--dump-particles", dest="dump_particles", help="also dump final particle state CSV")

    p = sub.add_parser("converge", help="mesh-size sweep, one row per h")
    _add_common(p)
    p.add_argument("--h-list", dest="h_list", help="comma list of mesh sizes")

    p = sub.add_parser("sweep-remap", help="static remap period sweep")
    _add_common(p)
    p.add_argument("--periods", help="comma list of periods in steps")

    p = sub.add_parser("dynamic", help="dynamic criterion vs static periods")
    _add_common(p)
    p.add_argument("--periods", help="comma list of static periods in steps")
    p.add_argument("--c-list", dest="c_list", help="comma list of criterion thresholds")

    p = sub.add_parser("fields", help="dump velocity and reference samples")
    _add_common(p)
    p.add_argument("--t", type=float, help="sample time (default 0)")

    p = sub.add_parser("dump-particles", help="dump the initialized particle state")
    _add_common(p)
    return ap


def _resolve(args: argparse.Namespace) -> dict:
    """defaults < config file < command line."""
    merged: dict = {}
    if getattr(args, "config", None):
        raw = read_config_file(args.config)
        for key, val in raw.items():
            conv = _RUN_KEYS.get(key) or _SWEEP_KEYS.get(key)
            if conv is None:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = conv(val)
    for key in list(_RUN_KEYS) + list(_SWEEP_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            conv = _RUN_KEYS.get(key) or _SWEEP_KEYS.get(key)
            merged[key] = conv(val)
    return merged


def _run_config(values: dict) -> RunConfig:
    if "case" not in values:
        raise ConfigError("a test case is required (--case)")
    if "method" not in values and "command_needs_method" not in values:
        raise ConfigError("a method is required (--method)")
    kwargs = {k: v for k, v in values.items() if k in RunConfig.__dataclass_fields__}
    return RunConfig(**kwargs)


def _require_out(values: dict) -> str:
    out = values.get("out")
    if not out:
        raise ConfigError("an output path is required (--out)")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = _resolve(args)
        if args.command == "run":
            config = _run_config(values)
            out = _require_out(values)
            report = run(config)
            write_report_csv(out, report)
            if values.get("dump_particles"):
                write_csv(
                    values["dump_particles"],
                    ("k1", "k2", "w", "x1", "x2", "D11", "D12", "D21", "D22", "active"),
                    particles_csv_rows(report.final_state),
                )
            for key, val in report.summary().items():
                print(f"{key}={val:.17g}" if isinstance(val, float) else f"{key}={val}")
        elif args.command == "converge":
            config = _run_config(values)
            h_list = values.get("h_list")
            if not h_list:
                raise ConfigError("a mesh size list is required (--h-list)")
            rows = converge(config, h_list)
            write_dict_csv(_require_out(values), rows)
        elif args.command == "sweep-remap":
            config = _run_config(values)
            periods = values.get("periods")
            if not periods:
                raise ConfigError("a period list is required (--periods)")
            rows = sweep_remap(config, periods)
            write_dict_csv(_require_out(values), rows)
        elif args.command == "dynamic":
            config = _run_config(values)
            periods = values.get("periods")
            thresholds = values.get("c_list")
            if not periods or not thresholds:
                raise ConfigError("period and threshold lists are required (--periods, --c-list)")
            rows = dynamic_vs_static(config, thresholds, periods)
            write_dict_csv(_require_out(values), rows)
        elif args.command == "fields":
            if "case" not in values:
                raise ConfigError("a test case is required (--case)")
            case = get_case(values["case"])
            t = values.get("t", 0.0)
            egrid = EvalGrid(values.get("eval_grid", 64))
            rows = field_samples(case, t, egrid)
            write_csv(_require_out(values), ("x", "y", "u1", "u2", "f_exact"), rows)
        elif args.command == "dump-particles":
            config = _run_config(values)
            case = get_case(config.case)
            kernel = get_kernel(config.kernel)
            ps = initialize(
                case,
                kernel,
                config.h,
                config.method,
                config.scheme,
                hprime=config.hprime,
                w_tol=config.w_tol,
                q=config.q,
                margin=config.margin,
                cs=config.cs,
            )
            write_csv(
                _require_out(values),
                ("k1", "k2", "w", "x1", "x2", "D11", "D12", "D21", "D22", "active"),
                particles_csv_rows(ps),
            )
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
