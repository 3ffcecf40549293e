"""Command-line entry point: ``percycle <command> --config <path>``.

Exit status: 0 success or certified, 2 hypotheses or certificate failed
(a report is still written), 1 error (a JSON error object on stdout).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import bounds as bnd
from .config import RunConfig, config_to_dict, history_function, load_config, params_to_dict
from .degree import certify
from .errors import ConfigError, HypothesisError, PercycleError
from .model import STATE_NAMES, ParamSet, example_history
from .solver import IntegratorOptions, ShootingOptions, integrate, shoot_in_box, simulate_dde

COMMANDS = ("check", "bounds", "certify", "solve", "simulate", "sweep")
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


@dataclass
class Outcome:
    status: int
    report: Optional[dict] = None  # JSON report
    text: Optional[str] = None  # CSV payload


# -- serialization ---------------------------------------------------------

def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return x
    return obj


def dumps(report) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False) + "\n"


def error_object(exc: BaseException) -> dict:
    out = {"error": {"type": getattr(exc, "kind", type(exc).__name__), "message": str(exc)}}
    for attr in ("key", "line", "residual"):
        value = getattr(exc, attr, None)
        if value is not None:
            out["error"][attr] = value
    best = getattr(exc, "best", None)
    if best is not None:
        out["error"]["best"] = dict(zip(STATE_NAMES, np.asarray(best, dtype=float).tolist()))
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


# -- pipeline stages -------------------------------------------------------

def _check(cfg: RunConfig):
    nm = cfg.numerics
    ext = bnd.compute_extrema(cfg.params, nm.grid_n, nm.extrema_margin)
    return ext, bnd.check_hypotheses(cfg.params, ext, nm.grid_n, nm.inversion_tol)


def _box(cfg: RunConfig):
    nm = cfg.numerics
    return bnd.build_box(cfg.params, nm.grid_n, bnd.ShrinkPolicy(0.5, nm.max_halvings),
                         quad_n=nm.quad_n, face_grid=nm.face_grid, margin=nm.extrema_margin,
                         tol=nm.inversion_tol, growth=nm.growth, align=nm.align_corners)


def _certificate(cfg: RunConfig, box):
    nm = cfg.numerics
    return certify(cfg.params, box, nm.face_grid, nm.quad_n, nm.lambda_grid, nm.boundary_grid,
                   nm.homotopy_floor)


def _base(cfg: RunConfig, command: str):
    return {"command": command, "model": params_to_dict(cfg.params)}


def run_check(cfg: RunConfig) -> Outcome:
    ext, report = _check(cfg)
    out = _base(cfg, "check")
    out["hypotheses"] = report.to_dict()
    out["extrema"] = ext.to_dict()
    return Outcome(EXIT_OK if report.all_passed else EXIT_FAILED, out)


def _certify_stages(cfg: RunConfig, command: str):
    """Shared front half of certify/solve: returns (outcome-so-far, box, cert)."""
    ext, report = _check(cfg)
    out = _base(cfg, command)
    out["hypotheses"] = report.to_dict()
    if not report.all_passed:
        return Outcome(EXIT_FAILED, out), None, None
    box = _box(cfg)
    out["box"] = box.to_dict()
    cert = _certificate(cfg, box)
    out["certificate"] = cert.to_dict()
    if cert.degree is not None:
        out["degree"] = cert.degree
    status = EXIT_OK if cert.verdict and cert.homotopy.passed else EXIT_FAILED
    return Outcome(status, out), box, cert


def run_bounds(cfg: RunConfig) -> Outcome:
    ext, report = _check(cfg)
    out = _base(cfg, "bounds")
    out["hypotheses"] = report.to_dict()
    if not report.all_passed:
        return Outcome(EXIT_FAILED, out)
    box = _box(cfg)
    out["box"] = box.to_dict()
    return Outcome(EXIT_OK if box.certified else EXIT_FAILED, out)


def run_certify(cfg: RunConfig) -> Outcome:
    return _certify_stages(cfg, "certify")[0]


def _shooting_options(cfg: RunConfig) -> ShootingOptions:
    nm = cfg.numerics
    return ShootingOptions(tol=nm.newton_tol, max_iter=nm.newton_max_iter,
                           fallback_periods=nm.fallback_periods,
                           integrator=IntegratorOptions(rtol=nm.shooting_rtol, atol=nm.shooting_atol))


def run_solve(cfg: RunConfig) -> Outcome:
    outcome, box, cert = _certify_stages(cfg, "solve")
    if outcome.status != EXIT_OK:
        return outcome
    nm = cfg.numerics
    orbit, check, attempts = shoot_in_box(cfg.params, box, _shooting_options(cfg), nm.retries,
                                          cfg.run.seed, nm.orbit_samples)
    out = outcome.report
    out["orbit"] = orbit.to_dict()
    out["verification"] = check.to_dict()
    out["attempts"] = [a.to_dict() for a in attempts]
    return Outcome(EXIT_OK if check.ok else EXIT_FAILED, out)


def _sample_times(cfg: RunConfig, t_end: float):
    t0, dt = cfg.run.t_start, cfg.run.dt
    n = int(math.floor((t_end - t0) / dt + 1e-9))
    t = t0 + dt * np.arange(n + 1)
    if t_end - t[-1] > 1e-9 * dt:
        t = np.append(t, t_end)
    else:
        t[-1] = t_end
    return t


def run_simulate(cfg: RunConfig) -> Outcome:
    p, run = cfg.params, cfg.run
    t0 = run.t_start
    t_end = run.t_end if run.t_end is not None else t0 + 10 * p.T
    if not t_end > t0:
        raise ConfigError("run.t_end must exceed run.t_start", key="run.t_end")
    history = history_function(run.history) if run.history is not None else example_history()
    opts = IntegratorOptions(rtol=cfg.numerics.rtol, atol=cfg.numerics.atol)
    t_eval = _sample_times(cfg, t_end)
    if p.tau > 0:
        traj = simulate_dde(p, history, (t0, t_end), opts, t_eval=t_eval)
    else:
        x0 = run.initial_state if run.initial_state is not None else history(t0)
        traj = integrate(p, np.asarray(x0, dtype=float), (t0, t_end), opts, t_eval=t_eval)
    return Outcome(EXIT_OK, text=traj.to_csv())


# -- sweep -----------------------------------------------------------------

def swept_params(p: ParamSet, name: str, field: str, value: float) -> ParamSet:
    coef = getattr(p, name)
    if coef.kind == "constant" and field != "value":
        raise ConfigError(f"{name} is constant; sweep field must be \"value\"", key="run.sweep.field")
    if coef.kind != "constant" and field == "value":
        field = "offset"
    if coef.kind not in ("constant", "sinusoid") and field == "amplitude":
        raise ConfigError(f"{name} has no amplitude", key="run.sweep.field")
    return p.with_coefficient(name, replace(coef, **{field: float(value)}))


def _sweep_point(args):
    cfg, command, value = args
    sw = cfg.run.sweep
    row = {"value": value, "status": None, "hypotheses": None, "certified": None, "degree": None,
           "halvings": None, "residual_norm": None, "contained": None,
           **{s: None for s in STATE_NAMES}, "error": ""}
    try:
        point = replace(cfg, params=swept_params(cfg.params, sw.parameter, sw.field, value))
        outcome = {"check": run_check, "certify": run_certify, "solve": run_solve}[command](point)
    except PercycleError as exc:
        row.update(status=EXIT_ERROR, error=f"{exc.kind}: {exc}")
        return row
    rep = outcome.report
    row["status"] = outcome.status
    row["hypotheses"] = rep["hypotheses"]["all_pass"]
    if "certificate" in rep:
        row["certified"] = rep["certificate"]["verdict"]
        row["halvings"] = rep["box"]["halvings"]
        row["degree"] = rep.get("degree")
    if "orbit" in rep:
        row["residual_norm"] = rep["orbit"]["residual_norm"]
        row["contained"] = rep["verification"]["contained"]
        row.update(rep["orbit"]["x"])
    return row


def run_sweep(cfg: RunConfig) -> Outcome:
    sw = cfg.run.sweep
    if sw is None:
        raise ConfigError("sweep needs a run.sweep section", key="run.sweep")
    tasks = [(cfg, sw.command, v) for v in sw.values]
    if sw.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=sw.workers) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows.sort(key=lambda r: r["value"])
    header = list(rows[0])
    lines = [",".join([f"{sw.parameter}.{sw.field}"] + header[1:])]
    lines += [",".join(_fmt(r[k]) for k in header) for r in rows]
    ok = all(r["status"] == EXIT_OK for r in rows)
    return Outcome(EXIT_OK if ok else EXIT_FAILED, text="\n".join(lines) + "\n")


RUNNERS = {"check": run_check, "bounds": run_bounds, "certify": run_certify, "solve": run_solve,
           "simulate": run_simulate, "sweep": run_sweep}


def run_command(cfg: RunConfig, command: str) -> Outcome:
    """Run one pipeline command; errors propagate as :class:`PercycleError`."""
    if command not in RUNNERS:
        raise ValueError(f"unknown command {command!r}")
    try:
        return RUNNERS[command](cfg)
    except HypothesisError as exc:
        # surfaced by bound routines when a hypothesis fails late; data still reported
        out = _base(cfg, command)
        out["hypotheses"] = exc.report.to_dict() if exc.report is not None else None
        out["message"] = str(exc)
        return Outcome(EXIT_FAILED, out)


# -- entry point -----------------------------------------------------------

def apply_overrides(cfg: RunConfig, tau=None, t_end=None, seed=None) -> RunConfig:
    if tau is not None:
        try:
            cfg = replace(cfg, params=replace(cfg.params, tau=float(tau)))
        except ValueError as exc:
            raise ConfigError(f"--tau: {exc}", key="model.tau") from exc
    if t_end is not None:
        cfg = replace(cfg, run=replace(cfg.run, t_end=float(t_end)))
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=int(seed)))
    return cfg


def build_parser():
    ap = argparse.ArgumentParser(prog="percycle", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default="builtin",
                    help='JSON config path, or "builtin" for the bundled example (default)')
    ap.add_argument("--out", help="write the report/CSV here instead of stdout")
    ap.add_argument("--tau", type=float, help="override model.tau")
    ap.add_argument("--t-end", type=float, dest="t_end", help="override run.t_end")
    ap.add_argument("--seed", type=int, help="override run.seed (solve retries)")
    ap.add_argument("--dump-config", action="store_true",
                    help="print the parsed config with all defaults filled in, then exit")
    return ap


def _emit(payload: str, out_path: Optional[str]):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.tau, args.t_end, args.seed)
        if args.dump_config:
            _emit(dumps(config_to_dict(cfg)), args.out)
            return EXIT_OK
        outcome = run_command(cfg, args.command)
    except (PercycleError, ValueError, ArithmeticError) as exc:
        sys.stdout.write(dumps(error_object(exc)))
        return EXIT_ERROR
    _emit(outcome.text if outcome.text is not None else dumps(outcome.report), args.out)
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
