"""JSON run configuration: parsing, validation and serialization."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidCoefficientError
from .model import COEFFICIENT_NAMES, STATE_NAMES, ParamSet, PeriodicCoefficient

BUILTIN = "builtin"

_COEF_KEYS = {
    "constant": {"kind", "value"},
    "sinusoid": {"kind", "offset", "amplitude", "omega", "phase", "period"},
    "fourier": {"kind", "offset", "harmonics", "period"},
    "table": {"kind", "samples", "period"},
}
_COEF_REQUIRED = {
    "constant": {"value"},
    "sinusoid": {"offset", "amplitude"},
    "fourier": {"offset", "harmonics"},
    "table": {"samples"},
}


@dataclass(frozen=True)
class Numerics:
    grid_n: int = 2048
    extrema_margin: float = 0.01
    inversion_tol: float = 1e-10
    growth: str = "level"
    align_corners: bool = True
    max_halvings: int = 60
    quad_n: int = 256
    face_grid: int = 5
    lambda_grid: int = 11
    boundary_grid: int = 5
    homotopy_floor: float = 1e-12
    rtol: float = 1e-9
    atol: float = 1e-10
    shooting_rtol: float = 1e-11
    shooting_atol: float = 1e-12
    newton_tol: float = 1e-9
    newton_max_iter: int = 50
    fallback_periods: int = 50
    retries: int = 8
    orbit_samples: int = 400


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    field: str = "value"
    command: str = "certify"
    workers: int = 1


@dataclass(frozen=True)
class RunOptions:
    t_start: float = 0.0
    t_end: Optional[float] = None
    dt: float = 0.01
    initial_state: Optional[tuple] = None
    history: Optional[dict] = None  # state name -> coefficient-style spec
    seed: int = 0
    sweep: Optional[SweepSpec] = None


@dataclass(frozen=True)
class RunConfig:
    params: ParamSet
    numerics: Numerics = Numerics()
    run: RunOptions = RunOptions()


def _fail(msg, key):
    raise ConfigError(f"{key}: {msg}" if key else msg, key=key)


def _check_keys(obj, allowed, key, required=()):
    if not isinstance(obj, dict):
        _fail("expected an object", key)
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        _fail(f"unknown key(s) {', '.join(unknown)}", key)
    missing = sorted(set(required) - set(obj))
    if missing:
        _fail(f"missing key(s) {', '.join(missing)}", key)


def _number(value, key, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"expected a number, got {value!r}", key)
    if integer and int(value) != value:
        _fail(f"expected an integer, got {value!r}", key)
    if not math.isfinite(value):
        _fail("expected a finite number", key)
    if positive and not value > 0:
        _fail(f"must be positive, got {value!r}", key)
    return int(value) if integer else float(value)


def parse_coefficient(spec, T, key):
    """Build a :class:`PeriodicCoefficient` from its JSON object."""
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail('expected an object with a "kind"', key)
    kind = spec["kind"]
    if kind not in _COEF_KEYS:
        _fail(f"unknown coefficient kind {kind!r}", key)
    _check_keys(spec, _COEF_KEYS[kind], key, _COEF_REQUIRED[kind])
    period = T
    if "period" in spec:
        period = _number(spec["period"], f"{key}.period", positive=True)
        if abs(period - T) > 1e-12 * T:
            _fail(f"period {period} does not match model.T = {T}", f"{key}.period")
    try:
        if kind == "constant":
            return PeriodicCoefficient.constant(_number(spec["value"], f"{key}.value"))
        if kind == "sinusoid":
            return PeriodicCoefficient.sinusoid(
                _number(spec["offset"], f"{key}.offset"),
                _number(spec["amplitude"], f"{key}.amplitude"),
                _number(spec.get("omega", 1.0), f"{key}.omega"),
                _number(spec.get("phase", 0.0), f"{key}.phase"),
                period=period,
            )
        if kind == "fourier":
            harmonics = spec["harmonics"]
            if not isinstance(harmonics, list) or not all(
                isinstance(h, list) and len(h) == 2 for h in harmonics
            ):
                _fail("harmonics must be a list of [cos, sin] pairs", f"{key}.harmonics")
            harmonics = [(_number(a, f"{key}.harmonics"), _number(b, f"{key}.harmonics"))
                         for a, b in harmonics]
            return PeriodicCoefficient.fourier(_number(spec["offset"], f"{key}.offset"),
                                               harmonics, period)
        samples = spec["samples"]
        if not isinstance(samples, list):
            _fail("samples must be a list", f"{key}.samples")
        return PeriodicCoefficient.table([_number(s, f"{key}.samples") for s in samples], period)
    except InvalidCoefficientError as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from exc


def parse_model(obj, key="model"):
    _check_keys(obj, {"n", "T", "tau", "coefficients"}, key, {"T", "coefficients"})
    T = _number(obj["T"], f"{key}.T", positive=True)
    n = _number(obj.get("n", 4), f"{key}.n", integer=True)
    if n < 1:
        _fail("Hill exponent must be >= 1", f"{key}.n")
    tau = _number(obj.get("tau", 0.0), f"{key}.tau")
    coefs = obj["coefficients"]
    _check_keys(coefs, COEFFICIENT_NAMES, f"{key}.coefficients", COEFFICIENT_NAMES)
    parsed = {name: parse_coefficient(coefs[name], T, f"{key}.coefficients.{name}")
              for name in COEFFICIENT_NAMES}
    try:
        return ParamSet(**parsed, n=n, T=T, tau=tau)
    except InvalidCoefficientError as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from exc


def parse_numerics(obj, key="numerics"):
    defaults = Numerics()
    names = {f.name: f for f in fields(Numerics)}
    _check_keys(obj, names, key)
    values = {}
    for name, raw in obj.items():
        default = getattr(defaults, name)
        k = f"{key}.{name}"
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                _fail("expected true or false", k)
            values[name] = raw
        elif isinstance(default, str):
            if raw not in ("level", "global"):
                _fail('expected "level" or "global"', k)
            values[name] = raw
        elif isinstance(default, int):
            values[name] = _number(raw, k, positive=True, integer=True)
        else:
            values[name] = _number(raw, k, positive=True)
    return Numerics(**values)


def _parse_sweep(obj, key):
    _check_keys(obj, {"parameter", "field", "values", "start", "stop", "num", "command", "workers"},
                key, {"parameter"})
    if obj["parameter"] not in COEFFICIENT_NAMES:
        _fail(f"unknown parameter {obj['parameter']!r}", f"{key}.parameter")
    if "values" in obj:
        if not isinstance(obj["values"], list) or not obj["values"]:
            _fail("values must be a non-empty list", f"{key}.values")
        values = tuple(_number(v, f"{key}.values") for v in obj["values"])
    elif {"start", "stop", "num"} <= set(obj):
        num = _number(obj["num"], f"{key}.num", positive=True, integer=True)
        values = tuple(np.linspace(_number(obj["start"], f"{key}.start"),
                                   _number(obj["stop"], f"{key}.stop"), num).tolist())
    else:
        _fail("give either values or start/stop/num", key)
    field_name = obj.get("field", "value")
    if field_name not in ("value", "offset", "amplitude"):
        _fail('field must be "value", "offset" or "amplitude"', f"{key}.field")
    command = obj.get("command", "certify")
    if command not in ("check", "certify", "solve"):
        _fail('command must be "check", "certify" or "solve"', f"{key}.command")
    workers = _number(obj.get("workers", 1), f"{key}.workers", positive=True, integer=True)
    return SweepSpec(obj["parameter"], tuple(sorted(values)), field_name, command, workers)


def parse_run(obj, T, key="run"):
    _check_keys(obj, {"t_start", "t_end", "dt", "initial_state", "history", "seed", "sweep"}, key)
    out = {}
    if "t_start" in obj:
        out["t_start"] = _number(obj["t_start"], f"{key}.t_start")
    if "t_end" in obj:
        out["t_end"] = _number(obj["t_end"], f"{key}.t_end")
    if "dt" in obj:
        out["dt"] = _number(obj["dt"], f"{key}.dt", positive=True)
    if "seed" in obj:
        out["seed"] = _number(obj["seed"], f"{key}.seed", integer=True)
    if "initial_state" in obj:
        x0 = obj["initial_state"]
        if isinstance(x0, dict):
            _check_keys(x0, STATE_NAMES, f"{key}.initial_state", STATE_NAMES)
            x0 = [x0[s] for s in STATE_NAMES]
        if not isinstance(x0, list) or len(x0) != 5:
            _fail("expected 5 values", f"{key}.initial_state")
        x0 = tuple(_number(v, f"{key}.initial_state") for v in x0)
        if min(x0) < 0:
            _fail("initial state must be nonnegative", f"{key}.initial_state")
        out["initial_state"] = x0
    if "history" in obj:
        hist = obj["history"]
        _check_keys(hist, STATE_NAMES, f"{key}.history", STATE_NAMES)
        for s in STATE_NAMES:
            _history_component(hist[s], f"{key}.history.{s}")
        out["history"] = {s: dict(hist[s]) for s in STATE_NAMES}
    if "sweep" in obj:
        out["sweep"] = _parse_sweep(obj["sweep"], f"{key}.sweep")
    return RunOptions(**out)


def _history_component(spec, key):
    """History components allow zero values, so they bypass coefficient positivity."""
    if not isinstance(spec, dict) or spec.get("kind") not in ("constant", "sinusoid"):
        _fail('history entries must be {"kind": "constant" | "sinusoid", ...}', key)
    if spec["kind"] == "constant":
        _check_keys(spec, {"kind", "value"}, key, {"value"})
        v = _number(spec["value"], f"{key}.value")
        if v < 0:
            _fail("history must be nonnegative", key)
        return lambda t: v + 0.0 * np.asarray(t, dtype=float)
    _check_keys(spec, {"kind", "offset", "amplitude", "omega", "phase"}, key, {"offset", "amplitude"})
    off = _number(spec["offset"], f"{key}.offset")
    amp = _number(spec["amplitude"], f"{key}.amplitude")
    om = _number(spec.get("omega", 1.0), f"{key}.omega")
    ph = _number(spec.get("phase", 0.0), f"{key}.phase")
    if off - abs(amp) < 0:
        _fail("history must be nonnegative", key)
    return lambda t: off + amp * np.sin(om * np.asarray(t, dtype=float) + ph)


def history_function(history_spec):
    parts = [_history_component(history_spec[s], f"run.history.{s}") for s in STATE_NAMES]
    return lambda t: np.array([fn(t) for fn in parts])


def config_from_dict(doc) -> RunConfig:
    _check_keys(doc, {"model", "numerics", "run"}, "", {"model"})
    params = parse_model(doc["model"])
    numerics = parse_numerics(doc.get("numerics", {}))
    run = parse_run(doc.get("run", {}), params.T)
    return RunConfig(params, numerics, run)


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration (``"builtin"`` for the bundled example)."""
    if path in (None, BUILTIN):
        text = resources.files("percycle").joinpath("data/goldbeter_periodic.json").read_text("utf-8")
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          line=exc.lineno) from exc
    return config_from_dict(doc)


def params_to_dict(p: ParamSet):
    return {
        "n": p.n,
        "T": p.T,
        "tau": p.tau,
        "coefficients": {name: c.to_dict() for name, c in p.coefficients().items()},
    }


def config_to_dict(cfg: RunConfig):
    run = {k: v for k, v in asdict(cfg.run).items() if v is not None}
    if "initial_state" in run:
        run["initial_state"] = list(run["initial_state"])
    if cfg.run.sweep is not None:
        sweep = asdict(cfg.run.sweep)
        sweep["values"] = list(sweep["values"])
        run["sweep"] = sweep
    return {"model": params_to_dict(cfg.params), "numerics": asdict(cfg.numerics), "run": run}
