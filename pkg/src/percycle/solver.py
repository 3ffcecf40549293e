"""Trajectories, Poincare shooting for the periodic orbit, and the delayed variant."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bounds import Box5
from .errors import DomainError, ShootingError
from .integrators import DenseOutput, dopri5, rk4
from .model import NEGATIVE_CLAMP, STATE_NAMES, ParamSet, rhs, rhs_delayed


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "dopri5"
    rtol: float = 1e-9
    atol: float = 1e-10
    max_step: float = math.inf
    rk4_steps: int = 1000
    max_steps: int = 1_000_000


SHOOTING_INTEGRATOR = IntegratorOptions(rtol=1e-11, atol=1e-12)


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # shape (len(t), 5)
    method: str
    n_steps: int
    n_rejected: int
    rtol: Optional[float] = None
    atol: Optional[float] = None
    dense: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def at(self, t):
        """State at ``t`` via the dense interpolant, shape ``(5,)`` or ``(5, len(t))``."""
        if self.dense is None:
            return np.array([np.interp(t, self.t, self.x[:, i]) for i in range(5)])
        return self.dense(t)

    def to_csv(self):
        lines = ["t," + ",".join(STATE_NAMES)]
        for ti, xi in zip(self.t, self.x):
            lines.append(",".join("%.17g" % v for v in (ti, *xi)))
        return "\n".join(lines) + "\n"


def _projected_rhs(p, t, x):
    # Runge-Kutta stages near the boundary can undershoot zero by roughly
    # atol; the field is extended by projection onto the nonnegative cone,
    # which leaves the true (forward-invariant) flow unchanged.
    return rhs(p, t, np.maximum(x, 0.0))


def _state_field(p, fn=None):
    if fn is not None:
        return fn

    def f(t, x):
        return _projected_rhs(p, t, x)
    return f


def integrate(p: ParamSet, x0, t_span, opts: IntegratorOptions = IntegratorOptions(),
              t_eval=None, field_fn=None) -> Trajectory:
    """Solve ``x' = rhs(p, t, x)``.

    ``x0`` may be a batch of shape ``(5, m)``. ``field_fn(t, x)`` replaces the
    model right-hand side (used as a test hook).
    """
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise DomainError("initial state must be nonnegative")
    f = _state_field(p, field_fn)
    if opts.method == "rk4":
        res = rk4(f, t_span, x0, opts.rk4_steps)
        t, y = res.t, res.y
        if t_eval is not None:
            t = np.asarray(t_eval, dtype=float)
            y = np.stack([np.interp(t, res.t, res.y[:, i]) for i in range(5)], axis=-1)
        return Trajectory(t, y, "rk4", res.n_steps, 0)
    res = dopri5(f, t_span, x0, rtol=opts.rtol, atol=opts.atol, t_eval=t_eval,
                 max_step=opts.max_step, max_steps=opts.max_steps)
    return Trajectory(res.t, res.y, "dopri5", res.n_steps, res.n_rejected,
                      opts.rtol, opts.atol, res.dense)


def flow(p: ParamSet, x0, t0, t1, opts: IntegratorOptions = SHOOTING_INTEGRATOR):
    """Endpoint of the flow from ``t0`` to ``t1`` (batched states allowed)."""
    x0 = np.asarray(x0, dtype=float)
    if t1 == t0:
        return x0.copy()
    res = dopri5(lambda t, x: _projected_rhs(p, t, x), (t0, t1), x0, rtol=opts.rtol, atol=opts.atol,
                 max_step=opts.max_step, max_steps=opts.max_steps)
    return res.y[-1]


def poincare_residual(p: ParamSet, x0, opts: IntegratorOptions = SHOOTING_INTEGRATOR, period=None):
    """``Phi_T(x0) - x0`` where ``Phi_T`` is the flow over one forcing period."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 <= 0):
        raise DomainError("shooting requires a strictly positive state")
    T = p.T if period is None else period
    return flow(p, x0, 0.0, T, opts) - x0


@dataclass(frozen=True)
class ShootingOptions:
    tol: float = 1e-9
    max_iter: int = 50
    max_halvings: int = 30
    fallback_periods: int = 50
    integrator: IntegratorOptions = SHOOTING_INTEGRATOR
    # looser flow tolerances while the residual is still above coarse_above
    coarse_integrator: IntegratorOptions = IntegratorOptions(rtol=1e-7, atol=1e-9)
    coarse_above: float = 1e-3


@dataclass(frozen=True)
class PeriodicOrbit:
    x: np.ndarray
    residual: np.ndarray
    residual_norm: float
    iterations: int
    floquet: np.ndarray
    residual_history: tuple
    used_fallback: bool = False
    contained: Optional[bool] = None

    def to_dict(self):
        mult = sorted(self.floquet.tolist(), key=lambda z: (-abs(z), z.real, z.imag))
        return {
            "x": dict(zip(STATE_NAMES, self.x.tolist())),
            "residual": dict(zip(STATE_NAMES, self.residual.tolist())),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "used_fallback": self.used_fallback,
            "residual_history": list(self.residual_history),
            "floquet_multipliers": [{"re": z.real, "im": z.imag, "abs": abs(z)} for z in mult],
            "contained": self.contained,
        }


def _map_and_jacobian(p, x, integ):
    """``Phi_T(x)`` and its forward-difference Jacobian from one batched solve."""
    eps = math.sqrt(np.finfo(float).eps) * np.maximum(np.abs(x), 1.0)
    batch = np.repeat(x[:, None], 6, axis=1)
    batch[np.arange(5), np.arange(1, 6)] += eps
    end = flow(p, batch, 0.0, p.T, integ)
    phi = end[:, 0]
    jac = (end[:, 1:] - phi[:, None]) / eps[None, :]
    return phi, jac


def _newton(p, x, opts, history):
    integ = opts.coarse_integrator if opts.coarse_above > opts.tol else opts.integrator
    F = poincare_residual(p, x, integ)
    fn = float(np.max(np.abs(F)))
    history.append(fn)
    jac = None
    for it in range(opts.max_iter + 1):
        if integ is not opts.integrator and fn <= opts.coarse_above:
            integ = opts.integrator
            F = poincare_residual(p, x, integ)
            fn = float(np.max(np.abs(F)))
            history.append(fn)
        if integ is opts.integrator and fn <= opts.tol:
            _, jac = _map_and_jacobian(p, x, integ)
            return x, F, fn, it, jac, True
        if it == opts.max_iter:
            break
        phi, jac = _map_and_jacobian(p, x, integ)
        F = phi - x
        try:
            dx = np.linalg.solve(jac - np.eye(5), -F)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac - np.eye(5), -F, rcond=None)[0]
        lam = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = x + lam * dx
            if np.all(trial > 0) and np.all(np.isfinite(trial)):
                try:
                    F_trial = poincare_residual(p, trial, integ)
                except (DomainError, ArithmeticError):
                    F_trial = None
                if F_trial is not None and np.all(np.isfinite(F_trial)):
                    fn_trial = float(np.max(np.abs(F_trial)))
                    if fn_trial < fn:
                        x, F, fn = trial, F_trial, fn_trial
                        history.append(fn)
                        break
            lam *= 0.5
        else:
            return x, F, fn, it + 1, jac, False
    return x, F, fn, opts.max_iter, jac, False


def find_periodic_orbit(p: ParamSet, guess=None, opts: ShootingOptions = ShootingOptions(),
                        box: Optional[Box5] = None) -> PeriodicOrbit:
    """Damped Newton on ``Phi_T(x) - x``.

    The default guess is the center of the certified box. If Newton stalls,
    its best iterate is relaxed by integrating ``fallback_periods`` periods
    and Newton restarts from the endpoint.

    Raises
    ------
    ShootingError
        On non-convergence, carrying the best iterate and its residual.
    DomainError
        If the guess is not strictly positive.
    """
    if guess is None:
        if box is None:
            from .bounds import build_box
            box = build_box(p)
        guess = box.center
    x = np.array(guess, dtype=float)
    if x.shape != (5,):
        raise ValueError("guess must be a 5-vector")
    if not np.all(x > 0):
        raise DomainError("guess must be strictly positive")

    history = []
    best = (math.inf, x)
    used_fallback = False
    for attempt in range(2):
        try:
            x_end, F, fn, iters, jac, ok = _newton(p, x, opts, history)
        except (DomainError, ArithmeticError, FloatingPointError):
            ok, fn, x_end, F = False, math.inf, x, None
        if fn < best[0]:
            best = (fn, x_end)
        if ok:
            return PeriodicOrbit(x_end, F, fn, iters, np.linalg.eigvals(jac), tuple(history),
                                 used_fallback)
        if attempt == 0:
            used_fallback = True
            try:
                x = flow(p, best[1], 0.0, opts.fallback_periods * p.T, opts.coarse_integrator)
            except (DomainError, ArithmeticError):
                break
            if not np.all(x > 0):
                break
    raise ShootingError(f"Newton shooting did not converge (best residual {best[0]:.3e})",
                        best=best[1], residual=best[0])


@dataclass(frozen=True)
class OrbitVerification:
    contained: bool
    positive: bool
    periodicity_defect: float
    periodic: bool
    minima: np.ndarray
    maxima: np.ndarray

    @property
    def ok(self):
        return self.contained and self.positive and self.periodic

    def to_dict(self):
        return {
            "contained": self.contained,
            "positive": self.positive,
            "periodicity_defect": self.periodicity_defect,
            "periodic": self.periodic,
            "min": dict(zip(STATE_NAMES, self.minima.tolist())),
            "max": dict(zip(STATE_NAMES, self.maxima.tolist())),
        }


def verify_orbit(p: ParamSet, orbit: PeriodicOrbit, box: Box5, samples: int = 400,
                 tol: float = 1e-9, opts: IntegratorOptions = SHOOTING_INTEGRATOR) -> OrbitVerification:
    """Re-integrate one period from the orbit's initial state and check it against the box."""
    t_eval = np.linspace(0.0, p.T, samples + 1)
    traj = integrate(p, orbit.x, (0.0, p.T), opts, t_eval=t_eval)
    xs = traj.x
    lo, hi = xs.min(axis=0), xs.max(axis=0)
    contained = bool(np.all(lo >= box.lower) and np.all(hi <= box.upper))
    defect = float(np.max(np.abs(xs[-1] - xs[0])))
    return OrbitVerification(contained, bool(np.all(lo > 0)), defect, defect <= 10 * tol, lo, hi)


def _history_fn(history):
    if callable(history):
        return history
    value = np.asarray(history, dtype=float)
    return lambda t: value


def simulate_dde(p: ParamSet, history, t_span, opts: IntegratorOptions = IntegratorOptions(),
                 t_eval=None, tau: Optional[float] = None, chunk_min: float = 1e-3) -> Trajectory:
    """Integrate the model with PN delayed by ``tau`` in the repression term.

    Method of steps: for ``tau >= chunk_min`` the step size is capped at
    ``tau`` and steps land on every multiple of ``tau``, so delayed values
    always come from already accepted steps (or from ``history`` for times
    before ``t_span[0]``). Shorter delays would need an impractical number
    of chunks; there steps may exceed ``tau`` and the delayed value inside
    the current step is extrapolated from the previous step's interpolant.

    ``history(t)`` returns the 5-state for ``t`` in ``[t0 - tau, t0]``.
    """
    tau = p.tau if tau is None else tau
    if not tau > 0:
        raise ValueError("simulate_dde needs a positive delay")
    hist = _history_fn(history)
    t0, t1 = float(t_span[0]), float(t_span[1])
    x0 = np.asarray(hist(t0), dtype=float)
    if np.any(x0 < -NEGATIVE_CLAMP):
        raise DomainError("history must be nonnegative")
    dense = DenseOutput()

    def delayed_pn(s):
        sd = s - tau
        if sd <= t0 or len(dense) == 0:
            return float(np.asarray(hist(min(sd, t0)))[4]) if sd <= t0 else float(x0[4])
        return float(dense(sd)[4])

    def f(s, x):
        return rhs_delayed(p, s, np.maximum(x, 0.0), max(delayed_pn(s), 0.0))

    if tau >= chunk_min:
        n_chunks = int(math.floor((t1 - t0) / tau))
        stops = [t0 + k * tau for k in range(1, n_chunks + 1)]
        max_step = min(opts.max_step, tau)
    else:
        stops, max_step = [], opts.max_step
    res = dopri5(f, (t0, t1), x0, rtol=opts.rtol, atol=opts.atol, t_eval=t_eval,
                 max_step=max_step, stops=stops, max_steps=opts.max_steps, dense=dense)
    return Trajectory(res.t, res.y, "dopri5-steps", res.n_steps, res.n_rejected,
                      opts.rtol, opts.atol, dense)


def periodicity_defect(traj: Trajectory, period: float, window, samples: int = 600) -> float:
    """``max ||x(t) - x(t - period)||_inf`` for ``t`` in ``window``."""
    a, b = window
    if a - period < traj.t[0] - 1e-12 or b > traj.t[-1] + 1e-12:
        raise ValueError("window minus one period must lie inside the trajectory")
    t = np.linspace(a, b, samples)
    return float(np.max(np.abs(traj.at(t) - traj.at(t - period))))


@dataclass(frozen=True)
class ShootingAttempt:
    start: np.ndarray
    label: str
    residual_norm: float
    converged: bool
    contained: Optional[bool]
    message: str = ""

    def to_dict(self):
        return {"label": self.label, "start": dict(zip(STATE_NAMES, self.start.tolist())),
                "residual_norm": self.residual_norm, "converged": self.converged,
                "contained": self.contained, "message": self.message}


def interior_starts(box: Box5, count: int, seed: int = 0):
    """Retry points: the box's geometric (log-scale) center, then seeded log-uniform draws.

    The box spans many decades in P2/PN, so the arithmetic center sits far
    from the attracting orbit; sampling in log coordinates covers every scale.
    """
    if count <= 0:
        return []
    lo, hi = np.log(box.lower), np.log(box.upper)
    rng = np.random.default_rng(seed)
    starts = [("log-center", np.exp(0.5 * (lo + hi)))]
    for k in range(count - 1):
        starts.append((f"random-{k + 1}", np.exp(rng.uniform(lo, hi))))
    return starts


def shoot_in_box(p: ParamSet, box: Box5, opts: ShootingOptions = ShootingOptions(),
                 retries: int = 8, seed: int = 0, samples: int = 400):
    """Shooting from the box center, retrying from interior points.

    A retry happens when Newton fails or the converged orbit leaves the box.
    Returns ``(orbit, verification, attempts)`` for the first contained
    orbit; otherwise for the last converged orbit. Raises
    :class:`ShootingError` when no start converges.
    """
    attempts = []
    fallback = None
    starts = [("center", box.center)] + interior_starts(box, retries, seed)
    for label, x0 in starts:
        try:
            orbit = find_periodic_orbit(p, x0, opts)
        except (ShootingError, DomainError) as exc:
            residual = getattr(exc, "residual", None)
            attempts.append(ShootingAttempt(np.asarray(x0), label,
                                            math.inf if residual is None else float(residual),
                                            False, None, str(exc)))
            continue
        check = verify_orbit(p, orbit, box, samples, opts.tol)
        orbit = PeriodicOrbit(orbit.x, orbit.residual, orbit.residual_norm, orbit.iterations,
                              orbit.floquet, orbit.residual_history, orbit.used_fallback,
                              check.contained)
        attempts.append(ShootingAttempt(np.asarray(x0), label, orbit.residual_norm, True,
                                        check.contained))
        if check.contained:
            return orbit, check, tuple(attempts)
        if fallback is None:
            fallback = (orbit, check)
    if fallback is not None:
        return fallback[0], fallback[1], tuple(attempts)
    best = min(attempts, key=lambda a: a.residual_norm)
    raise ShootingError(f"Newton shooting failed from all {len(attempts)} starts "
                        f"(best residual {best.residual_norm:.3e})", best=best.start,
                        residual=best.residual_norm)
