"""Explicit Runge-Kutta integrators: adaptive Dormand-Prince 5(4) and classical RK4.

Both accept states of shape ``(d,)`` or ``(d, m)``; a batch of ``m``
trajectories shares one step-size sequence, which keeps finite-difference
derivatives of the flow consistent.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepSizeError

# Dormand-Prince 5(4), Hairer-Norsett-Wanner table 5.2
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# continuous extension (order 4)
D1, D3, D4, D5, D6, D7 = (
    -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072,
    701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423,
)


class DenseOutput:
    """Piecewise quartic interpolant built step by step.

    Evaluation slightly past the last stored step extrapolates the last
    polynomial; that is used only for very short delays.
    """

    def __init__(self):
        self.t0 = []
        self.h = []
        self.coef = []

    def append(self, t0, h, coef):
        self.t0.append(t0)
        self.h.append(h)
        self.coef.append(coef)

    @property
    def t_start(self):
        return self.t0[0]

    @property
    def t_end(self):
        return self.t0[-1] + self.h[-1]

    def __len__(self):
        return len(self.t0)

    def _eval_step(self, k, t):
        r1, r2, r3, r4, r5 = self.coef[k]
        th = (t - self.t0[k]) / self.h[k]
        th1 = 1.0 - th
        return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))

    def __call__(self, t):
        if np.ndim(t) == 0:
            k = min(max(bisect.bisect_right(self.t0, t) - 1, 0), len(self.t0) - 1)
            return self._eval_step(k, t)
        t = np.asarray(t, dtype=float)
        ks = np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, len(self.t0) - 1)
        return np.stack([self._eval_step(k, ti) for k, ti in zip(ks, t)], axis=-1)


@dataclass
class IntegrationResult:
    t: np.ndarray
    y: np.ndarray  # shape (len(t),) + state shape
    n_steps: int
    n_rejected: int
    n_evals: int
    method: str
    dense: DenseOutput = field(default=None, repr=False)


def _error_norm(err, y0, y1, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    ratio = (err / scale) ** 2
    if ratio.ndim == 1:
        return math.sqrt(float(np.mean(ratio)))
    return math.sqrt(float(np.max(np.mean(ratio, axis=0))))


def _initial_step(f, t0, y0, f0, direction, order, atol, rtol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


def dopri5(f, t_span, y0, *, rtol=1e-9, atol=1e-10, t_eval=None, max_step=math.inf,
           h0=None, stops=(), max_steps=1_000_000, dense=None, safety=0.9,
           min_factor=0.2, max_factor=10.0):
    """Adaptive Dormand-Prince 5(4) with local extrapolation and FSAL.

    Parameters
    ----------
    f : callable ``f(t, y)``
    t_span : (t0, t1) with t1 > t0
    t_eval : optional sample times; answered by the dense interpolant.
        When omitted the accepted step points are returned.
    stops : times the step sequence must hit exactly.
    dense : optional :class:`DenseOutput` to append accepted steps to; ``f``
        may read from it while integrating (delay equations).

    Raises
    ------
    StepSizeError
        If the step size underflows or ``max_steps`` is exceeded.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float)
    if dense is None:
        dense = DenseOutput()
    stops = sorted(s for s in stops if t0 < s < t1) + [t1]
    next_stop = 0

    k1 = f(t0, y)
    n_evals = 1
    h = h0 if h0 is not None else _initial_step(f, t0, y, k1, 1.0, 5, atol, rtol)
    n_evals += h0 is None
    h = min(h, max_step, t1 - t0)

    t = t0
    ts, ys = [t0], [y.copy()]
    n_steps = n_rejected = 0
    while t < t1:
        if n_steps + n_rejected >= max_steps:
            raise StepSizeError(f"maximum number of steps ({max_steps}) exceeded at t={t:.6g}")
        target = stops[next_stop]
        last = False
        if t + h >= target or (target - (t + h)) < 1e-12 * max(1.0, abs(target)):
            h = target - t
            last = True
        if h <= 16 * np.spacing(max(abs(t), 1.0)):
            raise StepSizeError(f"step size underflow at t={t:.17g} (h={h:.3e})")

        k2 = f(t + C2 * h, y + h * (A21 * k1))
        k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
        k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        y_new = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
        t_new = target if last else t + h
        k7 = f(t_new, y_new)
        n_evals += 6
        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        en = _error_norm(err, y, y_new, atol, rtol)

        if en <= 1.0 and np.all(np.isfinite(y_new)):
            diff = y_new - y
            bspl = h * k1 - diff
            coef = (y, diff, bspl, diff - h * k7 - bspl,
                    h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7))
            dense.append(t, h, coef)
            t, y, k1 = t_new, y_new, k7
            ts.append(t)
            ys.append(y.copy())
            n_steps += 1
            if last:
                next_stop += 1
            factor = max_factor if en == 0.0 else min(max_factor, max(min_factor, safety * en ** -0.2))
            h = min(h * factor, max_step)
        else:
            n_rejected += 1
            factor = min_factor if not np.isfinite(en) else max(min_factor, safety * en ** -0.2)
            h = h * min(1.0, factor)

    if t_eval is None:
        t_out, y_out = np.array(ts), np.array(ys)
    else:
        t_out = np.asarray(t_eval, dtype=float)
        if t_out.size and (t_out.min() < t0 or t_out.max() > t1):
            raise ValueError("t_eval outside t_span")
        y_out = np.array([y if ti == t1 else dense(ti) for ti in t_out]) if t_out.size else np.empty((0,) + y.shape)
    return IntegrationResult(t_out, y_out, n_steps, n_rejected, n_evals, "dopri5", dense)


def rk4(f, t_span, y0, n_steps):
    """Classical fourth-order Runge-Kutta with ``n_steps`` equal steps."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    h = (t1 - t0) / n_steps
    y = np.array(y0, dtype=float)
    ts, ys = [t0], [y.copy()]
    for i in range(n_steps):
        t = t0 + i * h
        a = f(t, y)
        b = f(t + h / 2, y + h / 2 * a)
        c = f(t + h / 2, y + h / 2 * b)
        d = f(t + h, y + h * c)
        y = y + h / 6 * (a + 2 * b + 2 * c + d)
        ts.append(t0 + (i + 1) * h)
        ys.append(y.copy())
    return IntegrationResult(np.array(ts), np.array(ys), n_steps, 0, 4 * n_steps, "rk4")
