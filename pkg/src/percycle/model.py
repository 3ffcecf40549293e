"""Periodic coefficients and the right-hand side of the forced PER model.

State vectors are ordered ``(M, P0, P1, P2, PN)``: mRNA, the three cytosolic
phosphorylation states of PER and nuclear PER. Every coefficient of the
model is a strictly positive T-periodic function of time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidCoefficientError

STATE_NAMES = ("M", "P0", "P1", "P2", "PN")

COEFFICIENT_NAMES = (
    "V_S", "V_m", "V_1", "V_2", "V_3", "V_4", "V_d",
    "K_I", "K_1", "K_2", "K_3", "K_4", "K_d", "K_m1", "K_s",
    "k_1", "k_2",
)

KINDS = ("constant", "sinusoid", "fourier", "table")

# integrator overshoot below zero that is silently clamped
NEGATIVE_CLAMP = 1e-12

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PeriodicCoefficient:
    """A strictly positive periodic scalar function of time.

    Use the ``constant``, ``sinusoid``, ``fourier`` and ``table``
    constructors rather than the raw dataclass signature.

    * constant: ``value``
    * sinusoid: ``offset + amplitude * sin(omega * t + phase)``
    * fourier: ``offset + sum_k a_k cos(k w t) + b_k sin(k w t)``, ``w = 2 pi / period``
    * table: ``samples[i]`` at ``t = i * period / len(samples)``, linear
      interpolation with periodic wraparound
    """

    kind: str
    value: float = 0.0
    offset: float = 0.0
    amplitude: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    harmonics: tuple = ()
    samples: tuple = ()
    period: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidCoefficientError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "table" and len(self.samples) < 2:
            raise InvalidCoefficientError("table coefficient needs at least 2 samples")
        if self.kind != "constant":
            if self.period is None or not (self.period > 0 and math.isfinite(self.period)):
                raise InvalidCoefficientError(f"{self.kind} coefficient needs a positive period")
        if self.kind == "sinusoid":
            cycles = self.omega * self.period / TWO_PI
            if abs(self.omega) > 0 and (round(cycles) < 1 or abs(cycles - round(cycles)) > 1e-9 * max(1.0, cycles)):
                raise InvalidCoefficientError(
                    f"sinusoid with omega={self.omega} is not periodic with period {self.period}"
                )
        values = self._positivity_probe()
        if not np.all(np.isfinite(values)):
            raise InvalidCoefficientError("coefficient is not finite")
        if np.min(values) <= 0.0:
            raise InvalidCoefficientError(
                f"{self.kind} coefficient is not strictly positive (min {np.min(values):.6g})"
            )

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def sinusoid(cls, offset, amplitude, omega=1.0, phase=0.0, period=None):
        if period is None:
            period = TWO_PI / abs(omega) if omega else TWO_PI
        return cls("sinusoid", offset=float(offset), amplitude=float(amplitude),
                   omega=float(omega), phase=float(phase), period=float(period))

    @classmethod
    def fourier(cls, offset, harmonics, period):
        harmonics = tuple((float(a), float(b)) for a, b in harmonics)
        return cls("fourier", offset=float(offset), harmonics=harmonics, period=float(period))

    @classmethod
    def table(cls, samples, period):
        return cls("table", samples=tuple(float(s) for s in samples), period=float(period))

    # -- evaluation -------------------------------------------------------
    def _positivity_probe(self):
        if self.kind == "constant":
            return np.array([self.value])
        if self.kind == "sinusoid":
            return np.array([self.offset - abs(self.amplitude), self.offset + abs(self.amplitude)])
        if self.kind == "table":
            return np.asarray(self.samples)
        return self.raw(np.linspace(0.0, self.period, 4096, endpoint=False))

    def raw(self, t):
        """Evaluate without broadcasting constants (scalars stay scalars)."""
        kind = self.kind
        if kind == "constant":
            return self.value
        tr = np.mod(t, self.period)
        if kind == "sinusoid":
            return self.offset + self.amplitude * np.sin(self.omega * tr + self.phase)
        if kind == "fourier":
            w = TWO_PI / self.period
            out = self.offset
            for k, (a, b) in enumerate(self.harmonics, start=1):
                out = out + a * np.cos(k * w * tr) + b * np.sin(k * w * tr)
            return out
        samples = np.asarray(self.samples)
        n = samples.size
        s = tr / self.period * n
        i = np.floor(s).astype(int) % n
        frac = s - np.floor(s)
        return samples[i] + frac * (samples[(i + 1) % n] - samples[i])

    def __call__(self, t):
        out = self.raw(t)
        if np.ndim(t) and np.ndim(out) == 0:
            return np.full(np.shape(t), out)
        return out

    def shifted(self, dt):
        """Return ``t -> self(t + dt)``."""
        if self.kind == "constant":
            return self
        if self.kind == "sinusoid":
            return replace(self, phase=self.phase + self.omega * math.fmod(dt, self.period))
        if self.kind == "fourier":
            w = TWO_PI / self.period
            d = math.fmod(dt, self.period)
            harmonics = []
            for k, (a, b) in enumerate(self.harmonics, start=1):
                c, s = math.cos(k * w * d), math.sin(k * w * d)
                harmonics.append((a * c + b * s, b * c - a * s))
            return replace(self, harmonics=tuple(harmonics))
        n = len(self.samples)
        steps = dt / self.period * n
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidCoefficientError("table coefficients shift only by whole sample spacings")
        k = int(round(steps)) % n
        return replace(self, samples=self.samples[k:] + self.samples[:k])

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", "offset": self.offset, "amplitude": self.amplitude,
                    "omega": self.omega, "phase": self.phase, "period": self.period}
        if self.kind == "fourier":
            return {"kind": "fourier", "offset": self.offset,
                    "harmonics": [list(h) for h in self.harmonics], "period": self.period}
        return {"kind": "table", "samples": list(self.samples), "period": self.period}


def eval_coefficient(c: PeriodicCoefficient, t):
    return c(t)


def coefficient_extrema(c: PeriodicCoefficient, grid_n: int = 2048, margin: float = 0.01):
    """Lower and upper bounds of ``c`` over one period.

    Constant and sinusoid kinds are exact. Fourier and table kinds use the
    extrema on a uniform grid widened by ``margin * (hi - lo)``; the widened
    lower value is floored at half the grid minimum so it stays positive.
    """
    if grid_n < 16:
        raise ValueError("grid_n must be at least 16")
    if c.kind == "constant":
        return c.value, c.value
    if c.kind == "sinusoid":
        a = abs(c.amplitude)
        return c.offset - a, c.offset + a
    t = np.arange(grid_n) * (c.period / grid_n)
    v = c(t)
    lo, hi = float(v.min()), float(v.max())
    pad = margin * (hi - lo)
    return max(lo - pad, 0.5 * lo), hi + pad


@dataclass(frozen=True)
class ParamSet:
    """All model coefficients plus Hill exponent ``n``, period ``T`` and delay ``tau``.

    ``K_I`` is the repression threshold of the Hill term; ``K_1`` is the
    Michaelis constant of the first phosphorylation step.
    """

    V_S: PeriodicCoefficient
    V_m: PeriodicCoefficient
    V_1: PeriodicCoefficient
    V_2: PeriodicCoefficient
    V_3: PeriodicCoefficient
    V_4: PeriodicCoefficient
    V_d: PeriodicCoefficient
    K_I: PeriodicCoefficient
    K_1: PeriodicCoefficient
    K_2: PeriodicCoefficient
    K_3: PeriodicCoefficient
    K_4: PeriodicCoefficient
    K_d: PeriodicCoefficient
    K_m1: PeriodicCoefficient
    K_s: PeriodicCoefficient
    k_1: PeriodicCoefficient
    k_2: PeriodicCoefficient
    n: int = 4
    T: float = TWO_PI
    tau: float = 0.0

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise InvalidCoefficientError(f"Hill exponent must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidCoefficientError(f"period T must be positive, got {self.T!r}")
        if not (0.0 <= self.tau < self.T):
            raise InvalidCoefficientError(f"delay tau must satisfy 0 <= tau < T, got {self.tau!r}")
        for name in COEFFICIENT_NAMES:
            c = getattr(self, name)
            if not isinstance(c, PeriodicCoefficient):
                raise InvalidCoefficientError(f"{name} is not a PeriodicCoefficient")
            if c.period is not None and not _same_period(c.period, self.T):
                raise InvalidCoefficientError(
                    f"{name} has period {c.period}, expected the shared period {self.T}"
                )

    @classmethod
    def from_mapping(cls, coefficients, n=4, T=TWO_PI, tau=0.0):
        missing = [k for k in COEFFICIENT_NAMES if k not in coefficients]
        if missing:
            raise InvalidCoefficientError(f"missing coefficients: {', '.join(missing)}")
        coefs = {}
        for k in COEFFICIENT_NAMES:
            v = coefficients[k]
            coefs[k] = v if isinstance(v, PeriodicCoefficient) else PeriodicCoefficient.constant(v)
        return cls(**coefs, n=n, T=T, tau=tau)

    def coefficients(self):
        return {name: getattr(self, name) for name in COEFFICIENT_NAMES}

    def values_at(self, t):
        """Coefficient values at ``t`` in ``COEFFICIENT_NAMES`` order."""
        return tuple(getattr(self, name).raw(t) for name in COEFFICIENT_NAMES)

    def with_coefficient(self, name, coefficient):
        if not isinstance(coefficient, PeriodicCoefficient):
            coefficient = PeriodicCoefficient.constant(coefficient)
        return replace(self, **{name: coefficient})

    def shifted(self, dt):
        return replace(self, **{k: c.shifted(dt) for k, c in self.coefficients().items()})


def _same_period(a, b):
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b))


def _ipow(x, n):
    out = x
    for _ in range(n - 1):
        out = out * x
    return out


def _checked_state(x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != 5:
        raise ValueError(f"state must have 5 components along axis 0, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("state has non-finite components")
    if np.any(x < -NEGATIVE_CLAMP):
        raise DomainError(f"state has negative components: min {x.min():.3e}")
    return np.maximum(x, 0.0)


def field_from_values(c, x, pn_hill, n):
    """Model right-hand side from precomputed coefficient values ``c``.

    ``x`` must already be clamped; ``pn_hill`` is the nuclear PER level fed
    to the Hill repression term. Arrays broadcast freely.
    """
    VS, Vm, V1, V2, V3, V4, Vd, KI, K1, K2, K3, K4, Kd, Km1, Ks, k1, k2 = c
    M, P0, P1, P2, PN = x
    with np.errstate(over="ignore"):
        hill = 1.0 / (1.0 + _ipow(pn_hill / KI, n))
    v1 = V1 * P0 / (K1 + P0)
    exchange = k1 * P2 - k2 * PN
    net_q = V3 * P1 / (K3 + P1) - P2 * (V4 / (K4 + P2) + Vd / (Kd + P2))
    dM = VS * hill - Vm * M / (Km1 + M)
    dP0 = Ks * M + V2 * P1 / (K2 + P1) - v1
    dP1 = v1 + V4 * P2 / (K4 + P2) - P1 * (V2 / (K2 + P1) + V3 / (K3 + P1))
    return np.array(np.broadcast_arrays(dM, dP0, dP1, net_q - exchange, exchange))


def rhs(p: ParamSet, t, x):
    """Right-hand side of the undelayed system at time ``t``.

    ``x`` may carry extra trailing axes (a batch of states); they broadcast
    against ``t``.
    """
    x = _checked_state(x)
    return field_from_values(p.values_at(t), x, x[4], p.n)


def rhs_delayed(p: ParamSet, t, x, pn_delayed):
    """As :func:`rhs`, with ``pn_delayed`` in place of PN in the Hill term."""
    x = _checked_state(x)
    pn_delayed = np.asarray(pn_delayed, dtype=float)
    if np.any(pn_delayed < -NEGATIVE_CLAMP) or np.any(np.isnan(pn_delayed)):
        raise DomainError("delayed PN must be nonnegative")
    return field_from_values(p.values_at(t), x, np.maximum(pn_delayed, 0.0), p.n)


def goldbeter_example(tau=0.0):
    """The forced parameter set used as the builtin example (period 2*pi).

    The threshold written K_0 in the source set is the Hill threshold K_I.
    """
    C = PeriodicCoefficient.constant
    S = PeriodicCoefficient.sinusoid
    half_pi = 0.5 * math.pi
    return ParamSet(
        V_S=S(1.26, 0.2),
        V_m=C(2.0),
        V_1=C(7.2),
        V_2=S(3.0, 1.0, phase=half_pi),
        V_3=C(10.0),
        V_4=S(3.0, 0.5),
        V_d=C(7.35),
        K_I=S(1.2, -1.0, phase=half_pi),
        K_1=C(1.0),
        K_2=C(5.0),
        K_3=C(0.4),
        K_4=C(2.0),
        K_d=C(0.2),
        K_m1=C(1.5),
        K_s=C(0.38),
        k_1=S(1.9, -0.3),
        k_2=C(1.3),
        n=4,
        T=TWO_PI,
        tau=tau,
    )


def example_history():
    """History on ``[-tau, 0]`` paired with :func:`goldbeter_example`."""
    def history(t):
        t = np.asarray(t, dtype=float)
        ones = np.ones_like(t)
        return np.array([1.0 - 0.44 * np.sin(t), 0.12 * ones, 0.16 * ones,
                         0.00215 * ones, 0.00327 * ones])
    return history
