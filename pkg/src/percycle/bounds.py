"""A priori bounds for positive periodic solutions and the box built from them.

Upper bounds come from extremum arguments (at a maximum of a component its
derivative vanishes), lower bounds from the symmetric argument at a minimum.
Together they define a box in state space whose center anchors the degree
computation in :mod:`percycle.degree`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._quadrature import simpson_rule
from .errors import BoundsUnavailableError, HypothesisError, NoSolutionError
from .model import COEFFICIENT_NAMES, STATE_NAMES, ParamSet, coefficient_extrema

DEFAULT_GRID_N = 2048
DEFAULT_MARGIN = 0.01
DEFAULT_TOL = 1e-10


def invert_monotone(g: Callable[[float], float], target: float, tol: float = DEFAULT_TOL,
                    side: str = "nearest", max_doublings: int = 1100) -> float:
    """Solve ``g(x) = target`` for increasing ``g`` on ``[0, inf)``.

    The bracket starts at 1 and is grown (or shrunk) geometrically, then
    bisected to machine resolution. ``side`` picks which bracket end is
    returned: ``"below"`` guarantees ``g(x) <= target``, ``"above"``
    guarantees ``g(x) >= target``.

    Raises
    ------
    NoSolutionError
        If the bracket cannot be grown past ``target`` (target at or above
        the supremum of ``g``).
    """
    if not target > 0 or not math.isfinite(target):
        raise ValueError(f"target must be positive and finite, got {target!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if side not in ("nearest", "below", "above"):
        raise ValueError(f"unknown side {side!r}")

    x = 1.0
    gx = g(x)
    if gx < target:
        lo, hi = x, 2.0 * x
        ghi = g(hi)
        k = 1
        while ghi < target:
            k += 1
            if k > max_doublings or not math.isfinite(hi * 2.0):
                raise NoSolutionError(
                    f"target {target:.6g} not reached; supremum is about {ghi:.6g}", supremum=ghi
                )
            glo = ghi
            lo, hi = hi, 2.0 * hi
            ghi = g(hi)
            if not math.isfinite(ghi):
                # g overflowed before reaching the target: treat as unreachable
                raise NoSolutionError(
                    f"target {target:.6g} not reached; supremum is about {glo:.6g}", supremum=glo
                )
    else:
        hi, lo = x, 0.5 * x
        while g(lo) >= target:
            hi, lo = lo, 0.5 * lo
            if lo == 0.0:
                break

    for _ in range(2200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) < target:
            lo = mid
        else:
            hi = mid

    if side == "below":
        x = lo
    elif side == "above":
        x = hi
    else:
        x = lo if abs(g(lo) - target) <= abs(g(hi) - target) else hi
    if abs(g(x) - target) > tol * target:
        raise NoSolutionError(
            f"inversion stalled at x={x:.17g}: |g(x) - target| = {abs(g(x) - target):.3e}"
        )
    return x


@dataclass(frozen=True)
class ExtremaTable:
    """Per-coefficient ``(lo, hi)`` over one period."""

    lo: dict
    hi: dict
    grid_n: int
    margin: float

    def __getitem__(self, name):
        return self.lo[name], self.hi[name]

    def to_dict(self):
        return {name: [self.lo[name], self.hi[name]] for name in COEFFICIENT_NAMES}


def compute_extrema(p: ParamSet, grid_n: int = DEFAULT_GRID_N, margin: float = DEFAULT_MARGIN):
    lo, hi = {}, {}
    for name in COEFFICIENT_NAMES:
        lo[name], hi[name] = coefficient_extrema(getattr(p, name), grid_n, margin)
    return ExtremaTable(lo, hi, grid_n, margin)


def time_grid(p: ParamSet, grid_n: int = DEFAULT_GRID_N):
    return np.arange(grid_n) * (p.T / grid_n)


@dataclass(frozen=True)
class Envelopes:
    """Monotone envelopes of the P1 and P2 balance terms.

    ``g``/``h`` are grid minima over time (lower envelopes, used for upper
    bounds); ``g_bar``/``h_bar`` use worst-case extrema (upper envelopes,
    used for lower bounds).
    """

    g: Callable[[float], float]
    h: Callable[[float], float]
    g_bar: Callable[[float], float]
    h_bar: Callable[[float], float]
    sup_g: float
    sup_h: float
    sup_g_bar: float
    sup_h_bar: float


def envelopes(p: ParamSet, ext: ExtremaTable, grid_n: int = DEFAULT_GRID_N) -> Envelopes:
    t = time_grid(p, grid_n)
    V2, V3, V4, Vd = (np.broadcast_to(getattr(p, k)(t), t.shape)
                      for k in ("V_2", "V_3", "V_4", "V_d"))
    K2, K3, K4, Kd = (np.broadcast_to(getattr(p, k)(t), t.shape)
                      for k in ("K_2", "K_3", "K_4", "K_d"))
    V2_hi, V3_hi, V4_hi, Vd_hi = (ext.hi[k] for k in ("V_2", "V_3", "V_4", "V_d"))
    K2_lo, K3_lo, K4_lo, Kd_lo = (ext.lo[k] for k in ("K_2", "K_3", "K_4", "K_d"))

    def g(x):
        return float(np.min(x * (V2 / (K2 + x) + V3 / (K3 + x))))

    def h(x):
        return float(np.min(x * (V4 / (K4 + x) + Vd / (Kd + x))))

    def g_bar(x):
        return x * (V2_hi / (K2_lo + x) + V3_hi / (K3_lo + x))

    def h_bar(x):
        return x * (V4_hi / (K4_lo + x) + Vd_hi / (Kd_lo + x))

    return Envelopes(g, h, g_bar, h_bar,
                     sup_g=float(np.min(V2 + V3)), sup_h=float(np.min(V4 + Vd)),
                     sup_g_bar=V2_hi + V3_hi, sup_h_bar=V4_hi + Vd_hi)


@dataclass(frozen=True)
class HypothesisResult:
    name: str
    status: str  # "pass", "fail" or "not-evaluated"
    left: Optional[float] = None
    right: Optional[float] = None

    @property
    def passed(self):
        return self.status == "pass"

    @property
    def margin(self):
        if self.left is None or self.right is None:
            return None
        return self.right - self.left

    def to_dict(self):
        return {"name": self.name, "status": self.status, "pass": self.passed,
                "left": self.left, "right": self.right, "margin": self.margin}


@dataclass(frozen=True)
class HypothesisReport:
    results: tuple

    @property
    def all_passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {"all_pass": self.all_passed, "hypotheses": [r.to_dict() for r in self.results]}


def _M_upper(ext):
    VS_hi = ext.hi["V_S"]
    return VS_hi * ext.hi["K_m1"] / (ext.lo["V_m"] - VS_hi)


def _P0_upper(ext, M_up):
    s = ext.hi["K_s"] * M_up + ext.hi["V_2"]
    return ext.hi["K_1"] * s / (ext.lo["V_1"] - s)


def _P1_target(ext, P0_up):
    return ext.hi["V_1"] * P0_up / (ext.lo["K_1"] + P0_up) + ext.hi["V_4"]


def _P2_target(ext, P1_up):
    return ext.hi["V_3"] * P1_up / (ext.lo["K_3"] + P1_up)


def check_hypotheses(p: ParamSet, ext: Optional[ExtremaTable] = None,
                     grid_n: int = DEFAULT_GRID_N, tol: float = DEFAULT_TOL) -> HypothesisReport:
    """Evaluate the four solvability conditions in order.

    A condition is only evaluated when all earlier ones pass, since it
    consumes bounds that exist only under them.
    """
    if ext is None:
        ext = compute_extrema(p, grid_n)
    results = []

    H1 = HypothesisResult("H1", "pass" if ext.lo["V_m"] > ext.hi["V_S"] else "fail",
                          left=ext.hi["V_S"], right=ext.lo["V_m"])
    results.append(H1)
    if not H1.passed:
        results += [HypothesisResult(k, "not-evaluated") for k in ("H2", "H3", "H4")]
        return HypothesisReport(tuple(results))

    M_up = _M_upper(ext)
    left = ext.hi["K_s"] * M_up + ext.hi["V_2"]
    H2 = HypothesisResult("H2", "pass" if left < ext.lo["V_1"] else "fail", left, ext.lo["V_1"])
    results.append(H2)
    if not H2.passed:
        results += [HypothesisResult(k, "not-evaluated") for k in ("H3", "H4")]
        return HypothesisReport(tuple(results))

    env = envelopes(p, ext, grid_n)
    P0_up = _P0_upper(ext, M_up)
    left = _P1_target(ext, P0_up)
    H3 = HypothesisResult("H3", "pass" if left < env.sup_g else "fail", left, env.sup_g)
    results.append(H3)
    if not H3.passed:
        results.append(HypothesisResult("H4", "not-evaluated"))
        return HypothesisReport(tuple(results))

    P1_up = invert_monotone(env.g, left, tol, side="above")
    left = _P2_target(ext, P1_up)
    results.append(HypothesisResult("H4", "pass" if left < env.sup_h else "fail", left, env.sup_h))
    return HypothesisReport(tuple(results))


@dataclass(frozen=True)
class UpperBounds:
    M: float
    P0: float
    P1: float
    P_tilde: float
    C: float
    P2: float
    PN: float
    growth: str
    growth_level: float
    growth_rate: float

    def as_array(self):
        return np.array([self.M, self.P0, self.P1, self.P2, self.PN])


@dataclass(frozen=True)
class LowerBounds:
    m: float
    p0: float
    p1: float
    p2_tilde: float
    p2: float
    pN: float

    def as_array(self):
        return np.array([self.m, self.p0, self.p1, self.p2, self.pN])


def _grid_max(p, grid_n, fn):
    t = time_grid(p, grid_n)
    c = {k: getattr(p, k)(t) for k in ("k_1", "V_4", "K_4", "V_d", "K_d")}
    return float(np.max(np.broadcast_to(fn(**c), t.shape)))


def decay_rate(p: ParamSet, grid_n: int = DEFAULT_GRID_N, level: float = 0.0) -> float:
    """Largest relative decay rate of P2 while ``P2 >= level``."""
    return _grid_max(p, grid_n, lambda k_1, V_4, K_4, V_d, K_d:
                     k_1 + V_4 / (K_4 + level) + V_d / (K_d + level))


def upper_bounds(p: ParamSet, ext: Optional[ExtremaTable] = None, grid_n: int = DEFAULT_GRID_N,
                 tol: float = DEFAULT_TOL, growth: str = "level") -> UpperBounds:
    """Upper bounds for all five components.

    ``growth`` chooses how the P2 peak is controlled between the times where
    P2 is known to be at most ``P_tilde``:

    * ``"global"``: ``P2 <= exp(C T) P_tilde`` with ``C`` the decay rate at
      ``P2 = 0``.
    * ``"level"``: ``P2 <= L exp(C_L T)`` where ``C_L`` is the decay rate
      valid while ``P2 >= L``; ``L >= P_tilde`` is chosen on a geometric
      grid to minimise the bound.
    """
    if ext is None:
        ext = compute_extrema(p, grid_n)
    report = check_hypotheses(p, ext, grid_n, tol)
    if not report.all_passed:
        failed = [r.name for r in report.results if not r.passed]
        raise HypothesisError(f"hypotheses not satisfied: {', '.join(failed)}", report)
    env = envelopes(p, ext, grid_n)

    M_up = _M_upper(ext)
    P0_up = _P0_upper(ext, M_up)
    try:
        P1_up = invert_monotone(env.g, _P1_target(ext, P0_up), tol, side="above")
        P_tilde = invert_monotone(env.h, _P2_target(ext, P1_up), tol, side="above")
    except NoSolutionError as exc:
        raise HypothesisError(f"hypothesis margin collapsed: {exc}", report) from exc

    C = decay_rate(p, grid_n)
    if growth == "global":
        level, rate = P_tilde, C
    elif growth == "level":
        best = None
        for k in range(0, 97):
            L = P_tilde * 2.0 ** (k / 4)
            C_L = decay_rate(p, grid_n, L)
            log_bound = math.log(L) + C_L * p.T
            if best is None or log_bound < best[0]:
                best = (log_bound, L, C_L)
        _, level, rate = best
    else:
        raise ValueError(f"unknown growth mode {growth!r}")

    P2_up = math.exp(rate * p.T) * level
    PN_up = ext.hi["k_1"] / ext.lo["k_2"] * P2_up
    if not math.isfinite(PN_up):
        raise BoundsUnavailableError("upper bound for P2 overflows double precision")
    return UpperBounds(M_up, P0_up, P1_up, P_tilde, C, P2_up, PN_up, growth, level, rate)


def lower_bounds(p: ParamSet, ext: ExtremaTable, uppers: UpperBounds,
                 grid_n: int = DEFAULT_GRID_N, tol: float = DEFAULT_TOL) -> LowerBounds:
    """Positive lower bounds, chained from M down to PN.

    Raises
    ------
    BoundsUnavailableError
        If an upper envelope cannot reach its target, or a bound underflows.
    """
    lo, hi = ext.lo, ext.hi
    env = envelopes(p, ext, grid_n)
    n = p.n
    try:
        ratio = (uppers.PN / lo["K_I"]) ** n
    except OverflowError:
        ratio = math.inf
    r = lo["V_S"] / (1.0 + ratio)
    m = lo["K_m1"] * r / (hi["V_m"] - r)

    s = lo["K_s"] * m
    p0 = lo["K_1"] * s / (hi["V_1"] - s)

    B = lo["V_1"] * p0 / (hi["K_1"] + p0)
    if not B < env.sup_g_bar:
        raise BoundsUnavailableError(f"P1 lower envelope: {B:.6g} >= V_2 + V_3 max {env.sup_g_bar:.6g}")
    p1 = _invert_lower(env.g_bar, B, tol, "P1")

    D = lo["V_3"] * p1 / (hi["K_3"] + p1)
    if not D < env.sup_h_bar:
        raise BoundsUnavailableError(f"P2 lower envelope: {D:.6g} >= V_4 + V_d max {env.sup_h_bar:.6g}")
    p2_tilde = _invert_lower(env.h_bar, D, tol, "P2")
    p2 = math.exp(-uppers.C * p.T) * p2_tilde
    pN = lo["k_1"] / hi["k_2"] * p2

    out = LowerBounds(m, p0, p1, p2_tilde, p2, pN)
    for name, value in zip(("m", "p0", "p1", "p2", "pN"), out.as_array()):
        if not value > 0:
            raise BoundsUnavailableError(f"lower bound {name} underflows to {value!r}")
    return out


def _invert_lower(fn, target, tol, label):
    if not target > 0:
        raise BoundsUnavailableError(f"{label} lower-bound target underflows to {target!r}")
    try:
        return invert_monotone(fn, target, tol, side="below")
    except NoSolutionError as exc:
        raise BoundsUnavailableError(f"{label} lower envelope: {exc}") from exc


@dataclass(frozen=True)
class ShrinkPolicy:
    factor: float = 0.5
    max_halvings: int = 60


@dataclass(frozen=True)
class Box5:
    """The box ``lower < x < upper`` in state space."""

    lower: np.ndarray
    upper: np.ndarray
    P_tilde: float
    C: float
    halvings: int = 0
    certified: bool = False
    uppers: Optional[UpperBounds] = field(default=None, compare=False)
    lowers: Optional[LowerBounds] = field(default=None, compare=False)

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != (5,) or upper.shape != (5,):
            raise ValueError("box bounds must be 5-vectors")
        if not (np.all(lower > 0) and np.all(lower < upper)):
            raise ValueError(f"box needs 0 < lower < upper, got {lower} / {upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def center(self):
        return (self.lower + self.upper) / 2

    def contains(self, x):
        x = np.asarray(x)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def to_dict(self):
        out = {
            "lower": dict(zip(STATE_NAMES, self.lower.tolist())),
            "upper": dict(zip(STATE_NAMES, self.upper.tolist())),
            "center": dict(zip(STATE_NAMES, self.center.tolist())),
            "P_tilde": self.P_tilde,
            "C": self.C,
            "halvings": self.halvings,
            "certified": self.certified,
        }
        if self.uppers is not None:
            u = self.uppers
            out["a_priori_upper"] = {"M": u.M, "P0": u.P0, "P1": u.P1, "P2": u.P2, "PN": u.PN,
                                     "growth": u.growth, "growth_level": u.growth_level,
                                     "growth_rate": u.growth_rate}
        if self.lowers is not None:
            lw = self.lowers
            out["a_priori_lower"] = {"M": lw.m, "P0": lw.p0, "P1": lw.p1, "P2_tilde": lw.p2_tilde,
                                     "P2": lw.p2, "PN": lw.pN}
        return out


def align_upper_corner(p: ParamSet, upper: np.ndarray, quad_n: int = 256) -> np.ndarray:
    """Enlarge the P2/PN upper bounds so both upper faces carry the right sign.

    On the corner ``P2 = U2, PN = UN`` the averaged P2 and PN rates are both
    required negative. That confines ``mean(k_2) UN - mean(k_1) U2`` to
    ``(0, H(U2) - A(U1))``, where ``H`` is the mean P2 loss and ``A`` the
    largest mean P1 -> P2 flux. Bounds only grow, so they stay valid.
    """
    nodes, w = simpson_rule(p.T, quad_n)
    k1 = w @ np.broadcast_to(p.k_1(nodes), nodes.shape)
    k2 = w @ np.broadcast_to(p.k_2(nodes), nodes.shape)
    V3, K3, V4, K4, Vd, Kd = (np.broadcast_to(getattr(p, k)(nodes), nodes.shape)
                              for k in ("V_3", "K_3", "V_4", "K_4", "V_d", "K_d"))
    U1, U2, UN = upper[2], upper[3], upper[4]
    A = w @ (V3 * U1 / (K3 + U1))
    H = w @ (U2 * (V4 / (K4 + U2) + Vd / (Kd + U2)))
    if not H > A:
        return upper
    delta = 0.5 * (H - A)
    U2_new = max(U2, (k2 * UN - delta) / k1)
    out = upper.copy()
    out[3] = U2_new
    out[4] = max(UN, (k1 * U2_new + delta) / k2)
    return out


def align_lower_corner(p: ParamSet, lower: np.ndarray, quad_n: int = 256) -> np.ndarray:
    """Shrink the P2/PN lower bounds so both lower faces carry the right sign.

    Mirror image of :func:`align_upper_corner`: requires
    ``0 < mean(k_1) l2 - mean(k_2) lN < A(l1) - H(l2)``. Bounds only shrink.
    """
    nodes, w = simpson_rule(p.T, quad_n)
    k1 = w @ np.broadcast_to(p.k_1(nodes), nodes.shape)
    k2 = w @ np.broadcast_to(p.k_2(nodes), nodes.shape)
    V3, K3, V4, K4, Vd, Kd = (np.broadcast_to(getattr(p, k)(nodes), nodes.shape)
                              for k in ("V_3", "K_3", "V_4", "K_4", "V_d", "K_d"))
    l1, l2, lN = lower[2], lower[3], lower[4]
    A = w @ (V3 * l1 / (K3 + l1))
    for _ in range(1100):
        H = w @ (l2 * (V4 / (K4 + l2) + Vd / (Kd + l2)))
        gap = A - H
        if gap > 0:
            delta = 0.5 * min(k1 * l2, gap)
            target = (k1 * l2 - delta) / k2
            if 0 < target <= lN:
                out = lower.copy()
                out[3], out[4] = l2, target
                return out
            if k1 * l2 - k2 * lN > 0 and k1 * l2 - k2 * lN < gap:
                return lower
        l2 *= 0.5
        if l2 == 0.0:
            break
    return lower


def build_box(p: ParamSet, grid_n: int = DEFAULT_GRID_N, shrink_policy: ShrinkPolicy = ShrinkPolicy(),
              *, quad_n: int = 256, face_grid: int = 5, margin: float = DEFAULT_MARGIN,
              tol: float = DEFAULT_TOL, growth: str = "level", align: bool = True) -> Box5:
    """Assemble the box from the a priori bounds and shrink it until certified.

    After the raw bounds are computed the P2/PN corners are aligned (see
    :func:`align_upper_corner`). While any lower face fails its sign check,
    all five lower bounds are multiplied by ``shrink_policy.factor``.
    Returns the first box whose faces all pass, otherwise the last box
    tried with ``certified=False``.
    """
    from .degree import face_sign_certificate

    ext = compute_extrema(p, grid_n, margin)
    uppers = upper_bounds(p, ext, grid_n, tol, growth)
    lowers = lower_bounds(p, ext, uppers, grid_n, tol)
    upper = uppers.as_array()
    lower = lowers.as_array()
    if align:
        upper = align_upper_corner(p, upper, quad_n)
        lower = align_lower_corner(p, lower, quad_n)

    halvings = 0
    while True:
        box = Box5(lower, upper, uppers.P_tilde, uppers.C, halvings, False, uppers, lowers)
        cert = face_sign_certificate(p, box, face_grid, quad_n)
        if cert.verdict:
            return Box5(lower, upper, uppers.P_tilde, uppers.C, halvings, True, uppers, lowers)
        lower_ok = all(f.passed for f in cert.faces if f.side == "lower")
        if lower_ok or halvings >= shrink_policy.max_halvings:
            return box
        lower = lower * shrink_policy.factor
        if align:
            lower = align_lower_corner(p, lower, quad_n)
        halvings += 1
