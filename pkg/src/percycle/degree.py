"""Averaged field, face-sign certificate and Brouwer degree on the box.

The averaged field maps a constant state ``x`` to the period mean of the
right-hand side. If each component of it is negative on the upper face and
positive on the lower face of the box, the straight-line homotopy to
``center - x`` never vanishes on the boundary, so both maps share the
degree of ``x -> center - x``, which is ``(-1)**5``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quadrature import simpson_rule
from .bounds import Box5
from .errors import CertificateInvalidError
from .model import STATE_NAMES, ParamSet, _checked_state, field_from_values

DEFAULT_QUAD_N = 256
DEFAULT_FACE_GRID = 5
MARGINAL = 1e-9


class AveragedField:
    """Period mean of the right-hand side, with coefficient samples cached."""

    def __init__(self, p: ParamSet, quad_n: int = DEFAULT_QUAD_N):
        if quad_n < 8:
            raise ValueError("quad_n must be at least 8")
        self.p = p
        self.nodes, self.weights = simpson_rule(p.T, quad_n)
        # constant coefficients come back as scalars; give every one the time axis
        self._coefs = tuple(np.broadcast_to(v, self.nodes.shape) for v in p.values_at(self.nodes))

    def __call__(self, x):
        x = _checked_state(x)
        xe = x[..., np.newaxis]
        values = field_from_values(self._coefs, xe, xe[4], self.p.n)
        return values @ self.weights


def avg_field(p: ParamSet, x, quad_n: int = DEFAULT_QUAD_N):
    """``(1/T) * integral_0^T rhs(p, t, x) dt`` by composite Simpson.

    ``x`` has shape ``(5,)`` or ``(5, m)`` for a batch of states.
    """
    return AveragedField(p, quad_n)(x)


@dataclass(frozen=True)
class FaceCheck:
    coord: int  # 0-based state index
    side: str  # "lower" or "upper"
    required_sign: int
    worst_value: float
    worst_point: tuple
    passed: bool

    @property
    def marginal(self):
        return self.passed and abs(self.worst_value) < MARGINAL

    def to_dict(self):
        return {
            "coordinate": STATE_NAMES[self.coord],
            "side": self.side,
            "required_sign": "+" if self.required_sign > 0 else "-",
            "worst_value": self.worst_value,
            "worst_point": dict(zip(STATE_NAMES, self.worst_point)),
            "pass": self.passed,
            "marginal": self.marginal,
        }


@dataclass(frozen=True)
class HomotopyCheck:
    passed: bool
    min_norm: float
    worst_point: tuple
    worst_lambda: float

    def to_dict(self):
        return {"pass": self.passed, "min_norm": self.min_norm,
                "worst_point": dict(zip(STATE_NAMES, self.worst_point)),
                "worst_lambda": self.worst_lambda}


@dataclass(frozen=True)
class Certificate:
    faces: tuple
    homotopy: Optional[HomotopyCheck] = None
    degree: Optional[int] = None

    @property
    def verdict(self):
        return all(f.passed for f in self.faces)

    def to_dict(self):
        out = {
            "faces": [f.to_dict() for f in self.faces],
            "faces_passed": sum(f.passed for f in self.faces),
            "homotopy": None if self.homotopy is None else self.homotopy.to_dict(),
            "verdict": self.verdict,
        }
        if self.degree is not None:
            out["degree"] = self.degree
        return out


def face_lattice(box: Box5, coord: int, side: str, face_grid: int):
    """Points on one face: ``coord`` pinned, the other four on a uniform lattice."""
    axes = [np.linspace(box.lower[i], box.upper[i], face_grid) for i in range(5) if i != coord]
    grid = np.array(list(itertools.product(*axes))).T
    pinned = box.upper[coord] if side == "upper" else box.lower[coord]
    return np.insert(grid, coord, pinned, axis=0)


def face_sign_certificate(p: ParamSet, box: Box5, face_grid: int = DEFAULT_FACE_GRID,
                          quad_n: int = DEFAULT_QUAD_N) -> Certificate:
    """Sample each averaged component on its two opposite faces.

    Component ``j`` must be negative everywhere on the upper ``j`` face and
    positive everywhere on the lower one. The lattice includes corners.
    """
    if face_grid < 2:
        raise ValueError("face_grid must be at least 2")
    phi = AveragedField(p, quad_n)
    faces = []
    for j in range(5):
        for side, sign in (("upper", -1), ("lower", +1)):
            pts = face_lattice(box, j, side, face_grid)
            vals = phi(pts)[j]
            k = int(np.argmax(-sign * vals))
            worst = float(vals[k])
            faces.append(FaceCheck(j, side, sign, worst, tuple(pts[:, k].tolist()),
                                   bool(sign * worst > 0)))
    return Certificate(tuple(faces))


def boundary_lattice(box: Box5, grid: int):
    return np.concatenate([face_lattice(box, j, side, grid)
                           for j in range(5) for side in ("upper", "lower")], axis=1)


def homotopy_nonvanish(p: ParamSet, box: Box5, lambda_grid: int = 11, boundary_grid: int = 5,
                       quad_n: int = DEFAULT_QUAD_N, floor: float = 1e-12) -> HomotopyCheck:
    """Smallest sup-norm of ``(1 - lam) (center - x) + lam phi(x)`` on the sampled boundary."""
    pts = boundary_lattice(box, boundary_grid)
    phi = AveragedField(p, quad_n)(pts)
    shift = box.center[:, np.newaxis] - pts
    best = (np.inf, 0, 0.0)
    for lam in np.linspace(0.0, 1.0, lambda_grid):
        norms = np.max(np.abs((1.0 - lam) * shift + lam * phi), axis=0)
        k = int(np.argmin(norms))
        if norms[k] < best[0]:
            best = (float(norms[k]), k, float(lam))
    min_norm, k, lam = best
    return HomotopyCheck(bool(min_norm > floor), min_norm, tuple(pts[:, k].tolist()), lam)


def degree_value(cert: Certificate) -> int:
    """Degree of the averaged field on the box; defined only for a passing certificate."""
    if not cert.verdict:
        failed = [f"{STATE_NAMES[f.coord]}/{f.side}" for f in cert.faces if not f.passed]
        raise CertificateInvalidError(f"face certificate failed on: {', '.join(failed)}")
    return int(round(np.linalg.det(-np.eye(5))))


def certify(p: ParamSet, box: Box5, face_grid: int = DEFAULT_FACE_GRID, quad_n: int = DEFAULT_QUAD_N,
            lambda_grid: int = 11, boundary_grid: int = 5, floor: float = 1e-12) -> Certificate:
    """Face signs, then the homotopy check, then the degree if the faces pass."""
    cert = face_sign_certificate(p, box, face_grid, quad_n)
    homotopy = homotopy_nonvanish(p, box, lambda_grid, boundary_grid, quad_n, floor)
    degree = degree_value(cert) if cert.verdict else None
    return Certificate(cert.faces, homotopy, degree)
