import math

import numpy as np
import pytest

from conftest import load_fixture
from oracles.reference_model import CONSTANT_SET, equilibrium, reference_rhs
from percycle._quadrature import simpson_rule
from percycle.bounds import Box5
from percycle.degree import (
    AveragedField,
    avg_field,
    certify,
    degree_value,
    face_lattice,
    face_sign_certificate,
    homotopy_nonvanish,
)
from percycle.errors import CertificateInvalidError
from percycle.model import PeriodicCoefficient, rhs

T = 2 * math.pi


def example_coefficient_arrays(t):
    return {
        "V_S": 0.2 * np.sin(t) + 1.26, "V_m": 2.0, "V_1": 7.2, "V_2": 3.0 + np.cos(t), "V_3": 10.0,
        "V_4": 3.0 + 0.5 * np.sin(t), "V_d": 7.35, "K_I": 1.2 - np.cos(t), "K_1": 1.0, "K_2": 5.0,
        "K_3": 0.4, "K_4": 2.0, "K_d": 0.2, "K_m1": 1.5, "K_s": 0.38, "k_1": 1.9 - 0.3 * np.sin(t),
        "k_2": 1.3,
    }


def trapezoid_mean(x, n=1_000_000):
    t = np.arange(n) * (T / n)  # periodic trapezoid: equal weights
    vals = reference_rhs(example_coefficient_arrays(t), x, 4)
    return np.array([np.mean(np.broadcast_to(v, t.shape)) for v in vals])


# -- averaged field ----------------------------------------------------------

def test_constant_coefficients_average_is_rhs(constant_params, rng):
    for _ in range(20):
        x = rng.uniform(0, 3, 5)
        np.testing.assert_allclose(avg_field(constant_params, x), rhs(constant_params, 0.0, x),
                                   rtol=1e-14, atol=1e-15)


def test_only_vs_varies(constant_params):
    p = constant_params.with_coefficient("V_S", PeriodicCoefficient.sinusoid(1.26, 0.2))
    x = np.array([0.9, 0.2, 0.1, 0.3, 0.5])
    hill = 1.2 ** 4 / (1.2 ** 4 + 0.5 ** 4)
    expected = 1.26 * hill - 2.0 * 0.9 / (1.5 + 0.9)
    assert avg_field(p, x)[0] == pytest.approx(expected, rel=1e-14)


def test_average_at_center_matches_trapezoid_oracle(example, example_box):
    x = example_box.center
    ours = avg_field(example, x)
    ref = trapezoid_mean(x)
    # P2/PN rates cancel terms ~ k_1 * P2 ~ 1e8; compare on that scale for those two
    scale = np.abs(ref)
    scale[3:] = np.maximum(scale[3:], 2.2 * x[3])
    assert np.all(np.abs(ours - ref) <= 1e-9 * scale)


def test_average_random_points_match_oracle(example, rng):
    for _ in range(5):
        x = rng.lognormal(-1, 1, 5)
        np.testing.assert_allclose(avg_field(example, x), trapezoid_mean(x, 100_000), rtol=1e-9, atol=1e-12)


def test_batched_average(example, rng):
    xs = rng.uniform(0, 2, (5, 9))
    batch = avg_field(example, xs)
    for j in range(9):
        np.testing.assert_allclose(batch[:, j], avg_field(example, xs[:, j]), rtol=1e-14)


def test_simpson_fourth_order_nonperiodic():
    errs = []
    for n in (8, 16, 32, 64):
        nodes, w = simpson_rule(1.0, n)
        errs.append(abs(w @ np.exp(nodes) - (math.e - 1)))
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert all(15.0 < r < 16.5 for r in ratios), ratios


def test_average_converges_at_least_fourth_order(example):
    x = np.array([1.0, 0.3, 0.2, 0.1, 0.4])
    vals = [avg_field(example, x, n) for n in (16, 32, 64, 128)]
    diffs = [np.max(np.abs(vals[i] - vals[i + 1])) for i in range(3)]
    # periodic smooth integrands converge faster than the rule's nominal order
    assert diffs[0] / diffs[1] >= 16 and diffs[1] / diffs[2] >= 16


def test_simpson_rounds_up_to_even():
    nodes, w = simpson_rule(T, 7)
    assert nodes.size == 9 and w.sum() == pytest.approx(1.0, rel=1e-15)


def test_quad_n_floor(example):
    with pytest.raises(ValueError):
        AveragedField(example, 4)


def test_average_q_sum_independent_of_k(example, rng):
    x = rng.uniform(0.01, 2, 5)
    base = avg_field(example, x)
    q = example.with_coefficient("k_1", PeriodicCoefficient.constant(4.0)).with_coefficient(
        "k_2", PeriodicCoefficient.sinusoid(2.0, 0.7))
    other = avg_field(q, x)
    assert other[3] + other[4] == pytest.approx(base[3] + base[4], abs=1e-14)


# -- face certificate ----------------------------------------------------------

def test_example_faces_all_pass(example, example_box):
    cert = face_sign_certificate(example, example_box)
    assert len(cert.faces) == 10 and cert.verdict
    for f in cert.faces:
        assert f.required_sign * f.worst_value > 0


def test_faces_hold_at_random_face_points(example, example_box, rng):
    """Independent check: random (non-lattice) face points, log-uniform in each coordinate."""
    b = example_box
    lo, hi = np.log(b.lower), np.log(b.upper)
    for j in range(5):
        for side, sign in (("upper", -1), ("lower", 1)):
            pts = np.exp(rng.uniform(lo[:, None], hi[:, None], (5, 200)))
            pts[j] = b.upper[j] if side == "upper" else b.lower[j]
            vals = np.array([trapezoid_mean(pts[:, k], 2048)[j] for k in range(pts.shape[1])])
            assert np.all(sign * vals > 0), (j, side)


def test_lattice_includes_corners(example_box):
    pts = face_lattice(example_box, 0, "upper", 3)
    assert pts.shape == (5, 81)
    assert np.all(pts[0] == example_box.upper[0])
    corners = {tuple(c) for c in pts[1:].T}
    assert tuple(example_box.lower[1:]) in corners and tuple(example_box.upper[1:]) in corners


def test_thin_box_fails_a_lower_face(example, example_box):
    bad = Box5(example_box.upper * 0.999, example_box.upper, 1.0, 1.0)
    cert = face_sign_certificate(example, bad)
    assert not cert.verdict
    assert any(not f.passed for f in cert.faces if f.side == "lower")


def test_constant_coefficient_faces_follow_pointwise_field(constant_params):
    eq = equilibrium(CONSTANT_SET)
    box = Box5(eq * 0.5, eq * 1.5, 1.0, 1.0)
    cert = face_sign_certificate(constant_params, box, face_grid=3)
    for f in cert.faces:
        x = np.array(f.worst_point)
        assert np.sign(rhs(constant_params, 0.0, x)[f.coord]) == np.sign(f.worst_value)


def test_enlarging_upper_m_keeps_face(example, example_box):
    up = example_box.upper.copy()
    up[0] *= 3
    bigger = Box5(example_box.lower, up, 1.0, 1.0)
    face = face_sign_certificate(example, bigger).faces[0]
    assert face.coord == 0 and face.side == "upper" and face.passed


# -- homotopy and degree ---------------------------------------------------------

def test_homotopy_lambda_zero_distance(example, example_box):
    chk = homotopy_nonvanish(example, example_box, lambda_grid=1)
    assert chk.worst_lambda == 0.0
    half_side = 0.5 * np.min(example_box.upper - example_box.lower)
    assert chk.min_norm >= half_side * (1 - 1e-12)


def test_homotopy_example(example, example_box):
    chk = homotopy_nonvanish(example, example_box)
    assert chk.passed and chk.min_norm > 0
    assert chk.min_norm == pytest.approx(load_fixture("example_run.json")["homotopy_min_norm"], rel=1e-9)


def test_certify_example(example, example_box):
    cert = certify(example, example_box)
    assert cert.verdict and cert.degree == -1 and cert.homotopy.passed
    assert cert.to_dict()["degree"] == -1


def test_degree_requires_passing_certificate(example, example_box):
    bad = Box5(example_box.upper * 0.999, example_box.upper, 1.0, 1.0)
    cert = certify(example, bad)
    assert cert.degree is None and "degree" not in cert.to_dict()
    with pytest.raises(CertificateInvalidError):
        degree_value(cert)


def test_reflection_degree():
    assert int(np.sign(np.linalg.det(-np.eye(5)))) == -1


def test_marginal_flag(example, example_box):
    cert = face_sign_certificate(example, example_box)
    d = cert.to_dict()
    assert d["faces_passed"] == 10
    assert all(f["marginal"] == (abs(f["worst_value"]) < 1e-9) for f in d["faces"])
