import math

import numpy as np
import pytest

from oracles.reference_model import CONSTANT_SET, equilibrium, example_coefficients, reference_rhs
from percycle.errors import DomainError, InvalidCoefficientError
from percycle.model import (
    COEFFICIENT_NAMES,
    ParamSet,
    PeriodicCoefficient,
    coefficient_extrema,
    eval_coefficient,
    goldbeter_example,
    rhs,
    rhs_delayed,
)

C = PeriodicCoefficient.constant
S = PeriodicCoefficient.sinusoid
T = 2 * math.pi


# -- coefficients ------------------------------------------------------------

def test_constant_eval():
    assert eval_coefficient(C(2.0), 17.3) == 2.0


def test_sinusoid_eval_quarter_period():
    assert eval_coefficient(S(1.26, 0.2), math.pi / 2) == pytest.approx(1.46, abs=1e-15)


@pytest.mark.parametrize("coef", [
    C(2.0),
    S(1.26, 0.2),
    S(1.0, 0.5, omega=3.0, phase=0.3, period=T),
    PeriodicCoefficient.fourier(2.0, [(0.3, -0.2), (0.1, 0.05)], T),
    PeriodicCoefficient.table([1.0, 2.0, 1.5, 0.7], T),
])
def test_eval_is_periodic(coef):
    t = np.linspace(-20, 20, 101)
    np.testing.assert_allclose(coef(t + T), coef(t), rtol=0, atol=1e-13)


def test_table_needs_two_samples():
    with pytest.raises(InvalidCoefficientError):
        PeriodicCoefficient.table([1.0], T)


def test_table_interpolates_and_wraps():
    c = PeriodicCoefficient.table([1.0, 3.0], 2.0)
    assert c(0.5) == pytest.approx(2.0)
    assert c(1.5) == pytest.approx(2.0)  # wraps from 3 back to 1
    assert c(2.0) == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [
    lambda: C(0.0),
    lambda: C(-1.0),
    lambda: S(0.5, 0.6),
    lambda: S(1.0, 0.1, omega=1.5, period=T),
    lambda: PeriodicCoefficient.table([1.0, 0.0, 2.0], T),
    lambda: PeriodicCoefficient.fourier(0.1, [(1.0, 0.0)], T),
])
def test_rejects_nonpositive_or_aperiodic(bad):
    with pytest.raises(InvalidCoefficientError):
        bad()


def test_extrema_exact_kinds():
    assert coefficient_extrema(C(2.0)) == (2.0, 2.0)
    lo, hi = coefficient_extrema(S(1.26, 0.2))
    assert lo == pytest.approx(1.06, abs=1e-15) and hi == pytest.approx(1.46, abs=1e-15)


def test_extrema_table_against_dense_grid():
    n_samples = 4096
    ts = np.arange(n_samples) * T / n_samples
    c = PeriodicCoefficient.table(1.2 - np.cos(ts), T)
    lo, hi = coefficient_extrema(c, grid_n=2048)
    dense = c(np.linspace(0, T, 1_000_000))
    assert lo <= dense.min() and hi >= dense.max()
    assert lo == pytest.approx(0.2, abs=0.03) and hi == pytest.approx(2.2, abs=0.03)


def test_extrema_grid_floor():
    with pytest.raises(ValueError):
        coefficient_extrema(S(1.0, 0.2), grid_n=8)


def test_shifted_coefficients():
    for c in (S(1.0, 0.5, phase=0.2), PeriodicCoefficient.fourier(2.0, [(0.3, -0.2), (0.1, 0.4)], T)):
        t = np.linspace(0, 7, 31)
        np.testing.assert_allclose(c.shifted(1.3)(t), c(t + 1.3), atol=1e-13)


# -- ParamSet ----------------------------------------------------------------

def test_paramset_validation(example):
    with pytest.raises(InvalidCoefficientError):
        ParamSet(**example.coefficients(), n=0)
    with pytest.raises(InvalidCoefficientError):
        ParamSet(**example.coefficients(), n=2.5)
    with pytest.raises(InvalidCoefficientError):
        ParamSet(**example.coefficients(), T=-1.0)
    with pytest.raises(InvalidCoefficientError):
        ParamSet(**example.coefficients(), tau=T)
    with pytest.raises(InvalidCoefficientError):
        example.with_coefficient("V_S", S(1.26, 0.2, omega=2.0, period=math.pi))


def test_paramset_has_all_coefficients(example):
    assert tuple(example.coefficients()) == COEFFICIENT_NAMES
    assert len(COEFFICIENT_NAMES) == 17


# -- rhs -----------------------------------------------------------------------

def test_rhs_at_origin(example):
    for t in (0.0, 1.1, 4.0):
        out = rhs(example, t, np.zeros(5))
        np.testing.assert_array_equal(out[1:], 0.0)
        assert out[0] == pytest.approx(example.V_S(t), abs=1e-15)


def test_rhs_matches_transcription_at_center(example, example_box):
    x = example_box.center
    ours = rhs(example, 0.0, x)
    c = example_coefficients(0.0)
    ref = reference_rhs(c, x, 4)
    # P2 and PN rates at the center cancel terms of size k_1 * P2 ~ 1e8, so
    # agreement is judged relative to the largest term in each sum.
    scale = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    scale[3:] = max(c["k_1"] * x[3], c["k_2"] * x[4])
    scale = np.maximum(scale, np.abs(ref))
    assert np.all(np.abs(ours - ref) <= 1e-12 * scale)
    np.testing.assert_allclose(ours[:3], ref[:3], rtol=1e-12, atol=0)


def test_rhs_matches_transcription_random(example, rng):
    for _ in range(200):
        t = rng.uniform(-10, 10)
        x = rng.lognormal(-1, 1.5, 5)
        np.testing.assert_allclose(rhs(example, t, x),
                                   reference_rhs(example_coefficients(t), x, 4),
                                   rtol=1e-11, atol=1e-13)


def test_rhs_vanishes_at_equilibrium(constant_params):
    x = equilibrium(CONSTANT_SET)
    np.testing.assert_allclose(rhs(constant_params, 0.3, x), 0.0, atol=1e-10)


def test_rhs_batched_matches_loop(example, rng):
    xs = rng.uniform(0, 3, (5, 7))
    batch = rhs(example, 0.4, xs)
    for j in range(7):
        np.testing.assert_allclose(batch[:, j], rhs(example, 0.4, xs[:, j]), rtol=1e-15)


def test_rhs_clamps_tiny_negative(example):
    x = np.array([1.0, 0.1, 0.1, -1e-13, 0.2])
    np.testing.assert_array_equal(rhs(example, 0.0, x), rhs(example, 0.0, np.maximum(x, 0)))


@pytest.mark.parametrize("bad", [
    [1.0, 0.1, 0.1, -1e-6, 0.2],
    [1.0, np.nan, 0.1, 0.1, 0.2],
    [np.inf, 0.1, 0.1, 0.1, 0.2],
])
def test_rhs_domain_errors(example, bad):
    with pytest.raises(DomainError):
        rhs(example, 0.0, np.array(bad))


def test_hill_exponent_integer_power(example):
    x = np.array([1.0, 0.1, 0.1, 0.1, 0.7])
    for n in (1, 2, 4, 7):
        p = ParamSet(**example.coefficients(), n=n)
        c = example_coefficients(0.9)
        assert rhs(p, 0.9, x)[0] == pytest.approx(reference_rhs(c, x, n)[0], rel=1e-13)


def test_rhs_periodic_in_time(example, rng):
    for _ in range(50):
        t, x = rng.uniform(-5, 5), rng.uniform(0, 4, 5)
        np.testing.assert_allclose(rhs(example, t + T, x), rhs(example, t, x), rtol=1e-12, atol=1e-12)


def test_first_component_decreasing_in_M_and_PN(example, rng):
    for _ in range(100):
        t, x = rng.uniform(0, T), rng.uniform(0.01, 4, 5)
        base = rhs(example, t, x)[0]
        for i in (0, 4):
            bumped = x.copy()
            bumped[i] += 1e-4
            assert rhs(example, t, bumped)[0] < base


# -- delayed rhs -----------------------------------------------------------------

def test_delayed_reduces_to_rhs(example, rng):
    x = rng.uniform(0, 2, 5)
    np.testing.assert_array_equal(rhs_delayed(example, 0.7, x, x[4]), rhs(example, 0.7, x))


def test_delayed_limits(example):
    x = np.array([0.8, 0.1, 0.1, 0.1, 0.3])
    t = 1.3
    decay = example.V_m(t) * x[0] / (example.K_m1(t) + x[0])
    assert rhs_delayed(example, t, x, 0.0)[0] == pytest.approx(example.V_S(t) - decay, rel=1e-14)
    assert rhs_delayed(example, t, x, 1e8)[0] == pytest.approx(-decay, rel=1e-12)
    with pytest.raises(DomainError):
        rhs_delayed(example, t, x, -1.0)


def test_example_is_builtin_set():
    p = goldbeter_example()
    assert p.n == 4 and p.T == pytest.approx(T) and p.tau == 0.0
    assert (p.V_1.value, p.V_3.value, p.K_3.value, p.V_d.value, p.k_2.value, p.K_s.value) == \
        (7.2, 10.0, 0.4, 7.35, 1.3, 0.38)
