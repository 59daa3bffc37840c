import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfcx, rgamma

from stochvolterra.special_functions import (
    MLParams,
    NonConvergenceError,
    c_alpha,
    gamma_fn,
    mittag_leffler,
)


def ml_oracle(beta, z, dps=60):
    """High-precision series sum, independent of the float implementation."""
    with mpmath.workdps(dps):
        zz, b = mpmath.mpf(z), mpmath.mpf(beta)
        total, n = mpmath.mpf(0), 0
        while True:
            t = zz**n / mpmath.gamma(b * n + 1)
            total += t
            if n > 10 and abs(t) < mpmath.mpf(10) ** (-dps + 5):
                return float(total)
            n += 1


def test_reflection_identity_on_99_point_grid():
    for a in np.linspace(0.01, 0.99, 99):
        ref = math.pi / math.sin(math.pi * a)
        assert abs(c_alpha(a) - ref) / c_alpha(a) <= 1e-12


def test_exponential_and_cosine_special_cases():
    assert abs(mittag_leffler(MLParams(1.0), -1.0) - math.exp(-1.0)) <= 1e-10
    assert abs(mittag_leffler(MLParams(2.0), -(math.pi / 2) ** 2)) <= 1e-10


@pytest.mark.parametrize("beta,z", [(1.5, -1.0), (1.5, -7.0), (0.5, -3.0), (0.8, -12.0),
                                    (1.2, -25.0), (1.9, -40.0), (1.0, 3.0), (1.5, 2.0)])
def test_matches_high_precision_series(beta, z):
    ref = ml_oracle(beta, z)
    assert abs(mittag_leffler(MLParams(beta), z) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_forward_and_backward_float_sums_agree():
    # E_1.5(-1): 200 terms in float, summed both ways
    terms = [(-1.0) ** n * float(rgamma(1.5 * n + 1.0)) for n in range(200)]
    fwd = sum(terms)
    bwd = sum(reversed(terms))
    val = mittag_leffler(MLParams(1.5), -1.0)
    assert abs(fwd - bwd) <= 1e-15
    assert abs(val - fwd) <= 1e-13


@given(st.floats(min_value=0.0, max_value=6.0))
@settings(max_examples=60, deadline=None)
def test_half_order_closed_form(x):
    # E_{1/2}(-x) = exp(x^2) erfc(x)
    assert abs(mittag_leffler(MLParams(0.5), -x) - erfcx(x)) <= 1e-12


@given(st.floats(min_value=0.0, max_value=7.0))
@settings(max_examples=60, deadline=None)
def test_order_two_is_cosine(x):
    assert abs(mittag_leffler(MLParams(2.0), -x * x) - math.cos(x)) <= 1e-11


@given(st.floats(min_value=0.0, max_value=50.0))
@settings(max_examples=60, deadline=None)
def test_order_one_is_exponential(x):
    assert abs(mittag_leffler(MLParams(1.0), -x) - math.exp(-x)) <= 1e-12


def test_array_input_matches_scalar_calls():
    z = np.array([[0.0, -0.5, -3.0], [-10.0, -20.0, 1.5]])
    p = MLParams(1.3)
    out = mittag_leffler(p, z)
    assert out.shape == z.shape
    for idx in np.ndindex(z.shape):
        assert out[idx] == pytest.approx(mittag_leffler(p, z[idx]), abs=1e-14)
    assert mittag_leffler(p, 0.0) == 1.0


def test_domain_and_convergence_errors():
    with pytest.raises(ValueError):
        mittag_leffler(MLParams(1.5), -50.5)
    with pytest.raises(ValueError):
        MLParams(0.0)
    with pytest.raises(ValueError):
        MLParams(2.5)
    with pytest.raises(NonConvergenceError):
        mittag_leffler(MLParams(1.0, max_terms=16), -20.0)


@given(st.floats(min_value=0.05, max_value=100.0))
@settings(max_examples=100, deadline=None)
def test_gamma_recurrence(x):
    assert gamma_fn(x + 1.0) == pytest.approx(x * gamma_fn(x), rel=1e-13)


def test_gamma_against_mpmath_and_domain():
    for x in (0.1, 0.3, 0.5, 0.7, 1.3, 2.5, 7.25, 20.0):
        assert gamma_fn(x) == pytest.approx(float(mpmath.gamma(x)), rel=1e-13)
    assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-15)
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            gamma_fn(bad)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            c_alpha(bad)
