import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from fracshe.covariance import (
    DISTRIBUTIONAL,
    bessel,
    check_pairing,
    dalang_check,
    eta,
    fbm,
    fbm_cell_integral,
    fractional,
    gamma_eval,
    kappa,
    lambda_eval,
    power_double_integral,
    riesz,
    riesz_point_regularized,
    white_space,
    white_time,
)
from fracshe.exceptions import ConfigurationError, DomainError, NotLocallyIntegrableError, SingularityError


def test_white_kernels_are_distributional():
    assert lambda_eval(white_space(), 0.3) is DISTRIBUTIONAL
    assert gamma_eval(white_time(), 0.3) is DISTRIBUTIONAL
    assert not DISTRIBUTIONAL


def test_riesz_value_and_singularity():
    assert lambda_eval(riesz(0.5), 4.0) == pytest.approx(0.5)
    with pytest.raises(SingularityError):
        lambda_eval(riesz(0.5), 0.0)


def test_bessel_matches_integral():
    k = bessel(1.5)
    r = 0.7
    nu_integrand = lambda y: y ** ((1.5 - 1) / 2) * np.exp(-y) * np.exp(-r * r / (4 * y))
    ref, _ = quad(nu_integrand, 0, np.inf)
    assert lambda_eval(k, r) == pytest.approx(ref, rel=1e-9)


def test_bessel_finite_at_zero_for_large_eta():
    assert np.isfinite(lambda_eval(bessel(3.0), 0.0))


@pytest.mark.parametrize(
    "kernel,alpha,holds",
    [
        (white_space(1), 2.0, True),
        (white_space(1), 0.8, False),
        (riesz(0.5), 2.0, True),
        (riesz(0.9), 0.8, False),
        (bessel(0.5), 1.0, True),
        (fractional(0.6), 1.0, True),
        (fractional(0.6, 0.6), 1.0, False),
    ],
)
def test_dalang(kernel, alpha, holds):
    assert dalang_check(kernel, alpha).holds is holds


def test_invalid_kernels():
    with pytest.raises(DomainError):
        riesz(1.2)
    with pytest.raises(DomainError):
        fbm(0.4)
    with pytest.raises(DomainError):
        fractional(0.3)


def test_pairing_rules():
    check_pairing(riesz(0.5), 2.0)
    with pytest.raises(DomainError):
        check_pairing(riesz(0.9), 0.8)
    with pytest.raises(ConfigurationError):
        check_pairing(bessel(1.0), 2.0)


def test_kappa_eta_closed_forms():
    k = fbm(0.75)
    for t in (0.1, 1.0, 3.0):
        num, _ = quad(lambda r: k.C_H * r ** (2 * k.H - 2), 0, t)
        assert kappa(k, t) == pytest.approx(2 * num, rel=1e-10)
        num3, _ = quad(lambda r: k.C_H * r ** (2 * k.H - 2), 0, t / 3)
        assert eta(k, t) == pytest.approx(num3, rel=1e-10)


def test_kappa_white_raises():
    with pytest.raises(NotLocallyIntegrableError):
        kappa(white_time(), 1.0)


def test_power_double_integral_matches_quadrature():
    s = 0.5
    ref, _ = dblquad(lambda z, y: abs(y - z) ** (-s), 0.1, 0.4, 0.5, 0.9)
    assert power_double_integral(s, 0.1, 0.4, 0.5, 0.9) == pytest.approx(ref, rel=1e-8)


def test_regularized_riesz_diagonal():
    h = 0.01
    assert riesz_point_regularized(0.5, 0.0, h) == pytest.approx(8.0 / 3.0 * h ** -0.5, rel=1e-12)


def test_regularized_riesz_far_field():
    assert riesz_point_regularized(0.5, 0.5, 1e-3) == pytest.approx(0.5 ** -0.5, rel=1e-5)


def test_fbm_step_variance():
    k = fbm(0.75)
    for dt in (0.01, 0.3):
        assert fbm_cell_integral(k, 0.0, dt, 0.0, dt) == pytest.approx(dt ** 1.5, rel=1e-12)
