import mpmath
import numpy as np
import pytest

from cloaklab import analytic_ball as ab
from cloaklab.errors import ConfigurationError, DomainError
from cloaklab.fields import PointSourceSet, default_sources, finite_difference_grad, helmholtz_residual


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("eps", [0.2, 0.05])
def test_boundary_condition_and_truncation(dim, eps):
    m = ab.solve_ball(ab.BallGeom(eps, dim), 2.0, default_sources(dim))
    assert m.truncation_ok and m.residual <= 1e-8


@pytest.mark.parametrize("dim", [2, 3])
def test_reciprocity(dim):
    # scattered part of the obstacle Green's function is symmetric in its arguments
    a = np.array([2.5, 0.3, -0.4][:dim])
    b = np.array([-1.2, 2.1, 0.7][:dim])
    geom = ab.BallGeom(0.3, dim)
    ua = ab.eval_scattered(ab.solve_ball(geom, 2.0, PointSourceSet.single(a)), b).value
    ub = ab.eval_scattered(ab.solve_ball(geom, 2.0, PointSourceSet.single(b)), a).value
    assert abs(ua - ub) < 1e-12 * abs(ua)


@pytest.mark.parametrize("dim", [2, 3])
def test_gradient_and_helmholtz(dim):
    m = ab.solve_ball(ab.BallGeom(0.2, dim), 2.0, default_sources(dim))
    f = ab.scattered_field(m)
    x = np.array([0.9, -1.3, 0.4][:dim])
    assert np.allclose(f(x).grad, finite_difference_grad(f, x, 1e-6), rtol=1e-7, atol=1e-10)
    assert abs(helmholtz_residual(f, 2.0, x, 1e-3)) < 1e-6


def test_monopole_coefficient_by_mpmath():
    # far from the ball the 3-d response of a tiny ball is the n = 0 term
    eps, k, R = 0.01, 2.0, 2.5
    m = ab.solve_ball(ab.BallGeom(eps, 3), k, default_sources(3))
    j0 = mpmath.sin(k * eps) / (k * eps)
    h0 = -1j * mpmath.exp(1j * k * eps) / (k * eps)
    hs = -1j * mpmath.exp(1j * k * R) / (k * R)
    want = complex(-1j * k / (4 * mpmath.pi) * hs * j0 / h0)
    assert abs(m.coefficients[0, 0] - want) < 1e-13 * abs(want)


def test_sphere_flux_matches_quadrature():
    # constant data c on |x| = eps: v = c eps e^{ik(r - eps)} / r
    eps, k, c = 0.3, 2.0, 1.5 - 0.5j
    dv = c * eps * np.exp(0j) * (1j * k / eps - 1 / eps**2)
    want = 4 * np.pi * eps**2 * dv
    assert abs(ab.sphere_flux_average(ab.BallGeom(eps, 3), k, c) - want) < 1e-13 * abs(want)


def test_lowfreq_constant_closed_forms():
    for eps in (1e-1, 1e-2, 1e-3):
        assert np.isclose(abs(ab.lowfreq_constant(3, 2 * eps, 1.0, 1 / eps)), eps, rtol=1e-12)
    with pytest.raises(DomainError):
        ab.lowfreq_constant(3, 0.1, 1.0, 0.5)


def test_domain_checks():
    with pytest.raises(ConfigurationError):
        ab.BallGeom(1.5)
    m = ab.solve_ball(ab.BallGeom(0.2), 2.0, default_sources(3))
    with pytest.raises(DomainError):
        ab.eval_scattered(m, np.zeros(3))
    with pytest.raises(ConfigurationError):
        ab.solve_ball(ab.BallGeom(0.2, 2), 2.0, default_sources(3))
