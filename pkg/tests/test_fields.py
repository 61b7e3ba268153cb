import numpy as np
import pytest
from scipy import integrate

from cloaklab import fields as fl
from cloaklab.errors import ConfigurationError, DomainError, SingularityError


def test_source_set_domain_checks():
    with pytest.raises(DomainError):
        fl.PointSourceSet.single([1.0, 0.0, 0.0])
    with pytest.raises(ConfigurationError):
        fl.PointSourceSet(np.zeros((0, 3)), np.zeros(0))


@pytest.mark.parametrize("d", [2, 3])
def test_green_gradient_matches_finite_differences(d):
    y = np.array([2.5, 0.3, -0.2][:d])
    x = np.array([0.4, -0.7, 0.9][:d])
    g = fl.green(2.0, d, x, y)
    fd = fl.finite_difference_grad(lambda p: fl.green(2.0, d, p, y), x, 1e-6)
    assert np.allclose(g.grad, fd, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("d", [2, 3])
def test_green_solves_helmholtz(d):
    y = np.array([2.5, 0.0, 0.0][:d])
    x = np.array([0.1, 0.5, 0.2][:d])
    res = fl.helmholtz_residual(lambda p: fl.green(2.0, d, p, y), 2.0, x, 1e-3)
    assert abs(res) < 1e-5


def test_green_at_source_raises():
    with pytest.raises(SingularityError):
        fl.green(1.0, 3, np.zeros(3), np.zeros(3))


def test_green_matrix_agrees_with_green(rng):
    x = rng.normal(size=(5, 3))
    y = 3 + rng.normal(size=(4, 3))
    G, dG = fl.green_matrix(1.5, 3, x, y)
    for j in range(4):
        g = fl.green(1.5, 3, x, y[j])
        assert np.allclose(G[:, j], g.value) and np.allclose(dG[:, j], g.grad)


def test_plane_wave_requires_unit_direction():
    with pytest.raises(ConfigurationError):
        fl.plane_wave(1.0, [1.0, 1.0, 0.0], np.zeros(3))


def test_radial_bump_outside_equals_point_source():
    src = fl.RadialBumpSource([2.5, 0.0, 0.0], 0.4, 2.0)
    x = np.array([[0.0, 0.0, 0.0], [-1.0, 0.5, 0.3]])
    eq = fl.incident(src.equivalent_point(), 2.0, 3, x)
    got = src(x)
    assert np.allclose(got.value, eq.value, rtol=1e-12)
    assert np.allclose(got.grad, eq.grad, rtol=1e-12)


def test_radial_bump_equivalent_amplitude_by_quadrature():
    k, w = 2.0, 0.4
    src = fl.RadialBumpSource([2.5, 0.0, 0.0], w, k)
    f = lambda s: np.exp(-1 / (1 - s**2 / w**2)) * s**2 * np.sinc(k * s / np.pi)
    want = 4 * np.pi * integrate.quad(f, 0, w, epsabs=1e-14)[0]
    assert np.isclose(src.equivalent_amplitude, want, rtol=1e-10)


def test_radial_bump_solves_inhomogeneous_equation():
    src = fl.RadialBumpSource([2.5, 0.0, 0.0], 0.4, 2.0)
    x = np.array([2.6, 0.05, -0.1])
    res = fl.helmholtz_residual(src, 2.0, x, 1e-3)
    assert abs(res + src.profile(np.linalg.norm(x - src.center))) < 1e-4
