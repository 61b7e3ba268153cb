import mpmath
import numpy as np
import pytest

from cloaklab import numkit as nk
from cloaklab.errors import ConfigurationError, DomainError

mpmath.mp.dps = 30


@pytest.mark.parametrize("kind,ref", [
    ("J", lambda n, z: mpmath.besselj(n, z)),
    ("Y", lambda n, z: mpmath.bessely(n, z)),
    ("H1", lambda n, z: mpmath.hankel1(n, z)),
    ("sph_j", lambda n, z: mpmath.sqrt(mpmath.pi / (2 * z)) * mpmath.besselj(n + 0.5, z)),
    ("sph_y", lambda n, z: mpmath.sqrt(mpmath.pi / (2 * z)) * mpmath.bessely(n + 0.5, z)),
])
@pytest.mark.parametrize("n,z", [(0, 0.3), (1, 2.0), (5, 7.5), (12, 40.0)])
def test_bessel_against_mpmath(kind, ref, n, z):
    want = complex(ref(n, z))
    assert abs(nk.bessel(kind, n, z) - want) <= 1e-12 * abs(want)


def test_sph_h1_derivative_matches_mpmath():
    for n in (0, 3, 8):
        z = 1.7
        f = lambda t: mpmath.sqrt(mpmath.pi / (2 * t)) * mpmath.hankel1(n + 0.5, t)
        h, hp = nk.sph_h1(n, z)
        assert abs(h - complex(f(z))) < 1e-12 * abs(h)
        assert abs(hp - complex(mpmath.diff(f, z))) < 1e-11 * abs(hp)


def test_bessel_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        nk.bessel("K", 0, 1.0)
    with pytest.raises((ConfigurationError, DomainError)):
        nk.bessel("J", 0, -1.0)
    with pytest.raises((ConfigurationError, DomainError)):
        nk.bessel("J", nk.MAX_BESSEL_ORDER + 1, 1.0)


def test_gauss_legendre_integrates_polynomials_exactly():
    r = nk.gauss_legendre(6, 0.0, 2.0)
    for p in range(12):
        assert np.isclose(np.sum(r.weights * r.nodes**p), 2.0 ** (p + 1) / (p + 1), rtol=1e-13)


def test_composite_rule_handles_kink():
    r = nk.composite_gauss_legendre([-1.0, 0.3, 1.0], 8)
    assert np.isclose(np.sum(r.weights * np.abs(r.nodes - 0.3)), (1.3**2 + 0.7**2) / 2, rtol=1e-13)


def test_periodic_trapezoid_is_spectral():
    r = nk.periodic_trapezoid(16)
    val = np.sum(r.weights * np.exp(np.cos(r.nodes)))
    assert np.isclose(val, 2 * np.pi * float(mpmath.besseli(0, 1)), rtol=1e-14)


def test_sphere_rule_area_and_moment():
    pts, w = nk.sphere_rule(16, 12)
    assert np.isclose(w.sum(), 4 * np.pi, rtol=1e-13)
    assert np.isclose(np.sum(w * pts[:, 2] ** 2), 4 * np.pi / 3, rtol=1e-13)


def test_fibonacci_sphere_unit_norm():
    p = nk.fibonacci_sphere(101)
    assert p.shape == (101, 3)
    assert np.allclose(np.linalg.norm(p, axis=1), 1.0)


def test_legendre_matches_mpmath():
    for n in (0, 1, 4, 9):
        assert np.isclose(nk.legendre_p(n, 0.37), float(mpmath.legendre(n, 0.37)), atol=1e-14)
    t = np.linspace(-1, 1, 7)
    p, dp = nk.legendre_table(5, t)
    assert np.allclose(p[5], [float(mpmath.legendre(5, v)) for v in t], atol=1e-14)
    want = [float(mpmath.diff(lambda s: mpmath.legendre(5, s), v)) for v in t]
    assert np.allclose(dp[5], want, atol=1e-12)


def test_lstsq_tikhonov_recovers_solution(rng):
    A = rng.normal(size=(40, 10)) + 1j * rng.normal(size=(40, 10))
    x = rng.normal(size=10) + 0j
    sol = nk.lstsq_tikhonov(A, A @ x, lam=0.0)
    assert np.allclose(sol.x, x, atol=1e-12)
    assert not sol.escalated


def test_lstsq_tikhonov_escalates_on_singular_matrix(rng):
    A = rng.normal(size=(20, 5))
    A[:, 4] = A[:, 3]
    sol = nk.lstsq_tikhonov(A, rng.normal(size=20), lam=0.0, cond_limit=1e12)
    assert sol.escalated and sol.lam > 0 and np.all(np.isfinite(sol.x))


def test_lstsq_tikhonov_shape_check():
    with pytest.raises(ConfigurationError):
        nk.lstsq_tikhonov(np.ones((3, 2)), np.ones(4))


def test_fit_rates_recovers_power_and_log_laws():
    eps = np.array([0.2, 0.1, 0.05, 0.025])
    f = nk.fit_rates(eps, 3 * eps**1.5)
    assert np.isclose(f.power_slope, 1.5) and f.preferred == "power"
    g = nk.fit_rates(eps, 2 / np.abs(np.log(eps)) ** 0.7)
    assert np.isclose(g.log_slope, 0.7) and g.preferred == "log"


def test_fit_rates_validation():
    with pytest.raises(ConfigurationError):
        nk.fit_rates([0.2, 0.1], [1, 2])
    with pytest.raises(ConfigurationError):
        nk.fit_rates([0.1, 0.2, 0.05], [1, 2, 3])
