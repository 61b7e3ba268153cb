import numpy as np
import pytest

from cloaklab import analytic_ball as ab
from cloaklab import mfs
from cloaklab.errors import CertificateError, ConfigurationError, DomainError
from cloaklab.fields import PointSourceSet, default_sources, helmholtz_residual, incident_field


@pytest.fixture(scope="module")
def cyl_model():
    src = default_sources(3)
    return mfs.solve_obstacle(mfs.CylinderGeom(0.2), 2.0, incident_field(src, 2.0))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        mfs.MfsConfig(n_theta=5)
    with pytest.raises(ConfigurationError):
        mfs.MfsConfig(proxy_scale_radial=1.2)
    d = mfs.MfsConfig().doubled()
    assert (d.n_theta, d.n_z, d.n_cap_rings) == (48, 96, 12)


def test_for_eps_scales_axial_resolution():
    assert mfs.MfsConfig.for_eps(0.025).n_z >= 2 * mfs.MfsConfig.for_eps(0.05).n_z - 2


def test_sphere_matches_series():
    geom = ab.BallGeom(0.2, 3)
    src = default_sources(3)
    m = mfs.solve_obstacle(geom, 2.0, incident_field(src, 2.0), mfs.MfsConfig())
    ser = ab.scattered_field(ab.solve_ball(geom, 2.0, src))
    x = np.array([[3.0, 1.0, -1.0], [0.0, 2.4, 0.5], [-4.0, 0.0, 0.0]])
    assert m.certified
    assert np.allclose(mfs.eval_scattered(m, x).value, ser(x).value, rtol=1e-6)


def test_cylinder_certificate_and_boundary(cyl_model, rng):
    m = cyl_model
    assert m.certified and m.residual_certificate < 2e-4
    # fresh boundary points on the lateral wall, away from the rim
    th = rng.uniform(0, 2 * np.pi, 50)
    z = rng.uniform(-0.4, 0.4, 50)
    pts = np.stack([0.2 * np.cos(th), 0.2 * np.sin(th), z], axis=1)
    tot = mfs.eval_total(m, pts).value
    inc = m.incident(pts).value
    assert np.max(np.abs(tot)) < 1e-3 * np.max(np.abs(inc))


def test_cylinder_field_solves_helmholtz(cyl_model):
    f = mfs.scattered_field(cyl_model)
    assert abs(helmholtz_residual(f, 2.0, np.array([0.7, 0.5, 0.2]), 1e-3)) < 1e-5


def test_ring_evaluation_matches_pointwise(cyl_model):
    f = mfs.scattered_field(cyl_model)
    rho, z, n_az = np.array([1.0, 2.5]), np.array([0.3, -1.0]), 8
    ring = f.on_rings(rho, z, n_az)
    th = 2 * np.pi * np.arange(n_az) / n_az
    pts = np.concatenate([np.stack([r * np.cos(th), r * np.sin(th), np.full(n_az, zz)], axis=1)
                          for r, zz in zip(rho, z)])
    assert np.allclose(np.ravel(ring.value), f(pts).value, rtol=1e-10, atol=1e-14)


def test_cylinder_reciprocity():
    a, b = np.array([2.5, 0.3, -0.4]), np.array([-1.2, 2.1, 0.7])
    geom = mfs.CylinderGeom(0.2)
    ma = mfs.solve_obstacle(geom, 2.0, incident_field(PointSourceSet.single(a), 2.0))
    mb = mfs.solve_obstacle(geom, 2.0, incident_field(PointSourceSet.single(b), 2.0))
    ua = mfs.eval_scattered(ma, b).value
    ub = mfs.eval_scattered(mb, a).value
    assert abs(ua - ub) < 1e-4 * abs(ua)


def test_coarse_config_fails_gate():
    geom = mfs.CylinderGeom(0.1)
    inc = incident_field(default_sources(3), 2.0)
    coarse = mfs.MfsConfig(n_theta=4, n_z=8)
    m = mfs.solve_obstacle(geom, 2.0, inc, coarse)
    assert not m.certified and m.notes
    with pytest.raises(CertificateError) as info:
        mfs.solve_obstacle(geom, 2.0, inc, coarse, raise_on_failure=True)
    assert info.value.payload.residual_certificate > 1e-3


def test_ring_flux_height_check(cyl_model):
    with pytest.raises(DomainError):
        mfs.ring_flux(cyl_model, 0.6, 16)
    rf = mfs.ring_flux(cyl_model, 0.0, 32)
    assert rf.samples.shape == (32,)
