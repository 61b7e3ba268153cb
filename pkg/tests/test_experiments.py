import numpy as np
import pytest

from cloaklab import experiments as ex
from cloaklab import mfs
from cloaklab.errors import AccuracyError, CertificateError, ConfigurationError, DomainError
from cloaklab.fields import FieldSample, RadialBumpSource, green, plane_wave


def test_annulus_norm_of_plane_wave_is_exact():
    # |v|^2 + |grad v|^2 = 1 + k^2 pointwise
    ann = ex.Annulus()
    n = ex.h1_annulus_norm(lambda x: plane_wave(2.0, [0.0, 0.6, 0.8], x), ann, 2)
    assert n == pytest.approx(np.sqrt(5.0 * ann.volume), rel=1e-12)


def test_annulus_norm_2d_radial_function():
    # v = r^2: int (r^4 + 4 r^2) 2 pi r dr over (2, 5)
    ann = ex.Annulus(dim=2)
    f = lambda x: FieldSample(np.sum(x**2, axis=1) + 0j, 2 * x + 0j)
    want = 2 * np.pi * ((5**6 - 2**6) / 6 + (5**4 - 2**4))
    assert ex.h1_annulus_norm(f, ann, 1) == pytest.approx(np.sqrt(want), rel=1e-12)


def test_annulus_norm_raises_when_unresolved():
    # radial spike much narrower than the finest radial node spacing
    def f(x):
        r = np.linalg.norm(x, axis=1)
        return FieldSample(np.exp(-(((r - 3.3137) / 0.004) ** 2)) + 0j, np.zeros(x.shape, complex))

    with pytest.raises(AccuracyError):
        ex.h1_annulus_norm(f, ex.Annulus(), 1)


def test_claim_rejects_unknown_verdict():
    with pytest.raises(ConfigurationError):
        ex.claim("x", "y", 1, 1, "maybe")


def test_sum_field_combines_terms():
    a = lambda x: plane_wave(1.0, [1.0, 0.0, 0.0], x)
    s = ex.SumField((2.0, a), (-1.0, a))
    x = np.array([[0.3, 0.2, 0.1]])
    assert np.allclose(s(x).value, a(x).value)


def test_ball3d_sweep_follows_monopole_law():
    res = ex.visibility_sweep("ball3d", 2.0, eps_list=(0.1, 0.05, 0.025))
    assert all(res.certified)
    assert abs(res.rates.power_slope - ex.monopole_slope(2.0, res.eps)) < 0.05
    ratios = res.visibility / np.abs(np.sin(2.0 * res.eps))
    assert np.ptp(ratios) / ratios.mean() < 0.02


def test_ball2d_sweep_tracks_disk_law():
    res = ex.visibility_sweep("ball2d", 2.0, eps_list=(0.1, 0.05, 0.025))
    ratios = res.visibility / ex.disk_monopole_law(2.0, res.eps)
    assert np.ptp(ratios) / ratios.mean() < 0.03
    assert res.rate_claim()["verdict"] == ex.REFUTED


def test_sweep_input_validation():
    with pytest.raises(ConfigurationError):
        ex.visibility_sweep("ball3d", 2.0, eps_list=(0.05, 0.1))
    with pytest.raises(ConfigurationError):
        ex.visibility_sweep("cyl3d", 2.0, eps_list=(0.6,))
    with pytest.raises(ConfigurationError):
        ex.visibility_sweep("sphere", 2.0)
    with pytest.raises(ConfigurationError):
        ex.visibility_sweep("ball3d", 0.0)


def test_sweep_with_two_points_reports_no_fit():
    res = ex.visibility_sweep("ball3d", 2.0, eps_list=(0.1, 0.05))
    assert res.rates is None and res.notes


def test_uncertified_sweep_raises_with_payload():
    cfg = mfs.MfsConfig(n_theta=4, n_z=8)
    with pytest.raises(CertificateError) as info:
        ex.visibility_sweep("cyl3d", 2.0, eps_list=(0.1,), mfs_config=cfg)
    pts = info.value.payload.points
    assert len(pts) == 1 and "uncertified" in pts[0].flags


def test_morawetz_static_linear_field():
    # v = x1, k = 0 on the unit ball: both sides equal -2 pi / 3
    v = lambda x: FieldSample(np.atleast_2d(x)[:, 0] + 0j, np.tile([1.0 + 0j, 0, 0], (len(np.atleast_2d(x)), 1)))
    res = ex.morawetz_sides(ex.BallDomain(1.0), v, 0.0, 4)
    assert res.lhs == pytest.approx(-2 * np.pi / 3, abs=1e-10)
    assert res.rhs == pytest.approx(-2 * np.pi / 3, abs=1e-10)


def test_morawetz_cylinder_domain():
    s = np.array([0.0, 0.0, 2.5])
    res = ex.morawetz_audit(ex.CylinderDomain(0.3), lambda x: green(2.0, 3, x, s), 2.0, level=4)
    assert res.rel_residual < 1e-6


def test_morawetz_detects_non_solution():
    # v = x1^2 does not solve the equation
    v = lambda x: FieldSample(np.atleast_2d(x)[:, 0] ** 2 + 0j,
                              np.stack([2 * np.atleast_2d(x)[:, 0], 0 * x[:, 0], 0 * x[:, 0]], 1) + 0j)
    assert ex.morawetz_sides(ex.BallDomain(1.0), v, 0.0, 4).rel_residual > 1e-2


def test_thin_wire_flux_formula():
    assert ex.thin_wire_flux(np.exp(-1.0)) == pytest.approx(2 * np.pi)


def test_symmetry_audit_axisymmetric():
    rep = ex.symmetry_audit(0.2, 2.0, "axisym_source", heights=(0.0,))
    dev = rep["rings"][0]["theta_deviation"]
    assert dev < 1e-10
    verdicts = {c["claim"]: c["verdict"] for c in rep["claims"]}
    assert any(v == ex.REFUTED for k, v in verdicts.items() if "vanishes" in k)


def test_symmetry_audit_input_checks():
    with pytest.raises(ConfigurationError):
        ex.symmetry_audit(data_mode="random")
    with pytest.raises(DomainError):
        ex.symmetry_audit(heights=(0.7,))


def test_mirror_pair_is_symmetric():
    src = ex.mirror_pair_sources()
    assert np.allclose(src.locations[0, :2], -src.locations[1, :2])
    assert src.locations[0, 2] == src.locations[1, 2]


def test_stability_zero_source():
    src = RadialBumpSource([2.5, 0.0, 0.0], 0.4, 2.0, amplitude=0.0)
    tab = ex.stability_audit("ball3d", 2.0, src, eps_list=(0.1, 0.05, 0.025))
    assert tab.free_norm == 0.0 and all(n == 0.0 for n in tab.norms)
    assert tab.max_min_ratio == 1.0


def test_stability_ball_is_bounded():
    tab = ex.stability_audit("ball3d", 2.0, eps_list=(0.2, 0.1, 0.05, 0.025))
    assert tab.max_min_ratio < 1.5
    assert tab.norms[-1] == pytest.approx(tab.free_norm, rel=0.01)


def test_lowfreq_report_all_confirmed():
    claims = ex.lowfreq_report()
    assert len(claims) == 6 and all(c["verdict"] == ex.CONFIRMED for c in claims)
