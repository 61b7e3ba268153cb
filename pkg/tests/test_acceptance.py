"""Acceptance gate: every criterion at its stated tolerance, one PASS/FAIL line each."""
import csv
import time

import numpy as np
import pytest
from scipy import special

from cloaklab import analytic_ball as ab
from cloaklab import cli
from cloaklab import cloak_transform as ct
from cloaklab import experiments as ex
from cloaklab import mfs
from cloaklab.fields import default_sources, green, incident_field
from cloaklab.numkit import cyl_jy, fit_rates, sph_jy

from conftest import ACCEPTANCE_LINES


def report(label, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def test_01_special_function_wronskians():
    t0 = time.perf_counter()
    z = np.logspace(-2, 2, 102)[1:-1]
    worst = 0.0
    for n in range(6):
        j, jp, y, yp = (f(n, z) for f in (special.jv, special.jvp, special.yv, special.yvp))
        worst = max(worst, np.max(np.abs((j * yp - jp * y) * np.pi * z / 2 - 1)))
        sj, sjp, sy, syp = sph_jy(n, z)
        worst = max(worst, np.max(np.abs((sj * syp - sjp * sy) * z**2 - 1)))
        cj, cjp, cy, cyp = cyl_jy(n, z)
        worst = max(worst, np.max(np.abs((cj * cyp - cjp * cy) * np.pi * z / 2 - 1)))
    dt = time.perf_counter() - t0
    report("1 special-function Wronskians", worst <= 1e-10 and dt < 1.0,
           f"max rel error {worst:.2e} (<= 1e-10), {dt:.2f} s (< 1 s)")


def test_02_series_oracle_gate():
    t0 = time.perf_counter()
    worst_res, worst_trunc = 0.0, 0.0
    for dim in (2, 3):
        for eps in (0.2, 0.05):
            geom = ab.BallGeom(eps, dim)
            m = ab.solve_ball(geom, 2.0, default_sources(dim))
            m2 = ab.solve_ball(geom, 2.0, default_sources(dim), N=m.N + 10)
            x = np.array([[3.0, 1.0, -1.0], [0.0, 2.2, 0.5], [-4.5, 0.0, 0.1], [0.0, 0.0, eps * 1.01]])[:, :dim]
            x = x[np.linalg.norm(x, axis=1) > eps]
            a, b = ab.eval_scattered(m, x).value, ab.eval_scattered(m2, x).value
            worst_res = max(worst_res, m.residual)
            worst_trunc = max(worst_trunc, np.max(np.abs(a - b)) / np.max(np.abs(b)))
    dt = time.perf_counter() - t0
    report("2 series oracle gate", worst_res <= 1e-8 and worst_trunc <= 1e-10 and dt < 5,
           f"residual {worst_res:.2e} (<= 1e-8), truncation {worst_trunc:.2e} (<= 1e-10), {dt:.1f} s (< 5 s)")


def test_03_mfs_matches_series_on_sphere():
    t0 = time.perf_counter()
    geom, src = ab.BallGeom(0.2, 3), default_sources(3)
    series = ab.scattered_field(ab.solve_ball(geom, 2.0, src))
    model = mfs.solve_obstacle(geom, 2.0, incident_field(src, 2.0), mfs.MfsConfig())
    ann = ex.Annulus()
    rel = ex.h1_annulus_norm(ex.SumField((1.0, series), (-1.0, mfs.scattered_field(model))), ann) \
        / ex.h1_annulus_norm(series, ann)
    dt = time.perf_counter() - t0
    report("3 MFS vs series on the sphere", rel <= 1e-4 and dt < 60,
           f"relative H1 difference {rel:.2e} (<= 1e-4), {dt:.1f} s (< 60 s)")


def test_04_morawetz_identity():
    t0 = time.perf_counter()
    claims = ex.morawetz_report(2.0, level=6)
    rels = [c["measured"]["rel_residual"] for c in claims[:2]]
    lin = claims[2]["measured"]
    lin_err = max(abs(lin["lhs"] + 2 * np.pi / 3), abs(lin["rhs"] + 2 * np.pi / 3))
    dt = time.perf_counter() - t0
    ok = max(rels) <= 1e-6 and lin_err <= 1e-8 and dt < 10
    report("4 Morawetz identity", ok,
           f"plane wave {rels[0]:.1e}, point source {rels[1]:.1e} (<= 1e-6); "
           f"x1 case off -2pi/3 by {lin_err:.1e} (<= 1e-8); {dt:.1f} s (< 10 s)")


def test_05_change_of_variables_audit():
    t0 = time.perf_counter()
    cmap = ct.make_radial_map(0.1, 3)
    u = lambda x: green(2.0, 3, x, np.array([0.0, 2.5, 0.0]))
    d6 = ct.transform_identity_audit(cmap, 2.0, u, level=6).defect
    d8 = ct.transform_identity_audit(cmap, 2.0, u, level=8).defect
    dt = time.perf_counter() - t0
    report("5 change-of-variables audit", d6 <= 1e-6 and d8 <= d6 / 10 and dt < 60,
           f"defect L6 {d6:.2e} (<= 1e-6), L8 {d8:.2e} ({d6 / d8:.0f}x drop, >= 10x), {dt:.1f} s (< 60 s)")


def test_06_low_frequency_desk_check():
    t0 = time.perf_counter()
    claims = ex.lowfreq_report(2.0, (1e-1, 1e-2, 1e-3))
    err = max(c["measured"]["relative_error"] for c in claims)
    dt = time.perf_counter() - t0
    report("6 low-frequency desk check", err <= 1e-8 and dt < 1,
           f"max relative error {err:.1e} (<= 1e-8) over 3-d and 2-d, {dt:.2f} s (< 1 s)")


@pytest.fixture(scope="module")
def ball_sweeps():
    t0 = time.perf_counter()
    s3 = ex.visibility_sweep("ball3d", 2.0)
    s2 = ex.visibility_sweep("ball2d", 2.0)
    return s3, s2, time.perf_counter() - t0


def test_07a_ball3d_rate(ball_sweeps):
    s3, _, dt = ball_sweeps
    law = ex.monopole_slope(2.0, s3.eps)
    gap = abs(s3.rates.power_slope - law)
    verdict = s3.rate_claim()["verdict"]
    report("7a 3-d ball visibility slope", gap <= 0.05 and dt < 120,
           f"fitted {s3.rates.power_slope:.4f} vs monopole law {law:.4f} (|gap| {gap:.4f} <= 0.05); "
           f"claimed exponent {s3.claimed_slope:g} verdict {verdict}; sweeps {dt:.1f} s (< 120 s)")


@pytest.mark.xfail(strict=True, reason="the exact disk law |J0/H0| is fitted better by a power of eps "
                                       "than by a power of |ln eps| on this eps range")
def test_07b_ball2d_log_law_preferred(ball_sweeps):
    _, s2, dt = ball_sweeps
    r = s2.rates
    exact = ex.disk_monopole_law(2.0, s2.eps)
    ref = fit_rates(s2.eps, exact)
    verdict = s2.rate_claim()["verdict"]
    report("7b 2-d ball log-law R2 > power-law R2", r.log_r2 > r.power_r2 and dt < 120,
           f"log R2 {r.log_r2:.5f} vs power R2 {r.power_r2:.5f} (exact disk law: log {ref.log_r2:.5f}, "
           f"power {ref.power_r2:.5f}); claimed exponent {s2.claimed_slope:g} verdict {verdict}")


def test_08_cylinder_sweep_integrity():
    t0 = time.perf_counter()
    base = ex.visibility_sweep("cyl3d", 2.0, eps_list=(0.2, 0.1, 0.05, 0.025))
    dbl = ex.visibility_sweep("cyl3d", 2.0, eps_list=(0.2, 0.1, 0.05, 0.025),
                              mfs_config=lambda e: mfs.MfsConfig.for_eps(e).doubled())
    cert = max(p.certificate for p in base.points)
    vis = base.visibility
    decreasing = bool(np.all(np.diff(vis) < 0))
    fits = base.rates is not None and np.isfinite(base.rates.power_slope) and np.isfinite(base.rates.log_slope)
    ax = ex.symmetry_audit(0.1, 2.0, "axisym_source")
    gen = ex.symmetry_audit(0.1, 2.0, "generic_source")
    theta_dev = max(r["theta_deviation"] for r in ax["rings"])
    mirror_dev = max(r["mirror_deviation"] for r in gen["rings"])
    shift = abs(base.rates.power_slope - dbl.rates.power_slope)
    verdict = base.rate_claim()["verdict"]
    dt = time.perf_counter() - t0
    ok = (cert <= 1e-3 and max(p.certificate for p in dbl.points) <= 1e-3 and decreasing and fits
          and theta_dev <= 1e-4 and mirror_dev <= 1e-4 and shift <= 0.05 and dt < 1200)
    report("8 cylinder sweep integrity", ok,
           f"max certificate {cert:.2e} (<= 1e-3); visibility {np.round(vis, 4).tolist()} decreasing={decreasing}; "
           f"power slope {base.rates.power_slope:.3f} (R2 {base.rates.power_r2:.4f}), log slope "
           f"{base.rates.log_slope:.3f} (R2 {base.rates.log_r2:.4f}); theta dev {theta_dev:.1e}, mirror dev "
           f"{mirror_dev:.1e} (<= 1e-4); doubled-config slope shift {shift:.1e} (<= 0.05); "
           f"claimed exponent 1 verdict {verdict}; {dt:.0f} s (< 1200 s)")


def test_09_map_and_material_audits():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cmap = ct.make_radial_map(0.1, 3)
    v = rng.normal(size=(2000, 3))
    x = v / np.linalg.norm(v, axis=1)[:, None] * rng.uniform(0, 2.5, 2000)[:, None]
    x = x[~cmap.on_interface(x)]
    trip = float(np.max(np.abs(cmap.inverse(cmap.forward(x)) - x)))
    h, fd_err = 1e-6, 0.0
    for p in x[:200]:
        fd = np.stack([(cmap.forward(p + h * e) - cmap.forward(p - h * e)) / (2 * h) for e in np.eye(3)], -1)
        fd_err = max(fd_err, float(np.max(np.abs(cmap.jacobian(p) - fd))))
    y = cmap.forward(x)
    y = y[np.linalg.norm(y, axis=1) < 2.0]
    A, sigma = ct.materials(cmap, y)
    sym = float(np.max(np.abs(A - np.swapaxes(A, 1, 2))))
    eigmin = float(np.linalg.eigvalsh(A)[:, 0].min())
    rep = ct.continuity_audit(ct.make_cylinder_map(0.1), 1000)
    probes = {p["interface"]: p["axial_jump"] for p in rep.probes}
    jumps_ok = abs(probes["C_eps_lateral"] - 0.375) < 1e-12 and abs(probes["D2_caps"] - 0.75) < 1e-12
    dt = time.perf_counter() - t0
    ok = trip <= 1e-12 and fd_err <= 1e-7 and sym == 0.0 and eigmin > 0 and jumps_ok and dt < 10
    report("9 map and material audits", ok,
           f"round trip {trip:.1e} (<= 1e-12), Jacobian vs FD {fd_err:.1e} (<= 1e-7), A symmetric with "
           f"min eigenvalue {eigmin:.2e} (> 0) at {len(y)} points; cylinder map jumps lateral "
           f"{probes['C_eps_lateral']:.3f}, D2 bottom {probes['D2_caps']:.3f}; {dt:.1f} s (< 10 s)")


def test_10_reproducibility(tmp_path):
    args = ["sweep", "--scheme", "ball3d", "--no-timing", "--seed", "7"]
    outs = {}
    for name, extra in (("a", []), ("b", []), ("t", ["--threads", "3"])):
        d = tmp_path / name
        assert cli.main(args + extra + ["--out", str(d)]) == 0
        outs[name] = d
    same = all((outs["a"] / f).read_bytes() == (outs["b"] / f).read_bytes()
               for f in ("sweep.csv", "audit-rates.json"))

    def vis(d):
        with open(d / "sweep.csv", newline="") as fh:
            return np.array([float(r["visibility_h1"]) for r in csv.DictReader(fh)])

    threaded = float(np.max(np.abs(vis(outs["t"]) - vis(outs["a"])) / vis(outs["a"])))
    report("10 reproducibility", same and threaded <= 1e-12,
           f"single-threaded outputs byte-identical={same}; threaded relative difference {threaded:.1e} (<= 1e-12)")
