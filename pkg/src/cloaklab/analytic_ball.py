"""
Exact modal solutions for the exterior Dirichlet problem outside a ball or disk.

Each point source is expanded in its own frame (polar axis through the
source), so the 3-d series only needs Legendre polynomials of
``cos(angle(x, s))`` and the 2-d series only cosines of the angle difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .fields import FieldSample, PointSourceSet, check_wavenumber, incident
from .numkit import MAX_BESSEL_ORDER, cyl_h1, cyl_jy, fibonacci_sphere, legendre_table, sph_h1, sph_jy

TRUNCATION_TOL = 1e-14
RESIDUAL_GATE = 1e-8


@dataclass(frozen=True)
class BallGeom:
    """Ball (3-d) or disk (2-d) of radius ``radius`` centred at the origin."""

    radius: float
    dim: int = 3

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ConfigurationError(f"ball radius must lie in (0, 1), got {self.radius}")
        if self.dim not in (2, 3):
            raise ConfigurationError(f"ball dimension must be 2 or 3, got {self.dim}")

    @property
    def area(self) -> float:
        if self.dim == 3:
            return 4.0 * np.pi * self.radius**2
        return 2.0 * np.pi * self.radius

    def contains(self, x) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(x), axis=1) < self.radius

    def boundary_points(self, n: int) -> np.ndarray:
        if self.dim == 3:
            return self.radius * fibonacci_sphere(n)
        t = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)


@dataclass
class SeriesModel:
    """Truncated modal expansion of the scattered field outside a ball.

    ``coefficients[j, n]`` multiplies ``h_n(k|x|) P_n(cos angle(x, s_j))`` in
    3-d and ``H_n(k|x|) cos(n angle(x, s_j))`` in 2-d.
    """

    geom: BallGeom
    k: float
    N: int
    coefficients: np.ndarray
    sources: PointSourceSet
    truncation_ok: bool = True
    residual: float = float("nan")
    notes: list = field(default_factory=list)

    @property
    def certificate(self) -> float:
        return self.residual


def _modal_coefficients(geom, k, sources, N):
    ke = k * geom.radius
    R = np.linalg.norm(sources.locations, axis=1)
    n = np.arange(N + 1)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if geom.dim == 3:
            j_e, _, y_e, _ = sph_jy(n, ke)
            ratio = j_e / (j_e + 1j * y_e)
            h_src = sph_h1(n[None, :], k * R[:, None])[0]
            c = (-1j * k / (4.0 * np.pi)) * (2 * n + 1) * h_src * ratio
        else:
            j_e, _, y_e, _ = cyl_jy(n, ke)
            ratio = j_e / (j_e + 1j * y_e)
            h_src = cyl_h1(n[None, :], k * R[:, None])[0]
            neumann = np.where(n == 0, 1.0, 2.0)
            c = -0.25j * neumann * h_src * ratio
    c = np.where(np.isfinite(c), c, 0.0)
    return sources.amplitudes[:, None] * c


def _truncation_met(coefs):
    mag = np.abs(coefs)
    top = mag.max()
    if top == 0.0:
        return True
    return bool(np.all(mag[:, -2:] <= TRUNCATION_TOL * top))


def solve_ball(geom: BallGeom, k: float, sources: PointSourceSet, N: int | None = None,
               n_check: int = 256) -> SeriesModel:
    """Scattered field of point sources off a sound-soft ball.

    With ``N=None`` the truncation is the smallest ``N >= k max|s| + 20`` whose
    last two modal coefficients fall below ``1e-14`` of the largest.
    """
    k = check_wavenumber(k)
    if sources.dim != geom.dim:
        raise ConfigurationError("source dimension does not match the ball")
    if np.any(np.linalg.norm(sources.locations, axis=1) <= geom.radius):
        raise DomainError("a source lies inside the ball")
    R = np.linalg.norm(sources.locations, axis=1).max()
    if N is None:
        N = int(np.ceil(k * R)) + 20
        while True:
            if N > MAX_BESSEL_ORDER:
                raise ConfigurationError("series truncation exceeds the special-function order limit")
            coefs = _modal_coefficients(geom, k, sources, N)
            if _truncation_met(coefs):
                break
            N += 5
    else:
        if N < 1:
            raise ConfigurationError("series truncation N must be >= 1")
        if N > MAX_BESSEL_ORDER:
            raise ConfigurationError("series truncation exceeds the special-function order limit")
        coefs = _modal_coefficients(geom, k, sources, N)
    model = SeriesModel(geom=geom, k=k, N=N, coefficients=coefs, sources=sources,
                        truncation_ok=_truncation_met(coefs))
    model.residual = boundary_residual(model, n_check)
    if not model.truncation_ok:
        model.notes.append("truncation criterion not met")
    return model


def boundary_residual(model: SeriesModel, n: int = 256) -> float:
    """Max ``|incident + scattered|`` on ``n`` boundary points, relative to max ``|incident|``."""
    pts = model.geom.boundary_points(n) * (1.0 + 1e-15)
    inc = incident(model.sources, model.k, model.geom.dim, pts).value
    sc = eval_scattered(model, pts).value
    top = np.abs(inc).max()
    if top == 0.0:
        return float(np.abs(sc).max())
    return float(np.abs(inc + sc).max() / top)


def eval_scattered(model: SeriesModel, x) -> FieldSample:
    """Value and analytic gradient of the modal sum at ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r < model.geom.radius * (1.0 - 1e-12)):
        raise DomainError("eval_scattered: point inside the ball")
    xhat = pts / r[:, None]
    k, N = model.k, model.N
    n = np.arange(N + 1)
    kr = k * r
    val = np.zeros(len(r), dtype=complex)
    grad = np.zeros(pts.shape, dtype=complex)
    # quadrature grids repeat radii, so evaluate the radial functions once per radius
    kr_u, inv = np.unique(kr, return_inverse=True)
    if model.geom.dim == 3:
        h, hp = sph_h1(n[:, None], kr_u[None, :])
    else:
        h, hp = cyl_h1(n[:, None], kr_u[None, :])
    h, hp = h[:, inv], hp[:, inv]
    for coef, s in zip(model.coefficients, model.sources.locations):
        shat = s / np.linalg.norm(s)
        if model.geom.dim == 3:
            t = np.clip(xhat @ shat, -1.0, 1.0)
            P, dP = legendre_table(N, t)
            radial = coef[:, None] * h
            val += (radial * P).sum(axis=0)
            d_r = k * (coef[:, None] * hp * P).sum(axis=0)
            d_t = (radial * dP).sum(axis=0)
            grad_t = (shat[None, :] - t[:, None] * xhat) / r[:, None]
            grad += d_r[:, None] * xhat + d_t[:, None] * grad_t
        else:
            gamma = np.arctan2(xhat[:, 1], xhat[:, 0]) - np.arctan2(shat[1], shat[0])
            cos_m = np.cos(n[:, None] * gamma[None, :])
            sin_m = np.sin(n[:, None] * gamma[None, :])
            radial = coef[:, None] * h
            val += (radial * cos_m).sum(axis=0)
            d_r = k * (coef[:, None] * hp * cos_m).sum(axis=0)
            d_g = -(radial * n[:, None] * sin_m).sum(axis=0)
            that = np.stack([-xhat[:, 1], xhat[:, 0]], axis=1)
            grad += d_r[:, None] * xhat + (d_g / r)[:, None] * that
    if single:
        return FieldSample(val[0], grad[0])
    return FieldSample(val, grad)


def scattered_field(model: SeriesModel):
    return lambda x: eval_scattered(model, x)


def lowfreq_constant(dim: int, epsk: float, g0: complex, r: float) -> complex:
    """Radiating solution of ``Delta v + epsk^2 v = 0`` outside the unit ball
    with constant boundary value ``g0``, evaluated at radius ``r``.
    """
    if dim not in (2, 3):
        raise ConfigurationError("dimension must be 2 or 3")
    if epsk <= 0:
        raise DomainError("epsk must be positive")
    if r < 1.0:
        raise DomainError("lowfreq_constant is defined for r >= 1")
    if r == 1.0:
        return complex(g0)
    h = sph_h1 if dim == 3 else cyl_h1
    return complex(g0 * h(0, epsk * r)[0] / h(0, epsk)[0])


def sphere_flux_average(geom: BallGeom, k: float, constant_data: complex) -> complex:
    """Total outward radial flux over the sphere of the exterior solution
    equal to ``constant_data`` on the ball boundary.

    3-d: ``4 pi c (i k eps^2 - eps)``; 2-d: ``2 pi eps c k H_0'(k eps)/H_0(k eps)``.
    """
    k = check_wavenumber(k)
    eps = geom.radius
    c = complex(constant_data)
    if geom.dim == 3:
        return 4.0 * np.pi * c * (1j * k * eps**2 - eps)
    h, hp = cyl_h1(0, k * eps)
    return complex(2.0 * np.pi * eps * c * k * hp / h)
