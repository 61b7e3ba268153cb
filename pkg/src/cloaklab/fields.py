"""
Fundamental solutions, idealized incident fields and pointwise field algebra.

All evaluators accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)`` and return a :class:`FieldSample` of matching leading shape.
Green's functions follow the sign convention ``(Delta + k^2) G = -delta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, SingularityError
from .numkit import cyl_h1, gauss_legendre, sph_h1, sph_jy

SOURCE_ANNULUS = (2.0, 3.0)


@dataclass
class FieldSample:
    """Complex value and complex gradient of a field.

    ``value`` has shape ``()`` or ``(n,)``; ``grad`` appends the spatial
    dimension as last axis.
    """

    value: np.ndarray
    grad: np.ndarray

    def __add__(self, other: "FieldSample") -> "FieldSample":
        return FieldSample(self.value + other.value, self.grad + other.grad)

    def __sub__(self, other: "FieldSample") -> "FieldSample":
        return FieldSample(self.value - other.value, self.grad - other.grad)

    def __mul__(self, c) -> "FieldSample":
        return FieldSample(c * self.value, c * self.grad)

    __rmul__ = __mul__

    def __neg__(self) -> "FieldSample":
        return FieldSample(-self.value, -self.grad)


Field = Callable[[np.ndarray], FieldSample]


def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _finish(value, grad, single):
    if single:
        return FieldSample(value[0], grad[0])
    return FieldSample(value, grad)


def check_wavenumber(k: float, allow_zero: bool = False) -> float:
    k = float(k)
    if not np.isfinite(k) or k < 0 or (k == 0 and not allow_zero):
        raise ConfigurationError(f"wavenumber must be > 0, got {k}")
    return k


@dataclass(frozen=True)
class PointSourceSet:
    """Point sources with complex amplitudes, all inside ``B_3 \\ B_2``.

    Parameters
    ----------
    locations : array (n, d)
    amplitudes : array (n,) of complex
    """

    locations: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if loc.shape[0] == 0:
            raise ConfigurationError("PointSourceSet must be nonempty")
        if loc.shape[1] not in (2, 3):
            raise ConfigurationError("source locations must be 2-d or 3-d points")
        if amp.shape != (loc.shape[0],):
            raise ConfigurationError("one amplitude per source location is required")
        r = np.linalg.norm(loc, axis=1)
        lo, hi = SOURCE_ANNULUS
        if np.any(r <= lo) or np.any(r >= hi):
            raise DomainError("every source must lie strictly inside the annulus 2 < |s| < 3")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def scaled(self, c) -> "PointSourceSet":
        return PointSourceSet(self.locations.copy(), c * self.amplitudes)

    def as_record(self) -> list:
        return [
            {"location": [float(v) for v in s], "amplitude": [a.real, a.imag]}
            for s, a in zip(self.locations, self.amplitudes)
        ]

    @classmethod
    def single(cls, location, amplitude=1.0) -> "PointSourceSet":
        return cls(np.asarray([location], dtype=float), np.asarray([amplitude], dtype=complex))


def default_sources(dim: int = 3) -> PointSourceSet:
    """Unit source at ``(2.5, 0, 0)`` (or ``(2.5, 0)`` in 2-d)."""
    loc = [2.5, 0.0, 0.0][:dim]
    return PointSourceSet.single(loc)


def bump_sources(center, width: float, n: int = 32, amplitude=1.0) -> PointSourceSet:
    """Discretize a smooth compactly supported volume source.

    The density ``amplitude * exp(-1 / (1 - |y - c|^2 / width^2))`` is
    integrated with an ``n^d`` tensor Gauss rule over its bounding box; each
    node carrying nonzero weight becomes a point source, so the incident
    field is the quadrature of the volume potential.
    """
    center = np.asarray(center, dtype=float)
    d = center.size
    rule = gauss_legendre(n, -width, width)
    grids = np.meshgrid(*([rule.nodes] * d), indexing="ij")
    wgrids = np.meshgrid(*([rule.weights] * d), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    s2 = (offs**2).sum(axis=1) / width**2
    inside = s2 < 1.0
    dens = np.zeros_like(s2)
    dens[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
    keep = dens * w > 0
    return PointSourceSet(center + offs[keep], amplitude * (dens * w)[keep])


# ---------------------------------------------------------------------------
# Green's functions
# ---------------------------------------------------------------------------
def green(k: float, d: int, x, y) -> FieldSample:
    """Outgoing fundamental solution and its gradient in ``x``.

    3-d: ``exp(ikr) / (4 pi r)``; 2-d: ``(i/4) H_0^(1)(kr)``. In 3-d ``k = 0``
    gives the Laplace kernel.
    """
    k = check_wavenumber(k, allow_zero=(d == 3))
    if d not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {d}")
    x, single = _as_points(x)
    y = np.asarray(y, dtype=float)
    if x.shape[1] != d or y.shape != (d,):
        raise ConfigurationError("point dimension does not match d")
    diff = x - y
    r = np.linalg.norm(diff, axis=1)
    if np.any(r == 0.0):
        raise SingularityError("green evaluated at its source point")
    rhat = diff / r[:, None]
    if d == 3:
        val = np.exp(1j * k * r) / (4.0 * np.pi * r)
        dr = val * (1j * k - 1.0 / r)
    else:
        h0 = cyl_h1(0, k * r)[0]
        h1 = cyl_h1(1, k * r)[0]
        val = 0.25j * h0
        dr = -0.25j * k * h1
    return _finish(val, dr[:, None] * rhat, single)


def green_matrix(k: float, d: int, x: np.ndarray, y: np.ndarray, with_grad: bool = True):
    """Green's function between every target ``x[i]`` and source ``y[j]``.

    Returns ``G`` of shape ``(n, m)`` and, if requested, ``dG/dx`` of shape
    ``(n, m, d)``.
    """
    diff = x[:, None, :] - y[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if np.any(r == 0.0):
        raise SingularityError("target coincides with a source")
    if d == 3:
        G = np.exp(1j * k * r) / (4.0 * np.pi * r)
        if not with_grad:
            return G, None
        dr = G * (1j * k - 1.0 / r)
    else:
        G = 0.25j * cyl_h1(0, k * r)[0]
        if not with_grad:
            return G, None
        dr = -0.25j * k * cyl_h1(1, k * r)[0]
    return G, (dr / r)[:, :, None] * diff


def incident(sources: PointSourceSet, k: float, d: int, x) -> FieldSample:
    """Superposition of point-source Green's functions."""
    if sources.dim != d:
        raise ConfigurationError("source dimension does not match d")
    check_wavenumber(k)
    x, single = _as_points(x)
    val = np.zeros(x.shape[0], dtype=complex)
    grad = np.zeros(x.shape, dtype=complex)
    for s, a in zip(sources.locations, sources.amplitudes):
        g = green(k, d, x, s)
        val += a * g.value
        grad += a * g.grad
    return _finish(val, grad, single)


def incident_field(sources: PointSourceSet, k: float) -> Field:
    """Bind ``incident`` to a source set, returning a field callable."""
    d = sources.dim
    return lambda x: incident(sources, k, d, x)


def plane_wave(k: float, direction, x) -> FieldSample:
    """``exp(ik <dir, x>)`` with analytic gradient."""
    k = check_wavenumber(k, allow_zero=True)
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ConfigurationError("plane wave direction must be a unit vector")
    x, single = _as_points(x)
    val = np.exp(1j * k * (x @ direction))
    grad = (1j * k * val)[:, None] * direction[None, :]
    return _finish(val, grad, single)


def helmholtz_residual(field: Field, k: float, x, h: float) -> complex:
    """Central-difference ``(Delta + k^2)`` applied to ``field`` at ``x``."""
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float)
    d = x.size
    offs = np.concatenate([np.eye(d) * h, -np.eye(d) * h, np.zeros((1, d))])
    vals = np.asarray(field(x[None, :] + offs).value)
    centre = vals[-1]
    lap = (vals[:d].sum() + vals[d:2 * d].sum() - 2 * d * centre) / h**2
    return complex(lap + k**2 * centre)


def finite_difference_grad(field: Field, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the value of ``field`` at ``x``."""
    x = np.asarray(x, dtype=float)
    d = x.size
    offs = np.concatenate([np.eye(d) * h, -np.eye(d) * h])
    v = np.asarray(field(x[None, :] + offs).value)
    return (v[:d] - v[d:]) / (2 * h)


class RadialBumpSource:
    """Smooth 3-d source density ``amplitude * exp(-1 / (1 - s^2/w^2))``,
    ``s = |y - center| < w``, and its exact outgoing field.

    The field comes from the spherical mean of the Green's function,
    ``(ik/4pi) j_0(k r_<) h_0(k r_>)``, so it is a single radial integral.
    Outside the support it equals a point source at ``center`` with
    amplitude :attr:`equivalent_amplitude`; obstacles away from the support
    therefore see exactly the field of :meth:`equivalent_point`.
    """

    N_RADIAL = 48

    def __init__(self, center, width: float, k: float, amplitude=1.0):
        self.center = np.asarray(center, dtype=float)
        if self.center.shape != (3,):
            raise ConfigurationError("radial bump sources are 3-d")
        if width <= 0:
            raise ConfigurationError("bump width must be positive")
        self.width = float(width)
        self.k = check_wavenumber(k)
        self.amplitude = complex(amplitude)
        rule = gauss_legendre(self.N_RADIAL, 0.0, self.width)
        j0 = sph_jy(0, self.k * rule.nodes)[0]
        self._moment = np.sum(rule.weights * self.profile(rule.nodes) * rule.nodes**2 * j0)

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        t = np.clip((s / self.width) ** 2, 0.0, 1.0)
        out = np.zeros_like(t, dtype=complex)
        inside = t < 1.0
        out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - t[inside]))
        return out

    @property
    def equivalent_amplitude(self) -> complex:
        return complex(4.0 * np.pi * self._moment)

    def equivalent_point(self) -> PointSourceSet:
        return PointSourceSet.single(self.center, self.equivalent_amplitude)

    def _split_integrals(self, r):
        """``int_0^r f s^2 j_0(ks) ds`` and ``int_r^w f s^2 h_0(ks) ds``."""
        k, n = self.k, self.N_RADIAL
        x, w = np.polynomial.legendre.leggauss(n)
        lo = 0.5 * r[:, None] * (x[None, :] + 1.0)
        wl = 0.5 * r[:, None] * w[None, :]
        hi = r[:, None] + 0.5 * (self.width - r[:, None]) * (x[None, :] + 1.0)
        wh = 0.5 * (self.width - r[:, None]) * w[None, :]
        i1 = np.sum(wl * self.profile(lo) * lo**2 * sph_jy(0, k * lo)[0], axis=1)
        i2 = np.sum(wh * self.profile(hi) * hi**2 * sph_h1(0, k * hi)[0], axis=1)
        return i1, i2

    def __call__(self, x) -> FieldSample:
        x, single = _as_points(x)
        if x.shape[1] != 3:
            raise ConfigurationError("radial bump sources are 3-d")
        k = self.k
        d = x - self.center
        r = np.linalg.norm(d, axis=1)
        val = np.empty(len(r), dtype=complex)
        dr = np.zeros(len(r), dtype=complex)
        out = r >= self.width
        if np.any(out):
            h, hp = sph_h1(0, k * r[out])
            val[out] = 1j * k * h * self._moment
            dr[out] = 1j * k * k * hp * self._moment
        ins = ~out
        if np.any(ins):
            ri = np.maximum(r[ins], 1e-300)
            i1, i2 = self._split_integrals(ri)
            j, jp, _, _ = sph_jy(0, k * ri)
            h, hp = sph_h1(0, k * ri)
            # i1 vanishes like r^3 where h_0 blows up like 1/r
            hi1 = np.where(i1 == 0, 0.0, h * i1)
            hpi1 = np.where(i1 == 0, 0.0, hp * i1)
            val[ins] = 1j * k * (hi1 + j * i2)
            dr[ins] = 1j * k * k * (hpi1 + jp * i2)
        rhat = np.divide(d, r[:, None], out=np.zeros_like(d), where=r[:, None] > 0)
        return _finish(val, dr[:, None] * rhat, single)
