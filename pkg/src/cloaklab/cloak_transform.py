"""
Blow-up maps, their Jacobians and push-forward material tensors.

A :class:`CloakMap` is a list of pieces, each with a forward formula, a
closed-form inverse and an analytic Jacobian. Two maps are provided:

* :func:`make_radial_map`: blows the ball ``B_eps`` up onto ``B_1`` and is
  piecewise smooth, continuous and the identity outside ``B_2``;
* :func:`make_cylinder_map`: the three-branch cylinder map exactly as given
  by its defining formula. It is neither continuous nor injective;
  :func:`continuity_audit` measures its jumps instead of repairing them.

The push-forward of the identity tensor and of the unit density is
``A = DF DF^T / |det DF|`` and ``sigma = 1 / |det DF|`` at ``x = F^-1(y)``.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InterfaceError
from .fields import FieldSample
from .numkit import gauss_legendre

FORMAT_VERSION = "cloaklab-mat-1"
INTERFACE_TOL = 1e-12
BUMP_STEEPNESS = 2.0
MAT_COLUMNS = ("y1", "y2", "y3", "A11", "A12", "A13", "A22", "A23", "A33",
               "sigma", "eigmin", "eigmax")

Array = np.ndarray


@dataclass(frozen=True)
class MapPiece:
    """One smooth branch of a piecewise map.

    ``contains`` and ``image_contains`` test the open region and its image;
    the remaining callables act on point batches of shape ``(n, d)``.
    """

    name: str
    contains: Callable[[Array], Array]
    image_contains: Callable[[Array], Array]
    forward: Callable[[Array], Array]
    inverse: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]


@dataclass(frozen=True)
class Interface:
    """A surface separating two pieces, with a sampler of points on it."""

    name: str
    pieces: tuple[str, str]
    sample: Callable[[int, np.random.Generator], Array]


@dataclass(frozen=True)
class CloakMap:
    kind: str
    eps: float
    dim: int
    pieces: tuple[MapPiece, ...]
    interfaces: tuple[Interface, ...]
    on_interface: Callable[[Array], Array]
    on_image_interface: Callable[[Array], Array]
    # radial maps only: x-space kink radii and the radius profile with inverse
    radial_breaks: tuple[float, ...] = ()
    radius_map: Callable[[Array], Array] | None = None
    radius_inverse: Callable[[Array], Array] | None = None
    regions: dict = field(default_factory=dict)

    @property
    def descriptor(self) -> str:
        return f"{self.kind}(eps={self.eps!r},dim={self.dim})"

    def piece(self, name: str) -> MapPiece:
        for p in self.pieces:
            if p.name == name:
                return p
        raise KeyError(name)

    def _locate(self, x: Array) -> Array:
        idx = np.full(len(x), -1)
        for i, p in enumerate(self.pieces):
            hit = (idx < 0) & p.contains(x)
            idx[hit] = i
        return idx

    def forward(self, x) -> Array:
        """Apply the map away from interfaces."""
        x, single = _points(x, self.dim)
        if np.any(self.on_interface(x)):
            raise InterfaceError("forward map evaluated on an interface")
        idx = self._locate(x)
        if np.any(idx < 0):
            raise DomainError("point not covered by any map piece")
        out = np.empty_like(x)
        for i, p in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                out[sel] = p.forward(x[sel])
        return out[0] if single else out

    def jacobian(self, x) -> Array:
        """Analytic Jacobian ``DF(x)``; refused on interfaces."""
        x, single = _points(x, self.dim)
        if np.any(self.on_interface(x)):
            raise InterfaceError("Jacobian is undefined on an interface")
        idx = self._locate(x)
        if np.any(idx < 0):
            raise DomainError("point not covered by any map piece")
        out = np.empty((len(x), self.dim, self.dim))
        for i, p in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                out[sel] = p.jacobian(x[sel])
        return out[0] if single else out

    def preimage(self, y) -> tuple[Array, Array]:
        """``F^-1(y)`` and the index of the piece it came from.

        Raises :class:`DomainError` where ``y`` has no preimage or several
        (the map is not injective there).
        """
        y, single = _points(y, self.dim)
        if np.any(self.on_image_interface(y)):
            raise InterfaceError("point lies on an interface of the image")
        x = np.full_like(y, np.nan)
        idx = np.full(len(y), -1)
        count = np.zeros(len(y), dtype=int)
        for i, p in enumerate(self.pieces):
            hit = p.image_contains(y)
            if np.any(hit):
                x[hit] = p.inverse(y[hit])
                idx[hit] = i
                count += hit
        if np.any(count == 0):
            raise DomainError("point has no preimage under the map")
        if np.any(count > 1):
            raise DomainError("map is not injective: point has several preimages")
        return (x[0], idx[0]) if single else (x, idx)

    def inverse(self, y) -> Array:
        return self.preimage(y)[0]


@dataclass
class MaterialPoint:
    """Push-forward tensor ``A`` (symmetric positive definite) and density ``sigma``."""

    A: Array
    sigma: float

    @property
    def eigenvalues(self) -> Array:
        return np.linalg.eigvalsh(self.A)

    @property
    def anisotropy(self) -> float:
        ev = self.eigenvalues
        return float(ev[-1] / ev[0])


def _points(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ConfigurationError(f"expected {dim}-d points, got shape {x.shape}")
    return x, single


def _norm(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _near(a, b):
    return np.abs(a - b) <= INTERFACE_TOL * np.maximum(1.0, np.abs(b))


# ---------------------------------------------------------------------------
# Radial map
# ---------------------------------------------------------------------------
def _radial_jacobian(x, rho, drho):
    r = _norm(x)
    xh = x / r[:, None]
    d = x.shape[1]
    P = np.einsum("ni,nj->nij", xh, xh)
    tang = (rho / r)[:, None, None] * (np.eye(d)[None] - P)
    return tang + drho[:, None, None] * P


def _sphere_sampler(radius, dim):
    def sample(n, rng):
        v = rng.standard_normal((n, dim))
        return radius * v / _norm(v)[:, None]
    return sample


def make_radial_map(eps: float, dim: int = 3) -> CloakMap:
    """``x / eps`` on ``B_eps``, ``(1 + (|x| - eps)/(2 - eps)) x/|x|`` on the
    shell ``eps < |x| < 2``, identity outside ``B_2``."""
    if not 0.0 < eps < 1.0:
        raise ConfigurationError(f"radial map needs 0 < eps < 1, got {eps}")
    if dim not in (2, 3):
        raise ConfigurationError("dimension must be 2 or 3")
    slope = 1.0 / (2.0 - eps)

    def rmap(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < eps, r / eps, np.where(r < 2.0, 1.0 + (r - eps) * slope, r))

    def rinv(s):
        s = np.asarray(s, dtype=float)
        return np.where(s < 1.0, eps * s, np.where(s < 2.0, eps + (s - 1.0) * (2.0 - eps), s))

    def shell_fwd(x):
        r = _norm(x)
        return (rmap(r) / r)[:, None] * x

    def shell_inv(y):
        s = _norm(y)
        return (rinv(s) / s)[:, None] * y

    def shell_jac(x):
        r = _norm(x)
        return _radial_jacobian(x, rmap(r), np.full_like(r, slope))

    eye = np.eye(dim)
    inner = MapPiece(
        "inner",
        contains=lambda x: _norm(x) < eps,
        image_contains=lambda y: _norm(y) < 1.0,
        forward=lambda x: x / eps,
        inverse=lambda y: eps * y,
        jacobian=lambda x: np.broadcast_to(eye / eps, (len(x), dim, dim)).copy(),
    )
    shell = MapPiece(
        "shell",
        contains=lambda x: (_norm(x) > eps) & (_norm(x) < 2.0),
        image_contains=lambda y: (_norm(y) > 1.0) & (_norm(y) < 2.0),
        forward=shell_fwd,
        inverse=shell_inv,
        jacobian=shell_jac,
    )
    outer = MapPiece(
        "outer",
        contains=lambda x: _norm(x) > 2.0,
        image_contains=lambda y: _norm(y) > 2.0,
        forward=lambda x: x.copy(),
        inverse=lambda y: y.copy(),
        jacobian=lambda x: np.broadcast_to(eye, (len(x), dim, dim)).copy(),
    )
    interfaces = (
        Interface("sphere_eps", ("inner", "shell"), _sphere_sampler(eps, dim)),
        Interface("sphere_2", ("shell", "outer"), _sphere_sampler(2.0, dim)),
    )
    return CloakMap(
        kind="radial", eps=float(eps), dim=dim, pieces=(inner, shell, outer),
        interfaces=interfaces,
        on_interface=lambda x: _near(_norm(x), eps) | _near(_norm(x), 2.0),
        on_image_interface=lambda y: _near(_norm(y), 1.0) | _near(_norm(y), 2.0),
        radial_breaks=(eps, 2.0), radius_map=rmap, radius_inverse=rinv,
        regions={"cloaked": "ball radius eps", "image": "ball radius 1", "fixed": "|x| >= 2"},
    )


def make_identity_map(dim: int = 3) -> CloakMap:
    """The identity, in the same piecewise form (useful as an audit baseline)."""
    eye = np.eye(dim)
    piece = MapPiece(
        "all",
        contains=lambda x: np.ones(len(x), dtype=bool),
        image_contains=lambda y: np.ones(len(y), dtype=bool),
        forward=lambda x: x.copy(),
        inverse=lambda y: y.copy(),
        jacobian=lambda x: np.broadcast_to(eye, (len(x), dim, dim)).copy(),
    )
    return CloakMap(
        kind="identity", eps=0.0, dim=dim, pieces=(piece,), interfaces=(),
        on_interface=lambda x: np.zeros(len(x), dtype=bool),
        on_image_interface=lambda y: np.zeros(len(y), dtype=bool),
        radial_breaks=(), radius_map=lambda r: np.asarray(r, dtype=float),
        radius_inverse=lambda s: np.asarray(s, dtype=float),
    )


# ---------------------------------------------------------------------------
# Cylinder map (as printed)
# ---------------------------------------------------------------------------
D2_RADIUS, D2_HALF_HEIGHT = 1.0, 1.5
CYL_HALF_HEIGHT = 0.5


def make_cylinder_map(eps: float) -> CloakMap:
    """Three-branch map sending the thin cylinder onto ``D_1``.

    * identity outside ``D_2 = {|x'| <= 1, |z| <= 3/2}``;
    * ``([(1 - 2 eps) + |x'|] / (2 (1 - eps)) x'/|x'|, 3 z / 4 + 3/8)`` on
      ``D_2`` minus the cylinder (undefined on the axis ``x' = 0``);
    * ``(x' / (2 eps), 3 z / 2)`` on the cylinder ``|x'| < eps, |z| < 1/2``.
    """
    if not 0.0 < eps < 0.5:
        raise ConfigurationError(f"cylinder map needs 0 < eps < 1/2, got {eps}")
    a = (1.0 - 2.0 * eps) / (2.0 * (1.0 - eps))
    b = 1.0 / (2.0 * (1.0 - eps))

    def rad(x):
        return np.hypot(x[:, 0], x[:, 1])

    def in_d2(x):
        return (rad(x) < D2_RADIUS) & (np.abs(x[:, 2]) < D2_HALF_HEIGHT)

    def in_cyl(x):
        return (rad(x) < eps) & (np.abs(x[:, 2]) < CYL_HALF_HEIGHT)

    def in_cyl_closed(x):
        return (rad(x) <= eps) & (np.abs(x[:, 2]) <= CYL_HALF_HEIGHT)

    def mid_fwd(x):
        r = rad(x)
        f = a + b * r
        return np.stack([f * x[:, 0] / r, f * x[:, 1] / r, 0.75 * x[:, 2] + 0.375], axis=1)

    def mid_inv(y):
        s = rad(y)
        r = (s - a) / b
        return np.stack([r * y[:, 0] / s, r * y[:, 1] / s, (y[:, 2] - 0.375) / 0.75], axis=1)

    def mid_jac(x):
        r = rad(x)
        xp = x[:, :2]
        J = np.zeros((len(x), 3, 3))
        J[:, :2, :2] = _radial_jacobian(xp, a + b * r, np.full_like(r, b))
        J[:, 2, 2] = 0.75
        return J

    def mid_contains(x):
        return in_d2(x) & ~in_cyl_closed(x) & (rad(x) > 0)

    def mid_image(y):
        s = rad(y)
        ok = s > a
        out = np.zeros(len(y), dtype=bool)
        if np.any(ok):
            out[ok] = mid_contains(mid_inv(y[ok]))
        return out

    scale = np.array([1.0 / (2.0 * eps), 1.0 / (2.0 * eps), 1.5])
    outside = MapPiece(
        "outside_D2",
        contains=lambda x: (rad(x) > D2_RADIUS) | (np.abs(x[:, 2]) > D2_HALF_HEIGHT),
        image_contains=lambda y: (rad(y) > D2_RADIUS) | (np.abs(y[:, 2]) > D2_HALF_HEIGHT),
        forward=lambda x: x.copy(),
        inverse=lambda y: y.copy(),
        jacobian=lambda x: np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy(),
    )
    middle = MapPiece("D2_minus_C", contains=mid_contains, image_contains=mid_image,
                      forward=mid_fwd, inverse=mid_inv, jacobian=mid_jac)
    inner = MapPiece(
        "C_eps",
        contains=in_cyl,
        image_contains=lambda y: (rad(y) < 0.5) & (np.abs(y[:, 2]) < 0.75),
        forward=lambda x: x * scale,
        inverse=lambda y: y / scale,
        jacobian=lambda x: np.broadcast_to(np.diag(scale), (len(x), 3, 3)).copy(),
    )

    def on_if(x):
        r, z = rad(x), np.abs(x[:, 2])
        lat = _near(r, eps) & (z <= CYL_HALF_HEIGHT)
        cap = _near(z, CYL_HALF_HEIGHT) & (r <= eps)
        d2 = (_near(r, D2_RADIUS) & (z <= D2_HALF_HEIGHT)) | (_near(z, D2_HALF_HEIGHT) & (r <= D2_RADIUS))
        return lat | cap | d2 | (r == 0) & (z < D2_HALF_HEIGHT) & ~in_cyl(x)

    def on_image_if(y):
        r, z = rad(y), np.abs(y[:, 2])
        d1 = (_near(r, 0.5) & (z <= 0.75)) | (_near(z, 0.75) & (r <= 0.5))
        d2 = (_near(r, D2_RADIUS) & (z <= D2_HALF_HEIGHT)) | (_near(z, D2_HALF_HEIGHT) & (r <= D2_RADIUS))
        return d1 | d2

    def lateral(radius, half):
        def sample(n, rng):
            t = rng.uniform(0, 2 * np.pi, n)
            return np.stack([radius * np.cos(t), radius * np.sin(t), rng.uniform(-half, half, n)], axis=1)
        return sample

    def caps(radius, height):
        def sample(n, rng):
            t = rng.uniform(0, 2 * np.pi, n)
            r = radius * np.sqrt(rng.uniform(1e-6, 1.0, n))  # avoid the axis
            zs = np.where(rng.uniform(size=n) < 0.5, -height, height)
            return np.stack([r * np.cos(t), r * np.sin(t), zs], axis=1)
        return sample

    interfaces = (
        Interface("C_eps_lateral", ("C_eps", "D2_minus_C"), lateral(eps, CYL_HALF_HEIGHT)),
        Interface("C_eps_caps", ("C_eps", "D2_minus_C"), caps(eps, CYL_HALF_HEIGHT)),
        Interface("D2_lateral", ("D2_minus_C", "outside_D2"), lateral(D2_RADIUS, D2_HALF_HEIGHT)),
        Interface("D2_caps", ("D2_minus_C", "outside_D2"), caps(D2_RADIUS, D2_HALF_HEIGHT)),
    )
    return CloakMap(
        kind="cylinder", eps=float(eps), dim=3, pieces=(outside, middle, inner),
        interfaces=interfaces, on_interface=on_if, on_image_interface=on_image_if,
        regions={"cloaked": "cylinder |x'| < eps, |z| < 1/2",
                 "image": "D1 = {|x'| <= 1/2, |z| <= 3/4}", "outer": "D2 = 2 D1"},
    )


# ---------------------------------------------------------------------------
# Push-forward materials
# ---------------------------------------------------------------------------
def materials(cmap: CloakMap, y) -> tuple[Array, Array]:
    """Vectorized push-forward: ``A`` of shape ``(n, d, d)`` and ``sigma`` ``(n,)``."""
    y, single = _points(y, cmap.dim)
    x, _ = cmap.preimage(y)
    J = cmap.jacobian(x)
    det = np.abs(np.linalg.det(J))
    A = (J @ np.swapaxes(J, 1, 2)) / det[:, None, None]
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    sigma = 1.0 / det
    return (A[0], sigma[0]) if single else (A, sigma)


def pushforward(cmap: CloakMap, y) -> MaterialPoint:
    """Material tensor and density at a single image point ``y``.

    Raises :class:`InterfaceError` on interfaces and :class:`DomainError`
    where the map has no unique preimage.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ConfigurationError("pushforward takes a single point; use materials() for batches")
    A, sigma = materials(cmap, y)
    return MaterialPoint(A=A, sigma=float(sigma))


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------
@dataclass
class ContinuityReport:
    """Largest jump ``|F+ - F-|`` per interface (and its axial part in 3-d)."""

    descriptor: str
    jumps: dict
    axial_jumps: dict
    probes: list

    @property
    def max_jump(self) -> float:
        return max(self.jumps.values(), default=0.0)

    def as_dict(self) -> dict:
        return {"map": self.descriptor, "max_jump": self.jumps,
                "max_axial_jump": self.axial_jumps, "probes": self.probes}


def _branch_jump(cmap, interface, pts):
    p, q = (cmap.piece(n) for n in interface.pieces)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = p.forward(pts) - q.forward(pts)
    return diff


def continuity_audit(cmap: CloakMap, n_samples: int = 1000, seed: int = 0) -> ContinuityReport:
    """Evaluate both adjacent branches at sampled interface points.

    The limits from the two sides equal the two branch formulas evaluated on
    the interface, since every branch formula is continuous up to it.
    """
    if n_samples < 100:
        raise ConfigurationError("continuity_audit needs n_samples >= 100")
    rng = np.random.default_rng(seed)
    jumps, axial = {}, {}
    for itf in cmap.interfaces:
        pts = itf.sample(n_samples, rng)
        diff = _branch_jump(cmap, itf, pts)
        jumps[itf.name] = float(np.nanmax(np.linalg.norm(diff, axis=1)))
        if cmap.dim == 3:
            axial[itf.name] = float(np.nanmax(np.abs(diff[:, 2])))
    probes = []
    if cmap.kind == "cylinder":
        eps = cmap.eps
        for name, pt in (("C_eps_lateral", [eps, 0.0, 0.0]), ("D2_caps", [0.0, 0.0, -D2_HALF_HEIGHT])):
            itf = next(i for i in cmap.interfaces if i.name == name)
            diff = _branch_jump(cmap, itf, np.array([pt]))[0]
            radial = diff[:2]
            probes.append({
                "interface": name,
                "point": [float(v) for v in pt],
                "axial_jump": float(abs(diff[2])),
                "transverse_jump": float(np.linalg.norm(radial)) if np.all(np.isfinite(radial)) else None,
            })
    return ContinuityReport(cmap.descriptor, jumps, axial, probes)


@dataclass(frozen=True)
class BumpTestFunction:
    """``phi(y) = beta(|y|) * prod(y_i ** powers_i)`` with the smooth bump
    ``beta(r) = exp(-c / ((r - a1)(a2 - r)))`` on ``a1 < r < a2``, with
    ``c = 2 (a2 - a1)^2``."""

    a1: float
    a2: float
    powers: tuple[int, ...]

    def __post_init__(self):
        if not 0.0 <= self.a1 < self.a2:
            raise ConfigurationError("bump window must satisfy 0 <= a1 < a2")

    def __call__(self, y) -> FieldSample:
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        y = np.atleast_2d(y)
        value = np.zeros(len(y))
        grad = np.zeros(y.shape)
        r = _norm(y)
        inside = (r > self.a1) & (r < self.a2)
        yi, ri = y[inside], r[inside]
        c = BUMP_STEEPNESS * (self.a2 - self.a1) ** 2
        P = (ri - self.a1) * (self.a2 - ri)
        beta = np.exp(-c / P)
        dbeta = beta * c * (self.a1 + self.a2 - 2.0 * ri) / P**2
        p = np.asarray(self.powers)
        q = np.prod(yi**p, axis=1)
        dq = np.zeros_like(yi)
        for i in np.flatnonzero(p):
            pi = p.copy()
            pi[i] -= 1
            dq[:, i] = p[i] * np.prod(yi**pi, axis=1)
        value[inside] = beta * q
        grad[inside] = (dbeta * q / ri)[:, None] * yi + beta[:, None] * dq
        if single:
            return FieldSample(value[0], grad[0])
        return FieldSample(value, grad)


def default_test_functions(dim: int = 3) -> list[BumpTestFunction]:
    """Ten bump test functions, several straddling the image interface ``|y| = 1``."""
    windows = [(0.3, 1.6), (0.5, 1.2), (0.8, 1.9), (0.2, 0.9), (1.1, 1.8)]
    powers = [(0,) * dim, (1,) + (0,) * (dim - 1)]
    return [BumpTestFunction(a1, a2, p) for (a1, a2) in windows for p in powers]


def _ball_rule(breaks: Sequence[float], level: int, dim: int):
    """Tensor rule on the shells between consecutive ``breaks``: Gauss in the
    radius (``8 level`` nodes per shell), trapezoid in azimuth (``16 level``)
    and Gauss in the polar cosine (``8 level``)."""
    rs, wr = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            rule = gauss_legendre(8 * level, a, b)
            rs.append(rule.nodes)
            wr.append(rule.weights * rule.nodes ** (dim - 1))
    r, wr = np.concatenate(rs), np.concatenate(wr)
    n_az = 16 * level
    phi = 2.0 * np.pi * np.arange(n_az) / n_az
    w_az = np.full(n_az, 2.0 * np.pi / n_az)
    if dim == 2:
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        wd = w_az
    else:
        pol = gauss_legendre(8 * level, -1.0, 1.0)
        ct, st = pol.nodes, np.sqrt(1.0 - pol.nodes**2)
        dirs = np.stack([np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(),
                         np.repeat(ct, n_az)], axis=1)
        wd = np.outer(pol.weights, w_az).ravel()
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    w = np.outer(wr, wd).ravel()
    return pts, w


def check_invertible(cmap: CloakMap, n: int = 2000, seed: int = 0, radius: float = 2.5) -> None:
    """Sample points in ``B_radius`` and require a unique preimage that round-trips."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, (n, cmap.dim))
    x = x[~cmap.on_interface(x)]
    x = x[cmap._locate(x) >= 0]
    y = cmap.forward(x)
    try:
        back = cmap.inverse(y)
    except DomainError as exc:
        raise DomainError(f"{cmap.descriptor} failed invertibility sampling: {exc}") from exc
    err = float(np.max(np.abs(back - x)))
    if err > 1e-10:
        raise DomainError(f"{cmap.descriptor} failed invertibility sampling: round-trip error {err:.2e}")


@dataclass
class IdentityAudit:
    """Both weak forms for each test function and their largest gap,
    relative to the integral of the absolute physical integrand."""

    level: int
    physical: list
    transformed: list
    defects: list

    @property
    def defect(self) -> float:
        return max(self.defects)


def transform_identity_audit(cmap: CloakMap, k: float, u, test_fns=None,
                             level: int = 6, rules: str = "independent") -> IdentityAudit:
    """Compare the weak form of ``Delta u + k^2 u`` in ``x`` with that of the
    transformed equation in ``y = F(x)``, tested against each ``phi``:

    ``int grad u . grad(phi o F) - k^2 u (phi o F) dx``
    ``int A grad v . grad phi - k^2 sigma v phi dy`` with ``v = u o F^-1``.

    Test functions need a radial support ``(a1, a2)`` and return a
    :class:`FieldSample` in ``y``. The transformed side is split at the
    support ends and the image interfaces. With ``rules="independent"`` the
    physical side is split only at the map's kinks and the outer support
    radius, so the gap is a genuine quadrature error. With
    ``rules="matched"`` it uses the pull-back of the transformed-side rule;
    for piecewise radially affine maps both sums then agree to rounding.
    """
    if rules not in ("independent", "matched"):
        raise ConfigurationError(f"unknown rule choice {rules!r}")
    check_invertible(cmap)
    if cmap.radius_map is None:
        raise ConfigurationError("transform_identity_audit needs a radially symmetric map")
    if level < 1:
        raise ConfigurationError("quadrature level must be >= 1")
    if test_fns is None:
        test_fns = default_test_functions(cmap.dim)
    d = cmap.dim
    img_breaks = [float(cmap.radius_map(b)) for b in cmap.radial_breaks]
    cache = {}

    def sides(a1, a2):
        # quadrature data shared by test functions with the same support
        yb = sorted({a1, a2, *[b for b in img_breaks if a1 < b < a2]})
        ypts, yw = _ball_rule(yb, level, d)
        A, sigma = materials(cmap, ypts)
        xpre = cmap.inverse(ypts)
        us = u(xpre)
        J = cmap.jacobian(xpre)
        grad_v = np.linalg.solve(np.swapaxes(J, 1, 2), us.grad[:, :, None])[:, :, 0]
        ty = (ypts, yw, (A @ grad_v[:, :, None])[:, :, 0], sigma * us.value)
        if rules == "matched":
            xb = [float(cmap.radius_inverse(b)) for b in yb]
        else:
            x2 = float(cmap.radius_inverse(a2))
            xb = sorted({0.0, *[b for b in cmap.radial_breaks if b < x2], x2})
        xpts, xw = _ball_rule(xb, level, d)
        yimg = cmap.forward(xpts)
        Jx = cmap.jacobian(xpts)
        ux = u(xpts)
        # grad(phi o F) = DF^T grad(phi), so contract grad u with DF first
        tx = (yimg, xw, (Jx @ ux.grad[:, :, None])[:, :, 0], ux.value)
        return ty, tx

    phys, trans, defects = [], [], []
    for phi in test_fns:
        key = (float(phi.a1), float(phi.a2))
        if key not in cache:
            cache[key] = sides(*key)
        (ypts, yw, Agv, sv), (yimg, xw, Jgu, ux) = cache[key]
        ph = phi(ypts)
        rhs = np.sum(yw * (np.einsum("ni,ni->n", Agv, ph.grad) - k**2 * sv * ph.value))
        phx = phi(yimg)
        grad_term = np.einsum("ni,ni->n", Jgu, phx.grad)
        mass_term = k**2 * ux * phx.value
        lhs = np.sum(xw * (grad_term - mass_term))
        # both forms vanish when u solves the equation, so measure against
        # the size of the integrand rather than of the integral
        scale = float(np.sum(xw * (np.abs(grad_term) + np.abs(mass_term))))
        phys.append(complex(lhs))
        trans.append(complex(rhs))
        defects.append(float(abs(lhs - rhs) / scale) if scale > 0 else 0.0)
    return IdentityAudit(level=level, physical=phys, transformed=trans, defects=defects)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------
@dataclass
class MaterialRecords:
    """Exported material samples; ``skipped_interface`` counts refused grid
    points on interfaces, ``skipped_noninjective`` those without a unique
    preimage."""

    y: Array
    A: Array
    sigma: Array
    eigmin: Array
    eigmax: Array
    skipped_interface: int
    skipped_noninjective: int

    @property
    def anisotropy(self) -> Array:
        return self.eigmax / self.eigmin

    def __len__(self):
        return len(self.sigma)


def export_materials(cmap: CloakMap, grid, out=None, config_hash: str = "") -> MaterialRecords:
    """Push-forward materials on a grid of image points.

    ``grid`` is an ``(n, d)`` array. Interface points are skipped and
    counted. With ``out`` (path or text stream) the records are also
    written in the ``cloaklab-mat-1`` text format.
    """
    Y = np.atleast_2d(np.asarray(grid, dtype=float))
    if Y.shape[1] != cmap.dim:
        raise ConfigurationError("grid dimension does not match the map")
    on_if = cmap.on_image_interface(Y)
    keep = ~on_if
    noninj = np.zeros(len(Y), dtype=bool)
    # points on the preimage side of an interface also have undefined DF
    for i in np.flatnonzero(keep):
        try:
            x, _ = cmap.preimage(Y[i])
        except InterfaceError:
            on_if[i] = True
            continue
        except DomainError:
            noninj[i] = True
            continue
        if cmap.on_interface(x[None])[0]:
            on_if[i] = True
    keep = ~on_if & ~noninj
    Yk = Y[keep]
    if len(Yk):
        A, sigma = materials(cmap, Yk)
        ev = np.linalg.eigvalsh(A)
        eigmin, eigmax = ev[:, 0], ev[:, -1]
    else:
        A = np.zeros((0, cmap.dim, cmap.dim))
        sigma = eigmin = eigmax = np.zeros(0)
    rec = MaterialRecords(Yk, A, sigma, eigmin, eigmax, int(on_if.sum()), int(noninj.sum()))
    if out is not None:
        write_materials(rec, cmap, out, config_hash)
    return rec


def write_materials(rec: MaterialRecords, cmap: CloakMap, out, config_hash: str = "") -> None:
    """Write records as whitespace-separated text, 3-d layout (2-d padded with zeros)."""
    header = {"format": FORMAT_VERSION, "map": cmap.descriptor, "eps": cmap.eps,
              "config_hash": config_hash, "records": len(rec),
              "skipped_interface": rec.skipped_interface,
              "skipped_noninjective": rec.skipped_noninjective}
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write("# " + " ".join(MAT_COLUMNS) + "\n")
    n = len(rec)
    y3 = np.zeros((n, 3))
    y3[:, :cmap.dim] = rec.y
    A3 = np.zeros((n, 3, 3))
    A3[:, :cmap.dim, :cmap.dim] = rec.A
    cols = np.column_stack([y3, A3[:, 0, 0], A3[:, 0, 1], A3[:, 0, 2], A3[:, 1, 1], A3[:, 1, 2],
                            A3[:, 2, 2], rec.sigma, rec.eigmin, rec.eigmax])
    for row in cols:
        buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    text = buf.getvalue()
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def read_materials(path) -> tuple[dict, Array]:
    """Parse a ``cloaklab-mat-1`` file into its header and a data array."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigurationError("missing material header")
        header = json.loads(first[2:])
        if header.get("format") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported material format {header.get('format')!r}")
        data = np.loadtxt(fh, comments="#", ndmin=2)
    return header, data


def grid_hash(grid) -> str:
    return hashlib.sha256(np.ascontiguousarray(grid, dtype=float).tobytes()).hexdigest()[:16]
