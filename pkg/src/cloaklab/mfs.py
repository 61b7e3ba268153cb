"""
Method of fundamental solutions for sound-soft obstacles.

The scattered field is a superposition of outgoing Green's functions with
sources strictly inside the obstacle, so it solves the Helmholtz equation and
the radiation condition exactly; only the Dirichlet condition is approximated.
Coefficients come from a regularized least-squares fit at boundary
collocation nodes, and every model carries a residual certificate measured at
a disjoint, denser set of validation nodes.

Balls use point sources on a concentric sphere and a dense solve.

Cylinders use the rotational symmetry. Sources are axis monopoles plus
coaxial rings carrying band-limited densities ``exp(i m phi)``,
``|m| < n_theta / 2``. Collocation nodes sit on rings sharing ``n_theta``
equispaced angles. A DFT in the angle index then splits the Tikhonov problem
exactly into one small problem per azimuthal mode. Ring kernels are computed
by a dyadically graded Gauss rule in the ring angle, which stays accurate for
targets very close to a ring. This matters because the rim edge makes the
scattered field singular there, and resolving it requires sources graded
geometrically into the rim.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .analytic_ball import BallGeom
from .errors import CertificateError, ConfigurationError, DomainError
from .fields import Field, FieldSample, green_matrix
from .numkit import fibonacci_sphere, gauss_legendre, lstsq_tikhonov, sphere_rule

logger = logging.getLogger(__name__)

DEFAULT_GATE = 1e-3
RIM_RATIO = 0.5          # geometric ratio of the rim grading
RIM_LEVELS = 16          # geometric levels of the rim grading
RIM_CELLS_PER_LEVEL = 3  # collocation cells per geometric level
RIM_SOURCE_SLOPE = 0.6   # proxy depth / distance to the rim, near the rim
EVAL_CHUNK = 2048
KERNEL_CHUNK = 2_000_000  # target x source x node entries per block
PANEL_NODES = 16
MIN_OVERSAMPLING = 1.5  # collocation nodes per unknown


@dataclass(frozen=True)
class CylinderGeom:
    """Closed cylinder ``|x'| <= radius, |z| <= half_height``."""

    radius: float
    half_height: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ConfigurationError(f"cylinder radius must lie in (0, 1), got {self.radius}")
        if self.half_height <= 0:
            raise ConfigurationError("cylinder half height must be positive")

    @property
    def dim(self) -> int:
        return 3

    @property
    def area(self) -> float:
        e = self.radius
        return 2.0 * np.pi * e * 2.0 * self.half_height + 2.0 * np.pi * e**2

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        rho = np.hypot(x[:, 0], x[:, 1])
        tol = 1.0 - 1e-12
        return (rho < self.radius * tol) & (np.abs(x[:, 2]) < self.half_height * tol)


@dataclass(frozen=True)
class MfsConfig:
    """Discretization parameters of the MFS solve.

    Cylinder: ``n_z`` lateral collocation rings away from the rims and
    ``n_cap_rings`` uniform collocation rings per cap; rim-graded rings are
    added on top. Proxy rings number ``n_z // 2`` (lateral) and
    ``n_cap_rings // 2`` (per cap). ``tikhonov`` is relative to the largest
    column norm of the system matrix. Ball: ``n_theta`` azimuthal and
    ``n_z // 2`` polar collocation nodes.
    """

    n_theta: int = 24
    n_z: int = 48
    n_cap_rings: int = 6
    axis_sources: int = 64
    proxy_scale_radial: float = 0.5
    proxy_scale_axial: float = 0.9
    tikhonov: float = 1e-11
    validation_oversample: float = 2.0

    def __post_init__(self):
        if self.n_theta < 4 or self.n_theta % 2:
            raise ConfigurationError("n_theta must be an even integer >= 4")
        if self.n_z < 8:
            raise ConfigurationError("n_z must be at least 8")
        if self.n_cap_rings < 2:
            raise ConfigurationError("n_cap_rings must be >= 2")
        if self.axis_sources < 1:
            raise ConfigurationError("axis_sources must be >= 1")
        if not 0.0 < self.proxy_scale_radial < 1.0:
            raise ConfigurationError("proxy_scale_radial must lie in (0, 1)")
        if not 0.0 < self.proxy_scale_axial < 1.0:
            raise ConfigurationError("proxy_scale_axial must lie in (0, 1)")
        if self.tikhonov < 0:
            raise ConfigurationError("tikhonov must be >= 0")
        if self.validation_oversample < 2:
            raise ConfigurationError("validation_oversample must be >= 2")

    @classmethod
    def for_eps(cls, eps: float, **overrides) -> "MfsConfig":
        """Default configuration scaled for a cylinder of radius ``eps``.

        Proxy rings sit ``(1 - proxy_scale_radial) * eps`` inside the wall,
        so their axial spacing has to shrink like ``eps``.
        """
        n_z = max(48, 2 * math.ceil(3.0 / eps))
        base = dict(n_z=n_z, axis_sources=max(16, n_z // 4))
        base.update(overrides)
        return cls(**base)

    def doubled(self) -> "MfsConfig":
        return replace(self, n_theta=2 * self.n_theta, n_z=2 * self.n_z,
                       n_cap_rings=2 * self.n_cap_rings, axis_sources=2 * self.axis_sources)


@dataclass
class RingLayout:
    """Coaxial rings ``(rho[i], z[i])`` sampled at ``n_theta`` angles
    ``2*pi*l/n_theta + offset``, plus loose points (cap centres).

    Flattened order: loose points first, then ring-major, angle fastest.
    """

    n_theta: int
    rho: np.ndarray
    z: np.ndarray
    single: np.ndarray
    offset: float = 0.0

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta + self.offset

    def points(self) -> np.ndarray:
        th = self.angles
        ring = np.stack(
            [
                (self.rho[:, None] * np.cos(th)[None, :]).ravel(),
                (self.rho[:, None] * np.sin(th)[None, :]).ravel(),
                np.repeat(self.z, self.n_theta),
            ],
            axis=1,
        )
        return np.concatenate([self.single.reshape(-1, 3), ring])

    def __len__(self):
        return len(self.single) + self.rho.size * self.n_theta


@dataclass
class RingSources:
    """Axis monopoles at ``(0, 0, axis_z)`` and rings ``(rho, z)`` carrying
    densities ``exp(i m phi)`` for ``m`` in ``modes``."""

    axis_z: np.ndarray
    rho: np.ndarray
    z: np.ndarray
    modes: np.ndarray

    @property
    def n_unknowns(self) -> int:
        return self.axis_z.size + self.rho.size * self.modes.size

    def points(self) -> np.ndarray:
        """Representative source locations (ring points at angle 0)."""
        axis = np.stack([np.zeros_like(self.axis_z), np.zeros_like(self.axis_z), self.axis_z], axis=1)
        ring = np.stack([self.rho, np.zeros_like(self.rho), self.z], axis=1)
        return np.concatenate([axis, ring])


@dataclass
class BoundaryNodes:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    part: np.ndarray  # "lateral", "cap" or "sphere"
    layout: RingLayout | None = None

    def __len__(self):
        return len(self.weights)


@dataclass
class MfsModel:
    """Fitted MFS solution.

    For balls ``sources`` are point locations and ``coefficients`` their
    amplitudes. For cylinders ``sources`` lists the axis monopoles followed by
    one representative point per ring; ``coefficients`` holds the monopole
    amplitudes followed by the ring mode amplitudes (ring-major).
    """

    geom: object
    k: float
    incident: Field
    sources: np.ndarray
    coefficients: np.ndarray
    residual_certificate: float
    condition: float
    lam: float
    n_collocation: int
    config: MfsConfig
    gate: float = DEFAULT_GATE
    rings: RingSources | None = None
    notes: list = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def certified(self) -> bool:
        return self.residual_certificate <= self.gate

    @property
    def n_unknowns(self) -> int:
        return len(self.coefficients)


# ---------------------------------------------------------------------------
# Node generation
# ---------------------------------------------------------------------------
def rim_depth(geom: CylinderGeom, config: MfsConfig) -> float:
    """Width of the rim-graded zone; equals the proxy depth."""
    return (1.0 - config.proxy_scale_radial) * geom.radius


def _rim_offsets(d: float, h_max: float) -> np.ndarray:
    """Distances from the rim of the graded cell edges in a zone of width
    ``d``: geometric, with no cell wider than ``h_max``."""
    geo = d * RIM_RATIO ** np.arange(RIM_LEVELS + 1)
    out = [geo[-1]]
    for lo, hi in zip(geo[::-1][:-1], geo[::-1][1:]):
        n = max(RIM_CELLS_PER_LEVEL, math.ceil((hi - lo) / h_max - 1e-9))
        out.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
    return np.array(out[::-1])  # decreasing, starts at d


def lateral_edges(geom: CylinderGeom, config: MfsConfig) -> np.ndarray:
    """Axial cell edges: ``n_z`` uniform cells, then graded cells towards both rims."""
    h, d = geom.half_height, rim_depth(geom, config)
    uniform = np.linspace(-(h - d), h - d, config.n_z + 1)
    rim = _rim_offsets(d, uniform[1] - uniform[0])
    return np.concatenate([[-h], -h + rim[::-1], uniform[1:-1], h - rim, [h]])


def cap_edges(geom: CylinderGeom, config: MfsConfig) -> np.ndarray:
    """Radial cell edges on a cap: uniform, then graded towards the rim."""
    eps, d = geom.radius, rim_depth(geom, config)
    uniform = np.linspace(0.0, eps - d, config.n_cap_rings + 1)
    rim = _rim_offsets(d, uniform[1] - uniform[0])
    return np.concatenate([uniform[:-1], eps - rim, [eps]])


def _subdivide(edges: np.ndarray, m: int) -> np.ndarray:
    fine = [np.linspace(lo, hi, m + 1)[:-1] for lo, hi in zip(edges[:-1], edges[1:])]
    return np.concatenate(fine + [edges[-1:]])


def _cylinder_nodes(geom: CylinderGeom, config: MfsConfig, validation: bool) -> BoundaryNodes:
    eps, h = geom.radius, geom.half_height
    m = int(round(config.validation_oversample)) if validation else 1
    n_theta = config.n_theta * m
    offset = np.pi / n_theta if validation else 0.0
    z_edges = lateral_edges(geom, config)
    r_edges = cap_edges(geom, config)
    if validation:
        z_edges = _subdivide(z_edges, m)
        r_edges = _subdivide(r_edges, m)
    zc = 0.5 * (z_edges[:-1] + z_edges[1:])
    dz = np.diff(z_edges)
    # the innermost cap cell is a disk: one centre node in the collocation
    # set, a ring at its half radius in the validation set
    rc = 0.5 * (r_edges[:-1] + r_edges[1:])
    ring_area = np.pi * (r_edges[1:] ** 2 - r_edges[:-1] ** 2)
    if validation:
        rc[0] = 0.5 * r_edges[1]
        cap_area = ring_area
    else:
        rc, cap_area, centre_area = rc[1:], ring_area[1:], ring_area[0]
    n_lat, n_cap = zc.size, rc.size

    rho = np.concatenate([np.full(n_lat, eps), rc, rc])
    z = np.concatenate([zc, np.full(n_cap, h), np.full(n_cap, -h)])
    if validation:
        single = np.zeros((0, 3))
        w_single = np.zeros(0)
        n_single = np.zeros((0, 3))
    else:
        single = np.array([[0.0, 0.0, h], [0.0, 0.0, -h]])
        w_single = np.full(2, centre_area)
        n_single = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    layout = RingLayout(n_theta=n_theta, rho=rho, z=z, single=single, offset=offset)

    th = layout.angles
    lat_n = np.stack([np.cos(th), np.sin(th), np.zeros(n_theta)], axis=1)
    normals = np.concatenate(
        [n_single, np.tile(lat_n, (n_lat, 1)),
         np.tile([0.0, 0.0, 1.0], (n_cap * n_theta, 1)),
         np.tile([0.0, 0.0, -1.0], (n_cap * n_theta, 1))]
    )
    ring_w = np.concatenate([dz * 2.0 * np.pi * eps, cap_area, cap_area]) / n_theta
    weights = np.concatenate([w_single, np.repeat(ring_w, n_theta)])
    part = np.array(["cap"] * len(single) + ["lateral"] * (n_lat * n_theta)
                    + ["cap"] * (2 * n_cap * n_theta))
    return BoundaryNodes(points=layout.points(), normals=normals, weights=weights,
                         part=part, layout=layout)


def _sphere_nodes(geom: BallGeom, config: MfsConfig, validation: bool) -> BoundaryNodes:
    if geom.dim != 3:
        raise ConfigurationError("the MFS solver handles 3-d balls only")
    m = int(round(config.validation_oversample)) if validation else 1
    n_az, n_pol = config.n_theta * m, max(4, config.n_z // 2) * m
    dirs, w = sphere_rule(n_az, n_pol)
    if validation:
        c, s = np.cos(np.pi / n_az), np.sin(np.pi / n_az)
        dirs = dirs @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]).T
    eps = geom.radius
    return BoundaryNodes(points=eps * dirs, normals=dirs, weights=eps**2 * w,
                         part=np.array(["sphere"] * len(w)))


def boundary_nodes(geom, config: MfsConfig, validation: bool = False) -> BoundaryNodes:
    """Collocation (or validation) nodes with outward normals and surface weights.

    Cylinder nodes are cell midpoints of axial and radial grids that are
    uniform away from the rims and geometrically graded towards them.
    Validation nodes subdivide every cell ``validation_oversample`` times and
    rotate by half an angular step, so they never coincide with collocation
    nodes.
    """
    if isinstance(geom, BallGeom):
        return _sphere_nodes(geom, config, validation)
    if isinstance(geom, CylinderGeom):
        return _cylinder_nodes(geom, config, validation)
    raise ConfigurationError(f"unsupported geometry {geom!r}")


def ring_sources(geom: CylinderGeom, config: MfsConfig) -> RingSources:
    """Source families of the cylinder solve.

    * axis monopoles at Chebyshev stations on ``|z| <= proxy_scale_axial * h``;
    * proxy rings under every other collocation ring (lateral and caps). The
      inward depth is ``(1 - proxy_scale_radial) * eps`` away from the rims
      and ``RIM_SOURCE_SLOPE`` times the distance to the rim close to it, so
      the proxy surface folds into the rim edge along with the node grading.
    """
    eps, h = geom.radius, geom.half_height
    d = rim_depth(geom, config)
    j = np.arange(config.axis_sources)
    axis_z = config.proxy_scale_axial * h * np.cos(np.pi * (j + 0.5) / config.axis_sources)
    ze = lateral_edges(geom, config)
    zc = (0.5 * (ze[1:] + ze[:-1]))[::2]
    re = cap_edges(geom, config)
    rc = (0.5 * (re[1:] + re[:-1]))[1::2]
    depth_lat = np.minimum(d, RIM_SOURCE_SLOPE * (h - np.abs(zc)))
    depth_cap = np.minimum(d, RIM_SOURCE_SLOPE * (eps - rc))
    rho = np.concatenate([eps - depth_lat, rc, rc])
    z = np.concatenate([zc, h - depth_cap, -(h - depth_cap)])
    m_max = config.n_theta // 2 - 1
    return RingSources(axis_z=axis_z, rho=rho, z=z, modes=np.arange(-m_max, m_max + 1))


def source_points(geom, config: MfsConfig) -> np.ndarray:
    """Interior source points (ring representatives for cylinders)."""
    if isinstance(geom, BallGeom):
        if geom.dim != 3:
            raise ConfigurationError("the MFS solver handles 3-d balls only")
        n = max(8, config.n_theta * max(4, config.n_z // 2) // 4)
        pts = config.proxy_scale_radial * geom.radius * fibonacci_sphere(n)
        if np.any(np.linalg.norm(pts, axis=1) >= geom.radius):
            raise RuntimeError("MFS source placement bug: source outside the ball")
        return pts
    pts = ring_sources(geom, config).points()
    if not np.all(geom.contains(pts)):
        raise RuntimeError("MFS source placement bug: source outside the cylinder")
    return pts


# ---------------------------------------------------------------------------
# Ring kernels
# ---------------------------------------------------------------------------
def _green_r(k, R):
    G = np.exp(1j * k * R) / (4.0 * np.pi * R)
    return G, G * (1j * k - 1.0 / R)


@lru_cache(maxsize=64)
def _angle_rule(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on ``[0, pi]`` with panels ``[pi 2^-j, pi 2^(1-j)]`` for
    ``j = 1..level`` plus ``[0, pi 2^-level]``."""
    edges = np.concatenate([[0.0], np.pi * 2.0 ** -np.arange(level, -1, -1.0)])
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        r = gauss_legendre(PANEL_NODES, a, b)
        nodes.append(r.nodes)
        weights.append(r.weights)
    return np.concatenate(nodes), np.concatenate(weights)


def _rule_levels(t_rho, t_z, s_rho, s_z) -> np.ndarray:
    # angular half-width of the near-singular peak of G around each ring
    dist = np.hypot(t_rho[:, None] - s_rho[None, :], t_z[:, None] - s_z[None, :])
    scale = np.sqrt(np.maximum(t_rho[:, None] * s_rho[None, :], 1e-300))
    w = np.maximum((dist / scale).min(axis=1), 1e-300)
    return np.clip(np.ceil(np.log2(2.0 * np.pi / w)), 1, 60).astype(int)


def modal_kernels(k, t_rho, t_z, s_rho, s_z, m_max: int, with_grad: bool = False):
    """Fields of unit ring densities ``exp(i m phi)``, ``0 <= m <= m_max``,
    at targets ``(t_rho, 0, t_z)``.

    Returns ``K`` of shape ``(T, S, m_max + 1)``; with gradients, a list
    ``[K, d/d rho K, d/dz K]`` (derivatives at the target). The density is
    normalized so that ``K_0`` is the ring average of ``G``.
    """
    t_rho, t_z = np.atleast_1d(t_rho).astype(float), np.atleast_1d(t_z).astype(float)
    s_rho, s_z = np.asarray(s_rho, dtype=float), np.asarray(s_z, dtype=float)
    T, S = t_rho.size, s_rho.size
    ms = np.arange(m_max + 1)
    out = [np.zeros((T, S, m_max + 1), dtype=complex) for _ in range(3 if with_grad else 1)]
    if T == 0 or S == 0:
        return out if with_grad else out[0]
    levels = _rule_levels(t_rho, t_z, s_rho, s_z)
    for lev in np.unique(levels):
        idx = np.flatnonzero(levels == lev)
        psi, w = _angle_rule(int(lev))
        cosp = np.cos(psi)[None, None, :]
        basis = (w[:, None] * np.cos(np.outer(psi, ms))) / np.pi
        step = max(1, KERNEL_CHUNK // (S * psi.size))
        for c in range(0, idx.size, step):
            sel = idx[c:c + step]
            tr = t_rho[sel][:, None, None]
            sr = s_rho[None, :, None]
            dz = (t_z[sel][:, None] - s_z[None, :])[:, :, None]
            R = np.sqrt((tr - sr) ** 2 + dz**2 + 2.0 * tr * sr * (1.0 - cosp))
            if np.any(R == 0.0):
                raise DomainError("target lies on a source ring")
            G, dG = _green_r(k, R)
            out[0][sel] = G @ basis
            if with_grad:
                dGR = dG / R
                out[1][sel] = (dGR * (tr - sr * cosp)) @ basis
                out[2][sel] = (dGR * dz) @ basis
    return out if with_grad else out[0]


def _axis_kernels(k, t_rho, t_z, axis_z, with_grad=False):
    dz = t_z[:, None] - axis_z[None, :]
    R = np.sqrt(t_rho[:, None] ** 2 + dz**2)
    if np.any(R == 0.0):
        raise DomainError("target coincides with an axis source")
    G, dG = _green_r(k, R)
    if not with_grad:
        return G
    return [G, dG / R * t_rho[:, None], dG / R * dz]


def _solve_rings(k, colloc: RingLayout, src: RingSources, b: np.ndarray, tikhonov: float):
    """Mode-by-mode Tikhonov solve of the collocation system.

    The DFT over the collocation angles is unitary, so the regularized
    problem over all modes is exactly the sum of the per-mode problems.
    """
    n = colloc.n_theta
    if colloc.offset != 0.0:
        raise ConfigurationError("collocation rings must start at angle 0")
    m_max = int(np.abs(src.modes).max())
    if 2 * m_max >= n:
        raise ConfigurationError("ring modes alias on the collocation rings")
    rt = np.sqrt(n)
    c_rho, c_z = np.zeros(len(colloc.single)), colloc.single[:, 2]
    K = modal_kernels(k, colloc.rho, colloc.z, src.rho, src.z, m_max)      # (Rc, Rs, M+1)
    Kc = modal_kernels(k, c_rho, c_z, src.rho, src.z, 0)[:, :, 0]           # (Nc, Rs)
    A_ax = _axis_kernels(k, colloc.rho, colloc.z, src.axis_z)               # (Rc, Na)
    C_ax = _axis_kernels(k, c_rho, c_z, src.axis_z)                         # (Nc, Na)

    col2 = n * (np.abs(K) ** 2).sum(axis=0)
    col2[:, 0] += (np.abs(Kc) ** 2).sum(axis=0)
    col2_ax = n * (np.abs(A_ax) ** 2).sum(axis=0) + (np.abs(C_ax) ** 2).sum(axis=0)
    lam = tikhonov * float(np.sqrt(max(col2.max(initial=0.0), col2_ax.max(initial=0.0))))

    nc = len(colloc.single)
    b_single = b[:nc]
    bhat = np.fft.fft(b[nc:].reshape(colloc.rho.size, n), axis=1) / rt

    na = src.axis_z.size
    coef_ring = np.zeros((src.rho.size, src.modes.size), dtype=complex)
    col_of = {int(m): i for i, m in enumerate(src.modes)}
    A0 = np.block([[C_ax, Kc], [rt * A_ax, rt * K[:, :, 0]]])
    sol = lstsq_tikhonov(A0, np.concatenate([b_single, bhat[:, 0]]), lam=lam)
    cond = sol.cond
    notes = [f"mode 0: {s}" for s in sol.notes]
    coef_axis = sol.x[:na]
    coef_ring[:, col_of[0]] = sol.x[na:]
    for m in range(1, m_max + 1):
        rhs = np.stack([bhat[:, m], bhat[:, -m]], axis=1)
        sol = lstsq_tikhonov(rt * K[:, :, m], rhs, lam=lam)
        cond = max(cond, sol.cond)
        notes.extend(f"mode {m}: {s}" for s in sol.notes)
        coef_ring[:, col_of[m]] = sol.x[:, 0]
        coef_ring[:, col_of[-m]] = sol.x[:, 1]
    return np.concatenate([coef_axis, coef_ring.ravel()]), cond, lam, notes


def _eval_modal(model: "MfsModel", rho, z, theta, with_grad: bool):
    """Ring-source field at targets ``(rho[t], theta[t, p], z[t])``.

    Returns value ``(T, P)`` and Cartesian gradient ``(T, P, 3)`` (or None).
    """
    src = model.rings
    na = src.axis_z.size
    a_axis = model.coefficients[:na]
    a_ring = model.coefficients[na:].reshape(src.rho.size, src.modes.size)
    m_abs = np.abs(src.modes)
    kers = modal_kernels(model.k, rho, z, src.rho, src.z, int(m_abs.max()), with_grad=with_grad)
    axk = _axis_kernels(model.k, rho, z, src.axis_z, with_grad=with_grad)
    if not with_grad:
        kers, axk = [kers], [axk]
    phase = np.exp(1j * src.modes[None, None, :] * theta[:, :, None])   # (T, P, M)
    spec = [np.einsum("tsm,sm->tm", K[:, :, m_abs], a_ring) for K in kers]

    def synth(sp, ax):
        return np.einsum("tpm,tm->tp", phase, sp) + (ax @ a_axis)[:, None]

    val = synth(spec[0], axk[0])
    if not with_grad:
        return val, None
    g_r = synth(spec[1], axk[1])
    g_z = synth(spec[2], axk[2])
    safe = np.where(rho > 0, rho, 1.0)
    g_t = np.einsum("tpm,tm->tp", phase, 1j * src.modes[None, :] * spec[0]) / safe[:, None]
    g_t = np.where(rho[:, None] > 0, g_t, 0.0)
    c, s = np.cos(theta), np.sin(theta)
    grad = np.stack([g_r * c - g_t * s, g_r * s + g_t * c, g_z], axis=-1)
    return val, grad


def eval_scattered_rings(model: "MfsModel", rho, z, n_az: int, offset: float = 0.0,
                         with_grad: bool = True) -> FieldSample:
    """Scattered field on target rings ``(rho[t], z[t])`` at ``n_az`` equispaced
    angles ``2*pi*p/n_az + offset``.

    Values have shape ``(T * n_az,)`` and Cartesian gradients
    ``(T * n_az, 3)``, ring-major. Ring kernels are computed once per target
    ring, which makes this much cheaper than pointwise evaluation.
    """
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    th = 2.0 * np.pi * np.arange(n_az) / n_az + offset
    if model.rings is None:
        pts = np.stack([(rho[:, None] * np.cos(th)).ravel(), (rho[:, None] * np.sin(th)).ravel(),
                        np.repeat(z, n_az)], axis=1)
        return eval_scattered(model, pts, check_inside=False)
    theta = np.broadcast_to(th, (rho.size, n_az))
    val, grad = _eval_modal(model, rho, z, theta, with_grad)
    if grad is None:
        grad = np.zeros((rho.size, n_az, 3), dtype=complex)
    return FieldSample(val.ravel(), grad.reshape(-1, 3))


# ---------------------------------------------------------------------------
# Solve and evaluate
# ---------------------------------------------------------------------------
def solve_obstacle(geom, k: float, incident: Field, config: MfsConfig | None = None,
                   gate: float = DEFAULT_GATE, raise_on_failure: bool = False) -> MfsModel:
    """Fit the scattered field so that incident + scattered vanishes on the boundary.

    ``k = 0`` selects the Laplace kernel (static limit). A certificate above
    ``gate`` marks the model uncertified; with ``raise_on_failure`` a
    :class:`CertificateError` carrying the model is raised instead.
    """
    t0 = time.perf_counter()
    if k < 0 or not np.isfinite(k):
        raise ConfigurationError("wavenumber must be >= 0")
    if config is None:
        config = MfsConfig.for_eps(geom.radius) if isinstance(geom, CylinderGeom) else MfsConfig()
    if k * geom.radius > 10:
        raise ConfigurationError("MFS is restricted to k*eps <= 10")
    nodes = boundary_nodes(geom, config)
    src = source_points(geom, config)
    rings = ring_sources(geom, config) if isinstance(geom, CylinderGeom) else None
    n_unknowns = rings.n_unknowns if rings is not None else len(src)
    if len(nodes) < MIN_OVERSAMPLING * n_unknowns:
        raise ConfigurationError(
            f"need at least {MIN_OVERSAMPLING} collocation nodes per unknown ({len(nodes)} vs {n_unknowns})"
        )
    b = -np.asarray(incident(nodes.points).value, dtype=complex)
    notes = []
    if not np.any(b):
        coef = np.zeros(n_unknowns, dtype=complex)
        cond, lam = float("nan"), 0.0
    elif rings is not None:
        coef, cond, lam, notes = _solve_rings(k, nodes.layout, rings, b, config.tikhonov)
    else:
        A, _ = green_matrix(k, 3, nodes.points, src, with_grad=False)
        colmax = float(np.max(np.linalg.norm(A, axis=0)))
        sol = lstsq_tikhonov(A, b, lam=config.tikhonov * colmax)
        coef, cond, lam = sol.x, sol.cond, sol.lam
        notes = list(sol.notes)
    model = MfsModel(geom=geom, k=float(k), incident=incident, sources=src, coefficients=coef,
                     residual_certificate=0.0, condition=cond, lam=lam,
                     n_collocation=len(nodes), config=config, gate=gate,
                     rings=rings, notes=notes)
    model.residual_certificate = validation_residual(model)
    model.runtime_s = time.perf_counter() - t0
    logger.debug("MFS solve: %d nodes, %d unknowns, cert %.2e, cond %.2e",
                 len(nodes), n_unknowns, model.residual_certificate, cond)
    if not model.certified:
        model.notes.append(f"certificate {model.residual_certificate:.3e} exceeds gate {gate:.1e}")
        if raise_on_failure:
            raise CertificateError(model.notes[-1], model)
    return model


def validation_residual(model: MfsModel) -> float:
    """Residual certificate on the oversampled validation node set."""
    val = boundary_nodes(model.geom, model.config, validation=True)
    inc = np.asarray(model.incident(val.points).value)
    if val.layout is not None and model.rings is not None:
        lay = val.layout
        sc = eval_scattered_rings(model, lay.rho, lay.z, lay.n_theta, lay.offset,
                                  with_grad=False).value
    else:
        sc = eval_scattered(model, val.points, check_inside=False).value
    return _relative_residual(inc, sc)


def _relative_residual(inc, sc) -> float:
    top = np.abs(inc).max()
    if top == 0.0:
        return float(np.abs(sc).max())
    return float(np.abs(inc + sc).max() / top)


def residual_on(model: MfsModel, pts: np.ndarray) -> float:
    """Max ``|total|`` at boundary points, relative to max ``|incident|`` there."""
    inc = np.asarray(model.incident(pts).value)
    sc = eval_scattered(model, pts, check_inside=False).value
    return _relative_residual(inc, sc)


def eval_scattered(model: MfsModel, x, check_inside: bool = True) -> FieldSample:
    """Value and gradient of the source superposition at arbitrary points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if check_inside and np.any(model.geom.contains(pts)):
        raise DomainError("evaluation point inside the obstacle")
    val = np.empty(len(pts), dtype=complex)
    grad = np.empty(pts.shape, dtype=complex)
    for i in range(0, len(pts), EVAL_CHUNK):
        sl = slice(i, i + EVAL_CHUNK)
        p = pts[sl]
        if model.rings is not None:
            rho = np.hypot(p[:, 0], p[:, 1])
            theta = np.arctan2(p[:, 1], p[:, 0])[:, None]
            v, g = _eval_modal(model, rho, p[:, 2], theta, with_grad=True)
            val[sl], grad[sl] = v[:, 0], g[:, 0]
        else:
            G, dG = green_matrix(model.k, 3, p, model.sources)
            val[sl] = G @ model.coefficients
            grad[sl] = np.einsum("ijk,j->ik", dG, model.coefficients)
    if single:
        return FieldSample(val[0], grad[0])
    return FieldSample(val, grad)


def eval_total(model: MfsModel, x) -> FieldSample:
    """Incident plus scattered field at points outside the obstacle."""
    sc = eval_scattered(model, x)
    return model.incident(x) + sc


class ScatteredField:
    """Callable view of an MFS model's scattered field.

    ``on_rings`` exposes the fast ring-structured evaluation.
    """

    def __init__(self, model: MfsModel):
        self.model = model

    def __call__(self, x) -> FieldSample:
        return eval_scattered(self.model, x)

    def on_rings(self, rho, z, n_az) -> FieldSample:
        return eval_scattered_rings(self.model, rho, z, n_az)


def scattered_field(model: MfsModel) -> ScatteredField:
    return ScatteredField(model)


@dataclass
class RingFlux:
    """Normal derivative of the scattered field around one cross-section circle."""

    height: float
    theta: np.ndarray
    samples: np.ndarray
    average: complex  # per unit arclength
    total: complex


def ring_flux(model: MfsModel, a: float, n_theta: int) -> RingFlux:
    """Sample ``d v / d eta`` on ``{|x'| = eps, z = a}`` and integrate it."""
    geom = model.geom
    if not isinstance(geom, CylinderGeom):
        raise ConfigurationError("ring_flux needs a cylinder model")
    if abs(a) >= geom.half_height:
        raise DomainError(f"ring height must satisfy |a| < {geom.half_height}, got {a}")
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    nrm = np.stack([np.cos(th), np.sin(th), np.zeros(n_theta)], axis=1)
    pts = geom.radius * nrm
    pts[:, 2] = a
    g = eval_scattered(model, pts, check_inside=False).grad
    samples = np.einsum("ij,ij->i", g, nrm)
    avg = complex(samples.mean())
    return RingFlux(height=float(a), theta=th, samples=samples, average=avg,
                    total=avg * 2.0 * np.pi * geom.radius)
