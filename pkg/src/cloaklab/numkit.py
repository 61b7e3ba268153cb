"""
Foundational numerics: quadrature rules, Bessel-type functions, Legendre
polynomials, regularized complex least squares and rate-law regression.

Bessel-type values are delegated to :mod:`scipy.special`; everything here
wraps them with the domain checks and derivative conventions the solvers
rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import special

from .errors import ConfigurationError, DomainError

MAX_BESSEL_ORDER = 120

BESSEL_KINDS = ("J", "Y", "H1", "sph_j", "sph_y", "sph_h1")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadRule:
    """Nodes and positive weights of a quadrature rule.

    ``domain`` is a free-form descriptor such as ``("interval", a, b)``;
    ``measure`` is the exact size of that domain, used for sanity checks.
    """

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple = ()
    measure: float = float("nan")

    def __post_init__(self):
        if len(self.weights) < 1:
            raise ConfigurationError("a quadrature rule needs at least one node")

    def integrate(self, values):
        """Weighted sum over the leading axis of ``values``."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0) -> QuadRule:
    """Gauss-Legendre rule with ``n`` nodes on ``[a, b]``.

    Exact for polynomials of degree ``2n - 1``.
    """
    if int(n) != n or n < 1:
        raise ConfigurationError(f"gauss_legendre needs n >= 1, got {n}")
    if not a < b:
        raise ConfigurationError(f"gauss_legendre needs a < b, got [{a}, {b}]")
    t, w = np.polynomial.legendre.leggauss(int(n))
    half = 0.5 * (b - a)
    return QuadRule(
        nodes=half * t + 0.5 * (a + b),
        weights=half * w,
        domain=("interval", float(a), float(b)),
        measure=float(b - a),
    )


def composite_gauss_legendre(breaks, n: int) -> QuadRule:
    """Gauss-Legendre with ``n`` nodes on each panel between sorted ``breaks``."""
    breaks = np.asarray(sorted(set(float(b) for b in breaks)))
    if breaks.size < 2:
        raise ConfigurationError("composite rule needs at least two break points")
    rules = [gauss_legendre(n, lo, hi) for lo, hi in zip(breaks[:-1], breaks[1:])]
    return QuadRule(
        nodes=np.concatenate([r.nodes for r in rules]),
        weights=np.concatenate([r.weights for r in rules]),
        domain=("interval", breaks[0], breaks[-1]),
        measure=float(breaks[-1] - breaks[0]),
    )


def periodic_trapezoid(n: int, offset: float = 0.0) -> QuadRule:
    """Equispaced rule on ``[0, 2*pi)``; spectrally accurate for periodic data."""
    if n < 1:
        raise ConfigurationError(f"trapezoid rule needs n >= 1, got {n}")
    h = 2.0 * np.pi / n
    return QuadRule(
        nodes=(np.arange(n) + offset) * h,
        weights=np.full(n, h),
        domain=("circle",),
        measure=2.0 * np.pi,
    )


def sphere_rule(n_azimuth: int, n_polar: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-sphere product rule: trapezoid in azimuth, Gauss in cos(polar).

    Returns ``(directions, weights)`` with ``directions`` of shape (n, 3) and
    weights summing to ``4*pi``.
    """
    th = periodic_trapezoid(n_azimuth)
    ct = gauss_legendre(n_polar, -1.0, 1.0)
    cos_p = ct.nodes[:, None]
    sin_p = np.sqrt(1.0 - cos_p**2)
    dirs = np.stack(
        [
            (sin_p * np.cos(th.nodes)[None, :]).ravel(),
            (sin_p * np.sin(th.nodes)[None, :]).ravel(),
            np.broadcast_to(cos_p, (n_polar, n_azimuth)).ravel(),
        ],
        axis=1,
    )
    w = (ct.weights[:, None] * th.weights[None, :]).ravel()
    return dirs, w


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    cos_p = 1.0 - 2.0 * i / n
    sin_p = np.sqrt(1.0 - cos_p**2)
    phi = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([sin_p * np.cos(phi), sin_p * np.sin(phi), cos_p], axis=1)


# ---------------------------------------------------------------------------
# Bessel-type functions
# ---------------------------------------------------------------------------
def _check_bessel_args(order, z, max_order):
    order = np.asarray(order)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("Bessel functions are evaluated for z > 0 only")
    if np.any(order < 0) or np.any(order != np.round(order)):
        raise ConfigurationError("Bessel order must be a non-negative integer")
    if np.any(order > max_order):
        raise ConfigurationError(
            f"Bessel order {int(np.max(order))} exceeds the configured maximum {max_order}"
        )
    return order, z


def bessel(kind: str, order: int, z: float, max_order: int = MAX_BESSEL_ORDER) -> complex:
    """Evaluate one Bessel-type function at a positive real argument.

    Parameters
    ----------
    kind : {"J", "Y", "H1", "sph_j", "sph_y", "sph_h1"}
        Cylindrical first/second kind and Hankel, or their spherical versions.
    order : int
        Non-negative integer order, at most ``max_order``.
    z : float
        Positive argument.

    Returns
    -------
    complex
        The value, with ``H1 = J + iY`` and ``sph_h1 = sph_j + i sph_y``.
    """
    if kind not in BESSEL_KINDS:
        raise ConfigurationError(f"unknown Bessel kind {kind!r}")
    order, z = _check_bessel_args(order, z, max_order)
    n = int(order)
    if kind == "J":
        return complex(special.jv(n, z))
    if kind == "Y":
        return complex(special.yv(n, z))
    if kind == "H1":
        return complex(special.hankel1(n, z))
    if kind == "sph_j":
        return complex(special.spherical_jn(n, z))
    if kind == "sph_y":
        return complex(special.spherical_yn(n, z))
    return complex(special.spherical_jn(n, z) + 1j * special.spherical_yn(n, z))


def cyl_jy(order, z, max_order: int = MAX_BESSEL_ORDER):
    """J, J', Y, Y' for integer orders (broadcast against ``z``)."""
    order, z = _check_bessel_args(order, z, max_order)
    return (
        special.jv(order, z),
        special.jvp(order, z),
        special.yv(order, z),
        special.yvp(order, z),
    )


def cyl_h1(order, z, max_order: int = MAX_BESSEL_ORDER):
    """Hankel function of the first kind and its derivative."""
    j, jp, y, yp = cyl_jy(order, z, max_order)
    return j + 1j * y, jp + 1j * yp


def sph_jy(order, z, max_order: int = MAX_BESSEL_ORDER):
    """Spherical j, j', y, y' for integer orders (broadcast against ``z``)."""
    order, z = _check_bessel_args(order, z, max_order)
    return (
        special.spherical_jn(order, z),
        special.spherical_jn(order, z, derivative=True),
        special.spherical_yn(order, z),
        special.spherical_yn(order, z, derivative=True),
    )


def sph_h1(order, z, max_order: int = MAX_BESSEL_ORDER):
    """Spherical Hankel function of the first kind and its derivative."""
    j, jp, y, yp = sph_jy(order, z, max_order)
    return j + 1j * y, jp + 1j * yp


# ---------------------------------------------------------------------------
# Legendre polynomials
# ---------------------------------------------------------------------------
def legendre_p(n: int, t: float) -> float:
    """Legendre polynomial P_n(t) by the three-term recurrence."""
    if n < 0 or int(n) != n:
        raise ConfigurationError(f"Legendre degree must be a non-negative integer, got {n}")
    if abs(t) > 1.0:
        raise DomainError(f"legendre_p needs |t| <= 1, got {t}")
    p_prev, p = 1.0, float(t)
    if n == 0:
        return 1.0
    for m in range(1, int(n)):
        p_prev, p = p, ((2 * m + 1) * t * p - m * p_prev) / (m + 1)
    return p


def legendre_table(n_max: int, t):
    """All P_0..P_{n_max} and their derivatives at the points ``t``.

    Returns arrays of shape ``(n_max + 1,) + t.shape``. The derivative uses
    ``P'_{n+1} = P'_{n-1} + (2n+1) P_n``, which stays finite at ``t = +-1``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-14):
        raise DomainError("legendre_table needs |t| <= 1")
    t = np.clip(t, -1.0, 1.0)
    p = np.empty((n_max + 1,) + t.shape)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if n_max >= 1:
        p[1] = t
        dp[1] = 1.0
    for m in range(1, n_max):
        p[m + 1] = ((2 * m + 1) * t * p[m] - m * p[m - 1]) / (m + 1)
        dp[m + 1] = dp[m - 1] + (2 * m + 1) * p[m]
    return p, dp


# ---------------------------------------------------------------------------
# Regularized least squares
# ---------------------------------------------------------------------------
@dataclass
class LstsqSolution:
    """Solution of a Tikhonov-regularized least-squares problem."""

    x: np.ndarray
    lam: float
    cond: float
    residual_norm: float
    escalated: bool = False
    notes: list = field(default_factory=list)


def _pivoted_qr_solve(A, b, lam):
    m, n = A.shape
    if lam > 0:
        A_aug = np.vstack([A, lam * np.eye(n, dtype=A.dtype)])
        b_aug = np.concatenate([b, np.zeros((n,) + b.shape[1:], dtype=b.dtype)])
    else:
        A_aug, b_aug = A, b
    Q, R, piv = scipy.linalg.qr(A_aug, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    cond = float(diag[0] / diag[-1]) if diag[-1] > 0 else float("inf")
    qtb = Q.conj().T @ b_aug
    y = scipy.linalg.solve_triangular(R, qtb, check_finite=False)
    x = np.empty((n,) + b.shape[1:], dtype=np.result_type(A, b, complex))
    x[piv] = y
    return x, cond, diag


def lstsq_tikhonov(A, b, lam: float | None = None, cond_limit: float = 1e16) -> LstsqSolution:
    """Minimize ``|A x - b|^2 + lam^2 |x|^2`` by pivoted QR.

    The regularized problem is solved as the stacked system ``[A; lam I]``.
    ``b`` may hold several right-hand sides as columns.
    ``lam=None`` selects ``1e-12`` times the largest column norm of ``A``. With
    ``lam=0`` and a pivot-ratio condition estimate above ``cond_limit`` the
    solve is repeated with the default regularization, and the returned
    solution is marked ``escalated``.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2 or b.ndim not in (1, 2) or A.shape[0] != b.shape[0]:
        raise ConfigurationError(
            f"lstsq_tikhonov: incompatible shapes A{A.shape}, b{b.shape}"
        )
    m, n = A.shape
    if m < n and lam == 0.0:
        raise ConfigurationError(f"unregularized lstsq_tikhonov needs m >= n, got {m} x {n}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ConfigurationError("lstsq_tikhonov: non-finite entries")
    if lam is not None and lam < 0:
        raise ConfigurationError("lstsq_tikhonov: lam must be >= 0")
    A = A.astype(complex, copy=False)
    b = b.astype(complex, copy=False)

    notes = []
    escalated = False
    if lam is None:
        # first QR pivot = largest column norm
        lam = 1e-12 * float(np.max(np.linalg.norm(A, axis=0)))
    x, cond, diag = _pivoted_qr_solve(A, b, lam)
    if lam == 0.0 and cond > cond_limit:
        new_lam = 1e-12 * float(diag[0])
        notes.append(f"condition estimate {cond:.3e} > {cond_limit:.0e}; lam escalated to {new_lam:.3e}")
        lam = new_lam
        x, cond, _ = _pivoted_qr_solve(A, b, lam)
        escalated = True
    resid = float(np.linalg.norm(A @ x - b))
    return LstsqSolution(x=x, lam=float(lam), cond=cond, residual_norm=resid,
                         escalated=escalated, notes=notes)


# ---------------------------------------------------------------------------
# Rate-law regression
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RateFit:
    """Two competing decay laws fitted to the same ``(eps, y)`` pairs.

    ``power_slope`` is ``p`` in ``y = C eps^p``; ``log_slope`` is ``q`` in
    ``y = C / |ln eps|^q``.
    """

    power_slope: float
    power_r2: float
    log_slope: float
    log_r2: float
    n_points: int

    @property
    def preferred(self) -> str:
        if self.power_r2 > self.log_r2:
            return "power"
        if self.log_r2 > self.power_r2:
            return "log"
        return "tie"

    def as_dict(self) -> dict:
        return {
            "power_slope": self.power_slope,
            "power_r2": self.power_r2,
            "log_slope": self.log_slope,
            "log_r2": self.log_r2,
            "n_points": self.n_points,
            "preferred": self.preferred,
        }


def _linfit(x, y):
    X = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return float(coef[0]), r2


def fit_rates(eps, y) -> RateFit:
    """Fit ``y = C eps^p`` and ``y = C/|ln eps|^q`` by log-space least squares."""
    eps = np.asarray(eps, dtype=float)
    y = np.asarray(y, dtype=float)
    if eps.shape != y.shape or eps.ndim != 1:
        raise ConfigurationError("fit_rates: eps and y must be 1-d arrays of equal length")
    if eps.size < 3:
        raise ConfigurationError("fit_rates needs at least 3 points")
    if np.any(eps <= 0) or np.any(eps >= 1):
        raise DomainError("fit_rates: eps must lie in (0, 1)")
    if np.any(np.diff(eps) >= 0):
        raise ConfigurationError("fit_rates: eps must be strictly decreasing")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DomainError("fit_rates: y must be positive and finite")
    ly = np.log(y)
    p, r2p = _linfit(np.log(eps), ly)
    q, r2q = _linfit(np.log(np.abs(np.log(eps))), ly)
    return RateFit(power_slope=p, power_r2=r2p, log_slope=-q, log_r2=r2q,
                   n_points=int(eps.size))
