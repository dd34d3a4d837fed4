"""
Limiting mean and variance of linear spectral statistics.

The contour formulas integrate over a counterclockwise rectangle enclosing
the support of the deformed semicircle law::

    M(phi)      = -1/(2 pi i)     oint phi(z) b(z) dz
    V(phi)      =  1/(2 pi i)^2   oint oint phi(z1) phi(z2) Gamma(z1, z2) dz1 dz2
    Vtilde(phi) =  1/(2 pi i)^2 theta^-2
                   oint oint phi phi (1 + m'(z1))(1 + m'(z2)) (I - m(z1) m(z2))

At ``theta = 0`` they reduce to closed forms in the Chebyshev coefficients
``tau_l(phi) = (1/2pi) int phi(2 cos t) cos(l t) dt``, which serve as an
independent check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, KernelOutOfRange, ValidationError
from .freeconv import SupportInterval, integrand, solve_mfc, support_edges

__all__ = [
    "Polynomial",
    "SmoothBump",
    "parse_phi",
    "Contour",
    "CltParameters",
    "build_contour",
    "default_contour",
    "contour_mass",
    "mean_density_b",
    "cov_kernel_gamma",
    "vtilde_kernel",
    "M_phi",
    "V_phi",
    "Vtilde_phi",
    "clt_parameters",
    "tau_ell",
    "baiyao_closed_forms",
]

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.5
DEFAULT_V0 = 0.5
DEFAULT_NODES = 64
_MAX_DEGREE = 16
_TAU_NODES = 256
_IMAG_TOL = 1e-8
_TWO_PI_I = 2j * np.pi


# --------------
# test functions
# --------------

@dataclass(frozen=True)
class Polynomial:
    """Polynomial test function, coefficients in ascending powers."""

    coeffs: tuple[float, ...]

    analytic = True

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if not c:
            c = (0.0,)
        if len(c) - 1 > _MAX_DEGREE:
            raise ValidationError(f"polynomial degree must be <= {_MAX_DEGREE}")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    @property
    def is_constant(self):
        return all(c == 0 for c in self.coeffs[1:])

    def label(self):
        return "poly:" + ",".join(f"{c:g}" for c in self.coeffs)


@dataclass(frozen=True)
class SmoothBump:
    """
    ``amplitude * (1 - t^2)^3`` with ``t = (x - center)/halfwidth`` on
    ``|t| < 1``, zero outside.  Twice continuously differentiable; real
    arguments only.
    """

    center: float
    halfwidth: float
    amplitude: float

    analytic = False
    is_constant = False

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise ValidationError("bump halfwidth must be positive")

    def __call__(self, x):
        x = np.asarray(x)
        if np.iscomplexobj(x):
            raise DomainError("SmoothBump is defined on the real axis only")
        t = (x - self.center) / self.halfwidth
        return np.where(np.abs(t) < 1.0, self.amplitude * (1.0 - t * t) ** 3, 0.0)

    def label(self):
        return f"bump:{self.center:g},{self.halfwidth:g},{self.amplitude:g}"


def parse_phi(text: str):
    """Parse ``poly:c0,c1,...`` or ``bump:center,halfwidth,amplitude``."""
    from .measures import _strict_float

    kind, sep, arg = text.partition(":")
    if not sep or not arg:
        raise ValidationError(f"bad test function {text!r}")
    values = [_strict_float(tok.strip(), kind) for tok in arg.split(",")]
    if kind == "poly":
        return Polynomial(tuple(values))
    if kind == "bump":
        if len(values) != 3:
            raise ValidationError("bump needs center,halfwidth,amplitude")
        return SmoothBump(*values)
    raise ValidationError(f"unknown test function kind {kind!r}")


def _require_analytic(phi):
    if not getattr(phi, "analytic", False):
        raise ValidationError("contour formulas need a polynomial test function")


# -------
# contour
# -------

@dataclass(frozen=True, eq=False)
class Contour:
    """Counterclockwise rectangle with vertices ``a_pm +- i v0``."""

    a_minus: float
    a_plus: float
    v0: float
    nodes_per_side: int
    z: np.ndarray
    w: np.ndarray
    side: np.ndarray


def _gauss_segment(z0, z1, n):
    panels = 4 if n >= 16 and n % 4 == 0 else 1
    t, wt = np.polynomial.legendre.leggauss(n // panels)
    s = np.linspace(0.0, 1.0, panels + 1)
    lo, hi = s[:-1, None], s[1:, None]
    u = (0.5 * (lo + hi) + 0.5 * (hi - lo) * t[None, :]).ravel()
    du = (0.5 * (hi - lo) * wt[None, :]).ravel()
    return z0 + (z1 - z0) * u, (z1 - z0) * du


def build_contour(edges: SupportInterval, margin=DEFAULT_MARGIN, v0=DEFAULT_V0,
                  nodes_per_side=DEFAULT_NODES) -> Contour:
    if margin <= 0 or v0 <= 0:
        raise DomainError("margin and v0 must be positive")
    if nodes_per_side < 2:
        raise DomainError("need at least two nodes per side")
    a_minus = edges.L_minus - margin
    a_plus = edges.L_plus + margin
    corners = [
        (complex(a_minus, -v0), complex(a_plus, -v0), "bottom"),
        (complex(a_plus, -v0), complex(a_plus, v0), "right"),
        (complex(a_plus, v0), complex(a_minus, v0), "top"),
        (complex(a_minus, v0), complex(a_minus, -v0), "left"),
    ]
    zs, ws, tags = [], [], []
    for z0, z1, tag in corners:
        z, w = _gauss_segment(z0, z1, nodes_per_side)
        zs.append(z)
        ws.append(w)
        tags.extend([tag] * z.size)
    return Contour(a_minus, a_plus, v0, nodes_per_side,
                   np.concatenate(zs), np.concatenate(ws), np.array(tags))


def default_contour(measure, theta, margin=DEFAULT_MARGIN, v0=DEFAULT_V0,
                    nodes_per_side=DEFAULT_NODES) -> Contour:
    return build_contour(support_edges(measure, theta), margin, v0, nodes_per_side)


def contour_mass(contour: Contour, measure, theta) -> complex:
    """``-1/(2 pi i) oint m(z) dz``; equals 1 for a valid enclosing contour."""
    sol = solve_mfc(measure, theta, contour.z)
    return complex(-np.sum(sol.m * contour.w) / _TWO_PI_I)


# -------
# kernels
# -------

def _b_from(sol, w2, W4):
    d = 1.0 + sol.m1
    return 0.5 * sol.m2 / d**2 * ((w2 - 1.0) + sol.m1 + (W4 - 3.0) * sol.m1 / d)


def mean_density_b(measure, theta, z, w2, W4):
    """Mean of the limiting resolvent-trace fluctuation process at ``z``."""
    return _b_from(solve_mfc(measure, theta, z), w2, W4)


class _KernelGrid:
    """All pairwise kernel quantities between two point sets."""

    def __init__(self, measure, theta, z1, z2=None):
        self.theta = theta
        self.sol1 = solve_mfc(measure, theta, np.atleast_1d(z1))
        self.sol2 = self.sol1 if z2 is None else solve_mfc(measure, theta, np.atleast_1d(z2))
        f1, p = integrand(measure, theta, self.sol1)
        f2 = f1 if z2 is None else integrand(measure, theta, self.sol2)[0]
        pf1 = p[:, None] * f1
        pf1sq = pf1 * f1
        self.d1 = 1.0 + self.sol1.m1
        self.d2 = 1.0 + self.sol2.m1
        self.I = pf1.T @ f2
        self.dI1 = self.d1[:, None] * (pf1sq.T @ f2)
        self.dI2 = self.d2[None, :] * (pf1.T @ (f2 * f2))
        self.d2I = np.outer(self.d1, self.d2) * (pf1sq.T @ (f2 * f2))

    def gamma(self, w2, W4):
        I = self.I
        if np.max(np.abs(I)) >= 1.0:
            raise KernelOutOfRange(f"|I| reaches {np.max(np.abs(I)):.6f} >= 1; contour too close to the support")
        cross = self.dI1 * self.dI2
        return ((w2 - 2.0) * self.d2I
                + (W4 - 3.0) * (I * self.d2I + cross)
                + 2.0 / (1.0 - I) ** 2 * (cross + (1.0 - I) * self.d2I))

    def vtilde(self):
        if self.theta <= 0:
            raise DomainError("the random-diagonal kernel needs theta > 0")
        mm = np.outer(self.sol1.m, self.sol2.m)
        return np.outer(self.d1, self.d2) * (self.I - mm) / self.theta**2


def _pairwise(fn, z1, z2):
    scalar = np.ndim(z1) == 0 and np.ndim(z2) == 0
    z1b, z2b = np.broadcast_arrays(np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))
    vals = np.array([fn(a, b) for a, b in zip(z1b.ravel(), z2b.ravel())]).reshape(z1b.shape)
    return vals.item() if scalar else vals


def cov_kernel_gamma(measure, theta, z1, z2, w2, W4):
    """Covariance kernel ``Gamma(z1, z2)`` of the fluctuation process."""
    def one(a, b):
        return _KernelGrid(measure, theta, a, b).gamma(w2, W4)[0, 0]
    return _pairwise(one, z1, z2)


def vtilde_kernel(measure, theta, z1, z2):
    """Covariance kernel of the random-diagonal fluctuation process (``theta > 0``)."""
    def one(a, b):
        return _KernelGrid(measure, theta, a, b).vtilde()[0, 0]
    return _pairwise(one, z1, z2)


# -----------------
# contour integrals
# -----------------

def _real_part(value, what):
    if abs(value.imag) > _IMAG_TOL * max(1.0, abs(value.real)):
        log.warning("%s: imaginary residue %.3e exceeds %.0e", what, value.imag, _IMAG_TOL)
    return float(value.real)


def _single(phi, contour, values):
    return -np.sum(phi(contour.z) * values * contour.w) / _TWO_PI_I


def _double(phi, contour, kernel):
    g = phi(contour.z) * contour.w
    return (g @ kernel @ g) / _TWO_PI_I**2


def M_phi(phi, contour, measure, theta, w2, W4) -> float:
    _require_analytic(phi)
    if phi.is_constant:
        return 0.0
    sol = solve_mfc(measure, theta, contour.z)
    return _real_part(_single(phi, contour, _b_from(sol, w2, W4)), "M_phi")


def V_phi(phi, contour, measure, theta, w2, W4) -> float:
    _require_analytic(phi)
    grid = _KernelGrid(measure, theta, contour.z)
    return _real_part(_double(phi, contour, grid.gamma(w2, W4)), "V_phi")


def Vtilde_phi(phi, contour, measure, theta) -> float:
    """
    Limiting variance of the normalized statistic for a random diagonal.

    At ``theta = 0`` the value is ``Var(v_1) * tau_1(phi)**2``.
    """
    _require_analytic(phi)
    if theta == 0:
        return float(measure.moment(2) - measure.moment(1) ** 2) * tau_ell(phi, 1) ** 2
    grid = _KernelGrid(measure, theta, contour.z)
    return _real_part(_double(phi, contour, grid.vtilde()), "Vtilde_phi")


@dataclass(frozen=True)
class CltParameters:
    M_phi: float
    V_phi: float
    Vtilde_phi: float | None
    quad_error: float


def clt_parameters(phi, measure, theta, w2, W4, margin=DEFAULT_MARGIN, v0=DEFAULT_V0,
                   nodes_per_side=DEFAULT_NODES) -> CltParameters:
    """
    Evaluate all three limits on one contour.  ``quad_error`` is the largest
    change against a contour with half as many nodes.
    """
    _require_analytic(phi)
    edges = support_edges(measure, theta)

    def evaluate(n):
        c = build_contour(edges, margin, v0, n)
        M = M_phi(phi, c, measure, theta, w2, W4)
        V = V_phi(phi, c, measure, theta, w2, W4)
        Vt = Vtilde_phi(phi, c, measure, theta)
        return M, V, Vt

    fine = evaluate(nodes_per_side)
    coarse = evaluate(max(2, nodes_per_side // 2))
    err = max(abs(a - b) for a, b in zip(fine, coarse))
    return CltParameters(fine[0], fine[1], fine[2], float(err))


# -----------------
# theta = 0 closed forms
# -----------------

def tau_ell(phi, ell: int) -> float:
    """Chebyshev coefficient ``(1/2pi) int_{-pi}^{pi} phi(2 cos t) cos(l t) dt``."""
    if ell < 0:
        raise DomainError("ell must be nonnegative")
    t = -np.pi + 2.0 * np.pi * np.arange(_TAU_NODES) / _TAU_NODES
    return float(np.mean(phi(2.0 * np.cos(t)) * np.cos(ell * t)))


def baiyao_closed_forms(phi, w2, W4, L: int = 64) -> tuple[float, float]:
    """
    Mean and variance of the Wigner linear statistic (``theta = 0``) from
    Chebyshev coefficients; the variance series is cut at ``L``.
    """
    tau = [tau_ell(phi, k) for k in range(max(L, 4) + 1)]
    M = (0.25 * (phi(2.0) + phi(-2.0)) - 0.5 * tau[0]
         + (w2 - 2.0) * tau[2] + (W4 - 3.0) * tau[4])
    series = sum(k * tau[k] ** 2 for k in range(1, L + 1))
    V = (w2 - 2.0) * tau[1] ** 2 + 2.0 * (W4 - 3.0) * tau[2] ** 2 + 2.0 * series
    return float(M), float(V)
