"""
Deformed semicircle law: the self-consistent equation and everything derived
from its solution.

For a deformation law ``nu`` and coupling ``theta`` the Stieltjes transform
``m`` of the free convolution of the semicircle with ``theta * nu`` solves::

    m(z) = int dnu(x) / (theta*x - z - m(z)),   Im m > 0 for Im z > 0.

Writing ``f(x) = 1/(theta*x - z - m)`` and ``s_k = int f**k dnu``, implicit
differentiation gives ``1 + m' = 1/(1 - s_2)`` and ``m'' = 2 s_3 (1 + m')**3``.
All routines accept either a :class:`~wignerlab.measures.SpectralMeasure` or
a realized :class:`~wignerlab.measures.DiagonalSpec`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, EdgeNotBracketed, NoConvergence, NonHerglotz, ValidationError
from .measures import Uniform, _gap_infimum

__all__ = [
    "StieltjesSolution",
    "SupportInterval",
    "IKernelValue",
    "m_semicircle",
    "solve_mfc",
    "density",
    "support_edges",
    "i_kernel",
    "integrand",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
_NEWTON_SWITCH = 1e-3
_OMEGA_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class StieltjesSolution:
    """
    Solution of the self-consistent equation at one or more points.

    Every field has the shape of ``z``; scalars come back as Python complex.
    """

    z: complex
    m: complex
    s2: complex
    s3: complex
    m1: complex
    m2: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class SupportInterval:
    L_minus: float
    L_plus: float
    xi_minus: float
    xi_plus: float


@dataclass(frozen=True)
class IKernelValue:
    z1: complex
    z2: complex
    I: complex
    dI_dz1: complex
    dI_dz2: complex
    d2I: complex


def m_semicircle(z):
    """Stieltjes transform of the semicircle law, ``(-z + sqrt(z^2 - 4)) / 2``."""
    z = np.asarray(z, dtype=complex)
    # product of principal roots puts the cut on [-2, 2]
    m = 0.5 * (-z + np.sqrt(z - 2.0) * np.sqrt(z + 2.0))
    return m if m.ndim else complex(m)


def _check_theta(theta):
    if not np.isfinite(theta) or theta < 0:
        raise ValidationError(f"theta must be a finite nonnegative number, got {theta!r}")


def _moments(tx, p, w):
    """Return ``(s1, s2, s3)`` for ``f = 1/(tx - w)`` with ``w`` a 1-d array."""
    f = 1.0 / (tx[:, None] - w[None, :])
    f2 = f * f
    return p @ f, p @ f2, p @ (f2 * f)


def _fixed_point(tx, p, z, m0, tol, max_iter):
    """
    Vectorized damped fixed-point iteration with Newton polishing; Im z > 0.

    Returns ``(m, residual, iterations, failed)``; ``failed`` marks points
    that hit the iteration cap or could not stay in the upper half plane.
    """
    n = z.size
    m = m0.copy()
    F, s2, _ = _moments(tx, p, z + m)
    res = np.abs(m - F)
    omega = np.full(n, 0.5)
    iters = np.zeros(n, dtype=int)
    active = res > tol
    failed = np.zeros(n, dtype=bool)

    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ma, Fa, s2a, ra, za = m[idx], F[idx], s2[idx], res[idx], z[idx]

        damped = ma + omega[idx] * (Fa - ma)
        Fd, s2d, _ = _moments(tx, p, za + damped)
        rd = np.abs(damped - Fd)

        with np.errstate(divide="ignore", invalid="ignore"):
            newton = ma - (ma - Fa) / (1.0 - s2a)
        try_newton = (ra < _NEWTON_SWITCH) & np.isfinite(newton)
        newton = np.where(try_newton, newton, damped)
        Fn, s2n, _ = _moments(tx, p, za + newton)
        rn = np.abs(newton - Fn)
        use_newton = try_newton & (newton.imag > 0) & (rn < ra)

        damped_ok = (damped.imag > 0) & np.isfinite(rd)
        new_m = np.where(use_newton, newton, np.where(damped_ok, damped, ma))
        new_F = np.where(use_newton, Fn, np.where(damped_ok, Fd, Fa))
        new_s2 = np.where(use_newton, s2n, np.where(damped_ok, s2d, s2a))
        new_r = np.where(use_newton, rn, np.where(damped_ok, rd, ra))

        shrink = ~use_newton & (~damped_ok | (rd > ra))
        omega[idx[shrink]] *= 0.5
        # recover the step after a successful damped move
        grow = ~use_newton & ~shrink
        omega[idx[grow]] = np.minimum(0.5, 1.5 * omega[idx[grow]])

        m[idx], F[idx], s2[idx], res[idx] = new_m, new_F, new_s2, new_r
        iters[idx] += 1
        stuck = omega[idx] < _OMEGA_FLOOR
        failed[idx[stuck]] = True
        active[idx] = (new_r > tol) & ~stuck
    failed |= active
    return m, res, iters, failed


def _continuation(tx, p, z, tol, max_iter):
    """
    Solve at points where a cold start failed by walking ``Im z`` down from
    ``max(1, Im z)`` with warm starts, halving each time.
    """
    eta_target = z.imag
    eta = np.maximum(1.0, eta_target)
    m = m_semicircle(z.real + 1j * eta)
    iters = np.zeros(z.size, dtype=int)
    while True:
        zz = z.real + 1j * eta
        m, res, it, failed = _fixed_point(tx, p, zz, m, tol, max_iter)
        iters += it
        if failed.any():
            return m, res, iters, failed
        if np.all(eta == eta_target):
            return m, res, iters, failed
        eta = np.maximum(0.5 * eta, eta_target)


def solve_mfc(measure, theta, z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, m0=None):
    """
    Solve the self-consistent equation at ``z``.

    Parameters
    ----------
    measure : SpectralMeasure or DiagonalSpec
    theta : float
    z : complex or array_like
        Points with nonzero imaginary part.  Points in the lower half plane
        are handled through ``m(conj z) = conj m(z)``.
    tol : float
        Target for ``|m - F(m)|``.
    max_iter : int
    m0 : array_like, optional
        Warm start (upper half plane values at ``conj`` of lower points).

    Returns
    -------
    StieltjesSolution

    Raises
    ------
    DomainError
        If some ``z`` is real.
    NoConvergence, NonHerglotz
    """
    _check_theta(theta)
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    shape = z.shape
    z = z.ravel()
    if np.any(z.imag == 0):
        raise DomainError("solve_mfc requires Im z != 0")
    lower = z.imag < 0
    zu = np.where(lower, z.conj(), z)

    x, p = measure.atoms()
    tx = theta * np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    start = m_semicircle(zu) if m0 is None else np.atleast_1d(np.asarray(m0, dtype=complex)).ravel().copy()
    m, res, iters, failed = _fixed_point(tx, p, zu, start, tol, max_iter)
    if failed.any():
        idx = np.flatnonzero(failed)
        log.debug("solve_mfc: %d point(s) retried by continuation in Im z", idx.size)
        m_c, res_c, it_c, failed_c = _continuation(tx, p, zu[idx], tol, max_iter)
        m[idx], res[idx], iters[idx] = m_c, res_c, iters[idx] + it_c
        if failed_c.any():
            k = idx[np.flatnonzero(failed_c)[0]]
            if res[k] <= _NEWTON_SWITCH or m[k].imag > 0:
                raise NoConvergence(
                    f"solve_mfc: no convergence after {max_iter} iterations at z={z[k]!r} "
                    f"(residual {res[k]:.3e})"
                )
            raise NonHerglotz(f"solve_mfc: iteration cannot stay in the upper half plane at z={z[k]!r}")
    if np.any(m.imag <= 0):
        raise NonHerglotz("solution left the upper half plane")

    _, s2, s3 = _moments(tx, p, zu + m)
    one_plus_m1 = 1.0 / (1.0 - s2)
    m1 = s2 * one_plus_m1
    m2 = 2.0 * s3 * one_plus_m1**3

    def out(a, conj=True):
        if conj:
            a = np.where(lower, np.conj(a), a)
        a = a.reshape(shape)
        if scalar:
            return a.item()
        return a

    return StieltjesSolution(
        z=out(z, conj=False),
        m=out(m),
        s2=out(s2),
        s3=out(s3),
        m1=out(m1),
        m2=out(m2),
        residual=out(res, conj=False),
        iterations=out(iters, conj=False),
    )


def integrand(measure, theta, sol: StieltjesSolution):
    """
    Matrix ``f[k, j] = 1/(theta*x_k - z_j - m(z_j))`` over the atoms of the
    measure, together with the atom weights.
    """
    x, p = measure.atoms()
    w = np.atleast_1d(np.asarray(sol.z, dtype=complex) + np.asarray(sol.m, dtype=complex)).ravel()
    f = 1.0 / (theta * np.asarray(x, dtype=float)[:, None] - w[None, :])
    return f, np.asarray(p, dtype=float)


def density(measure, theta, E, eta_floor=1e-9, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """
    Density of the deformed semicircle law at ``E``.

    The value is ``Im m(E + i*eta_floor) / pi`` reached by halving ``eta``
    from 1 with warm starts; values below ``10 * eta_floor`` are reported
    as 0.
    """
    if not (1e-9 <= eta_floor <= 1e-3):
        raise DomainError("eta_floor must lie in [1e-9, 1e-3]")
    scalar = np.ndim(E) == 0
    E = np.atleast_1d(np.asarray(E, dtype=float))
    etas = []
    eta = 1.0
    while eta > eta_floor:
        etas.append(eta)
        eta *= 0.5
    etas.append(eta_floor)

    m = None
    for eta in etas:
        sol = solve_mfc(measure, theta, E + 1j * eta, tol=tol, max_iter=max_iter, m0=m)
        m = np.atleast_1d(sol.m)
    rho = m.imag / np.pi
    rho = np.where(rho < 10.0 * eta_floor, 0.0, rho)
    return float(rho[0]) if scalar else rho


def support_edges(measure, theta) -> SupportInterval:
    """
    Endpoints of the support of the deformed semicircle law.

    With ``xi = z + m(z)`` the inverse map is ``z = xi - m_nu(xi)``; the
    edges are the images of the two real roots of
    ``int dnu(x)/(theta*x - xi)**2 = 1`` lying outside the scaled support.
    """
    _check_theta(theta)
    lo = theta * measure.support_min
    hi = theta * measure.support_max

    def g(xi):
        return float(np.real(measure.inverse_power(xi, theta, 2))) - 1.0

    def root(a, b):
        ga, gb = g(a), g(b)
        if not (np.isfinite(ga) and np.isfinite(gb)) or ga * gb > 0:
            raise EdgeNotBracketed(
                f"support_edges: edge equation not bracketed on [{a:.6g}, {b:.6g}]"
            )
        return brentq(g, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)

    if theta > 0 and not isinstance(measure, Uniform):
        # a root of the edge equation between atoms means the support splits
        gap = _gap_infimum(measure)[1]
        if gap <= theta**2:
            raise EdgeNotBracketed(
                f"support_edges: the support splits (inf int (v-x)^-2 dnu = {gap:.6g} <= theta^2 = {theta**2:.6g})"
            )

    xi_plus = root(hi + 1e-12, hi + 1e3)
    xi_minus = root(lo - 1e3, lo - 1e-12)

    def edge(xi):
        return xi - float(np.real(measure.inverse_power(xi, theta, 1)))

    L_minus, L_plus = edge(xi_minus), edge(xi_plus)
    if not L_minus < L_plus:
        raise EdgeNotBracketed("support_edges: edges out of order")
    return SupportInterval(L_minus, L_plus, xi_minus, xi_plus)


def i_kernel(measure, theta, z1, z2, tol=DEFAULT_TOL) -> IKernelValue:
    """
    The kernel ``I(z1, z2) = int f(x; z1) f(x; z2) dnu(x)`` and its partials.

    ``z1`` and ``z2`` broadcast elementwise.
    """
    z1b, z2b = np.broadcast_arrays(np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))
    shape = z1b.shape
    # solve once per distinct point; outer-product grids repeat them heavily
    pts, inv = np.unique(np.concatenate([z1b.ravel(), z2b.ravel()]), return_inverse=True)
    sol = solve_mfc(measure, theta, pts, tol=tol)
    f, p = integrand(measure, theta, sol)
    i1, i2 = inv[: z1b.size], inv[z1b.size:]
    f1, f2 = f[:, i1], f[:, i2]
    d = 1.0 + np.atleast_1d(sol.m1)
    d1, d2 = d[i1], d[i2]
    I = p @ (f1 * f2)
    dI1 = d1 * (p @ (f1 * f1 * f2))
    dI2 = d2 * (p @ (f1 * f2 * f2))
    d2I = d1 * d2 * (p @ (f1 * f1 * f2 * f2))

    def out(a):
        a = a.reshape(shape)
        return a.item() if a.ndim == 0 else a

    return IKernelValue(out(z1b.ravel()), out(z2b.ravel()), out(I), out(dI1), out(dI2), out(d2I))
