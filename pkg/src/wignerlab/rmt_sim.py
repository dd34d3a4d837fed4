"""
Deformed Wigner matrices ``W = A/sqrt(N) + theta*diag(v)`` and their linear
spectral statistics.

Every replica draws from its own stream, derived from
``(master_seed, replica_index)`` alone, so a replica's matrix does not depend
on which worker produced it or in which order.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .clt import DEFAULT_MARGIN, DEFAULT_NODES, DEFAULT_V0, default_contour
from .errors import ConvergenceFailure, DomainError, ValidationError
from .freeconv import density, solve_mfc, support_edges
from .measures import DiagonalSpec, SpectralMeasure, quantile_diag, sample_iid

__all__ = [
    "EntryDistribution",
    "EnsembleConfig",
    "SpectrumResult",
    "replica_streams",
    "sample_diagonal",
    "sample_matrix",
    "eigenvalues",
    "simulate_spectrum",
    "lss_T",
    "lss_S",
    "centering_integral",
    "resolvent_trace",
    "write_spectra_csv",
]

log = logging.getLogger(__name__)

_KINDS = ("gaussian", "rademacher", "fourth_moment")


@dataclass(frozen=True)
class EntryDistribution:
    """
    Law of the entries of ``sqrt(N) * A``.

    Off-diagonal entries have mean 0 and variance 1; diagonal entries have
    variance ``w2_diag``.  ``fourth_moment`` uses the symmetric three-point
    law ``P(+-b) = 1/(2 b^2)``, ``P(0) = 1 - 1/b^2`` with ``b^2 = W4``.
    Third moments are always zero.
    """

    kind: str = "gaussian"
    w2_diag: float = 2.0
    W4_target: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown entry distribution {self.kind!r}")
        if not self.w2_diag > 0:
            raise ValidationError("w2_diag must be positive")
        if self.kind == "fourth_moment":
            if self.W4_target is None or self.W4_target < 1:
                raise ValidationError("fourth_moment needs W4_target >= 1")

    @property
    def w2(self) -> float:
        return float(self.w2_diag)

    @property
    def W3(self) -> float:
        return 0.0

    @property
    def W4(self) -> float:
        return {"gaussian": 3.0, "rademacher": 1.0}.get(self.kind, self.W4_target)

    def _unit(self, rng, size):
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size) - 1.0
        b = np.sqrt(self.W4_target)
        u = rng.random(size)
        q = 0.5 / self.W4_target
        return np.where(u < q, -b, np.where(u < 2.0 * q, b, 0.0))

    def offdiag(self, rng, size):
        return self._unit(rng, size)

    def diag(self, rng, size):
        return np.sqrt(self.w2_diag) * self._unit(rng, size)


@dataclass(frozen=True)
class EnsembleConfig:
    N: int
    theta: float
    measure: SpectralMeasure
    v_mode: str = "quantile"
    entry: EntryDistribution = EntryDistribution()
    master_seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValidationError("N must be at least 2")
        if not (np.isfinite(self.theta) and self.theta >= 0):
            raise ValidationError("theta must be nonnegative")
        if self.v_mode not in ("quantile", "iid"):
            raise ValidationError(f"v_mode must be 'quantile' or 'iid', got {self.v_mode!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValidationError("master_seed must be a 64-bit unsigned integer")
        if 0 < self.theta * np.sqrt(self.N) < 1:
            warnings.warn(
                f"theta*sqrt(N) = {self.theta * np.sqrt(self.N):.3g} < 1: coupling below the "
                "regime where the deformed limits apply",
                stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    v_used: DiagonalSpec


def replica_streams(config: EnsembleConfig, replica_index: int):
    """Independent generators for the Wigner part and the diagonal."""
    if replica_index < 0:
        raise ValidationError("replica_index must be nonnegative")
    seq = np.random.SeedSequence(config.master_seed, spawn_key=(replica_index,))
    a_seq, v_seq = seq.spawn(2)
    return np.random.default_rng(a_seq), np.random.default_rng(v_seq)


def sample_diagonal(config: EnsembleConfig, replica_index: int = 0) -> DiagonalSpec:
    if config.v_mode == "quantile":
        return quantile_diag(config.measure, config.N)
    _, rng_v = replica_streams(config, replica_index)
    return sample_iid(config.measure, config.N, rng_v)


def _wigner(config, rng):
    N = config.N
    A = np.zeros((N, N))
    iu = np.triu_indices(N, 1)
    A[iu] = config.entry.offdiag(rng, iu[0].size)
    A += A.T
    A[np.diag_indices(N)] = config.entry.diag(rng, N)
    return A / np.sqrt(N)


def sample_matrix(config: EnsembleConfig, replica_index: int, v: DiagonalSpec | None = None):
    """Symmetric ``N x N`` matrix ``A/sqrt(N) + theta*diag(v)`` for one replica."""
    rng_a, _ = replica_streams(config, replica_index)
    W = _wigner(config, rng_a)
    if v is None:
        v = sample_diagonal(config, replica_index)
    W[np.diag_indices(config.N)] += config.theta * v.values
    return W


def eigenvalues(matrix, v_used: DiagonalSpec | None = None) -> SpectrumResult:
    """Full spectrum of a real symmetric matrix, ascending."""
    W = np.asarray(matrix, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(W))) if W.size else 1.0)
    if np.max(np.abs(W - W.T), initial=0.0) > 1e-12 * scale:
        raise ValidationError("matrix is not symmetric")
    try:
        lam = np.linalg.eigvalsh(W)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"eigenvalues: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise ConvergenceFailure("eigenvalues: non-finite output")
    if v_used is None:
        v_used = DiagonalSpec("quantile", np.diag(W).copy())
    return SpectrumResult(lam, v_used)


def simulate_spectrum(config: EnsembleConfig, replica_index: int, v: DiagonalSpec | None = None) -> SpectrumResult:
    if v is None:
        v = sample_diagonal(config, replica_index)
    return eigenvalues(sample_matrix(config, replica_index, v), v)


def lss_T(spectrum, phi, centering: float) -> float:
    """``sum phi(lambda_i) - centering`` where ``centering = N int phi d rho_hat``."""
    lam = spectrum.eigenvalues if isinstance(spectrum, SpectrumResult) else np.asarray(spectrum)
    return float(np.sum(phi(lam)) - centering)


def lss_S(spectrum, phi, centering: float, theta: float, N: int) -> float:
    """``(sum phi(lambda_i) - N * centering) / (sqrt(N) theta)``, limiting ``centering``."""
    if theta == 0:
        raise DomainError("the normalized statistic needs theta > 0")
    lam = spectrum.eigenvalues if isinstance(spectrum, SpectrumResult) else np.asarray(spectrum)
    return float((np.sum(phi(lam)) - N * centering) / (np.sqrt(N) * theta))


def centering_integral(measure, theta, phi, margin=DEFAULT_MARGIN, v0=DEFAULT_V0,
                       nodes_per_side=DEFAULT_NODES) -> float:
    """
    ``int phi d rho`` for the deformed semicircle law built on ``measure``
    (a law or a realized diagonal).

    Polynomials use ``-1/(2 pi i) oint phi(z) m(z) dz``; other test
    functions integrate ``phi * density`` on the real axis.
    """
    if getattr(phi, "analytic", False):
        if phi.is_constant:
            return float(phi.coeffs[0])
        c = default_contour(measure, theta, margin, v0, nodes_per_side)
        sol = solve_mfc(measure, theta, c.z)
        val = -np.sum(phi(c.z) * sol.m * c.w) / (2j * np.pi)
        return float(val.real)

    edges = support_edges(measure, theta)
    lo, hi = edges.L_minus, edges.L_plus
    center, half = phi.center, phi.halfwidth
    lo, hi = max(lo, center - half), min(hi, center + half)
    if lo >= hi:
        return 0.0
    val, _ = quad(lambda e: float(phi(e)) * density(measure, theta, e, eta_floor=1e-6),
                  lo, hi, epsabs=1e-8, epsrel=1e-8, limit=200)
    return float(val)


def resolvent_trace(spectrum, z) -> complex:
    """Normalized trace of the resolvent, ``(1/N) sum 1/(lambda_i - z)``."""
    if np.imag(z) == 0:
        raise DomainError("resolvent_trace requires Im z != 0")
    lam = spectrum.eigenvalues if isinstance(spectrum, SpectrumResult) else np.asarray(spectrum)
    return complex(np.mean(1.0 / (lam - z)))


def write_spectra_csv(path, spectra):
    """Write ``replica,index,lambda`` rows for an iterable of ``(replica, SpectrumResult)``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["replica", "index", "lambda"])
        for rep, spec in spectra:
            for i, lam in enumerate(spec.eigenvalues):
                out.writerow([rep, i, repr(float(lam))])
