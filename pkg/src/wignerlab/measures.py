"""
Deformation measures and their empirical (diagonal) realizations.

A deformation measure is a centered, compactly supported probability law on
the real line.  Three families are supported: symmetric two-point laws,
uniform laws on a symmetric interval, and arbitrary discrete laws.  All
integrals against a measure go through :meth:`atoms`, which returns exact
atoms for discrete laws and a fixed Gauss-Legendre rule for the uniform law.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, IoError, ValidationError

__all__ = [
    "SpectralMeasure",
    "TwoPoint",
    "Uniform",
    "Discrete",
    "DiagonalSpec",
    "RegularityReport",
    "stieltjes_nu",
    "quantile_diag",
    "sample_iid",
    "check_regularity",
    "moment",
    "load_discrete",
    "parse_measure",
]

_UNIFORM_PANELS = 8
_UNIFORM_NODES_PER_PANEL = 16
_REGULARITY_GRID = 512


class SpectralMeasure:
    """Common interface of the deformation laws."""

    @property
    def support_min(self) -> float:
        raise NotImplementedError

    @property
    def support_max(self) -> float:
        raise NotImplementedError

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights representing integration against the law."""
        raise NotImplementedError

    def inverse_power(self, w, theta: float, k: int):
        """
        Evaluate ``int dnu(x) / (theta*x - w)**k`` for ``k`` in {1, 2}.

        The default implementation sums over :meth:`atoms`; laws with closed
        forms override it.
        """
        x, p = self.atoms()
        w = np.asarray(w, dtype=complex)
        d = theta * x.reshape((-1,) + (1,) * w.ndim) - w
        return np.sum(p.reshape(d.shape[:1] + (1,) * w.ndim) / d**k, axis=0)

    def moment(self, k: int) -> float:
        x, p = self.atoms()
        return float(np.sum(p * x**k))

    def quantile(self, p):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def label(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class TwoPoint(SpectralMeasure):
    """The law ``(delta_{-a} + delta_{a}) / 2``."""

    a: float

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a <= 0:
            raise ValidationError(f"two_point requires a > 0, got {self.a!r}")

    @property
    def support_min(self):
        return -self.a

    @property
    def support_max(self):
        return self.a

    def atoms(self):
        return np.array([-self.a, self.a]), np.array([0.5, 0.5])

    def moment(self, k):
        return float(self.a**k) if k % 2 == 0 else 0.0

    def quantile(self, p):
        return np.where(np.asarray(p) <= 0.5, -self.a, self.a).astype(float)

    def sample(self, rng, n):
        return self.a * (2.0 * rng.integers(0, 2, size=n) - 1.0)

    def label(self):
        return f"two_point:{self.a:g}"


@dataclass(frozen=True)
class Uniform(SpectralMeasure):
    """Uniform law on ``[-a, a]``."""

    a: float

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a <= 0:
            raise ValidationError(f"uniform requires a > 0, got {self.a!r}")

    @property
    def support_min(self):
        return -self.a

    @property
    def support_max(self):
        return self.a

    def atoms(self):
        t, wt = np.polynomial.legendre.leggauss(_UNIFORM_NODES_PER_PANEL)
        edges = np.linspace(-self.a, self.a, _UNIFORM_PANELS + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        # density 1/(2a)
        p = (half[:, None] * wt[None, :]).ravel() / (2.0 * self.a)
        return x, p

    def inverse_power(self, w, theta, k):
        w = np.asarray(w, dtype=complex)
        if theta == 0:
            return (-w) ** (-k)
        ta = theta * self.a
        if k == 1:
            # log((ta - w)/(-ta - w)) / (2 ta), written without cancellation for small ta/|w|
            return -np.arctanh(ta / w) / ta
        if k == 2:
            return 1.0 / (w * w - ta * ta)
        return super().inverse_power(w, theta, k)

    def moment(self, k):
        return float(self.a**k / (k + 1)) if k % 2 == 0 else 0.0

    def quantile(self, p):
        return self.a * (2.0 * np.asarray(p, dtype=float) - 1.0)

    def sample(self, rng, n):
        return rng.uniform(-self.a, self.a, size=n)

    def label(self):
        return f"uniform:{self.a:g}"


@dataclass(frozen=True)
class Discrete(SpectralMeasure):
    """
    Finitely supported law.

    Weights that sum to one within 1e-9 are renormalized; anything further
    off is rejected.  The law must be centered.
    """

    points: tuple[float, ...]
    weights: tuple[float, ...]
    source: str = field(default="", compare=False)

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        p = np.asarray(self.weights, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size == 0:
            raise ValidationError("discrete measure needs matching, nonempty points and weights")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValidationError("discrete measure has non-finite entries")
        if np.any(p < 0):
            raise ValidationError("discrete measure has negative weights")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"discrete weights sum to {total!r}, not 1")
        p = p / total
        mean = float(np.sum(p * x))
        if abs(mean) > 1e-12:
            raise ValidationError(f"deformation measure must be centered, mean = {mean!r}")
        order = np.argsort(x, kind="stable")
        object.__setattr__(self, "points", tuple(float(v) for v in x[order]))
        object.__setattr__(self, "weights", tuple(float(v) for v in p[order]))

    @property
    def support_min(self):
        return self.points[0]

    @property
    def support_max(self):
        return self.points[-1]

    def atoms(self):
        return np.array(self.points), np.array(self.weights)

    def quantile(self, p):
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(p, dtype=float) - 1e-12, side="left")
        return np.asarray(self.points)[np.minimum(idx, len(cum) - 1)]

    def sample(self, rng, n):
        return rng.choice(np.asarray(self.points), size=n, p=np.asarray(self.weights))

    def label(self):
        return f"discrete:{self.source}" if self.source else f"discrete[{len(self.points)} atoms]"


@dataclass(frozen=True, eq=False)
class DiagonalSpec:
    """Realized diagonal ``v_1..v_N`` and its empirical law."""

    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in ("quantile", "iid"):
            raise ValidationError(f"unknown diagonal mode {self.mode!r}")
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (
            isinstance(other, DiagonalSpec)
            and self.mode == other.mode
            and np.array_equal(self.values, other.values)
        )

    def __len__(self):
        return self.values.size

    @property
    def support_min(self):
        return float(self.values.min())

    @property
    def support_max(self):
        return float(self.values.max())

    def atoms(self):
        x, counts = np.unique(self.values, return_counts=True)
        return x, counts / self.values.size

    # empirical laws need no closed forms
    inverse_power = SpectralMeasure.inverse_power
    moment = SpectralMeasure.moment

    def label(self):
        return f"diag[{self.mode}, N={self.values.size}]"


def stieltjes_nu(measure, theta: float, z):
    """
    Stieltjes transform of the law of ``theta * v``.

    Parameters
    ----------
    measure : SpectralMeasure or DiagonalSpec
    theta : float
        Coupling, ``theta >= 0``.
    z : complex or array_like
        Spectral parameter; real values are allowed only away from the
        scaled support.

    Returns
    -------
    complex or numpy.ndarray
        ``int dnu(x) / (theta*x - z)``.

    Raises
    ------
    DomainError
        If a real ``z`` lies in ``theta * [support_min, support_max]``.
    """
    z_arr = np.asarray(z, dtype=complex)
    on_axis = z_arr.imag == 0
    if np.any(on_axis):
        zr = z_arr.real[on_axis]
        lo, hi = theta * measure.support_min, theta * measure.support_max
        if np.any((zr >= lo) & (zr <= hi)):
            raise DomainError("z lies on the scaled support of the deformation measure")
    out = measure.inverse_power(z_arr, theta, 1)
    return out if np.ndim(z) else complex(out)


def quantile_diag(measure: SpectralMeasure, n: int) -> DiagonalSpec:
    """Deterministic diagonal ``v_i = F^{-1}((i - 1/2) / n)``."""
    if n < 1:
        raise ValidationError("N must be positive")
    p = (np.arange(1, n + 1) - 0.5) / n
    return DiagonalSpec("quantile", np.asarray(measure.quantile(p), dtype=float))


def sample_iid(measure: SpectralMeasure, n: int, rng) -> DiagonalSpec:
    """Draw ``n`` independent entries; ``rng`` may be a Generator or a seed."""
    if n < 1:
        raise ValidationError("N must be positive")
    rng = np.random.default_rng(rng)
    return DiagonalSpec("iid", measure.sample(rng, n))


def moment(measure, k: int) -> float:
    if k < 0 or k > 8:
        raise DomainError("moment order must be in 0..8")
    return measure.moment(k)


@dataclass(frozen=True)
class RegularityReport:
    ok: bool
    x_min: float | None
    g_min: float
    varpi: float

    def __bool__(self):
        return self.ok


def _g_atoms(x, pts, wts):
    d = pts[:, None] - np.atleast_1d(x)[None, :]
    with np.errstate(divide="ignore"):
        return np.sum(wts[:, None] / d**2, axis=0)


def _gap_infimum(measure) -> tuple[float | None, float]:
    """Minimizer and minimum of ``int (v - x)^{-2} dnu(v)`` over the support hull."""
    if isinstance(measure, Uniform):
        return None, float("inf")
    pts, wts = measure.atoms()
    lo, hi = float(pts[0]), float(pts[-1])
    if hi == lo:
        return lo, float("inf")

    grid = np.linspace(lo, hi, _REGULARITY_GRID)
    g = _g_atoms(grid, pts, wts)
    best = int(np.argmin(g))
    # endpoints are atoms (g = inf), so the best node sits strictly inside a
    # gap; g is convex there
    xb = grid[best]
    left, right = pts[pts < xb].max(), pts[pts > xb].min()
    res = minimize_scalar(
        lambda t: float(_g_atoms(t, pts, wts)[0]),
        bounds=(left, right),
        method="bounded",
        options={"xatol": 1e-10},
    )
    if res.fun < g[best]:
        return float(res.x), float(res.fun)
    return float(xb), float(g[best])


def check_regularity(measure, varpi: float) -> RegularityReport:
    """
    Check ``inf_{x in I} int (v - x)^{-2} dnu(v) >= 1 + varpi``.

    ``I`` is the smallest interval containing the support.  A law with an
    absolutely continuous part has an infinite integral everywhere on ``I``
    and passes automatically.
    """
    if varpi <= 0:
        raise DomainError("varpi must be positive")
    x_min, g_min = _gap_infimum(measure)
    return RegularityReport(g_min >= 1.0 + varpi, x_min, g_min, varpi)


_FLOAT_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\Z")


def _strict_float(token: str, where: str) -> float:
    if not _FLOAT_RE.match(token):
        raise ValidationError(f"{where}: not a number: {token!r}")
    return float(token)


def load_discrete(path) -> Discrete:
    """Read a discrete law from a text file of ``point weight`` lines."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read measure file {path}: {exc}") from exc
    points, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'point weight'")
        points.append(_strict_float(parts[0], f"{path}:{lineno}"))
        weights.append(_strict_float(parts[1], f"{path}:{lineno}"))
    return Discrete(tuple(points), tuple(weights), source=str(path))


def parse_measure(text: str) -> SpectralMeasure:
    """Parse ``two_point:a``, ``uniform:a`` or ``discrete:path``."""
    kind, sep, arg = text.partition(":")
    if not sep or not arg:
        raise ValidationError(f"bad measure {text!r}; expected kind:argument")
    if kind == "two_point":
        return TwoPoint(_strict_float(arg, "two_point"))
    if kind == "uniform":
        return Uniform(_strict_float(arg, "uniform"))
    if kind == "discrete":
        return load_discrete(arg)
    raise ValidationError(f"unknown measure kind {kind!r}")
