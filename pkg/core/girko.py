"""
rmtlab - Linear eigenvalue statistics
=====================================
N⁻¹·Σ_i f(λ_i) computed two ways: from the spectrum, and from log-determinants
of the Hermitization integrated against ∇²f over the plane.

Features:
- Built-in test functions with closed-form ∇²f and ∂_w̄ f
- Edge rescaling f_{w*}(w) = N^{2a}·f(N^a(w − w*))
- Σ_i log|λ_i − w| from singular values with an η₋ cutoff
- 2-D midpoint quadrature with one Richardson refinement
- Integration-by-parts tail at η* and the three-way η split
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from core.errors import DomainError, QuadratureError
from core.model import MatrixSample
from core.spectral import _as_dense, get_backend, offdiag_trace_solve, singular_values
from core.theory import ShiftPoint, circular_law_mass, imaginary_root, solve_m

logger = logging.getLogger(__name__)

ETA_CEILING = 1e4  # upper η limit for the T₃ closed forms; the tail beyond is O(η⁻²)
ETA_NODES = 64

# =============================================================================
# TEST FUNCTIONS
# =============================================================================


class Profile(str, Enum):
    GAUSSIAN = "gaussian-bump"
    POLYNOMIAL = "polynomial-bump"


# support radius, ∫f d²w, sup|f|, sup|∇²f|
PROFILE_CONSTANTS = {
    Profile.GAUSSIAN: (5.0, math.pi, 1.0, 4.0),
    Profile.POLYNOMIAL: (1.0, math.pi / 5.0, 1.0, 16.0),
}


def _profile_triple(profile: Profile, zeta: np.ndarray):
    """(f, ∇²f, ∂_w̄ f) of a radial profile g(|ζ|²) at ζ"""
    zeta = np.asarray(zeta, dtype=complex)
    u = np.abs(zeta) ** 2
    radius = PROFILE_CONSTANTS[profile][0]
    inside = u <= radius ** 2
    if profile is Profile.GAUSSIAN:
        g = np.exp(-u)
        value = g
        laplacian = (4.0 * u - 4.0) * g
        dbar = -zeta * g
    else:
        s = np.clip(1.0 - u, 0.0, None)
        value = s ** 4
        laplacian = s ** 2 * (64.0 * u - 16.0)
        dbar = -4.0 * s ** 3 * zeta
    return (np.where(inside, value, 0.0),
            np.where(inside, laplacian, 0.0),
            np.where(inside, dbar, 0.0))


@dataclass(frozen=True)
class TestFunction:
    """A built-in profile centered at w* with edge scale exponent a"""
    __test__ = False

    profile: Profile
    center: complex = 0j
    a: float = 0.5
    delta: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile(self.profile))

    @property
    def integral(self) -> float:
        return PROFILE_CONSTANTS[self.profile][1]

    @property
    def sup_norms(self) -> dict:
        _, _, sup_f, sup_lap = PROFILE_CONSTANTS[self.profile]
        return {"f": sup_f, "laplacian": sup_lap}

    def unscaled(self) -> "RescaledTestFunction":
        """f(w − w*) itself, no N-dependent rescaling"""
        return RescaledTestFunction(self.profile, complex(self.center), 1.0)


@dataclass(frozen=True)
class RescaledTestFunction:
    """w ↦ s²·f(s(w − w*)) with s = N^a, evaluated with its derivatives"""
    profile: Profile
    center: complex
    scale: float

    @property
    def radius(self) -> float:
        return PROFILE_CONSTANTS[self.profile][0] / self.scale

    def _at(self, w):
        return _profile_triple(self.profile, self.scale * (np.asarray(w) - self.center))

    def value(self, w):
        return self.scale ** 2 * self._at(w)[0]

    def laplacian(self, w):
        return self.scale ** 4 * self._at(w)[1]

    def dbar(self, w):
        return self.scale ** 3 * self._at(w)[2]

    def __call__(self, w):
        return self.value(w)

    def disc_mass(self) -> float:
        """π⁻¹·∫_{|w|≤1} f_{w*} d²w"""
        return circular_law_mass(self.value, self.center, self.radius)


def rescale_f(tf: TestFunction, N: int) -> RescaledTestFunction:
    """
    f_{w*}(w) = N^{2a}·f(N^a(w − w*))

    Raises:
        DomainError: a outside (1/2 − δ/2, 1/2]
    """
    if not 0.5 - tf.delta / 2.0 < tf.a <= 0.5:
        raise DomainError(f"scale exponent a={tf.a} outside (1/2 − δ/2, 1/2] for δ={tf.delta}")
    return RescaledTestFunction(tf.profile, complex(tf.center), float(N) ** tf.a)


TestFunctionLike = Union[TestFunction, RescaledTestFunction]


def _resolve(tf: TestFunctionLike, N: int) -> RescaledTestFunction:
    return tf if isinstance(tf, RescaledTestFunction) else rescale_f(tf, N)


# =============================================================================
# QUADRATURE
# =============================================================================


@dataclass(frozen=True)
class QuadratureSpec:
    """
    Grids for the Girko pipeline.

    grid_cells is the number of midpoint cells per axis over the support
    square; an even count keeps the support center on a cell corner.
    """
    eta_lower: Optional[float] = None  # η₋, default N^-5
    delta_q: float = 0.05
    eta_ratio: float = 1.15
    grid_cells: int = 32
    refinements: int = 1
    jitter: float = 1e-6
    max_error: Optional[float] = None

    def lower(self, N: int) -> float:
        return self.eta_lower if self.eta_lower is not None else float(N) ** -5

    def eta_small(self, N: int) -> float:
        """η_* = N^(−3/4−δ_q)"""
        return float(N) ** (-0.75 - self.delta_q)

    def eta_large(self, N: int) -> float:
        """η* = N^(−3/4+δ_q)"""
        return float(N) ** (-0.75 + self.delta_q)

    def eta_grid(self, N: int) -> np.ndarray:
        """Geometric η grid covering [η₋, η*], diagnostic curves only"""
        lo, hi = self.lower(N), self.eta_large(N)
        count = int(math.ceil(math.log(hi / lo) / math.log(self.eta_ratio))) + 1
        return np.geomspace(lo, hi, count)

    def to_dict(self, N: int) -> dict:
        return {
            "eta_lower": self.lower(N), "delta_q": self.delta_q,
            "eta_small": self.eta_small(N), "eta_large": self.eta_large(N),
            "eta_ratio": self.eta_ratio, "grid_cells": self.grid_cells,
            "refinements": self.refinements,
        }


def midpoint_grid(center: complex, radius: float, cells: int) -> Tuple[np.ndarray, float]:
    """Cell midpoints of the square [c − r, c + r]² and the cell width"""
    h = 2.0 * radius / cells
    offsets = -radius + h * (np.arange(cells) + 0.5)
    xx, yy = np.meshgrid(offsets, offsets, indexing="ij")
    return (center + xx + 1j * yy).ravel(), h


# =============================================================================
# LOG-DETERMINANTS
# =============================================================================


@dataclass(frozen=True)
class LogModulus:
    value: float           # Σ_j ½·log(σ_j² + η₋²)
    bias_bound: float      # Σ_j η₋²/σ_j²
    ill_conditioned: bool  # some σ_j < 10·η₋
    min_sigma: float


def log_modulus_from_sigma(sigma: np.ndarray, eta_lower: float) -> LogModulus:
    sigma = np.asarray(sigma, dtype=float)
    value = 0.5 * np.sum(np.log(sigma ** 2 + eta_lower ** 2))
    min_sigma = float(sigma.min())
    with np.errstate(divide="ignore"):
        bias = float(np.sum(eta_lower ** 2 / sigma ** 2)) if eta_lower > 0 else 0.0
    return LogModulus(float(value), bias, bool(min_sigma < 10.0 * eta_lower), min_sigma)


def log_modulus_via_eta(X, w: complex, spec: Optional[QuadratureSpec] = None,
                        backend=None) -> LogModulus:
    """
    Σ_i log|λ_i − w| as (i/2)∫_{η₋}^∞ tr G̃_w(iη) dη, evaluated in closed form:
    Σ_j ½·log(σ_j² + η₋²) with σ the singular values of X − w.
    """
    spec = spec or QuadratureSpec()
    N = _as_dense(X).shape[0]
    return log_modulus_from_sigma(singular_values(X, w, backend=backend), spec.lower(N))


def _node_sigmas(x: np.ndarray, nodes: np.ndarray, backend) -> np.ndarray:
    """Singular values of X − w for every node, one row per node"""
    sigmas = get_backend(backend).batch_singular_values(x, np.asarray(nodes, dtype=complex))
    return np.reshape(sigmas, (len(nodes), x.shape[0]))


def _log_moduli(x: np.ndarray, nodes: np.ndarray, eta_lower: float, jitter: float,
                backend) -> Tuple[np.ndarray, int]:
    """Log-moduli at every node; ill-conditioned nodes are jittered once"""
    sigmas = _node_sigmas(x, nodes, backend)
    results = [log_modulus_from_sigma(s, eta_lower) for s in sigmas]
    flagged = [i for i, r in enumerate(results) if r.ill_conditioned]
    if flagged:
        logger.warning(f"{len(flagged)} quadrature nodes within 10·η₋ of the spectrum, jittering")
        moved = nodes[flagged] + jitter * (1.0 + 1.0j) / math.sqrt(2.0)
        for i, s in zip(flagged, _node_sigmas(x, moved, backend)):
            results[i] = log_modulus_from_sigma(s, eta_lower)
    return np.array([r.value for r in results]), len(flagged)


# =============================================================================
# STATISTICS
# =============================================================================


def linear_stat_direct(spectrum, tf: RescaledTestFunction) -> complex:
    """N⁻¹·Σ_i f_{w*}(λ_i)"""
    spectrum = np.asarray(spectrum, dtype=complex)
    return complex(np.mean(tf.value(spectrum)))


@dataclass
class GirkoResult:
    value: complex
    error_estimate: float
    levels: List[float] = field(default_factory=list)
    ill_conditioned_nodes: int = 0
    grid_cells: int = 0


def linear_stat_girko(X, tf: TestFunctionLike, spec: Optional[QuadratureSpec] = None,
                      backend=None) -> GirkoResult:
    """
    (2πN)⁻¹·∫ ∇²f_{w*}(w)·Σ_i log|λ_i − w| d²w by midpoint quadrature.

    The grid is refined `spec.refinements` times by halving the cell width;
    the last two levels are combined by Richardson extrapolation and their
    difference gives the error estimate.

    Raises:
        QuadratureError: non-finite levels, or error above spec.max_error
    """
    spec = spec or QuadratureSpec()
    x = _as_dense(X)
    N = x.shape[0]
    rtf = _resolve(tf, N)
    eta_lower = spec.lower(N)

    levels = []
    flagged = 0
    cells = spec.grid_cells
    for _ in range(spec.refinements + 1):
        nodes, h = midpoint_grid(rtf.center, rtf.radius, cells)
        weights = rtf.laplacian(nodes)
        active = weights != 0
        logs, count = _log_moduli(x, nodes[active], eta_lower, spec.jitter, backend)
        flagged += count
        levels.append(float(np.sum(weights[active] * logs) * h * h / (2.0 * math.pi * N)))
        logger.debug(f"Girko level {cells}x{cells}: {levels[-1]:.10g}")
        cells *= 2

    if not np.all(np.isfinite(levels)):
        raise QuadratureError("non-finite quadrature level", levels[-2:])
    if len(levels) == 1:
        value, error = levels[0], math.inf
    else:
        value = (4.0 * levels[-1] - levels[-2]) / 3.0
        error = abs(levels[-1] - levels[-2]) / 3.0
    if spec.max_error is not None and error > spec.max_error:
        raise QuadratureError(f"refinement error {error:.3e} above {spec.max_error:.3e}", levels[-2:])
    return GirkoResult(complex(value), error, levels, flagged, spec.grid_cells)


@dataclass
class IbpTail:
    value: complex
    eta_star: float
    nodes: np.ndarray = field(repr=False)
    deviations: np.ndarray = field(repr=False)  # N⁻¹Σ G̃_{i+N,i}(iη*) − u(iη*) per node


def ibp_tail(X, tf: TestFunctionLike, eta_star: Optional[float] = None,
             spec: Optional[QuadratureSpec] = None,
             offdiag: Optional[Callable[[complex], complex]] = None) -> IbpTail:
    """
    T₃ = −π⁻¹·∫ ∂_w̄ f_{w*}(w)·[N⁻¹Σ_i G̃_{i+N,i}(iη*) − u(iη*)] d²w.

    Args:
        eta_star: boundary scale, default N^(−3/4)
        offdiag: optional replacement for w ↦ N⁻¹Σ_i G̃_{i+N,i}(iη*)

    Raises:
        DomainError: η* outside [N^(−1+δ_q), N^(−3/4+δ_q)]
    """
    spec = spec or QuadratureSpec()
    N = X.N if isinstance(X, MatrixSample) else np.asarray(X).shape[0]
    rtf = _resolve(tf, N)
    if eta_star is None:
        eta_star = float(N) ** -0.75
    if not float(N) ** (-1.0 + spec.delta_q) <= eta_star <= spec.eta_large(N):
        raise DomainError(f"eta_star={eta_star:.3e} outside the edge band for N={N}")

    nodes, h = midpoint_grid(rtf.center, rtf.radius, spec.grid_cells)
    weights = rtf.dbar(nodes)
    active = weights != 0
    nodes, weights = nodes[active], weights[active]
    if offdiag is None:
        offdiag = lambda w: offdiag_trace_solve(X, w, eta_star)  # noqa: E731
    deviations = np.array([
        offdiag(w) - solve_m(ShiftPoint(complex(w), eta_star)).u for w in nodes
    ], dtype=complex)
    value = -np.sum(weights * deviations) * h * h / math.pi
    return IbpTail(complex(value), eta_star, nodes, deviations)


@dataclass(frozen=True)
class EtaSplit:
    T1: float  # η ∈ (η₋, η_*)
    T2: float  # η ∈ [η_*, η*]
    T3: float  # η > η*
    statistic: float
    deterministic: float  # m part plus the g̃ ceiling term; T₁+T₂+T₃ = statistic − deterministic
    disc_mass: float    # π⁻¹·∫_{|w|≤1} f

    @property
    def total(self) -> float:
        return self.T1 + self.T2 + self.T3


def _m_integral(abs_w2: np.ndarray, lo: float, hi: float, cusp: bool = False) -> np.ndarray:
    """∫_lo^hi Im m(w, iη) dη per node by Gauss–Legendre"""
    x, wts = np.polynomial.legendre.leggauss(ETA_NODES)
    if cusp:
        # η = hi·s³ on [0, 1] smooths the η^{1/3} behavior at the cusp
        s = 0.5 * (x + 1.0)
        eta = hi * s ** 3
        jac = 0.5 * 3.0 * hi * s ** 2
    else:
        log_lo, log_hi = math.log(lo), math.log(hi)
        eta = np.exp(0.5 * (log_hi - log_lo) * x + 0.5 * (log_hi + log_lo))
        jac = 0.5 * (log_hi - log_lo) * eta
    a = imaginary_root(abs_w2[:, np.newaxis], eta[np.newaxis, :])
    return a @ (wts * jac)


def eta_split(X, tf: TestFunctionLike, spec: Optional[QuadratureSpec] = None,
              backend=None) -> EtaSplit:
    """
    Split (i/2π)·∫∇²f·∫(g̃ − m) dη d²w at η_* and η* into T₁, T₂, T₃.

    The g̃ pieces are closed-form log ratios of singular values; the m pieces
    use Gauss–Legendre in η. T₁ + T₂ + T₃ equals the statistic minus the
    deterministic part, which approximates π⁻¹·∫_{|w|≤1} f.
    """
    spec = spec or QuadratureSpec()
    x = _as_dense(X)
    N = x.shape[0]
    rtf = _resolve(tf, N)
    eta_lo, eta_small, eta_large = spec.lower(N), spec.eta_small(N), spec.eta_large(N)

    nodes, h = midpoint_grid(rtf.center, rtf.radius, spec.grid_cells)
    lap = rtf.laplacian(nodes)
    active = lap != 0
    nodes, lap = nodes[active], lap[active]
    s2 = _node_sigmas(x, nodes, backend) ** 2

    def g_integral(lo, hi):
        # ∫_lo^hi Im g̃ dη = (2N)⁻¹·Σ_j log((σ_j² + hi²)/(σ_j² + lo²))
        return np.sum(np.log((s2 + hi ** 2) / (s2 + lo ** 2)), axis=1) / (2.0 * N)

    abs_w2 = np.abs(nodes) ** 2
    g_parts = [g_integral(eta_lo, eta_small), g_integral(eta_small, eta_large),
               g_integral(eta_large, ETA_CEILING)]
    m_parts = [_m_integral(abs_w2, 0.0, eta_small, cusp=True),
               _m_integral(abs_w2, eta_small, eta_large),
               _m_integral(abs_w2, eta_large, ETA_CEILING)]

    # (i/2π)·∫∇²f·i·(Im parts) = −(2π)⁻¹·∫∇²f·(Im parts)
    scale = -h * h / (2.0 * math.pi)
    T = [float(scale * np.sum(lap * (g - m))) for g, m in zip(g_parts, m_parts)]
    ceiling = np.sum(np.log(s2 + ETA_CEILING ** 2), axis=1) / (2.0 * N)
    deterministic = float(-scale * np.sum(lap * (ceiling - sum(m_parts))))
    statistic = float(np.sum(lap * 0.5 * np.sum(np.log(s2 + eta_lo ** 2), axis=1)) * h * h
                      / (2.0 * math.pi * N))
    return EtaSplit(T[0], T[1], T[2], statistic, deterministic, rtf.disc_mass())
