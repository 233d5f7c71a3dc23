"""
rmtlab - Deterministic objects
==============================
The self-consistent cubic, its Im > 0 root m and everything derived from it.

Features:
- P(x) = x³ + 2z·x² + (z² + 1 − |w|²)·x + z at z = E + iη
- Vectorized safeguarded Newton on the imaginary axis
- Companion-matrix roots plus homotopy selection off the axis
- 𝔪, u, the block values of M, asymptotic scales and stability factors
- Spectral domain classification (S1, S2, D_δ)
- Circular-law mass of a test function over the unit disc
"""

import logging
import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Dict, Tuple

import numpy as np

from core.errors import DomainError, SolverFailure

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 200
HOMOTOPY_STEPS = 60
HOMOTOPY_ETA0 = 10.0

# =============================================================================
# DATA MODELS
# =============================================================================


@dataclass(frozen=True)
class ShiftPoint:
    """A spectral point (w, z) with z = E + iη; the edge analysis uses E = 0"""
    w: complex
    eta: float
    E: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta}")

    @property
    def kappa(self) -> float:
        return abs(abs(self.w) - 1.0)

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)

    @property
    def on_imaginary_axis(self) -> bool:
        return self.E == 0.0


class RootSelector(str, Enum):
    """How the Im > 0 root was picked"""
    IMAGINARY_AXIS = "imaginary-axis"
    UNIQUE = "unique"
    HOMOTOPY = "homotopy"


@dataclass(frozen=True)
class CubicSolution:
    m: complex
    frak_m: complex
    u: complex
    residual: float
    stability: float
    selector: RootSelector

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key in ("m", "frak_m", "u"):
            data[key] = [data[key].real, data[key].imag]
        data["selector"] = self.selector.value
        return data


@dataclass(frozen=True)
class MBlocks:
    """Scalar block values of the 2N×2N deterministic approximation M"""
    diag: complex
    upper: complex  # top-right block w·𝔪
    lower: complex  # bottom-left block w̄·𝔪

    def entry(self, a: int, b: int, N: int) -> complex:
        top_a, top_b = a < N, b < N
        if a == b:
            return self.diag
        if top_a and not top_b and b - N == a:
            return self.upper
        if top_b and not top_a and a - N == b:
            return self.lower
        return 0j

    def entries(self, rows: np.ndarray, cols: np.ndarray, N: int) -> np.ndarray:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        out = np.zeros(rows.shape, dtype=complex)
        out[rows == cols] = self.diag
        out[(rows < N) & (cols == rows + N)] = self.upper
        out[(rows >= N) & (cols == rows - N)] = self.lower
        return out


class DomainLabel(str, Enum):
    BULK = "bulk-D_delta"
    EDGE_INSIDE = "edge-inside-S1"
    EDGE_OUTSIDE = "edge-outside-S2"
    OUTSIDE = "outside-all"


@dataclass(frozen=True)
class DomainClass:
    label: DomainLabel
    delta: float

    @property
    def in_edge_domain(self) -> bool:
        return self.label in (DomainLabel.EDGE_INSIDE, DomainLabel.EDGE_OUTSIDE)


# =============================================================================
# CUBIC
# =============================================================================


def eval_P(x, point: ShiftPoint):
    """P(x) for the point's z; at z = iη this is x³ + 2iη·x² + (1 − η² − |w|²)·x + iη"""
    z = point.z
    return ((x + 2.0 * z) * x + (z * z + 1.0 - abs(point.w) ** 2)) * x + z


def eval_dP(x, point: ShiftPoint):
    z = point.z
    return (3.0 * x + 4.0 * z) * x + (z * z + 1.0 - abs(point.w) ** 2)


def imaginary_root(abs_w2, eta) -> np.ndarray:
    """
    Positive root a of a³ + 2η·a² + (η² + |w|² − 1)·a − η = 0, vectorized.

    P(ia) = −i·(that cubic), so m = i·a. The cubic is −η at 0 and
    η + η² + |w|² at 1, and Descartes' rule leaves exactly one positive root,
    so (0, 1] always brackets it.
    """
    abs_w2, eta = np.broadcast_arrays(np.asarray(abs_w2, dtype=float), np.asarray(eta, dtype=float))
    c1 = eta * eta + abs_w2 - 1.0
    lo = np.zeros(eta.shape)
    hi = np.ones(eta.shape)
    # η^{1/3} is the cusp scale; clip into the bracket as a start
    a = np.clip(np.cbrt(eta), 1e-300, 1.0)
    eps = np.finfo(float).eps

    for _ in range(NEWTON_MAX_ITER):
        g = ((a + 2.0 * eta) * a + c1) * a - eta
        lo = np.where(g < 0, a, lo)
        hi = np.where(g > 0, a, hi)
        dg = (3.0 * a + 4.0 * eta) * a + c1
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = a - g / dg
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        step_to = np.where(inside, newton, 0.5 * (lo + hi))
        done = (np.abs(step_to - a) <= 4.0 * eps * np.abs(a)) | (g == 0)
        a = np.where(g == 0, a, step_to)
        if np.all(done):
            break
    return a


def _polish(x: complex, point: ShiftPoint, steps: int = 3) -> complex:
    for _ in range(steps):
        d = eval_dP(x, point)
        if d == 0:
            break
        x = x - eval_P(x, point) / d
    return x


def _cubic_roots(point: ShiftPoint) -> np.ndarray:
    z = point.z
    return np.roots([1.0, 2.0 * z, z * z + 1.0 - abs(point.w) ** 2, z])


def _homotopy_root(point: ShiftPoint) -> complex:
    """Follow the root continuous with m ≈ −1/z from η₀ down to η at fixed E and w"""
    eta0 = max(HOMOTOPY_ETA0, point.eta)
    x = -1.0 / complex(point.E, eta0)
    for eta in np.geomspace(eta0, point.eta, HOMOTOPY_STEPS):
        step_point = ShiftPoint(point.w, float(eta), point.E)
        roots = _cubic_roots(step_point)
        x = roots[np.argmin(np.abs(roots - x))]
        x = _polish(complex(x), step_point)
    return x


def _solution(m: complex, point: ShiftPoint, selector: RootSelector) -> CubicSolution:
    z = point.z
    frak_m = -m / (z + m)
    u = -np.conj(point.w) * m / (z + m)
    return CubicSolution(
        m=complex(m),
        frak_m=complex(frak_m),
        u=complex(u),
        residual=float(abs(eval_P(m, point))),
        stability=float(abs(eval_dP(m, point))),
        selector=selector,
    )


def solve_m(point: ShiftPoint) -> CubicSolution:
    """
    The root of P with Im m > 0.

    On the imaginary axis the root is i·a with a from the bracketed Newton
    iteration; elsewhere the companion-matrix roots are filtered by Im > tol
    and ties are broken by homotopy from large η.

    Raises:
        SolverFailure: no admissible root (η > 0 makes this unreachable)
    """
    if point.on_imaginary_axis:
        a = float(imaginary_root(abs(point.w) ** 2, point.eta))
        if not a > 0:
            raise SolverFailure(f"no positive imaginary root at {point}")
        return _solution(complex(0.0, a), point, RootSelector.IMAGINARY_AXIS)

    tol = 1e-14 * (1.0 + point.eta)
    roots = _cubic_roots(point)
    admissible = roots[roots.imag > tol]
    if admissible.size == 1:
        m = _polish(complex(admissible[0]), point)
        selector = RootSelector.UNIQUE
    else:
        logger.debug(f"{admissible.size} roots with Im > 0 at {point}, using homotopy")
        m = _homotopy_root(point)
        selector = RootSelector.HOMOTOPY
    if not m.imag > 0:
        raise SolverFailure(f"selected root {m} has Im <= 0 at {point}")
    return _solution(m, point, selector)


def identity_residual(sol: CubicSolution, point: ShiftPoint) -> float:
    """|1 + z·m + m² + w·u|, zero for an exact root"""
    return abs(1.0 + point.z * sol.m + sol.m ** 2 + point.w * sol.u)


# =============================================================================
# SCALES & DOMAINS
# =============================================================================


def asymptotic_scale(point: ShiftPoint) -> float:
    """Order of Im m: κ^{1/2} + η^{1/3} inside the disc, η/(κ + η^{2/3}) outside"""
    if point.eta > 1:
        raise DomainError(f"asymptotic scale needs eta <= 1, got {point.eta}")
    kappa, eta = point.kappa, point.eta
    if abs(point.w) <= 1:
        return math.sqrt(kappa) + eta ** (1.0 / 3.0)
    return eta / (kappa + eta ** (2.0 / 3.0))


def stability_factor(point: ShiftPoint) -> Tuple[float, float]:
    """(|P′(m)|, |1 − |w|| + η^{2/3}); the two agree up to constants near the cusp"""
    sol = solve_m(point)
    return sol.stability, point.kappa + point.eta ** (2.0 / 3.0)


def build_M(sol: CubicSolution, point: ShiftPoint) -> MBlocks:
    """Block values of M: m on the diagonal blocks, w·𝔪 and w̄·𝔪 off them"""
    w = complex(point.w)
    return MBlocks(diag=sol.m, upper=w * sol.frak_m, lower=w.conjugate() * sol.frak_m)


def in_bulk_domain(point: ShiftPoint, N: int, delta: float) -> bool:
    """|w| ≤ δ⁻¹, |E| ≤ δ⁻², N^(−1+δ) ≤ η ≤ δ⁻¹"""
    return (abs(point.w) <= 1.0 / delta and abs(point.E) <= delta ** -2
            and N ** (-1.0 + delta) <= point.eta <= 1.0 / delta)


def classify_domain(point: ShiftPoint, N: int, delta: float) -> DomainClass:
    """
    Place (w, z) in S1, S2, D_δ or nowhere; checks run in that order so
    boundary points land in the first set that contains them.
    """
    if delta <= 0:
        raise DomainError(f"delta must be positive, got {delta}")
    abs_w, eta = abs(point.w), point.eta
    edge_band = N ** (-1.0 + delta) <= eta <= N ** (-0.75 + delta)

    if point.on_imaginary_axis and edge_band:
        if point.kappa <= N ** (-0.5 + delta):
            return DomainClass(DomainLabel.EDGE_INSIDE, delta)
        if 1.0 + N ** (-0.5 + delta) <= abs_w <= 1.0 / delta:
            return DomainClass(DomainLabel.EDGE_OUTSIDE, delta)

    if in_bulk_domain(point, N, delta):
        return DomainClass(DomainLabel.BULK, delta)
    return DomainClass(DomainLabel.OUTSIDE, delta)


def semicircle_m(z: complex) -> complex:
    """(−z + sqrt(z² − 4))/2 on the branch with Im > 0; m at w = 0"""
    root = np.sqrt(complex(z) ** 2 - 4.0)
    m = (-z + root) / 2.0
    if m.imag <= 0:
        m = (-z - root) / 2.0
    return complex(m)


def circular_law_mass(f, center: complex, radius: float, order: int = 200) -> float:
    """
    π⁻¹·∫_{|w|≤1} f(w) d²w for f supported in the disc |w − center| ≤ radius.

    Gauss–Legendre in polar coordinates about the origin, restricted to the
    annular sector that meets the support.
    """
    c = abs(center)
    r_lo = max(0.0, c - radius)
    r_hi = min(1.0, c + radius)
    if r_hi <= r_lo:
        return 0.0
    if radius < c:
        half_angle = math.asin(radius / c)
        theta_lo, theta_hi = np.angle(center) - half_angle, np.angle(center) + half_angle
    else:
        theta_lo, theta_hi = -math.pi, math.pi

    nodes, weights = np.polynomial.legendre.leggauss(order)
    r = 0.5 * (r_hi - r_lo) * nodes + 0.5 * (r_hi + r_lo)
    theta = 0.5 * (theta_hi - theta_lo) * nodes + 0.5 * (theta_hi + theta_lo)
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    values = np.real(f(rr * np.exp(1j * tt))) * rr
    jacobian = 0.25 * (r_hi - r_lo) * (theta_hi - theta_lo)
    return float(weights @ values @ weights * jacobian / math.pi)
