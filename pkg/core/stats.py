"""
rmtlab - Observables
====================
Spectra and resolvents turned into the quantities the acceptance suites test.

Features:
- Edge reports (λ₁, deflated spectral radius, √N fluctuation)
- Eigenvector sup-norm delocalization
- Rescaled local configurations at the unit circle and their 1-D functionals
- Two-sample Kolmogorov–Smirnov comparisons
- Averaged local law curves over η for both Hermitizations
- Entrywise law errors and the averaged weak law on D_δ
- ER vs Ginibre edge universality suite
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats as scipy_stats

from core.errors import DomainError
from core.model import EnsembleParams, MatrixSample, center, make_rng, sample_er, sample_ginibre
from core.spectral import (
    MatrixLike, NonsymEig, _as_sample, dense_nonsym_eig, green_entries,
    singular_values, trace_green_from_sigma,
)
from core.theory import (
    DomainLabel, ShiftPoint, build_M, classify_domain, imaginary_root,
    in_bulk_domain, solve_m,
)

logger = logging.getLogger(__name__)

FUNCTIONALS = ("fluct", "min_distance", "window_count")
ENSEMBLES = ("er", "ginibre")

# =============================================================================
# EDGE & DELOCALIZATION
# =============================================================================


@dataclass(frozen=True)
class EdgeReport:
    lambda1: complex
    rho2: float
    fluct: float
    f_gap: Optional[float]

    def to_dict(self) -> dict:
        return {
            "lambda1": [self.lambda1.real, self.lambda1.imag],
            "rho2": self.rho2, "fluct": self.fluct, "f_gap": self.f_gap,
        }


def edge_report(spectrum: Sequence[complex], f: Optional[float] = None,
                N: Optional[int] = None) -> EdgeReport:
    """
    λ₁ and the spectral radius after deflation.

    Exactly one eigenvalue, the one nearest f, is removed before taking
    rho2; with f=None nothing is removed (Ginibre-type spectra). N defaults
    to the spectrum length and must be passed for a truncated top spectrum.

    Raises:
        DomainError: fewer than two eigenvalues
    """
    values = np.asarray(spectrum, dtype=complex)
    if values.size < 2:
        raise DomainError(f"edge report needs at least 2 eigenvalues, got {values.size}")
    N = N or values.size
    lambda1 = complex(values[np.argmax(np.abs(values))])
    if f is None:
        rest = values
        f_gap = None
    else:
        rest = np.delete(values, np.argmin(np.abs(values - f)))
        f_gap = abs(lambda1 - f)
    rho2 = float(np.abs(rest).max())
    return EdgeReport(lambda1, rho2, math.sqrt(N) * (rho2 - 1.0), f_gap)


@dataclass
class DelocReport:
    values: np.ndarray = field(repr=False)
    max: float
    median: float
    defective: int

    def to_dict(self) -> dict:
        return {"max": self.max, "median": self.median,
                "defective": self.defective, "count": int(self.values.size)}


def delocalization_values(vectors: np.ndarray) -> np.ndarray:
    """√N·‖u‖_∞/‖u‖ per column; always ≥ 1"""
    vectors = np.asarray(vectors)
    N = vectors.shape[0]
    return math.sqrt(N) * np.abs(vectors).max(axis=0) / np.linalg.norm(vectors, axis=0)


def delocalization(X: MatrixLike, eig: Optional[NonsymEig] = None, radius: float = 2.0,
                   residual_tol: float = 1e-6, backend=None) -> DelocReport:
    """
    Sup-norm report over right eigenvectors with |λ| ≤ radius.

    Pairs whose inverse-iteration residual exceeds residual_tol·max(1, ‖X‖)
    are treated as defective and excluded.
    """
    if eig is None or eig.eigenvectors is None:
        eig = dense_nonsym_eig(X, vectors=True, backend=backend)
    scale = max(1.0, float(np.linalg.norm(_as_sample(X).dense, 2)))
    inside = np.abs(eig.eigenvalues) <= radius
    if eig.residuals is None:
        good = np.ones(eig.eigenvalues.shape, dtype=bool)
    else:
        good = eig.residuals <= residual_tol * scale
    defective = int(np.sum(inside & ~good))
    if defective:
        logger.debug(f"{defective} defective eigenpairs excluded from delocalization")
    keep = inside & good
    values = delocalization_values(eig.eigenvectors[:, keep]) if keep.any() else np.zeros(0)
    if values.size == 0:
        return DelocReport(values, math.nan, math.nan, defective)
    return DelocReport(values, float(values.max()), float(np.median(values)), defective)


# =============================================================================
# LOCAL CONFIGURATIONS
# =============================================================================


@dataclass
class CorrelationSample:
    """Points z_i = √N(λ_i − w*) with |z_i| ≤ R"""
    points: np.ndarray
    moduli: np.ndarray  # √N(|λ_i| − 1) for the same eigenvalues
    center: complex
    window: float
    trial: int = 0

    @property
    def count(self) -> int:
        return int(self.points.size)

    @property
    def min_distance(self) -> float:
        """Smallest pairwise |z_i − z_j|; NaN with fewer than two points"""
        if self.count < 2:
            return math.nan
        diff = np.abs(self.points[:, None] - self.points[None, :])
        return float(diff[np.triu_indices(self.count, 1)].min())


def kpoint_sample(spectrum: Sequence[complex], w_star: complex, R: float,
                  N: Optional[int] = None, trial: int = 0) -> CorrelationSample:
    """Rescaled local configuration around a point on the unit circle"""
    if abs(abs(w_star) - 1.0) > 1e-12:
        raise DomainError(f"|w*| must be 1, got {abs(w_star)}")
    values = np.asarray(spectrum, dtype=complex)
    N = N or values.size
    root_n = math.sqrt(N)
    points = root_n * (values - w_star)
    inside = np.abs(points) <= R
    moduli = root_n * (np.abs(values[inside]) - 1.0)
    return CorrelationSample(points[inside], moduli, complex(w_star), R, trial)


def edge_functionals(spectrum: Sequence[complex], f: Optional[float] = None,
                     w_star: complex = 1.0, R: float = 2.0,
                     N: Optional[int] = None) -> Dict[str, float]:
    """The three 1-D edge functionals compared by the universality suite"""
    report = edge_report(spectrum, f, N)
    window = kpoint_sample(spectrum, w_star, R, N)
    return {
        "fluct": report.fluct,
        "min_distance": window.min_distance,
        "window_count": float(window.count),
    }


# =============================================================================
# TWO-SAMPLE TESTS
# =============================================================================


@dataclass(frozen=True)
class TwoSampleResult:
    name: str
    statistic: float
    p_value: float
    n_a: int
    n_b: int

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic,
                "p_value": self.p_value, "n_a": self.n_a, "n_b": self.n_b}


def two_sample_ks(a: Sequence[float], b: Sequence[float], name: str = "ks") -> TwoSampleResult:
    """
    Two-sample Kolmogorov–Smirnov statistic with its asymptotic p-value.

    Raises:
        DomainError: either sample has fewer than 20 values
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 20 or b.size < 20:
        raise DomainError(f"KS needs at least 20 values per sample, got {a.size} and {b.size}")
    result = scipy_stats.ks_2samp(a, b, method="asymp")
    return TwoSampleResult(name, float(result.statistic),
                           float(np.clip(result.pvalue, 0.0, 1.0)), int(a.size), int(b.size))


# =============================================================================
# LOCAL LAWS
# =============================================================================


def require_edge_grid(w: complex, etas: np.ndarray, N: int, delta: float, weak: bool):
    allowed = {DomainLabel.EDGE_INSIDE, DomainLabel.EDGE_OUTSIDE}
    for eta in etas:
        point = ShiftPoint(complex(w), float(eta))
        if weak and in_bulk_domain(point, N, delta):
            continue
        label = classify_domain(point, N, delta).label
        if label not in allowed:
            raise DomainError(f"(w={w}, eta={eta:.3e}) is {label.value}, outside the edge domains")


@dataclass
class LocalLawErrors:
    """|g̃ − m| on an η grid for one matrix"""
    etas: np.ndarray
    errors: np.ndarray
    imag_errors: np.ndarray  # |Im g̃ − Im m|
    max_real_part: float     # max |Re g̃|


def local_law_errors(X: MatrixLike, w: complex, etas: Sequence[float],
                     backend=None) -> LocalLawErrors:
    """One singular value decomposition serves the whole η grid"""
    etas = np.asarray(etas, dtype=float)
    sigma = singular_values(X, w, backend=backend)
    g = trace_green_from_sigma(sigma, 1j * etas)
    m = 1j * imaginary_root(abs(w) ** 2, etas)
    return LocalLawErrors(
        etas, np.abs(g - m), np.abs(g.imag - m.imag), float(np.abs(g.real).max(initial=0.0))
    )


def local_law_scale(w: complex, etas: np.ndarray, N: int, nu: float = 0.1) -> np.ndarray:
    """Nη inside the unit circle, N^(1+ν)·η outside"""
    etas = np.asarray(etas, dtype=float)
    exponent = 1.0 + nu if abs(w) > 1.0 else 1.0
    return N ** exponent * etas


@dataclass
class LocalLawCurve:
    etas: np.ndarray
    perturbed: np.ndarray  # trials × η, |g̃ − m| for H̃ (A)
    centered: np.ndarray   # trials × η, |g − m| for H (B)
    scale: np.ndarray      # Nη or N^(1+ν)η

    def quantiles(self, ensemble: str = "perturbed", levels=(0.1, 0.5, 0.9)) -> np.ndarray:
        """Quantiles of scale·|g̃ − m| across trials, one row per η"""
        errors = getattr(self, ensemble)
        if errors.size == 0:
            return np.zeros((self.etas.size, len(levels)))
        return np.quantile(errors * self.scale, levels, axis=0).T


def local_law_curve(params: EnsembleParams, w: complex, etas: Sequence[float], trials: int,
                    delta: float = 0.05, nu: float = 0.1, weak: bool = False,
                    backend=None) -> LocalLawCurve:
    """
    Per-η |g̃ − m| over independent trials for A and its centered B.

    Raises:
        DomainError: an η outside S1 ∪ S2 (outside D_δ when weak=True)
    """
    etas = np.asarray(etas, dtype=float)
    require_edge_grid(w, etas, params.N, delta, weak)
    perturbed, centered = [], []
    for trial in range(trials):
        A = sample_er(params, make_rng(params.seed, trial))
        perturbed.append(local_law_errors(A, w, etas, backend).errors)
        centered.append(local_law_errors(center(A), w, etas, backend).errors)
    shape = (trials, etas.size)
    return LocalLawCurve(
        etas,
        np.reshape(perturbed, shape),
        np.reshape(centered, shape),
        local_law_scale(w, etas, params.N, nu),
    )


@dataclass(frozen=True)
class EntrywiseReport:
    error: float          # max sampled |G_âb̂ − M_âb̂|
    diagonal_error: float
    partner_error: float  # pairs (i, i+N) and (i+N, i)
    other_error: float    # entries where M vanishes
    envelope: float       # (Nη)^(−1/6) + q^(−1/3)

    def to_dict(self) -> dict:
        return {
            "error": self.error, "diagonal_error": self.diagonal_error,
            "partner_error": self.partner_error, "other_error": self.other_error,
            "envelope": self.envelope,
        }


def _scale_q(X: MatrixSample, q: Optional[float]) -> float:
    if q is not None:
        return q
    if X.params is None:
        raise DomainError("q is required for matrices without ensemble parameters")
    return X.params.q


def entrywise_law_error(X: MatrixLike, w: complex, z: complex, s: int = 64,
                        delta: float = 0.05, q: Optional[float] = None,
                        rng: Optional[np.random.Generator] = None,
                        backend=None) -> EntrywiseReport:
    """
    max over sampled pairs of |G̃_âb̂ − M_âb̂| at (w, z) ∈ D_δ.

    s diagonal entries, s partner entries and s uniform pairs are drawn.

    Raises:
        DomainError: (w, z) outside D_δ
    """
    sample = _as_sample(X)
    N = sample.N
    z = complex(z)
    point = ShiftPoint(complex(w), z.imag, z.real) if z.imag > 0 else None
    if point is None or not in_bulk_domain(point, N, delta):
        raise DomainError(f"(w={w}, z={z}) outside D_delta")
    rng = rng or np.random.default_rng(0)

    diag = rng.integers(0, 2 * N, size=s)
    partner_rows = rng.integers(0, 2 * N, size=s)
    partner_cols = np.where(partner_rows < N, partner_rows + N, partner_rows - N)
    rows = rng.integers(0, 2 * N, size=s)
    cols = rng.integers(0, 2 * N, size=s)
    all_rows = np.concatenate([diag, partner_rows, rows])
    all_cols = np.concatenate([diag, partner_cols, cols])

    _, evaluation = green_entries(sample, w, z=z, ward_columns=(), backend=backend)
    G = evaluation.resolvent.entries(all_rows, all_cols)
    M = build_M(solve_m(point), point).entries(all_rows, all_cols, N)
    deviation = np.abs(G - M)

    eta = z.imag
    envelope = (N * eta) ** (-1.0 / 6.0) + _scale_q(sample, q) ** (-1.0 / 3.0)
    return EntrywiseReport(
        float(deviation.max()),
        float(deviation[:s].max()),
        float(deviation[s:2 * s].max()),
        float(deviation[2 * s:].max()),
        float(envelope),
    )


@dataclass(frozen=True)
class WeakLawReport:
    gtilde: complex
    m: complex
    error: float
    envelope: float

    def to_dict(self) -> dict:
        return {"gtilde": [self.gtilde.real, self.gtilde.imag], "m": [self.m.real, self.m.imag],
                "error": self.error, "envelope": self.envelope}


def weak_law_point(X: MatrixLike, w: complex, z: complex, delta: float = 0.05,
                   q: Optional[float] = None, backend=None) -> WeakLawReport:
    """|g̃(z) − m(z)| against (Nη)^(−1/6) + q^(−1/3) at a point of D_δ"""
    sample = _as_sample(X)
    N = sample.N
    z = complex(z)
    point = ShiftPoint(complex(w), z.imag, z.real) if z.imag > 0 else None
    if point is None or not in_bulk_domain(point, N, delta):
        raise DomainError(f"(w={w}, z={z}) outside D_delta")
    g = complex(trace_green_from_sigma(singular_values(sample, w, backend=backend), z))
    m = solve_m(point).m
    envelope = (N * z.imag) ** (-1.0 / 6.0) + _scale_q(sample, q) ** (-1.0 / 3.0)
    return WeakLawReport(g, m, abs(g - m), float(envelope))


# =============================================================================
# UNIVERSALITY
# =============================================================================


@dataclass(frozen=True)
class UniversalitySpec:
    """
    subject and reference are "er" or "ginibre". The default pair is the
    universality claim; er/er with disjoint seeds is the null calibration;
    control_scale multiplies the reference spectra; ginibre against
    ginibre scaled by 1.05 is the power check.
    """
    N: int
    p: float
    trials: int = 200
    seed: int = 0
    subject: str = "er"
    reference: str = "ginibre"
    control_scale: Optional[float] = None
    w_star: complex = 1.0
    window: float = 2.0

    def __post_init__(self):
        for role in (self.subject, self.reference):
            if role not in ENSEMBLES:
                raise DomainError(f"unknown ensemble {role!r}; known: {sorted(ENSEMBLES)}")


def sample_functionals(ensemble: str, params: EnsembleParams, stream: int,
                       w_star: complex = 1.0, window: float = 2.0,
                       scale: Optional[float] = None, backend=None) -> Dict[str, float]:
    """
    Edge functionals of one ER or Ginibre sample drawn on (params.seed, stream).

    ER spectra are deflated at f; Ginibre spectra are not.
    """
    rng = make_rng(params.seed, stream)
    if ensemble == "er":
        X, f = sample_er(params, rng), params.f
    else:
        X, f = sample_ginibre(params.N, params.seed, rng=rng), None
    spectrum = dense_nonsym_eig(X, backend=backend).eigenvalues
    if scale is not None:
        spectrum = spectrum * scale
    return edge_functionals(spectrum, f, w_star, window)


def compare_functionals(a: List[Dict[str, float]], b: List[Dict[str, float]],
                        names: Sequence[str] = FUNCTIONALS) -> List[TwoSampleResult]:
    """KS per functional; NaN entries (windows with < 2 points) are dropped"""
    results = []
    for name in names:
        xs = np.array([r[name] for r in a], dtype=float)
        ys = np.array([r[name] for r in b], dtype=float)
        results.append(two_sample_ks(xs[np.isfinite(xs)], ys[np.isfinite(ys)], name))
    return results


def universality_suite(spec: UniversalitySpec, backend=None) -> List[TwoSampleResult]:
    """
    Subject against reference ensemble on the three edge functionals.

    Subject trials use streams 2t and the reference uses 2t + 1, so the two
    samples never share draws.

    Raises:
        DomainError: fewer than 100 trials per ensemble
    """
    if spec.trials < 100:
        raise DomainError(f"universality needs at least 100 trials, got {spec.trials}")
    params = EnsembleParams(spec.N, spec.p, spec.seed)
    subject = [sample_functionals(spec.subject, params, 2 * t, spec.w_star, spec.window,
                                  backend=backend)
               for t in range(spec.trials)]
    reference = [sample_functionals(spec.reference, params, 2 * t + 1, spec.w_star,
                                    spec.window, spec.control_scale, backend)
                 for t in range(spec.trials)]
    results = compare_functionals(subject, reference)
    for result in results:
        logger.info(f"universality {result.name}: D={result.statistic:.4f} p={result.p_value:.4g}")
    return results
