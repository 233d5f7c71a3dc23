"""
rmtlab - Spectral engine
========================
Hermitizations, spectra, singular values and Green-function summaries.

Every solver call goes through a backend object so the reference
implementations in core.linalg and the LAPACK/ARPACK wrappers in scipy
share one signature.

Features:
- Implicit Hermitization operator [[0, X−w], [(X−w)ᴴ, 0]]
- Hermitian eigendecomposition, singular values, full nonsymmetric spectra
- Top-k eigenvalues by implicitly restarted Arnoldi
- Resolvent entries by spectral expansion with Ward / block-trace / symmetry checks
- Off-diagonal partial trace N⁻¹Σ_i G̃_{i+N,i} and its deviation from the cubic
- Isotropic sums and Hermitization eigenvector sup-norms
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from config import get_config
from core import linalg
from core.errors import ConvergenceError, DenseCapExceeded, DomainError
from core.model import MatrixKind, MatrixSample
from core.theory import ShiftPoint, solve_m

logger = logging.getLogger(__name__)

MatrixLike = Union[MatrixSample, np.ndarray]

# =============================================================================
# BACKENDS
# =============================================================================


class ReferenceBackend:
    """Self-contained solvers from core.linalg"""
    name = "reference"
    identifier = "reference/householder-ql-qr-iram"

    def sym_eig(self, t: np.ndarray, want_vectors: bool = True):
        return linalg.hermitian_eig(t, want_vectors, get_config().QL_MAX_ITER)

    def singular_values(self, y: np.ndarray) -> np.ndarray:
        return linalg.golub_kahan_singular_values(y, get_config().QL_MAX_ITER)

    def batch_singular_values(self, x: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """Singular values of X − w·I for each shift, one row per shift"""
        identity = np.eye(x.shape[0])
        return np.array([self.singular_values(x - w * identity) for w in shifts])

    def eigvals(self, x: np.ndarray) -> np.ndarray:
        return linalg.shifted_qr_eigenvalues(linalg.hessenberg(x), get_config().QR_MAX_SWEEPS)

    def eigvecs(self, x: np.ndarray, eigenvalues: np.ndarray, rng: np.random.Generator):
        pairs = [linalg.inverse_iteration(x, lam, rng) for lam in eigenvalues]
        vectors = np.column_stack([v for v, _ in pairs]) if pairs else np.zeros((x.shape[0], 0))
        return vectors, np.array([r for _, r in pairs])

    def top_k(self, operator: LinearOperator, k: int, tol: float, ncv: Optional[int],
              max_restarts: int, rng: np.random.Generator) -> linalg.ArnoldiResult:
        solver = linalg.RestartedArnoldi(
            operator.matvec, operator.shape[0], k, ncv=ncv, tol=tol,
            max_restarts=max_restarts, rng=rng,
        )
        return solver.run()


class AcceleratedBackend(ReferenceBackend):
    """LAPACK and ARPACK through scipy"""
    name = "accelerated"
    identifier = f"accelerated/scipy-{scipy.__version__}"

    def sym_eig(self, t: np.ndarray, want_vectors: bool = True):
        if want_vectors:
            return scipy.linalg.eigh(t)
        return scipy.linalg.eigh(t, eigvals_only=True), None

    def singular_values(self, y: np.ndarray) -> np.ndarray:
        return scipy.linalg.svdvals(y)

    def batch_singular_values(self, x, shifts, chunk: int = 128):
        identity = np.eye(x.shape[0])
        out = np.empty((shifts.size, x.shape[0]))
        for start in range(0, shifts.size, chunk):
            part = shifts[start:start + chunk]
            stack = x[np.newaxis, :, :] - part[:, np.newaxis, np.newaxis] * identity
            out[start:start + part.size] = np.linalg.svd(stack, compute_uv=False)
        return out

    def eigvals(self, x: np.ndarray) -> np.ndarray:
        return scipy.linalg.eigvals(x)

    def eigvecs(self, x, eigenvalues, rng):
        values, vectors = scipy.linalg.eig(x)
        picked = np.array([np.argmin(np.abs(values - lam)) for lam in eigenvalues], dtype=int)
        vectors = vectors[:, picked]
        residuals = np.linalg.norm(x @ vectors - vectors * eigenvalues, axis=0)
        return vectors, residuals

    def top_k(self, operator, k, tol, ncv, max_restarts, rng):
        n = operator.shape[0]
        v0 = rng.standard_normal(n) + 0j
        try:
            values, vectors = eigs(
                operator, k=k, which="LM", tol=tol, ncv=ncv, v0=v0,
                maxiter=max_restarts * n,
            )
        except ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"ARPACK did not converge: {exc}", {"ritz_values": exc.eigenvalues}
            ) from exc
        order = np.argsort(-np.abs(values), kind="stable")
        values, vectors = values[order], vectors[:, order]
        residuals = np.array([
            np.linalg.norm(operator.matvec(vectors[:, i]) - values[i] * vectors[:, i])
            for i in range(k)
        ])
        return linalg.ArnoldiResult(values, vectors, residuals, 0)


BACKENDS = {
    "reference": ReferenceBackend(),
    "accelerated": AcceleratedBackend(),
}


def get_backend(name: Optional[str] = None):
    """Backend by name; None falls back to the configured default"""
    if name is None:
        name = get_config().BACKEND
    if not isinstance(name, str):
        return name
    try:
        return BACKENDS[name]
    except KeyError:
        raise DomainError(f"unknown backend {name!r}; known: {sorted(BACKENDS)}") from None


def _check_cap(dimension: int, hint: str = ""):
    cap = get_config().DENSE_CAP
    if dimension > cap:
        raise DenseCapExceeded(dimension, cap, hint)


def _as_dense(X: MatrixLike) -> np.ndarray:
    if isinstance(X, MatrixSample):
        return X.dense
    return np.asarray(X)


def _as_sample(X: MatrixLike) -> MatrixSample:
    if isinstance(X, MatrixSample):
        return X
    return MatrixSample.from_dense(X)


# =============================================================================
# DATA MODELS
# =============================================================================


@dataclass(frozen=True, eq=False)
class Hermitization:
    """H_w = [[0, X − w], [(X − w)ᴴ, 0]], applied without forming it"""
    base: MatrixSample
    w: complex

    @property
    def N(self) -> int:
        return self.base.N

    @property
    def dimension(self) -> int:
        return 2 * self.base.N

    @property
    def use_perturbed(self) -> bool:
        """True for H̃ (base carries the f·e·eᵀ mean), False for the centered H"""
        return self.base.kind != MatrixKind.CENTERED

    def matvec(self, x: np.ndarray) -> np.ndarray:
        N = self.N
        top, bottom = x[:N], x[N:]
        return np.concatenate([
            self.base.matvec(bottom) - self.w * bottom,
            self.base.rmatvec(top) - np.conj(self.w) * top,
        ])

    def shifted(self) -> np.ndarray:
        """Dense X − w·I"""
        y = np.array(self.base.dense, dtype=complex, copy=True)
        y[np.diag_indices(self.N)] -= self.w
        return y

    def dense(self) -> np.ndarray:
        _check_cap(self.dimension, "use trace_green for trace-only quantities")
        N = self.N
        y = self.shifted()
        h = np.zeros((2 * N, 2 * N), dtype=complex)
        h[:N, N:] = y
        h[N:, :N] = y.conj().T
        return h

    def as_operator(self) -> LinearOperator:
        return LinearOperator(
            (self.dimension, self.dimension), matvec=self.matvec,
            rmatvec=self.matvec, dtype=complex,
        )


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]


@dataclass(frozen=True)
class NonsymEig:
    eigenvalues: np.ndarray  # descending modulus
    eigenvectors: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TopSpectrum:
    eigenvalues: np.ndarray
    residual_norms: np.ndarray
    method: str  # dense-oracle | arnoldi


class SpectralResolvent:
    """G(z) = U·diag(1/(λ − z))·Uᴴ from a Hermitian eigendecomposition"""

    def __init__(self, eigenvalues: np.ndarray, eigenvectors: np.ndarray, z: complex, N: int):
        self.eigenvalues = eigenvalues
        self.vectors = eigenvectors
        self.z = complex(z)
        self.N = N
        self.weights = 1.0 / (eigenvalues - self.z)

    def entry(self, a: int, b: int) -> complex:
        return complex(np.sum(self.vectors[a] * self.weights * np.conj(self.vectors[b])))

    def entries(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        left = self.vectors[np.asarray(rows)] * self.weights
        return np.einsum("ij,ij->i", left, np.conj(self.vectors[np.asarray(cols)]))

    def column(self, b: int) -> np.ndarray:
        return self.vectors @ (self.weights * np.conj(self.vectors[b]))

    def diagonal(self) -> np.ndarray:
        return (np.abs(self.vectors) ** 2) @ self.weights

    def offdiag_trace(self) -> complex:
        """N⁻¹·Σ_i G_{i+N,i}"""
        N = self.N
        overlap = np.sum(self.vectors[N:] * np.conj(self.vectors[:N]), axis=0)
        return complex(np.sum(overlap * self.weights) / N)

    def trace(self) -> complex:
        return complex(np.sum(self.weights))

    def row_sums(self, rows: slice) -> np.ndarray:
        """Σ_{a ∈ rows} G_{a,b} for every column b"""
        left = np.sum(self.vectors[rows], axis=0) * self.weights
        return left @ self.vectors.conj().T


@dataclass
class GreenEvaluation:
    """Summaries of one resolvent G̃_w(z)"""
    gtilde: complex
    offdiag_trace: complex
    ward_residual_max: float
    blocktrace_residual: float
    symmetry_residual: Optional[float]
    z: complex
    resolvent: SpectralResolvent = field(repr=False)

    def entry(self, a: int, b: int) -> complex:
        return self.resolvent.entry(a, b)

    def to_dict(self) -> Dict:
        return {
            "gtilde": [self.gtilde.real, self.gtilde.imag],
            "offdiag_trace": [self.offdiag_trace.real, self.offdiag_trace.imag],
            "ward_residual_max": self.ward_residual_max,
            "blocktrace_residual": self.blocktrace_residual,
            "symmetry_residual": self.symmetry_residual,
        }


# =============================================================================
# OPERATIONS
# =============================================================================


def hermitize(X: MatrixLike, w: complex) -> Hermitization:
    return Hermitization(_as_sample(X), complex(w))


def sym_eig(T: np.ndarray, want_vectors: bool = True, backend=None) -> SymEig:
    """
    Eigenvalues ascending and orthonormal eigenvectors of a Hermitian matrix.

    Raises:
        DomainError: T is not Hermitian
        DenseCapExceeded: T is larger than the configured dense cap
    """
    T = np.asarray(T)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DomainError(f"sym_eig needs a square matrix, got shape {T.shape}")
    _check_cap(T.shape[0])
    norm = np.linalg.norm(T)
    asymmetry = np.abs(T - T.conj().T).max(initial=0.0)
    if asymmetry > 1e-12 * max(norm, np.finfo(float).tiny):
        raise DomainError(f"matrix is not Hermitian (asymmetry {asymmetry:.3e})")
    values, vectors = get_backend(backend).sym_eig(T, want_vectors)
    return SymEig(np.asarray(values), vectors)


def singular_values(X: MatrixLike, w: complex = 0.0, method: str = "golub-kahan",
                    backend=None) -> np.ndarray:
    """
    Singular values of X − w·I, nonincreasing.

    Args:
        method: "golub-kahan" (bidiagonalization) or "hermitization"
                (positive half of the Hermitization spectrum)
    """
    herm = hermitize(X, w)
    if method == "hermitization":
        values = sym_eig(herm.dense(), want_vectors=False, backend=backend).eigenvalues
        return np.clip(values[::-1][:herm.N], 0.0, None)
    if method != "golub-kahan":
        raise DomainError(f"unknown singular value method {method!r}")
    _check_cap(herm.N)
    sigma = get_backend(backend).singular_values(herm.shifted())
    return np.sort(np.asarray(sigma))[::-1]


def trace_green_from_sigma(sigma: np.ndarray, z):
    """
    g̃(z) = (2N)⁻¹·Σ_{±σ}(±σ − z)⁻¹ = N⁻¹·Σ_j z/(σ_j² − z²).

    z may be an array; at z = iη this is (iη/N)·Σ_j 1/(σ_j² + η²).
    """
    sigma = np.asarray(sigma, dtype=float)
    z_arr = np.asarray(z, dtype=complex)
    s2 = sigma ** 2
    if np.all(z_arr.real == 0):
        eta = z_arr.imag
        values = 1j * eta[..., None] / (s2 + eta[..., None] ** 2)
    else:
        values = z_arr[..., None] / (s2 - z_arr[..., None] ** 2)
    return np.mean(values, axis=-1)


def trace_green(X: MatrixLike, w: complex, eta, backend=None):
    """Normalized trace g̃ at z = iη from the singular values of X − w"""
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(eta_arr <= 0):
        raise DomainError(f"eta must be positive, got {eta}")
    sigma = singular_values(X, w, backend=backend)
    g = trace_green_from_sigma(sigma, 1j * eta_arr)
    return complex(g) if np.ndim(g) == 0 else g


def resolvent(X: MatrixLike, w: complex, z: complex, backend=None) -> SpectralResolvent:
    herm = hermitize(X, w)
    eig = sym_eig(herm.dense(), want_vectors=True, backend=backend)
    return SpectralResolvent(eig.eigenvalues, eig.eigenvectors, z, herm.N)


def _spectral_z(eta, z) -> complex:
    if z is not None:
        z = complex(z)
        if not z.imag > 0:
            raise DomainError(f"spectral parameter needs Im z > 0, got {z}")
        return z
    if eta is None or not eta > 0:
        raise DomainError(f"eta must be positive, got {eta}")
    return complex(0.0, eta)


def evaluate_green(res: SpectralResolvent, ward_columns: Iterable[int],
                   pairs: Sequence[Tuple[int, int]] = ()) -> GreenEvaluation:
    N, z = res.N, res.z
    eta = z.imag

    ward = 0.0
    for b in ward_columns:
        column = res.column(b)
        ward = max(ward, abs(np.sum(np.abs(column) ** 2) - column[b].imag / eta))

    diagonal = res.diagonal()
    blocktrace = abs(np.sum(diagonal[:N]) - np.sum(diagonal[N:]))

    symmetry = None
    if z.real == 0.0 and len(pairs):
        rows = np.array([a for a, _ in pairs])
        cols = np.array([b for _, b in pairs])
        forward = res.entries(rows, cols)
        backward = np.conj(res.entries(cols, rows))
        same_block = (rows < N) == (cols < N)
        defect = np.where(same_block, forward + backward, forward - backward)
        symmetry = float(np.abs(defect).max())

    return GreenEvaluation(
        gtilde=res.trace() / (2 * N),
        offdiag_trace=res.offdiag_trace(),
        ward_residual_max=float(ward),
        blocktrace_residual=float(blocktrace),
        symmetry_residual=symmetry,
        z=z,
        resolvent=res,
    )


def green_entries(X: MatrixLike, w: complex, eta: float = None,
                  index_pairs: Sequence[Tuple[int, int]] = (),
                  ward_columns: Optional[Sequence[int]] = None,
                  z: Optional[complex] = None, backend=None,
                  rng: Optional[np.random.Generator] = None):
    """
    Resolvent entries G̃_{âb̂} by spectral expansion, with identity residuals.

    Args:
        index_pairs: (â, b̂) pairs to return
        ward_columns: columns for the Ward check; default 8 random columns
        z: general spectral parameter; overrides eta when given

    Returns:
        (entries dict keyed by pair, GreenEvaluation)
    """
    z = _spectral_z(eta, z)
    res = resolvent(X, w, z, backend)
    if ward_columns is None:
        rng = rng or np.random.default_rng(0)
        ward_columns = rng.choice(2 * res.N, size=min(8, 2 * res.N), replace=False)
    pairs = list(index_pairs)
    evaluation = evaluate_green(res, ward_columns, pairs)
    entries = {}
    if pairs:
        values = res.entries([a for a, _ in pairs], [b for _, b in pairs])
        entries = {pair: complex(v) for pair, v in zip(pairs, values)}
    return entries, evaluation


def green_direct(X: MatrixLike, w: complex, z: complex) -> np.ndarray:
    """(H_w − z)⁻¹ by dense inversion; oracle for the spectral expansion"""
    h = hermitize(X, w).dense()
    h[np.diag_indices(h.shape[0])] -= z
    return np.linalg.inv(h)


def offdiag_trace_solve(X: MatrixLike, w: complex, eta: float) -> complex:
    """
    N⁻¹·tr[(X − w)ᴴ((X − w)(X − w)ᴴ + η²)⁻¹], the lower-left block trace of G̃(iη).

    One Cholesky solve instead of a 2N eigendecomposition.
    """
    y = hermitize(X, w).shifted()
    gram = y @ y.conj().T
    gram[np.diag_indices(y.shape[0])] += eta ** 2
    solution = scipy.linalg.solve(gram, y.conj().T, assume_a="pos")
    return complex(np.trace(solution) / y.shape[0])


def offdiag_trace_bound(N: int, eta: float) -> float:
    return N ** -2 * eta ** -2 + N ** -1 * eta ** (-2.0 / 3.0)


def offdiag_trace_test(A: MatrixLike, w: complex, eta: float, delta: float = 0.05,
                       method: str = "spectral", backend=None) -> complex:
    """
    N⁻¹·Σ_i G̃_{i+N,i}(iη) + (1 + m²)/w for |w| near 1 and η in the edge band.

    Args:
        method: "spectral" (eigendecomposition), "direct" (dense inversion)
                or "solve" (Cholesky on the N×N Gram matrix)

    Raises:
        DomainError: (w, iη) outside the edge domain
    """
    A = _as_sample(A)
    N = A.N
    band = N ** (-0.5 + delta)
    if not 1.0 - band <= abs(w) <= 1.0 + band:
        raise DomainError(f"|w| = {abs(w):.6f} outside [1 − N^(-1/2+δ), 1 + N^(-1/2+δ)]")
    if not N ** (-1.0 + delta) <= eta <= N ** (-0.75 + delta):
        raise DomainError(f"eta = {eta:.3e} outside [N^(-1+δ), N^(-3/4+δ)]")

    if method == "spectral":
        offdiag = resolvent(A, w, 1j * eta, backend).offdiag_trace()
    elif method == "direct":
        g = green_direct(A, w, 1j * eta)
        offdiag = complex(np.trace(g[N:, :N]) / N)
    elif method == "solve":
        offdiag = offdiag_trace_solve(A, w, eta)
    else:
        raise DomainError(f"unknown method {method!r}")

    m = solve_m(ShiftPoint(w, eta)).m
    return complex(offdiag + (1.0 + m * m) / w)


def dense_nonsym_eig(X: MatrixLike, vectors: bool = False, backend=None,
                     seed: int = 0) -> NonsymEig:
    """
    Full complex spectrum, ordered by descending modulus.

    Eigenvectors come from inverse iteration when requested; their
    residuals ‖Xv − λv‖ are returned alongside.
    """
    x = _as_dense(X)
    _check_cap(x.shape[0])
    engine = get_backend(backend)
    values = np.asarray(engine.eigvals(x))
    values = values[np.argsort(-np.abs(values), kind="stable")]
    if not vectors:
        return NonsymEig(values)
    vecs, residuals = engine.eigvecs(x, values, np.random.default_rng(seed))
    return NonsymEig(values, vecs, residuals)


def arnoldi_topk(X: MatrixLike, k: int, tol: float = 1e-10, ncv: Optional[int] = None,
                 max_restarts: Optional[int] = None, seed: int = 0, backend=None) -> TopSpectrum:
    """k largest-modulus eigenvalues through the sparse matvec"""
    sample = _as_sample(X)
    if not 0 < k < sample.N - 1:
        raise DomainError(f"need 0 < k < N − 1, got k={k}, N={sample.N}")
    if max_restarts is None:
        max_restarts = get_config().ARNOLDI_RESTARTS
    result = get_backend(backend).top_k(
        sample.as_operator(), k, tol, ncv, max_restarts, np.random.default_rng(seed)
    )
    return TopSpectrum(result.eigenvalues, result.residual_norms, "arnoldi")


def top_spectrum_dense(X: MatrixLike, k: int, backend=None) -> TopSpectrum:
    """Top-k by modulus from the full dense spectrum"""
    eig = dense_nonsym_eig(X, backend=backend)
    x = _as_dense(X)
    rng = np.random.default_rng(0)
    residuals = np.array([linalg.inverse_iteration(x, lam, rng)[1] for lam in eig.eigenvalues[:k]])
    return TopSpectrum(eig.eigenvalues[:k], residuals, "dense-oracle")


def pairing_defect(X: MatrixLike, w: complex, backend=None) -> float:
    """max_j |λ_j + λ_{2N−1−j}| over the Hermitization spectrum"""
    values = sym_eig(hermitize(X, w).dense(), want_vectors=False, backend=backend).eigenvalues
    return float(np.abs(values + values[::-1]).max())


# =============================================================================
# ISOTROPIC SUMS & HERMITIZATION EIGENVECTORS
# =============================================================================


@dataclass(frozen=True)
class IsotropicReport:
    top_max: float     # max_ĵ |Σ_{i<N} G̃_iĵ|
    bottom_max: float  # max_ĵ |Σ_{α≥N} G̃_αĵ|
    envelope: float    # (Im m + 1/(Nη))/(f·η)


def isotropic_sums(X: MatrixLike, w: complex, eta: float, f: Optional[float] = None,
                   backend=None) -> IsotropicReport:
    sample = _as_sample(X)
    N = sample.N
    res = resolvent(sample, w, 1j * eta, backend)
    top = np.abs(res.row_sums(slice(0, N))).max()
    bottom = np.abs(res.row_sums(slice(N, 2 * N))).max()
    if f is None:
        f = sample.params.f if sample.params is not None else 1.0
    m = solve_m(ShiftPoint(w, eta)).m
    envelope = (m.imag + 1.0 / (N * eta)) / (f * eta)
    return IsotropicReport(float(top), float(bottom), float(envelope))


@dataclass(frozen=True)
class HermDelocReport:
    sup_top: float       # √N·max_j ‖v_j‖_∞
    sup_bottom: float    # √N·max_j ‖w_j‖_∞
    top_pair_distance: float  # ‖(v₁, w₁) − (e, e)/√2‖_∞ after phase alignment


def hermitization_delocalization(X: MatrixLike, w: complex, backend=None) -> HermDelocReport:
    """Block sup-norms of Hermitization eigenvectors (v_j; w_j), scaled by √N"""
    herm = hermitize(X, w)
    N = herm.N
    eig = sym_eig(herm.dense(), want_vectors=True, backend=backend)
    vecs = eig.eigenvectors
    sup_top = np.sqrt(N) * np.abs(vecs[:N]).max()
    sup_bottom = np.sqrt(N) * np.abs(vecs[N:]).max()

    top = vecs[:, -1]
    total = np.sum(top[:N])
    phase = np.conj(total) / abs(total) if abs(total) > 0 else 1.0
    top = top * phase
    flat = np.full(N, 1.0 / np.sqrt(2.0 * N))
    distance = max(np.abs(top[:N] - flat).max(), np.abs(top[N:] - flat).max())
    return HermDelocReport(float(sup_top), float(sup_bottom), float(np.sqrt(N) * distance))
