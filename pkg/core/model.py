"""
rmtlab - Ensembles
==================
Samplers and transforms for the random matrices studied by the lab.

Features:
- Normalized Erdős–Rényi digraph adjacency A = 𝒜/q in CSR storage
- Centered matrix B = A − f·e·eᵀ kept as sparse-plus-rank-one
- Real Ginibre W with entry variance 1/N
- Variance-preserving flow B(t) and its shifted counterpart A(t)
- Corner perturbation Ŵ = W + f·e₁e₁ᵀ
- Exact entry cumulants of B
- Counter-based per-trial RNG streams (Philox)
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy import sparse
from scipy.sparse.linalg import LinearOperator

from core.errors import DomainError

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "Philox-4x64"

# =============================================================================
# RNG STREAMS
# =============================================================================


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Generator for (seed, stream). Distinct streams are statistically
    independent; identical pairs reproduce bit-identical draws.
    """
    if seed < 0:
        raise DomainError(f"seed must be nonnegative, got {seed}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(sequence))


# =============================================================================
# DATA MODELS
# =============================================================================


class MatrixKind(str, Enum):
    """Provenance of a sampled matrix"""
    ADJACENCY = "A"
    CENTERED = "B"
    GINIBRE = "W"
    FLOW = "B(t)"
    SHIFTED_FLOW = "A(t)"
    CORNER = "W_hat"
    GIVEN = "given"


@dataclass(frozen=True)
class EnsembleParams:
    """Size, density and seed of an ER ensemble plus the derived scales"""
    N: int
    p: float
    seed: int = 0
    zero_diagonal: bool = False

    def __post_init__(self):
        if self.N < 2:
            raise DomainError(f"N must be at least 2, got {self.N}")
        if not 0 < self.p <= 0.5:
            raise DomainError(f"p must lie in (0, 1/2], got {self.p}")

    @property
    def q(self) -> float:
        return math.sqrt(self.N * self.p * (1.0 - self.p))

    @property
    def xi(self) -> float:
        return math.log(2.0 * self.q) / math.log(self.N)

    @property
    def f(self) -> float:
        return self.N * self.p / self.q

    def to_dict(self) -> dict:
        return {
            "N": self.N, "p": self.p, "seed": self.seed,
            "zero_diagonal": self.zero_diagonal,
            "q": self.q, "xi": self.xi, "f": self.f,
        }


Storage = Union[sparse.csr_matrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class MatrixSample:
    """
    An immutable sampled matrix X = base + rank_one·e·eᵀ with e = N^{-1/2}(1,…,1)ᵀ.

    `base` is CSR for the adjacency kinds and a dense array for the Gaussian
    kinds. The rank-one term is never materialized unless `dense` is read.
    """
    kind: MatrixKind
    base: Storage
    rank_one: float = 0.0
    t: Optional[float] = None
    params: Optional[EnsembleParams] = None
    seed: Optional[int] = None

    @property
    def N(self) -> int:
        return self.base.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.base)

    @cached_property
    def dense(self) -> np.ndarray:
        """Dense row-major copy, allocated once"""
        if self.is_sparse:
            out = self.base.toarray()
        else:
            out = np.array(self.base, dtype=np.result_type(self.base.dtype, np.float64), copy=True)
        if self.rank_one:
            out += self.rank_one / self.N
        out.setflags(write=False)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """X @ x in O(nnz + N)"""
        y = self.base @ x
        if self.rank_one:
            y = y + (self.rank_one / self.N) * np.sum(x)
        return y

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Xᴴ @ x"""
        y = self.base.conj().T @ x
        if self.rank_one:
            y = y + (self.rank_one / self.N) * np.sum(x)
        return y

    def as_operator(self) -> LinearOperator:
        return LinearOperator(
            (self.N, self.N), matvec=self.matvec, rmatvec=self.rmatvec, dtype=complex
        )

    @classmethod
    def from_dense(cls, array, kind: MatrixKind = MatrixKind.GIVEN) -> "MatrixSample":
        """Wrap an explicit square matrix (oracles, hand-built cases)"""
        array = np.asarray(array)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise DomainError(f"matrix must be square, got shape {array.shape}")
        return cls(kind=kind, base=array)

    def __str__(self) -> str:
        storage = "csr" if self.is_sparse else "dense"
        extra = f", t={self.t}" if self.t is not None else ""
        return f"MatrixSample({self.kind.value}, N={self.N}, {storage}{extra})"


# =============================================================================
# SAMPLERS
# =============================================================================


def sample_er(params: EnsembleParams, rng: Optional[np.random.Generator] = None) -> MatrixSample:
    """
    Normalized ER adjacency: each entry is 1/q with probability p, else 0.

    Args:
        params: Ensemble parameters
        rng: Optional generator; defaults to the (params.seed, 0) stream

    Returns:
        MatrixSample of kind A with CSR storage (sorted column indices)
    """
    if rng is None:
        rng = make_rng(params.seed)
    N = params.N
    mask = rng.random((N, N)) < params.p
    if params.zero_diagonal:
        np.fill_diagonal(mask, False)
    rows, cols = np.nonzero(mask)
    data = np.full(rows.size, 1.0 / params.q)
    adjacency = sparse.csr_matrix((data, (rows, cols)), shape=(N, N))
    adjacency.sort_indices()
    logger.debug(f"sampled ER N={N} p={params.p}: nnz={adjacency.nnz}")
    return MatrixSample(kind=MatrixKind.ADJACENCY, base=adjacency, params=params, seed=params.seed)


def center(A: MatrixSample) -> MatrixSample:
    """B = A − f·e·eᵀ as sparse-plus-rank-one"""
    if A.kind != MatrixKind.ADJACENCY:
        raise DomainError(f"center expects an adjacency sample, got {A.kind.value}")
    return MatrixSample(
        kind=MatrixKind.CENTERED, base=A.base, rank_one=-A.params.f,
        params=A.params, seed=A.seed,
    )


def sample_ginibre(N: int, seed: int = 0, rng: Optional[np.random.Generator] = None) -> MatrixSample:
    """Real Ginibre: i.i.d. N(0, 1/N) entries, dense"""
    if N < 2:
        raise DomainError(f"N must be at least 2, got {N}")
    if rng is None:
        rng = make_rng(seed)
    W = rng.standard_normal((N, N)) / math.sqrt(N)
    return MatrixSample(kind=MatrixKind.GINIBRE, base=W, seed=seed)


def _flow_dense(B: MatrixSample, W: MatrixSample, t: float) -> np.ndarray:
    if B.N != W.N:
        raise DomainError(f"dimension mismatch: B has N={B.N}, W has N={W.N}")
    if t < 0 or math.isnan(t):
        raise DomainError(f"flow time must be nonnegative, got {t}")
    if t == 0:
        return B.dense
    if math.isinf(t):
        return W.dense
    # 1 − e^{−t} via expm1 keeps small t accurate
    return math.exp(-t / 2.0) * B.dense + math.sqrt(-math.expm1(-t)) * W.dense


def flow(B: MatrixSample, W: MatrixSample, t: float) -> MatrixSample:
    """
    B(t) = e^{−t/2}·B + sqrt(1 − e^{−t})·W

    Entry variance stays 1/N for every t; t=0 gives B and t=∞ gives W exactly.
    """
    if B.kind != MatrixKind.CENTERED:
        raise DomainError(f"flow expects a centered sample, got {B.kind.value}")
    return MatrixSample(
        kind=MatrixKind.FLOW, base=_flow_dense(B, W, t), t=t, params=B.params, seed=B.seed,
    )


def shifted_flow(A: MatrixSample, W: MatrixSample, t: float) -> MatrixSample:
    """A(t) = B(t) + f·e·eᵀ, interpolating between A (t=0) and W + f·e·eᵀ (t=∞)"""
    B = center(A)
    return MatrixSample(
        kind=MatrixKind.SHIFTED_FLOW, base=_flow_dense(B, W, t), rank_one=A.params.f,
        t=t, params=A.params, seed=A.seed,
    )


def with_mean(W: MatrixSample, f: float) -> MatrixSample:
    """W + f·e·eᵀ, the t=∞ end of the shifted flow"""
    return MatrixSample(
        kind=MatrixKind.SHIFTED_FLOW, base=W.base, rank_one=f,
        t=math.inf, params=W.params, seed=W.seed,
    )


def corner_perturb(W: MatrixSample, f: float) -> MatrixSample:
    """Ŵ = W + f·e₁e₁ᵀ; only the (1,1) entry changes"""
    if W.kind != MatrixKind.GINIBRE:
        raise DomainError(f"corner_perturb expects a Ginibre sample, got {W.kind.value}")
    corner = np.array(W.dense, copy=True)
    corner[0, 0] += f
    return MatrixSample(kind=MatrixKind.CORNER, base=corner, params=W.params, seed=W.seed)


# =============================================================================
# CUMULANTS
# =============================================================================


def _bernoulli_cumulant_polynomial(k: int) -> Polynomial:
    """κ_k(p) as a polynomial in p via κ_{k+1} = p(1−p)·dκ_k/dp, κ_1 = p"""
    poly = Polynomial([0.0, 1.0])
    variance = Polynomial([0.0, 1.0, -1.0])
    for _ in range(k - 1):
        poly = variance * poly.deriv()
    return poly


def cumulant_entry(k: int, params: EnsembleParams) -> float:
    """
    Exact k-th cumulant of B_ij = (Bernoulli(p) − p)/q.

    Centering only moves the first cumulant, so for k ≥ 2 this is the
    Bernoulli cumulant divided by q^k.
    """
    if k < 1:
        raise DomainError(f"cumulant order must be at least 1, got {k}")
    if k == 1:
        return 0.0
    kappa = _bernoulli_cumulant_polynomial(k)(params.p)
    return float(kappa / params.q ** k)
