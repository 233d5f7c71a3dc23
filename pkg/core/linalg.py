"""
rmtlab - Reference eigensolvers
===============================
Self-contained dense and Krylov eigensolvers built on numpy array primitives.
These are the "reference" backend; `core.spectral` can swap in LAPACK/ARPACK.

Features:
- Complex Householder reflectors
- Hermitian tridiagonalization with a real-subdiagonal phase fix
- Implicit-shift QL on symmetric tridiagonals (with optional vectors)
- Golub–Kahan bidiagonalization and singular values through the
  Golub–Kahan tridiagonal of order 2n
- Hessenberg reduction and single-shift complex QR with Wilkinson shifts
- Inverse iteration for eigenvectors
- Implicitly restarted Arnoldi with exact shifts
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from core.errors import ConvergenceError

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps

# =============================================================================
# HOUSEHOLDER
# =============================================================================


def householder_vector(x: np.ndarray) -> Tuple[Optional[np.ndarray], complex]:
    """
    Unit v and α with (I − 2vvᴴ)x = α·e₁.

    α carries the phase opposite to x₀ so v₀ never cancels. Returns
    (None, 0) for a zero vector.
    """
    x = np.asarray(x, dtype=complex)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return None, 0j
    x0 = x[0]
    phase = x0 / abs(x0) if x0 != 0 else 1.0
    alpha = -phase * norm
    v = x.copy()
    v[0] -= alpha
    return v / np.linalg.norm(v), complex(alpha)


def tridiagonalize(a: np.ndarray, want_vectors: bool = True):
    """
    Reduce a Hermitian matrix to real symmetric tridiagonal form.

    Returns:
        (d, e, Q) with A = Q·T·Qᴴ, T = tridiag(e, d, e) real and e ≥ 0.
        Q is None when want_vectors is False.
    """
    t = np.array(a, dtype=complex, copy=True)
    n = t.shape[0]
    q = np.eye(n, dtype=complex) if want_vectors else None

    for k in range(n - 2):
        v, alpha = householder_vector(t[k + 1:, k])
        if v is None:
            continue
        sub = t[k + 1:, k + 1:]
        p = sub @ v
        w = p - np.vdot(v, p).real * v
        sub -= 2.0 * (np.outer(v, w.conj()) + np.outer(w, v.conj()))
        t[k + 1, k] = alpha
        t[k, k + 1] = alpha.conjugate()
        t[k + 2:, k] = 0.0
        t[k, k + 2:] = 0.0
        if want_vectors:
            block = q[:, k + 1:]
            block -= 2.0 * np.outer(block @ v, v.conj())

    d = t.diagonal().real.copy()
    sub_diag = t.diagonal(-1).copy()
    e = np.abs(sub_diag)

    if want_vectors:
        # D with D_{k+1} = D_k·t_k/|t_k| makes Dᴴ·T·D real
        phases = np.ones(n, dtype=complex)
        for k in range(n - 1):
            step = sub_diag[k] / e[k] if e[k] > 0 else 1.0
            phases[k + 1] = phases[k] * step
        q *= phases[np.newaxis, :]
    return d, e, q


# =============================================================================
# IMPLICIT QL
# =============================================================================


def tql_implicit(d: np.ndarray, e: np.ndarray, vectors: Optional[np.ndarray] = None,
                 max_iter: int = 60):
    """
    Eigenvalues of the symmetric tridiagonal (d, e) by implicit-shift QL.

    Args:
        d: Diagonal (length n)
        e: Off-diagonal (length n−1)
        vectors: Optional n×n matrix whose columns are rotated alongside;
                 pass the identity to get the tridiagonal's eigenvectors
        max_iter: Iteration cap per eigenvalue

    Returns:
        (eigenvalues ascending, rotated vectors or None)

    Raises:
        ConvergenceError: an eigenvalue did not settle within max_iter sweeps
    """
    d = np.array(d, dtype=float, copy=True)
    n = d.size
    off = np.zeros(n)
    off[:n - 1] = e
    # rows of zt are the columns being rotated
    zt = None if vectors is None else np.array(vectors, copy=True).T.copy()
    floor = EPS * EPS * (np.abs(d).max(initial=0.0) + np.abs(off).max(initial=0.0))

    for l in range(n):
        iterations = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(off[m]) <= EPS * dd or abs(off[m]) <= floor:
                    break
                m += 1
            if m == l:
                break
            if iterations == max_iter:
                raise ConvergenceError(
                    f"implicit QL: eigenvalue {l} not converged after {max_iter} iterations",
                    {"diagonal": d.copy(), "offdiagonal": off.copy(), "index": l},
                )
            iterations += 1

            g = (d[l + 1] - d[l]) / (2.0 * off[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + off[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * off[i]
                b = c * off[i]
                r = math.hypot(f, g)
                off[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    off[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if zt is not None:
                    upper = zt[i + 1].copy()
                    zt[i + 1] = s * zt[i] + c * upper
                    zt[i] = c * zt[i] - s * upper
            if underflow:
                continue
            d[l] -= p
            off[l] = g
            off[m] = 0.0

    order = np.argsort(d, kind="stable")
    if zt is None:
        return d[order], None
    return d[order], zt[order].T


def hermitian_eig(a: np.ndarray, want_vectors: bool = True, max_iter: int = 60):
    """Full Hermitian eigendecomposition: Householder tridiagonalization + implicit QL"""
    n = a.shape[0]
    d, e, q = tridiagonalize(a, want_vectors)
    if not want_vectors:
        values, _ = tql_implicit(d, e, None, max_iter)
        return values, None
    values, z = tql_implicit(d, e, np.eye(n), max_iter)
    return values, q @ z


# =============================================================================
# SINGULAR VALUES
# =============================================================================


def bidiagonalize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Golub–Kahan reduction of a square matrix to upper bidiagonal form.

    Returns |diagonal| and |superdiagonal|; singular values are invariant
    under the diagonal phase changes that make both real.
    """
    a = np.array(x, dtype=complex, copy=True)
    n = a.shape[0]
    for k in range(n):
        v, _ = householder_vector(a[k:, k])
        if v is not None:
            block = a[k:, k:]
            block -= 2.0 * np.outer(v, v.conj() @ block)
        if k < n - 2:
            v, _ = householder_vector(a[k, k + 1:].conj())
            if v is not None:
                block = a[k:, k + 1:]
                block -= 2.0 * np.outer(block @ v, v.conj())
    return np.abs(a.diagonal()), np.abs(a.diagonal(1))


def golub_kahan_singular_values(x: np.ndarray, max_iter: int = 60) -> np.ndarray:
    """
    Singular values, nonincreasing.

    The bidiagonal (d, e) is embedded in the 2n tridiagonal with zero
    diagonal and off-diagonal (d₀, e₀, d₁, e₁, …, d_{n−1}); its spectrum
    is {±σ_j}.
    """
    d, e = bidiagonalize(x)
    n = d.size
    off = np.empty(2 * n - 1)
    off[0::2] = d
    off[1::2] = e
    values, _ = tql_implicit(np.zeros(2 * n), off, None, max_iter)
    sigma = values[::-1][:n]
    return np.clip(sigma, 0.0, None)


# =============================================================================
# NONSYMMETRIC EIGENVALUES
# =============================================================================


def hessenberg(x: np.ndarray) -> np.ndarray:
    """Upper Hessenberg form by Householder similarity"""
    h = np.array(x, dtype=complex, copy=True)
    n = h.shape[0]
    for k in range(n - 2):
        v, _ = householder_vector(h[k + 1:, k])
        if v is None:
            continue
        rows = h[k + 1:, k:]
        rows -= 2.0 * np.outer(v, v.conj() @ rows)
        cols = h[:, k + 1:]
        cols -= 2.0 * np.outer(cols @ v, v.conj())
        h[k + 2:, k] = 0.0
    return h


def _wilkinson_shift(a: complex, b: complex, c: complex, d: complex) -> complex:
    """Eigenvalue of [[a, b], [c, d]] closest to d"""
    half_trace = 0.5 * (a + d)
    disc = np.sqrt(0.25 * (a - d) ** 2 + b * c)
    mu1, mu2 = half_trace + disc, half_trace - disc
    return mu1 if abs(mu1 - d) <= abs(mu2 - d) else mu2


def shifted_qr_eigenvalues(h: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """
    Eigenvalues of an upper Hessenberg matrix by single-shift complex QR.

    Raises:
        ConvergenceError: carries the partially reduced matrix, the active
        window and the eigenvalues already deflated
    """
    h = np.array(h, dtype=complex, copy=True)
    n = h.shape[0]
    eigenvalues = np.zeros(n, dtype=complex)
    scale = np.abs(h).max(initial=0.0) or 1.0
    hi = n - 1
    sweeps = 0

    while hi >= 0:
        if hi == 0:
            eigenvalues[0] = h[0, 0]
            break
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if s == 0.0:
                s = scale
            if abs(h[lo, lo - 1]) <= EPS * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eigenvalues[hi] = h[hi, hi]
            hi -= 1
            sweeps = 0
            continue
        if sweeps == max_sweeps:
            raise ConvergenceError(
                f"shifted QR: no deflation at row {hi} after {max_sweeps} sweeps",
                {"schur": h, "active": (lo, hi), "eigenvalues": eigenvalues[hi + 1:].copy()},
            )
        sweeps += 1

        if sweeps % 11 == 0:
            # exceptional shift breaks rare cycles
            mu = h[hi, hi] + 0.75 * abs(h[hi, hi - 1])
        else:
            mu = _wilkinson_shift(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])

        block = h[lo:hi + 1, lo:hi + 1]
        size = hi - lo + 1
        idx = np.arange(size)
        block[idx, idx] -= mu
        rotations = []
        for k in range(size - 1):
            x, y = block[k, k], block[k + 1, k]
            r = math.hypot(abs(x), abs(y))
            if r == 0.0:
                c, s = 1.0 + 0j, 0j
            else:
                c, s = x / r, y / r
            top = block[k, k:].copy()
            bottom = block[k + 1, k:]
            block[k, k:] = c.conjugate() * top + s.conjugate() * bottom
            block[k + 1, k:] = -s * top + c * bottom
            rotations.append((c, s))
        for k, (c, s) in enumerate(rotations):
            left = block[:k + 2, k].copy()
            right = block[:k + 2, k + 1].copy()
            block[:k + 2, k] = c * left + s * right
            block[:k + 2, k + 1] = -s.conjugate() * left + c.conjugate() * right
        block[idx, idx] += mu

    return eigenvalues


def inverse_iteration(x: np.ndarray, eigenvalue: complex, rng: np.random.Generator,
                      iterations: int = 3) -> Tuple[np.ndarray, float]:
    """
    Right eigenvector for a known eigenvalue.

    Returns:
        (unit eigenvector, residual ‖Xv − λv‖)
    """
    n = x.shape[0]
    scale = max(np.abs(x).max(initial=0.0), 1.0)
    shifted = np.array(x, dtype=complex, copy=True)
    shifted[np.diag_indices(n)] -= eigenvalue + 16.0 * EPS * scale
    lu = lu_factor(shifted, check_finite=False)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        v = lu_solve(lu, v, check_finite=False)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0.0:
            break
        v /= norm
    residual = float(np.linalg.norm(x @ v - eigenvalue * v))
    return v, residual


# =============================================================================
# IMPLICITLY RESTARTED ARNOLDI
# =============================================================================


@dataclass
class ArnoldiResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norms: np.ndarray
    restarts: int


class RestartedArnoldi:
    """
    Implicitly restarted Arnoldi for the k largest-modulus eigenvalues.

    Keeps an Arnoldi factorization A·V_m = V_m·H_m + f·e_mᵀ of length ncv,
    applies the ncv − k unwanted Ritz values as exact shifts and compresses
    back to length k until the k wanted Ritz estimates fall below tol.
    """

    def __init__(self, matvec: Callable[[np.ndarray], np.ndarray], n: int, k: int,
                 ncv: Optional[int] = None, tol: float = 1e-10, max_restarts: int = 300,
                 rng: Optional[np.random.Generator] = None):
        if not 0 < k < n:
            raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
        self.matvec = matvec
        self.n = n
        self.k = k
        self.m = min(n, ncv or max(2 * k + 1, 20))
        if self.m <= k:
            self.m = min(n, k + 1)
        self.tol = tol
        self.max_restarts = max_restarts
        self.rng = rng or np.random.default_rng(0)

        self.v = np.zeros((n, self.m + 1), dtype=complex)
        self.h = np.zeros((self.m + 1, self.m), dtype=complex)

    def _random_orthogonal(self, count: int) -> np.ndarray:
        """Unit vector orthogonal to the first `count` basis vectors, zero if none exists"""
        if count >= self.n:
            return np.zeros(self.n, dtype=complex)
        basis = self.v[:, :count]
        r = self.rng.standard_normal(self.n) + 0j
        for _ in range(2):
            r -= basis @ (basis.conj().T @ r)
        return r / np.linalg.norm(r)

    def _expand(self, start: int):
        for j in range(start, self.m):
            w = self.matvec(self.v[:, j]).astype(complex)
            reference = np.linalg.norm(w)
            basis = self.v[:, :j + 1]
            coeffs = basis.conj().T @ w
            w = w - basis @ coeffs
            # second classical Gram-Schmidt pass (DGKS)
            correction = basis.conj().T @ w
            w -= basis @ correction
            self.h[:j + 1, j] = coeffs + correction
            beta = np.linalg.norm(w)
            if beta <= 1e-12 * reference or beta == 0.0:
                logger.debug(f"Arnoldi breakdown at step {j}, continuing with a fresh vector")
                self.h[j + 1, j] = 0.0
                self.v[:, j + 1] = self._random_orthogonal(j + 1)
            else:
                self.h[j + 1, j] = beta
                self.v[:, j + 1] = w / beta

    def _compress(self, shifts: np.ndarray):
        m, k = self.m, self.k
        hm = self.h[:m, :m].copy()
        q = np.eye(m, dtype=complex)
        identity = np.eye(m)
        for mu in shifts:
            qj, _ = np.linalg.qr(hm - mu * identity)
            hm = qj.conj().T @ hm @ qj
            q = q @ qj
        residual = self.v[:, m] * self.h[m, m - 1]
        f_k = (self.v[:, :m] @ q[:, k]) * hm[k, k - 1] + residual * q[m - 1, k - 1]
        kept = self.v[:, :m] @ q[:, :k]

        self.v[:] = 0.0
        self.v[:, :k] = kept
        self.h[:] = 0.0
        self.h[:k, :k] = np.triu(hm[:k, :k], -1)
        beta = np.linalg.norm(f_k)
        if beta <= 1e-12 * max(np.abs(hm).max(), EPS):
            self.h[k, k - 1] = 0.0
            self.v[:, k] = self._random_orthogonal(k)
        else:
            self.h[k, k - 1] = beta
            self.v[:, k] = f_k / beta

    def run(self, start: Optional[np.ndarray] = None) -> ArnoldiResult:
        m, k = self.m, self.k
        if start is None:
            start = self.rng.standard_normal(self.n)
        self.v[:, 0] = start / np.linalg.norm(start)
        self._expand(0)

        for restart in range(self.max_restarts + 1):
            theta, y = np.linalg.eig(self.h[:m, :m])
            order = np.argsort(-np.abs(theta), kind="stable")
            theta, y = theta[order], y[:, order]
            estimates = abs(self.h[m, m - 1]) * np.abs(y[m - 1, :k])

            if np.all(estimates <= 0.5 * self.tol):
                vectors = self.v[:, :m] @ y[:, :k]
                vectors /= np.linalg.norm(vectors, axis=0)
                residuals = np.array([
                    np.linalg.norm(self.matvec(vectors[:, i]) - theta[i] * vectors[:, i])
                    for i in range(k)
                ])
                logger.debug(f"Arnoldi converged after {restart} restarts")
                return ArnoldiResult(theta[:k], vectors, residuals, restart)

            if restart == self.max_restarts:
                break
            if restart > 0.9 * self.max_restarts:
                logger.warning(f"Arnoldi restart {restart} of {self.max_restarts}")
            self._compress(theta[k:])
            self._expand(k)

        raise ConvergenceError(
            f"Arnoldi stagnated after {self.max_restarts} restarts",
            {"ritz_values": theta[:k].copy(), "estimates": estimates.copy()},
        )
