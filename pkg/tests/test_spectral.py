import numpy as np
import pytest

from config import get_config
from core.errors import DenseCapExceeded, DomainError
from core.model import EnsembleParams, MatrixKind, center, make_rng, sample_er
from core.spectral import (
    AcceleratedBackend, ReferenceBackend, arnoldi_topk, dense_nonsym_eig, get_backend,
    green_direct, green_entries, hermitization_delocalization, hermitize, isotropic_sums,
    offdiag_trace_solve, offdiag_trace_test, pairing_defect, resolvent, singular_values,
    sym_eig, top_spectrum_dense, trace_green, trace_green_from_sigma,
)
from core.theory import ShiftPoint, solve_m

BACKEND_NAMES = ["reference", "accelerated"]


class TestBackends:
    def test_default_from_config(self):
        assert get_backend().name == get_config().BACKEND

    def test_by_name(self):
        assert isinstance(get_backend("reference"), ReferenceBackend)
        assert isinstance(get_backend("accelerated"), AcceleratedBackend)
        assert get_backend("accelerated").identifier.startswith("accelerated/scipy-")

    def test_instances_pass_through(self):
        backend = ReferenceBackend()
        assert get_backend(backend) is backend

    def test_unknown(self):
        with pytest.raises(DomainError):
            get_backend("gpu")


class TestHermitization:
    def test_matvec_matches_dense(self, small_er, rng):
        herm = hermitize(small_er, 0.4 - 0.2j)
        x = rng.standard_normal(48) + 1j * rng.standard_normal(48)
        assert np.allclose(herm.matvec(x), herm.dense() @ x)
        assert np.allclose(herm.as_operator().matvec(x), herm.dense() @ x)

    def test_dense_is_hermitian(self, small_er):
        h = hermitize(small_er, 1.0j).dense()
        assert np.allclose(h, h.conj().T)
        assert np.all(h[:24, :24] == 0)

    def test_perturbed_flag(self, small_er):
        assert hermitize(small_er, 0.5).use_perturbed
        assert not hermitize(center(small_er), 0.5).use_perturbed


class TestSymEig:
    @pytest.mark.parametrize("backend", BACKEND_NAMES)
    def test_decomposition(self, backend, rng):
        x = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
        t = x + x.conj().T
        eig = sym_eig(t, backend=backend)
        assert np.all(np.diff(eig.eigenvalues) >= 0)
        v = eig.eigenvectors
        assert np.allclose(v.conj().T @ v, np.eye(12), atol=1e-10)
        assert np.allclose(t @ v, v * eig.eigenvalues, atol=1e-9)

    def test_values_only(self, rng):
        t = rng.standard_normal((6, 6))
        eig = sym_eig(t + t.T, want_vectors=False, backend="accelerated")
        assert eig.eigenvectors is None

    def test_rejects_non_hermitian(self, rng):
        with pytest.raises(DomainError):
            sym_eig(rng.standard_normal((5, 5)))

    def test_rejects_non_square(self):
        with pytest.raises(DomainError):
            sym_eig(np.zeros((3, 4)))

    def test_dense_cap(self):
        cap = get_config().DENSE_CAP
        with pytest.raises(DenseCapExceeded):
            sym_eig(np.zeros((cap + 1, cap + 1)))


class TestSingularValues:
    @pytest.mark.parametrize("backend", BACKEND_NAMES)
    def test_methods_agree_with_numpy(self, small_er, backend):
        w = 0.3 + 0.6j
        expected = np.linalg.svd(small_er.dense - w * np.eye(24), compute_uv=False)
        gk = singular_values(small_er, w, backend=backend)
        herm = singular_values(small_er, w, method="hermitization", backend=backend)
        assert np.allclose(gk, expected, atol=1e-10)
        assert np.allclose(herm, expected, atol=1e-9)

    def test_unknown_method(self, small_er):
        with pytest.raises(DomainError):
            singular_values(small_er, 0.0, method="power")

    def test_pairing(self, small_er):
        assert pairing_defect(small_er, 0.9 - 0.1j) < 1e-10


class TestTraceGreen:
    def test_general_z_matches_imaginary_formula(self):
        sigma = np.array([0.1, 0.7, 1.3, 2.0])
        eta = 0.05
        direct = np.mean(1j * eta / (sigma ** 2 + eta ** 2))
        assert trace_green_from_sigma(sigma, 1j * eta) == pytest.approx(direct)
        general = trace_green_from_sigma(sigma, 1e-300 + 1j * eta)
        assert general == pytest.approx(direct)

    def test_matches_resolvent_trace(self, small_er):
        w, eta = 0.8, 0.02
        _, evaluation = green_entries(small_er, w, eta, backend="accelerated")
        assert trace_green(small_er, w, eta, backend="accelerated") == pytest.approx(
            evaluation.gtilde, abs=1e-10)

    def test_vector_eta(self, small_er):
        etas = np.array([0.01, 0.1, 1.0])
        values = trace_green(small_er, 0.5, etas, backend="accelerated")
        assert values.shape == (3,)
        assert np.all(values.real == 0)
        assert np.all(values.imag > 0)

    def test_rejects_nonpositive_eta(self, small_er):
        with pytest.raises(DomainError):
            trace_green(small_er, 0.5, 0.0)


class TestGreenEntries:
    @pytest.mark.parametrize("backend", BACKEND_NAMES)
    def test_entries_and_identities(self, small_er, backend, rng):
        w, eta = 0.7 + 0.2j, 0.05
        pairs = [(int(a), int(b)) for a, b in rng.integers(0, 48, size=(20, 2))]
        entries, evaluation = green_entries(small_er, w, eta, index_pairs=pairs,
                                            backend=backend, rng=rng)
        inverse = green_direct(small_er, w, 1j * eta)
        for pair in pairs:
            assert entries[pair] == pytest.approx(inverse[pair], abs=1e-9)
        settings = get_config()
        assert evaluation.ward_residual_max <= settings.TOL_WARD / eta
        assert evaluation.blocktrace_residual <= settings.TOL_BLOCKTRACE
        assert evaluation.symmetry_residual <= settings.TOL_PAIRING
        assert abs(evaluation.gtilde.real) <= settings.TOL_SYMMETRY
        assert evaluation.entry(*pairs[0]) == pytest.approx(entries[pairs[0]])

    def test_general_z_has_no_symmetry_check(self, small_er):
        _, evaluation = green_entries(small_er, 0.5, z=0.3 + 0.1j, index_pairs=[(0, 1)])
        assert evaluation.symmetry_residual is None
        assert evaluation.gtilde.imag > 0

    def test_rejects_real_z(self, small_er):
        with pytest.raises(DomainError):
            green_entries(small_er, 0.5, z=0.3)

    def test_to_dict(self, small_er):
        _, evaluation = green_entries(small_er, 0.5, 0.1, ward_columns=[0, 30])
        data = evaluation.to_dict()
        assert set(data) == {"gtilde", "offdiag_trace", "ward_residual_max",
                             "blocktrace_residual", "symmetry_residual"}


class TestOffdiagTrace:
    N = 64
    delta = 0.05

    @pytest.fixture
    def sample(self):
        return sample_er(EnsembleParams(self.N, 0.2, seed=3), make_rng(3, 0))

    def test_methods_agree(self, sample):
        w, eta = 1.0, 0.03
        values = [offdiag_trace_test(sample, w, eta, self.delta, method=method,
                                     backend="accelerated")
                  for method in ("spectral", "direct", "solve")]
        assert values[0] == pytest.approx(values[1], abs=1e-9)
        assert values[0] == pytest.approx(values[2], abs=1e-9)

    def test_solve_is_lower_left_block(self, sample):
        w, eta = 0.6 - 0.5j, 0.2
        g = green_direct(sample, w, 1j * eta)
        expected = np.trace(g[self.N:, :self.N]) / self.N
        assert offdiag_trace_solve(sample, w, eta) == pytest.approx(expected, abs=1e-10)

    def test_spectral_offdiag_matches_resolvent(self, sample):
        w, eta = 1.0, 0.03
        res = resolvent(sample, w, 1j * eta, "accelerated")
        m = solve_m(ShiftPoint(w, eta)).m
        value = offdiag_trace_test(sample, w, eta, self.delta, backend="accelerated")
        assert value == pytest.approx(res.offdiag_trace() + (1 + m * m) / w)

    @pytest.mark.parametrize("w,eta", [(0.2, 0.03), (1.0, 0.5), (1.0, 1e-4)])
    def test_outside_edge_band(self, sample, w, eta):
        with pytest.raises(DomainError):
            offdiag_trace_test(sample, w, eta, self.delta)

    def test_unknown_method(self, sample):
        with pytest.raises(DomainError):
            offdiag_trace_test(sample, 1.0, 0.03, self.delta, method="lu")


class TestNonsymmetric:
    @pytest.mark.parametrize("backend", BACKEND_NAMES)
    def test_dense_spectrum(self, small_er, backend):
        eig = dense_nonsym_eig(small_er, vectors=True, backend=backend)
        expected = np.linalg.eigvals(small_er.dense)
        assert np.all(np.diff(np.abs(eig.eigenvalues)) <= 1e-12)
        for lam in expected:
            assert np.abs(eig.eigenvalues - lam).min() < 1e-8
        assert eig.residuals.max() < 1e-8

    @pytest.mark.parametrize("backend", BACKEND_NAMES)
    def test_arnoldi_outlier(self, backend):
        params = EnsembleParams(200, 0.1, seed=11)
        A = sample_er(params, make_rng(11, 0))
        top = arnoldi_topk(A, 1, tol=1e-12, backend=backend)
        dense = top_spectrum_dense(A, 1, backend="accelerated")
        assert top.method == "arnoldi"
        assert dense.method == "dense-oracle"
        assert top.eigenvalues[0] == pytest.approx(dense.eigenvalues[0], abs=1e-8)
        # outlier sits near f
        assert abs(top.eigenvalues[0]) == pytest.approx(params.f, rel=0.2)

    @pytest.mark.parametrize("k", [0, 23])
    def test_arnoldi_k_range(self, small_er, k):
        with pytest.raises(DomainError):
            arnoldi_topk(small_er, k)


class TestEigenvectorSums:
    def test_isotropic_envelope(self, small_er):
        w, eta = 0.5, 0.1
        report = isotropic_sums(small_er, w, eta, backend="accelerated")
        m = solve_m(ShiftPoint(w, eta)).m
        f = small_er.params.f
        assert report.envelope == pytest.approx((m.imag + 1 / (24 * eta)) / (f * eta))
        assert report.top_max > 0
        assert report.bottom_max > 0

    def test_hermitization_delocalization(self, small_er):
        report = hermitization_delocalization(small_er, 0.5, backend="accelerated")
        # each block of a unit eigenvector has norm 1/√2
        assert report.sup_top >= 1 / np.sqrt(2) - 1e-12
        assert report.sup_bottom >= 1 / np.sqrt(2) - 1e-12
        assert report.top_pair_distance >= 0

    def test_kind_of_centered_matrix(self, small_er):
        assert center(small_er).kind == MatrixKind.CENTERED
