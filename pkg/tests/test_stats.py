import math

import numpy as np
import pytest

from core.errors import DomainError
from core.model import EnsembleParams, make_rng, sample_er
from core.spectral import green_entries
from core.stats import (
    FUNCTIONALS, LocalLawCurve, UniversalitySpec, compare_functionals, delocalization,
    delocalization_values, edge_functionals, edge_report, entrywise_law_error, kpoint_sample,
    local_law_curve, local_law_errors, local_law_scale, require_edge_grid, sample_functionals,
    two_sample_ks, universality_suite, weak_law_point,
)
from core.theory import ShiftPoint, imaginary_root, solve_m


class TestEdgeReport:
    SPECTRUM = [5.0, 0.9, -0.5j, 0.3]

    def test_deflates_nearest_to_f(self):
        report = edge_report(self.SPECTRUM, f=4.8)
        assert report.lambda1 == 5.0
        assert report.rho2 == pytest.approx(0.9)
        assert report.fluct == pytest.approx(-0.2)
        assert report.f_gap == pytest.approx(0.2)

    def test_without_deflation(self):
        report = edge_report(self.SPECTRUM)
        assert report.rho2 == 5.0
        assert report.f_gap is None

    def test_truncated_spectrum_uses_N(self):
        assert edge_report(self.SPECTRUM, f=4.8, N=100).fluct == pytest.approx(-1.0)

    def test_needs_two_values(self):
        with pytest.raises(DomainError):
            edge_report([1.0])

    def test_to_dict(self):
        assert edge_report(self.SPECTRUM, f=4.8).to_dict()["lambda1"] == [5.0, 0.0]


class TestDelocalization:
    def test_values(self):
        vectors = np.column_stack([np.eye(16)[:, 3], np.full(16, 0.25)])
        assert np.allclose(delocalization_values(vectors), [4.0, 1.0])

    def test_er_sample(self, small_er):
        report = delocalization(small_er, backend="accelerated")
        assert report.defective == 0
        assert report.max >= report.median >= 1.0
        assert report.to_dict()["count"] == report.values.size

    def test_empty_disc(self, small_er):
        report = delocalization(small_er, radius=1e-9, backend="accelerated")
        assert math.isnan(report.max)
        assert report.values.size == 0


class TestLocalConfigurations:
    def test_kpoint_sample(self):
        spectrum = np.array([1.0 + 0.01j, 0.99, 0.0, 1.3])
        sample = kpoint_sample(spectrum, 1.0, R=0.2, N=100)
        assert sample.count == 2
        assert np.allclose(sorted(sample.points.imag), [0.0, 0.1])
        assert sample.min_distance == pytest.approx(abs(10 * (1.0 + 0.01j) - 10 * 0.99))

    def test_needs_unit_center(self):
        with pytest.raises(DomainError):
            kpoint_sample([1.0, 0.5], 0.9, R=1.0)

    def test_min_distance_of_sparse_window(self):
        assert math.isnan(kpoint_sample([0.0, 0.1], 1.0, R=0.5).min_distance)

    def test_edge_functionals(self, small_er):
        spectrum = np.linalg.eigvals(small_er.dense)
        values = edge_functionals(spectrum, small_er.params.f)
        assert set(values) == set(FUNCTIONALS)
        assert values["window_count"] >= 0


class TestTwoSample:
    def test_same_distribution(self, rng):
        result = two_sample_ks(rng.standard_normal(400), rng.standard_normal(400))
        assert result.p_value > 0.01
        assert result.n_a == 400

    def test_shifted_distribution(self, rng):
        result = two_sample_ks(rng.standard_normal(400), rng.standard_normal(400) + 1.0, "shift")
        assert result.p_value < 1e-6
        assert result.to_dict()["name"] == "shift"

    def test_needs_twenty_values(self, rng):
        with pytest.raises(DomainError):
            two_sample_ks(rng.standard_normal(19), rng.standard_normal(50))

    def test_compare_drops_nan(self, rng):
        a = [{"fluct": float(x), "min_distance": math.nan} for x in rng.standard_normal(30)]
        a += [{"fluct": 0.0, "min_distance": float(x)} for x in rng.standard_normal(25)]
        b = [{"fluct": float(x), "min_distance": float(x)} for x in rng.standard_normal(40)]
        fluct, dist = compare_functionals(a, b, names=("fluct", "min_distance"))
        assert fluct.n_a == 55
        assert dist.n_a == 25


class TestLocalLaw:
    def test_errors_on_imaginary_axis(self, small_er):
        etas = np.array([0.05, 0.2, 1.0])
        result = local_law_errors(small_er, 0.5, etas, backend="accelerated")
        assert result.errors.shape == (3,)
        assert result.max_real_part == 0.0
        assert np.allclose(result.errors, result.imag_errors)
        _, evaluation = green_entries(small_er, 0.5, 0.2, backend="accelerated")
        m = imaginary_root(0.25, 0.2)
        assert result.errors[1] == pytest.approx(abs(evaluation.gtilde.imag - m), abs=1e-10)

    def test_scale(self):
        etas = np.array([0.01, 0.02])
        assert np.allclose(local_law_scale(0.5, etas, 100), [1.0, 2.0])
        assert np.allclose(local_law_scale(1.5, etas, 100), 100 ** 1.1 * etas)

    def test_edge_grid_check(self):
        require_edge_grid(1.0, [0.02, 0.03], 100, 0.05, weak=False)
        with pytest.raises(DomainError):
            require_edge_grid(1.0, [0.02, 0.5], 100, 0.05, weak=False)
        require_edge_grid(1.0, [0.02, 0.5], 100, 0.05, weak=True)

    def test_curve(self):
        params = EnsembleParams(64, 0.2, seed=5)
        curve = local_law_curve(params, 1.0, [0.02, 0.03], trials=3, backend="accelerated")
        assert curve.perturbed.shape == (3, 2)
        assert curve.centered.shape == (3, 2)
        q = curve.quantiles("centered")
        assert q.shape == (2, 3)
        assert np.all(np.diff(q, axis=1) >= 0)

    def test_empty_curve_quantiles(self):
        curve = LocalLawCurve(np.array([0.1]), np.zeros((0, 1)), np.zeros((0, 1)), np.ones(1))
        assert np.all(curve.quantiles() == 0)


class TestEntrywise:
    def test_report(self, small_er):
        report = entrywise_law_error(small_er, 0.5, 0.5j, s=16, backend="accelerated")
        assert report.error == max(report.diagonal_error, report.partner_error, report.other_error)
        q = small_er.params.q
        assert report.envelope == pytest.approx(12 ** (-1 / 6) + q ** (-1 / 3))

    def test_diagonal_matches_m(self):
        # diagonal entries of G̃ concentrate around m for a larger sample
        A = sample_er(EnsembleParams(200, 0.2, seed=2), make_rng(2, 0))
        report = entrywise_law_error(A, 0.5, 1.0j, s=32, backend="accelerated")
        assert report.diagonal_error < 0.5

    @pytest.mark.parametrize("z", [0.01j, 0.3])
    def test_outside_bulk_domain(self, small_er, z):
        with pytest.raises(DomainError):
            entrywise_law_error(small_er, 0.5, z)


class TestWeakLaw:
    def test_within_envelope(self, small_er):
        report = weak_law_point(small_er, 0.5, 0.5j, backend="accelerated")
        assert report.error <= report.envelope
        assert report.m == solve_m(ShiftPoint(0.5, 0.5)).m

    def test_general_z(self, small_er):
        report = weak_law_point(small_er, 0.5, 0.2 + 0.5j, backend="accelerated")
        assert report.gtilde.imag > 0
        assert len(report.to_dict()["m"]) == 2

    def test_outside(self, small_er):
        with pytest.raises(DomainError):
            weak_law_point(small_er, 50.0, 0.5j)


class TestUniversality:
    def test_unknown_ensemble(self):
        with pytest.raises(DomainError):
            UniversalitySpec(N=16, p=0.2, reference="gue")

    def test_needs_hundred_trials(self):
        with pytest.raises(DomainError):
            universality_suite(UniversalitySpec(N=16, p=0.2, trials=99))

    def test_functionals_reproducible(self):
        params = EnsembleParams(32, 0.2, seed=9)
        first = sample_functionals("er", params, 4, backend="accelerated")
        again = sample_functionals("er", params, 4, backend="accelerated")
        other = sample_functionals("er", params, 5, backend="accelerated")
        assert first["fluct"] == again["fluct"]
        assert first["window_count"] == again["window_count"]
        assert first["fluct"] != other["fluct"]

    def test_control_scale_moves_the_edge(self):
        params = EnsembleParams(32, 0.2, seed=9)
        plain = sample_functionals("ginibre", params, 1, backend="accelerated")
        scaled = sample_functionals("ginibre", params, 1, scale=1.05, backend="accelerated")
        rho = plain["fluct"] / math.sqrt(32) + 1.0
        assert scaled["fluct"] == pytest.approx(math.sqrt(32) * (1.05 * rho - 1.0))
