import math

import numpy as np
import pytest

from core.errors import DomainError, QuadratureError
from core.girko import (
    Profile, QuadratureSpec, TestFunction, eta_split, ibp_tail, linear_stat_direct,
    linear_stat_girko, log_modulus_from_sigma, log_modulus_via_eta, midpoint_grid, rescale_f,
)
from core.model import EnsembleParams, make_rng, sample_er
from core.spectral import dense_nonsym_eig, offdiag_trace_solve
from core.theory import ShiftPoint, solve_m

POLY = TestFunction(Profile.POLYNOMIAL, 0.0).unscaled()
GAUSS = TestFunction(Profile.GAUSSIAN, 0.0).unscaled()


class TestTestFunctions:
    def test_profile_by_value(self):
        assert TestFunction("gaussian-bump").profile is Profile.GAUSSIAN

    def test_disc_mass(self):
        assert POLY.disc_mass() == pytest.approx(0.2, rel=1e-10)
        assert GAUSS.disc_mass() == pytest.approx(1 - math.exp(-1), rel=1e-8)

    def test_rescaled_integral_is_preserved(self):
        rtf = rescale_f(TestFunction(Profile.POLYNOMIAL, 0.5 + 0.5j), 400)
        assert rtf.scale == pytest.approx(20.0)
        assert rtf.radius == pytest.approx(0.05)
        nodes, h = midpoint_grid(rtf.center, rtf.radius, 256)
        assert np.sum(rtf.value(nodes)) * h * h == pytest.approx(math.pi / 5, rel=1e-3)

    def test_laplacian_matches_finite_differences(self):
        w = 0.3 + 0.2j
        h = 1e-4
        for tf in (POLY, GAUSS):
            fd = (tf.value(w + h) + tf.value(w - h) + tf.value(w + 1j * h)
                  + tf.value(w - 1j * h) - 4 * tf.value(w)) / h ** 2
            assert tf.laplacian(w) == pytest.approx(fd, rel=1e-5)

    def test_dbar_matches_finite_differences(self):
        w = 0.4 - 0.1j
        h = 1e-6
        dx = (GAUSS.value(w + h) - GAUSS.value(w - h)) / (2 * h)
        dy = (GAUSS.value(w + 1j * h) - GAUSS.value(w - 1j * h)) / (2 * h)
        assert GAUSS.dbar(w) == pytest.approx(0.5 * (dx + 1j * dy), rel=1e-6)

    def test_zero_outside_support(self):
        assert POLY.value(1.5) == 0
        assert POLY.laplacian(1.5j) == 0

    @pytest.mark.parametrize("a", [0.4, 0.6])
    def test_scale_exponent_range(self, a):
        with pytest.raises(DomainError):
            rescale_f(TestFunction(Profile.GAUSSIAN, 1.0, a=a), 100)


class TestQuadratureSpec:
    def test_defaults(self):
        spec = QuadratureSpec()
        assert spec.lower(10) == pytest.approx(1e-5)
        assert spec.eta_small(100) < spec.eta_large(100)
        grid = spec.eta_grid(100)
        assert grid[0] == pytest.approx(spec.lower(100))
        assert grid[-1] == pytest.approx(spec.eta_large(100))
        assert np.all(grid[1:] / grid[:-1] <= spec.eta_ratio + 1e-12)

    def test_midpoint_grid(self):
        nodes, h = midpoint_grid(1j, 1.0, 4)
        assert h == 0.5
        assert nodes.size == 16
        assert np.mean(nodes) == pytest.approx(1j)
        assert np.abs(nodes - 1j).min() == pytest.approx(math.sqrt(2) / 4)


class TestLogModulus:
    def test_matches_eigenvalues(self, small_er):
        w = 0.3 + 0.2j
        spectrum = np.linalg.eigvals(small_er.dense)
        result = log_modulus_via_eta(small_er, w, backend="accelerated")
        assert not result.ill_conditioned
        assert result.value == pytest.approx(np.sum(np.log(np.abs(spectrum - w))), abs=1e-8)
        assert result.bias_bound < 1e-6

    def test_flags_small_singular_values(self):
        result = log_modulus_from_sigma(np.array([0.0, 1.0]), 1e-3)
        assert result.ill_conditioned
        assert result.min_sigma == 0.0
        assert math.isinf(result.bias_bound)

    def test_zero_regularization(self):
        result = log_modulus_from_sigma(np.array([2.0, 3.0]), 0.0)
        assert result.value == pytest.approx(math.log(6.0))
        assert result.bias_bound == 0.0


class TestGirko:
    def test_agrees_with_direct_spectrum(self, small_er):
        spec = QuadratureSpec(grid_cells=64, refinements=1)
        spectrum = dense_nonsym_eig(small_er, backend="accelerated").eigenvalues
        direct = linear_stat_direct(spectrum, POLY)
        girko = linear_stat_girko(small_er, POLY, spec, "accelerated")
        assert len(girko.levels) == 2
        assert girko.grid_cells == 64
        assert abs(girko.value - direct) <= 1e-3 * abs(direct)

    @pytest.mark.parametrize("seed", [1, 2])
    def test_agrees_with_direct_spectrum_n64(self, seed):
        A = sample_er(EnsembleParams(64, 0.3, seed), make_rng(seed, 0))
        spec = QuadratureSpec(grid_cells=64, refinements=1)
        direct = linear_stat_direct(dense_nonsym_eig(A, backend="accelerated").eigenvalues, POLY)
        girko = linear_stat_girko(A, POLY, spec, "accelerated")
        assert abs(girko.value - direct) <= 1e-3 * abs(direct)

    def test_zero_matrix(self):
        # every eigenvalue at the origin, so the statistic is f(0)
        spec = QuadratureSpec(grid_cells=64, refinements=1)
        girko = linear_stat_girko(np.zeros((24, 24)), POLY, spec, "accelerated")
        assert girko.value.real == pytest.approx(1.0, abs=1e-3)
        assert girko.ill_conditioned_nodes == 0

    def test_zero_matrix_gaussian(self):
        spec = QuadratureSpec(grid_cells=64, refinements=1)
        girko = linear_stat_girko(np.zeros((16, 16)), GAUSS, spec, "accelerated")
        assert girko.value.real == pytest.approx(1.0, abs=1e-3)

    def test_known_point_set(self):
        # spectrum {0.3, -0.4, 0.2 ± 0.5i}, four copies
        block = np.array([[0.3, 0, 0, 0], [0, -0.4, 0, 0], [0, 0, 0.2, -0.5], [0, 0, 0.5, 0.2]])
        x = np.kron(np.eye(4), block)
        spectrum = np.array([0.3, -0.4, 0.2 + 0.5j, 0.2 - 0.5j])
        spec = QuadratureSpec(grid_cells=64, refinements=1)
        girko = linear_stat_girko(x, POLY, spec, "accelerated")
        assert abs(girko.value - linear_stat_direct(spectrum, POLY)) <= 1e-3

    def test_single_level_has_no_error_estimate(self, small_er):
        spec = QuadratureSpec(grid_cells=16, refinements=0)
        result = linear_stat_girko(small_er, POLY, spec, "accelerated")
        assert len(result.levels) == 1
        assert math.isinf(result.error_estimate)

    def test_max_error(self, small_er):
        spec = QuadratureSpec(grid_cells=8, refinements=1, max_error=1e-30)
        with pytest.raises(QuadratureError):
            linear_stat_girko(small_er, POLY, spec, "accelerated")


class TestIbpTail:
    def test_exact_offdiag_gives_zero(self, small_er):
        tf = TestFunction(Profile.POLYNOMIAL, 1.0)
        eta_star = 24 ** -0.75
        tail = ibp_tail(small_er, tf, eta_star,
                        offdiag=lambda w: solve_m(ShiftPoint(complex(w), eta_star)).u)
        assert tail.value == 0
        assert np.all(tail.deviations == 0)

    def test_default_offdiag(self, small_er):
        tf = TestFunction(Profile.POLYNOMIAL, 1.0)
        spec = QuadratureSpec(grid_cells=8)
        tail = ibp_tail(small_er, tf, spec=spec)
        assert tail.eta_star == pytest.approx(24 ** -0.75)
        w = complex(tail.nodes[0])
        expected = offdiag_trace_solve(small_er, w, tail.eta_star) - solve_m(
            ShiftPoint(w, tail.eta_star)).u
        assert tail.deviations[0] == pytest.approx(expected)
        assert np.isfinite(tail.value)

    def test_eta_star_outside_band(self, small_er):
        with pytest.raises(DomainError):
            ibp_tail(small_er, TestFunction(Profile.POLYNOMIAL, 1.0), eta_star=0.5)


class TestEtaSplit:
    def test_pieces_sum_to_statistic_minus_deterministic(self, small_er):
        spec = QuadratureSpec(grid_cells=32)
        split = eta_split(small_er, GAUSS, spec, "accelerated")
        assert split.total == pytest.approx(split.statistic - split.deterministic, abs=1e-8)

    def test_deterministic_part_is_disc_mass(self, small_er):
        spec = QuadratureSpec(grid_cells=64)
        split = eta_split(small_er, GAUSS, spec, "accelerated")
        assert split.disc_mass == pytest.approx(1 - math.exp(-1), rel=1e-8)
        assert split.deterministic == pytest.approx(split.disc_mass, abs=2e-2)

    def test_statistic_is_single_level_girko(self, small_er):
        spec = QuadratureSpec(grid_cells=16, refinements=0)
        split = eta_split(small_er, POLY, spec, "accelerated")
        girko = linear_stat_girko(small_er, POLY, spec, "accelerated")
        assert girko.ill_conditioned_nodes == 0
        assert split.statistic == pytest.approx(girko.value.real, rel=1e-10)
