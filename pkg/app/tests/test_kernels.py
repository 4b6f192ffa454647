"""
Tests for the closed-form kernels and their depth recursions

High-precision references iterate the same maps in numpy.longdouble.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.errors import DomainError
from app.core.geometry import gram
from app.core.kernels import (
    ETA, RHO, THETA_BAR, KernelKind, KernelMatrix, ScalarKernelState, clamp_unit,
    constant_sequence, eta_fixed_point, eta_sequence, get_sequence, h_arc, h_arc_prime,
    is_positive_definite, kernel_criteria_check, logdet, rho_at_depth, rho_matrix,
    sigma_diagonal, sigma_dot, sigma_dot_matrix, sigma_matrix, sigmoid_squared, theta_bar,
    theta_bar_step, theta_infty, theta_infty_diagonal, theta_infty_sequence,
)

PI = np.longdouble(np.pi)


def h_long(z):
    z = np.longdouble(z)
    return z * np.arcsin(z) / PI + np.sqrt(np.longdouble(1) - z * z) / PI + z / 2


def s_long(z):
    e = np.longdouble(1) / (np.longdouble(1) + np.exp(-np.longdouble(z)))
    return e * e


def beta_by_bisection():
    lo, hi = np.longdouble(0), np.longdouble(1)
    for _ in range(200):
        mid = (lo + hi) / 2
        if s_long(mid) > mid:
            lo = mid
        else:
            hi = mid
    return float(lo)


class TestScalarMaps:
    def test_h_constants(self):
        assert h_arc(1.0) == pytest.approx(1.0, abs=1e-14)
        assert h_arc(-1.0) == pytest.approx(0.0, abs=1e-14)
        assert h_arc(0.0) == pytest.approx(1.0 / math.pi, abs=1e-14)

    def test_h_prime_constants(self):
        assert h_arc_prime(1.0) == pytest.approx(1.0, abs=1e-14)
        assert h_arc_prime(0.0) == pytest.approx(0.5, abs=1e-14)
        assert h_arc_prime(-1.0) == pytest.approx(0.0, abs=1e-14)

    def test_h_prime_matches_finite_difference(self):
        step = 1e-6
        numeric = (h_arc(0.5 + step) - h_arc(0.5 - step)) / (2 * step)
        assert h_arc_prime(0.5) == pytest.approx(numeric, abs=1e-8)

    def test_h_prime_matches_central_differences_across_the_interior(self):
        z = np.linspace(-0.99, 0.99, 1000)
        step = 1e-5
        numeric = (h_arc(z + step) - h_arc(z - step)) / (2 * step)
        assert_allclose(h_arc_prime(z), numeric, rtol=0, atol=1e-7)

    def test_sigma_dot_constants(self):
        assert sigma_dot(1.0) == pytest.approx(0.5, abs=1e-14)
        assert sigma_dot(0.0) == pytest.approx(0.25, abs=1e-14)
        assert sigma_dot(-1.0) == pytest.approx(0.0, abs=1e-14)

    def test_array_and_scalar_paths_agree(self):
        z = np.linspace(-1.0, 1.0, 41)
        assert_allclose(h_arc(z), [h_arc(float(v)) for v in z], rtol=0, atol=1e-15)
        assert_allclose(h_arc_prime(z), [h_arc_prime(float(v)) for v in z], rtol=0, atol=1e-15)

    def test_h_maps_into_unit_interval_above_identity(self):
        z = np.linspace(-1.0, 0.999, 200)
        values = h_arc(z)
        assert np.all((values >= 0.0) & (values <= 1.0))
        assert np.all(values > z)

    def test_clamp_tolerates_rounding_only(self):
        assert clamp_unit(1.0 + 1e-10) == 1.0
        assert clamp_unit(-1.0 - 1e-10) == -1.0
        with pytest.raises(DomainError):
            clamp_unit(1.0 + 1e-6)
        with pytest.raises(DomainError):
            h_arc(np.array([0.0, -1.1]))

    def test_closed_form_diagonals(self):
        assert sigma_diagonal(1, 8) == 1.0 / 8
        assert theta_infty_diagonal(5, 8) == pytest.approx(0.0390625, abs=1e-14)
        with pytest.raises(DomainError):
            theta_infty_diagonal(0, 8)


class TestRho:
    def test_fixed_point_and_first_step(self):
        for L in (1, 2, 7, 50):
            assert rho_at_depth(1.0, L) == pytest.approx(1.0, abs=1e-14)
        assert rho_at_depth(0.0, 2) == pytest.approx(1.0 / math.pi, abs=1e-15)

    def test_matches_extended_precision_iteration(self):
        reference = np.longdouble(0)
        for _ in range(9):
            reference = h_long(reference)
        assert rho_at_depth(0.0, 10) == pytest.approx(float(reference), abs=1e-12)
        assert rho_at_depth(0.0, 10) == pytest.approx(0.8548092375, abs=1e-9)

    def test_strictly_increasing_towards_one(self):
        z = np.linspace(-0.99, 0.99, 25)
        previous = z
        for L in range(2, 60):
            current = rho_at_depth(z, L)
            assert np.all(current > previous)
            assert np.all(current <= 1.0)
            previous = current

    def test_reaches_095_at_the_oracle_depth(self):
        reference = np.longdouble(0)
        depth = 1
        while reference < 0.95:
            reference = h_long(reference)
            depth += 1
        assert depth == 22
        assert rho_at_depth(0.0, depth) >= 0.95
        assert rho_at_depth(0.0, depth - 1) < 0.95

    def test_starting_at_minus_one(self):
        assert rho_at_depth(-1.0, 2) == pytest.approx(0.0, abs=1e-15)
        assert rho_at_depth(-1.0, 3) == pytest.approx(1.0 / math.pi, abs=1e-15)


class TestThetaInfty:
    def test_depth_one_is_scaled_gram(self, gaussian_data):
        ds = gaussian_data(6, 8)
        z = gram(ds)
        assert_array_equal(theta_infty(z, 1, 8).entries, z / 8)

    def test_diagonal_closed_form(self, gaussian_data):
        ds = gaussian_data(16, 8, seed=4)
        z = gram(ds)
        for L in range(1, 51):
            diagonal = np.diag(theta_infty(z, L, 8).entries)
            assert_allclose(diagonal, L / (8 * 2.0 ** (L - 1)), rtol=1e-12, atol=1e-14)

    def test_orthonormal_points_match_scalar_recursion(self):
        z = np.eye(3)
        matrix = theta_infty(z, 3, 3).entries
        off = matrix[~np.eye(3, dtype=bool)]
        assert_allclose(off, off[0], rtol=0, atol=0)

        rho, theta = 0.0, 0.0
        for L in (1, 2):
            theta = sigma_dot(rho) * theta + h_arc(rho) / (3 * 2.0 ** L)
            rho = h_arc(rho)
        assert off[0] == pytest.approx(theta, rel=1e-14)

    def test_normalizer_maps_to_theta_bar(self, gaussian_data):
        ds = gaussian_data(7, 5, seed=2)
        z = gram(ds)
        seq = theta_infty_sequence(5)
        for L in (1, 2, 5, 20):
            assert_allclose(seq.normalize(theta_infty(z, L, 5).entries, L),
                            theta_bar(z, L).entries, rtol=1e-12, atol=1e-14)

    def test_positive_homogeneity_for_general_data(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 3)) * [[1.0], [2.0], [0.5], [3.0]]
        norms = np.linalg.norm(x, axis=1)
        unit = x / norms[:, None]
        on_sphere = theta_infty(np.clip(unit @ unit.T, -1, 1), 3, 3).entries
        general = theta_infty(x @ x.T, 3, 3, norms=norms).entries
        assert_allclose(general, np.outer(norms, norms) * on_sphere, rtol=1e-7)


class TestThetaBar:
    def test_unit_diagonal_at_every_depth(self, gaussian_data):
        ds = gaussian_data(16, 8, seed=7)
        z = gram(ds)
        for L in range(1, 51):
            assert_allclose(np.diag(theta_bar(z, L).entries), 1.0, rtol=0, atol=1e-12)

    def test_depth_one_is_gram(self, gaussian_data):
        z = gram(gaussian_data(5))
        assert_array_equal(theta_bar(z, 1).entries, z)

    def test_orthogonal_pair_at_depth_two(self):
        value = theta_bar(np.eye(2), 2).entries[0, 1]
        assert value == pytest.approx(1.0 / (2.0 * math.pi), abs=1e-15)

    def test_input_dimension_is_optional_and_cancels(self, gaussian_data):
        z = gram(gaussian_data(5, 6))
        assert_array_equal(theta_bar(z, 4, n0=6).entries, theta_bar(z, 4).entries)
        assert_array_equal(theta_bar(z, 4, 128).entries, theta_bar(z, 4).entries)

    @pytest.mark.parametrize("n0", [0, -3, 2.5])
    def test_invalid_input_dimension(self, n0):
        with pytest.raises(DomainError):
            theta_bar(np.eye(2), 3, n0)

    def test_step_fixed_point(self):
        state = theta_bar_step(ScalarKernelState(1.0, 1.0, 4))
        assert (state.rho, state.theta_bar, state.depth) == (1.0, 1.0, 5)

    def test_step_from_orthogonal_pair(self):
        state = theta_bar_step(ScalarKernelState.from_inner_product(0.0))
        assert state.depth == 2
        assert state.rho == pytest.approx(1.0 / math.pi, abs=1e-15)
        assert state.theta_bar == pytest.approx(1.0 / (2.0 * math.pi), abs=1e-15)

    def test_values_stay_bounded_and_approach_one_quarter(self):
        for z0 in (-0.9, -0.5, 0.0, 0.3, 0.75, 0.99):
            state = ScalarKernelState.from_inner_product(z0)
            lower = 0.0 if z0 >= 0.0 else -1.0
            for _ in range(1999):
                state = theta_bar_step(state)
                assert lower <= state.theta_bar < 1.0
            assert state.depth == 2000
            assert state.theta_bar == pytest.approx(0.25, abs=0.01)

    def test_strictly_decreasing_for_correlated_pairs(self):
        for z0 in (0.5, 0.75, 0.9, 0.99):
            state = ScalarKernelState.from_inner_product(z0)
            for _ in range(199):
                following = theta_bar_step(state)
                assert following.theta_bar < state.theta_bar
                state = following

    def test_orthogonal_pair_rises_first(self):
        state = ScalarKernelState.from_inner_product(0.0)
        values = [state.theta_bar]
        for _ in range(9):
            state = theta_bar_step(state)
            values.append(state.theta_bar)
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_matrix_path_matches_scalar_path(self, gaussian_data):
        for seed in range(10):
            n = 2 + seed % 7
            ds = gaussian_data(n, 6, seed=seed)
            z = gram(ds)
            matrix = theta_bar(z, 12).entries
            for i in range(n):
                for j in range(n):
                    state = ScalarKernelState.from_inner_product(z[i, j])
                    for _ in range(11):
                        state = theta_bar_step(state)
                    assert matrix[i, j] == pytest.approx(state.theta_bar, abs=1e-12)

    def test_spread_shrinks_with_depth(self, gaussian_data):
        z = gram(gaussian_data(8, 4, seed=3))
        off = ~np.eye(8, dtype=bool)
        spread_1 = np.ptp(theta_bar(z, 1).entries[off])
        spread_200 = np.ptp(theta_bar(z, 200).entries[off])
        assert spread_200 < spread_1

    def test_logdet_approaches_limit_matrix(self, gaussian_data):
        n = 4
        z = gram(gaussian_data(n, 8, seed=1))
        sign, value = theta_bar(z, 2000).logdet()
        limit = (n - 1) * math.log(0.75) + math.log(0.75 + 0.25 * n)
        assert sign == 1.0
        assert value == pytest.approx(limit, abs=0.1)


class TestEta:
    def test_first_step_values(self):
        entries = eta_sequence(np.array([[1.0, 0.0], [0.0, 1.0]]), 2).entries
        assert entries[0, 1] == pytest.approx(0.25, abs=1e-15)
        assert entries[0, 0] == pytest.approx(float(s_long(1.0)), abs=1e-12)
        assert entries[0, 0] == pytest.approx(0.534446, abs=1e-6)

    def test_fixed_point_matches_bisection(self):
        beta = beta_by_bisection()
        assert eta_fixed_point() == pytest.approx(beta, abs=1e-12)
        assert sigmoid_squared(beta) == pytest.approx(beta, abs=1e-12)

    def test_converges_to_fixed_point(self, gaussian_data):
        beta = beta_by_bisection()
        z = gram(gaussian_data(6))
        assert_allclose(eta_sequence(z, 200).entries, beta, rtol=0, atol=1e-10)
        assert_allclose(eta_sequence(z, 10).entries, beta, rtol=0, atol=1e-4)


class TestSigma:
    def test_sigma_matrix(self, gaussian_data):
        z = gram(gaussian_data(5, 4))
        assert_allclose(np.diag(sigma_matrix(z, 3, 4)), 1.0 / 16, rtol=1e-14)
        assert_allclose(sigma_matrix(z, 1, 4), z / 4, rtol=1e-15)

    def test_sigma_dot_matrix(self, gaussian_data):
        z = gram(gaussian_data(5, 4))
        assert_allclose(np.diag(sigma_dot_matrix(z, 4)), 0.5, atol=1e-14)
        assert_allclose(sigma_dot_matrix(z, 2), h_arc_prime(z) / 2, rtol=1e-15)
        with pytest.raises(DomainError):
            sigma_dot_matrix(z, 1)


class TestSequences:
    def test_registry(self):
        assert get_sequence("theta_bar") is THETA_BAR
        assert get_sequence("rho") is RHO
        assert get_sequence("eta") is ETA
        assert get_sequence("theta_infty", n0=4).kind is KernelKind.THETA_INFTY
        with pytest.raises(DomainError):
            get_sequence("theta_infty")
        with pytest.raises(ValueError):
            get_sequence("sigmoid")

    def test_trajectory_matches_evaluate(self, gaussian_data):
        z = gram(gaussian_data(4))
        trajectory = list(THETA_BAR.trajectory(z, 6))
        assert [L for L, _ in trajectory] == [1, 2, 3, 4, 5, 6]
        assert_array_equal(trajectory[-1][1], THETA_BAR.evaluate(z, 6))

    def test_rho_matrix_depth_one_is_gram(self, gaussian_data):
        z = gram(gaussian_data(4))
        assert_array_equal(rho_matrix(z, 1).entries, z)

    def test_custom_sequence_kind(self):
        assert constant_sequence().kind is KernelKind.CUSTOM


class TestSpectralHelpers:
    def test_logdet_and_definiteness(self):
        assert logdet(np.eye(3)) == (1.0, 0.0)
        assert is_positive_definite(np.eye(3))
        assert not is_positive_definite(np.ones((3, 3)))
        assert logdet(np.ones((3, 3)))[0] == 0.0

    def test_kernel_matrix_accessors(self):
        matrix = KernelMatrix(np.diag([1.0, 2.0, 4.0]), depth=2)
        assert matrix.n == 3
        assert matrix.smallest_eigenvalue() == pytest.approx(1.0)
        assert matrix.logdet()[1] == pytest.approx(math.log(8.0))
        assert matrix.is_positive_definite()
        assert not matrix.entries.flags.writeable


class TestCriteria:
    def test_theta_bar_criteria(self, gaussian_data):
        ds = gaussian_data(4, 8, seed=5)
        report = kernel_criteria_check(THETA_BAR, ds, 10)

        assert report.depths == list(range(1, 11))
        assert all(row.dominance_violation <= 1e-12 for row in report.rows)
        assert all(row.positive_definite for row in report.rows if row.depth >= 2)
        assert all(row.logdet_sign == 1.0 for row in report.rows if row.depth >= 2)
        assert report.l_hat is not None and report.l_hat <= 2

    def test_rho_criteria_and_determinant_decay(self, gaussian_data):
        ds = gaussian_data(4, 8, seed=5)
        report = kernel_criteria_check(RHO, ds, 30)

        assert all(row.dominance_violation <= 1e-12 for row in report.rows)
        assert report.l_hat is not None and report.l_hat <= 2
        logdets = [row.logdet for row in report.rows]
        assert logdets[-1] < logdets[1]

    def test_constant_kernel_is_never_positive_definite(self, gaussian_data):
        ds = gaussian_data(4)
        report = kernel_criteria_check(constant_sequence(), ds, 5)

        assert report.l_hat is None
        assert not any(row.positive_definite for row in report.rows)

    def test_needs_two_depths(self, gaussian_data):
        with pytest.raises(DomainError):
            kernel_criteria_check(RHO, gaussian_data(3), 1)
