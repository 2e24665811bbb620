from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from cmwave.exceptions import DomainError
from cmwave.model import DesignSpec, build_scenario, random_phases
from cmwave.objective import (
    LIPSCHITZ_FLOOR,
    beampattern,
    corr_penalty,
    correlation,
    correlation_cache,
    f_lag,
    f_lags,
    grad_f_lag,
    grad_h,
    lag_gradients,
    lag_overlap,
    mismatch_e,
)
from cmwave.oracle import finite_diff_grad

from .conftest import make_scenario, random_instance


def relative_error(approx, exact):
    return np.linalg.norm(np.ravel(approx - exact)) / max(1.0, np.linalg.norm(np.ravel(exact)))


def matched_scenario(phi, alpha, M, N, lags=(0, 1), weights=10.0):
    """Desired pattern chosen so that alpha * desired equals the beampattern of phi."""
    base = make_scenario(M=M, N=N, lags=lags)
    power = beampattern(phi, base)
    spec = DesignSpec(
        M=M,
        N=N,
        beam_grid=base.spec.beam_grid,
        desired_pattern=tuple((power / alpha).tolist()),
        corr_angles=base.spec.corr_angles,
        lag_set=lags,
        weight_ac=weights,
        weight_cc=weights,
    )
    return build_scenario(spec)


class TestBeampattern:
    def test_all_zero_phases_peak_at_broadside(self):
        scenario = make_scenario(M=4, N=16)
        power = beampattern(np.zeros((16, 4)), scenario)
        grid = np.asarray(scenario.spec.beam_grid)
        assert power.shape == grid.shape
        assert grid[np.argmax(power)] == pytest.approx(0.0)
        assert np.max(power) == pytest.approx(16 * 4 * 4)

    def test_matches_quadratic_form(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        x = np.exp(1j * phi)
        gram = x.conj().T @ x
        expected = [np.real(a.conj() @ gram @ a) for a in tiny_scenario.steering_beam.T]
        np.testing.assert_allclose(beampattern(phi, tiny_scenario), expected, rtol=1e-12)

    def test_unknown_angle_set(self, tiny_scenario):
        with pytest.raises(DomainError):
            beampattern(np.zeros(tiny_scenario.shape), tiny_scenario, grid="sidelobes")


class TestMismatch:
    def test_zero_when_matched(self, rng):
        phi = random_phases((8, 3), rng)
        scenario = matched_scenario(phi, 1.5, M=3, N=8)
        assert mismatch_e(1.5, phi, scenario) == pytest.approx(0.0, abs=1e-18 + 1e-12)

    def test_explicit_sum(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        power = beampattern(phi, tiny_scenario)
        expected = sum((0.7 * d - p) ** 2 for d, p in zip(tiny_scenario.desired, power))
        assert mismatch_e(0.7, phi, tiny_scenario) == pytest.approx(expected, rel=1e-12)


class TestCorrelation:
    def test_lag_zero_is_inner_product(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        s = np.exp(1j * phi) @ tiny_scenario.steering_corr
        assert correlation(phi, tiny_scenario, 0, 1, 0) == pytest.approx(np.vdot(s[:, 0], s[:, 1]))

    def test_scalar_loop(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        s = np.exp(1j * phi) @ tiny_scenario.steering_corr
        n = 2
        expected = sum(np.conj(s[t, 1]) * s[t + n, 0] for t in range(8 - n))
        assert correlation(phi, tiny_scenario, 1, 0, n) == pytest.approx(expected, rel=1e-12)

    def test_lag_at_or_beyond_length(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        assert correlation(phi, tiny_scenario, 0, 0, 8) == 0j
        assert correlation(phi, tiny_scenario, 0, 1, 50) == 0j

    def test_bad_arguments(self, tiny_scenario):
        phi = np.zeros(tiny_scenario.shape)
        with pytest.raises(DomainError):
            correlation(phi, tiny_scenario, 0, 0, -1)
        with pytest.raises(DomainError):
            correlation(phi, tiny_scenario, 0, 2, 0)

    def test_overlap_matrix(self, rng):
        s = rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2))
        P = lag_overlap(s, 2)
        assert P[1, 0] == pytest.approx(np.vdot(s[:4, 1], s[2:, 0]))
        np.testing.assert_array_equal(lag_overlap(s, 6), np.zeros((2, 2)))

    def test_cache_agrees(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        cache = correlation_cache(phi, tiny_scenario)
        assert cache.corr_values.shape == (3, 2, 2)
        for n in tiny_scenario.lags:
            assert cache.value(0, 1, n) == pytest.approx(correlation(phi, tiny_scenario, 0, 1, n), rel=1e-12)


class TestCorrelationPenalty:
    def test_weighted_energy(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        for n in tiny_scenario.lags:
            expected = 0.0
            for i in range(2):
                for j in range(2):
                    w = 10.0 if i != j or n > 0 else 0.0
                    expected += w**2 * abs(correlation(phi, tiny_scenario, i, j, n)) ** 2
            assert f_lag(phi, tiny_scenario, n) == pytest.approx(expected, rel=1e-12)

    def test_single_angle_lag_zero_is_free(self, rng):
        scenario = make_scenario(corr_angles=(0.0,), lags=(0,))
        phi = random_phases(scenario.shape, rng)
        assert f_lag(phi, scenario, 0) == 0.0
        np.testing.assert_array_equal(grad_f_lag(phi, scenario, 0), 0.0)

    def test_zero_weights(self, rng):
        scenario = make_scenario(weight_ac=0.0, weight_cc=0.0)
        phi = random_phases(scenario.shape, rng)
        assert corr_penalty(phi, scenario) == 0.0
        assert scenario.lipschitz.L_n[0] == LIPSCHITZ_FLOOR

    def test_lag_outside_set(self, tiny_scenario):
        with pytest.raises(DomainError):
            f_lag(np.zeros(tiny_scenario.shape), tiny_scenario, 5)
        with pytest.raises(DomainError):
            grad_f_lag(np.zeros(tiny_scenario.shape), tiny_scenario, 5)

    def test_sum_over_lags(self, tiny_scenario, rng):
        phi = random_phases(tiny_scenario.shape, rng)
        assert corr_penalty(phi, tiny_scenario) == pytest.approx(float(np.sum(f_lags(phi, tiny_scenario))))


class TestGradients:
    @pytest.mark.parametrize("seed", range(100))
    def test_finite_differences(self, seed):
        scenario, phi, alpha = random_instance(seed)

        d_alpha, d_phi = grad_h(alpha, phi, scenario)
        fd_alpha = finite_diff_grad(lambda a: mismatch_e(float(a[0]), phi, scenario), np.array([alpha]))
        fd_phi = finite_diff_grad(lambda p: mismatch_e(alpha, p, scenario), phi)
        assert relative_error(np.array([d_alpha]), fd_alpha) < 1e-5
        assert relative_error(d_phi, fd_phi) < 1e-5

        for n in scenario.lags:
            fd_n = finite_diff_grad(lambda p: f_lag(p, scenario, n), phi)
            assert relative_error(grad_f_lag(phi, scenario, n), fd_n) < 1e-5

    def test_zero_at_matched_point(self, rng):
        phi = random_phases((8, 3), rng)
        scenario = matched_scenario(phi, 1.2, M=3, N=8)
        d_alpha, d_phi = grad_h(1.2, phi, scenario)
        scale = float(np.max(beampattern(phi, scenario))) ** 2
        assert abs(d_alpha) <= 1e-10 * scale
        assert np.max(np.abs(d_phi)) <= 1e-10 * scale

    def test_stack_order_and_pool(self, desk_scenario, rng):
        phi = random_phases(desk_scenario.shape, rng)
        sequential = lag_gradients(phi, desk_scenario)
        assert sequential.shape == (5, 16, 4)
        with ThreadPoolExecutor(max_workers=3) as pool:
            pooled = lag_gradients(phi, desk_scenario, executor=pool)
        np.testing.assert_array_equal(sequential, pooled)
        np.testing.assert_array_equal(sequential[3], grad_f_lag(phi, desk_scenario, 3))

    def test_subset_and_empty(self, desk_scenario, rng):
        phi = random_phases(desk_scenario.shape, rng)
        subset = lag_gradients(phi, desk_scenario, lags=[4, 1])
        np.testing.assert_array_equal(subset[0], grad_f_lag(phi, desk_scenario, 4))
        assert lag_gradients(phi, desk_scenario, lags=[]).shape == (0, 16, 4)


class TestLipschitzBounds:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_differences_dominated(self, seed):
        scenario, _, alpha = random_instance(seed)
        lip = scenario.lipschitz
        rng = np.random.default_rng(1000 + seed)
        for i in range(50):
            phi = random_phases(scenario.shape, rng)
            other = random_phases(scenario.shape, rng) if i % 2 else phi + 1e-3 * rng.normal(size=phi.shape)
            gap = np.linalg.norm(phi - other)

            d_alpha, d_phi = grad_h(alpha, phi, scenario)
            d_alpha_shift, _ = grad_h(alpha + 0.25, phi, scenario)
            assert abs(d_alpha_shift - d_alpha) <= lip.L_alpha * 0.25 * (1 + 1e-9)

            _, d_phi_other = grad_h(alpha, other, scenario)
            assert np.linalg.norm(d_phi - d_phi_other) <= lip.L_phi * gap * (1 + 1e-9)

            for slot, n in enumerate(scenario.lags):
                diff = grad_f_lag(phi, scenario, n) - grad_f_lag(other, scenario, n)
                assert np.linalg.norm(diff) <= lip.L_n[slot] * gap * (1 + 1e-9)
