import numpy as np
import pytest

from cmwave.model import DesignSpec, band_pattern, build_scenario, random_phases


def make_scenario(M=3, N=8, lags=(0, 1, 2), corr_angles=(-20.0, 20.0), bands=((-30.0, -10.0),),
                  grid_step=10.0, weight_ac=10.0, weight_cc=10.0, **extra):
    grid, desired, _ = band_pattern(list(bands), grid_step)
    spec = DesignSpec(
        M=M,
        N=N,
        beam_grid=extra.pop("beam_grid", grid),
        desired_pattern=extra.pop("desired_pattern", desired),
        corr_angles=corr_angles,
        lag_set=lags,
        weight_ac=weight_ac,
        weight_cc=weight_cc,
        **extra,
    )
    return build_scenario(spec)


def random_instance(seed):
    """Small random problem: M in {2,3,4}, N in {4,8}, K in {1,2}, |T| <= 4."""
    rng = np.random.default_rng(seed)
    M = int(rng.choice([2, 3, 4]))
    N = int(rng.choice([4, 8]))
    K = int(rng.choice([1, 2]))
    count = int(rng.integers(1, 5))
    lags = tuple(sorted(rng.choice(N, size=count, replace=False).tolist()))
    corr = tuple(sorted(rng.uniform(-60.0, 60.0, size=K).tolist()))
    scenario = make_scenario(M=M, N=N, lags=lags, corr_angles=corr)
    phi = random_phases((N, M), rng)
    alpha = float(rng.uniform(0.5, 2.0))
    return scenario, phi, alpha


@pytest.fixture
def tiny_scenario():
    return make_scenario()


@pytest.fixture
def desk_scenario():
    """M=4, N=16, K=2, lags 0..4."""
    grid, desired, centers = band_pattern([(-50.0, -30.0), (30.0, 50.0)], 1.0)
    spec = DesignSpec(
        M=4, N=16, beam_grid=grid, desired_pattern=desired, corr_angles=centers, lag_set=(0, 1, 2, 3, 4)
    )
    return build_scenario(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def circular_distance(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))
