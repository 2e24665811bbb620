"""
Beampattern mismatch, correlation penalty, their phase gradients and the
Lipschitz constants of those gradients.

Nothing here forms X^H X or the M^2 x M^2 matrix A. The mismatch works on the
synthesized signals s_theta = X a_theta (one matrix product for the whole grid)
and the correlation terms on lag-n overlaps of those signals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainError
from .model import DesignSpec, LipschitzConstants, Scenario, synthesize_waveform

logger = logging.getLogger(__name__)

# A zero gradient map is Lipschitz with any constant; used when w_ac = w_cc = 0.
LIPSCHITZ_FLOOR = 1.0


@dataclass(frozen=True)
class CorrelationCache:
    """Synthesized signals at the correlation angles and their lag overlaps."""

    lags: Tuple[int, ...]
    synth_signals: np.ndarray  # (N, K)
    corr_values: np.ndarray  # (|lags|, K, K); [t, i, j] = P_{theta_i, theta_j, lags[t]}

    def value(self, i: int, j: int, n: int) -> complex:
        return complex(self.corr_values[self.lags.index(n), i, j])


def _steering(scenario: Scenario, grid: str) -> np.ndarray:
    if grid == "beam":
        return scenario.steering_beam
    if grid == "corr":
        return scenario.steering_corr
    raise DomainError(f"unknown angle set {grid!r}, expected 'beam' or 'corr'")


def synthesized_signals(phi: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """s_theta = X a_theta for every steering column, shape (N, angles)."""
    return synthesize_waveform(phi) @ steering


def beampattern(phi: np.ndarray, scenario: Scenario, grid: str = "beam") -> np.ndarray:
    """P_theta = ||X a_theta||^2 over the chosen angle set."""
    s = synthesized_signals(phi, _steering(scenario, grid))
    return np.sum(s.real**2 + s.imag**2, axis=0)


def lag_overlap(signals: np.ndarray, n: int) -> np.ndarray:
    """
    K x K matrix of sum_t conj(s_i(t)) s_j(t+n).

    Lags at or beyond the signal length have an empty overlap and give zeros.
    """
    length, k = signals.shape
    if n < 0:
        raise DomainError(f"lag must be nonnegative, got {n}")
    if n >= length:
        return np.zeros((k, k), dtype=complex)
    return signals[: length - n].conj().T @ signals[n:]


def correlation(phi: np.ndarray, scenario: Scenario, i: int, j: int, n: int) -> complex:
    k = scenario.spec.K
    if not (0 <= i < k and 0 <= j < k):
        raise DomainError(f"correlation angle index out of range: ({i}, {j}) with K={k}")
    if n < 0:
        raise DomainError(f"lag must be nonnegative, got {n}")
    if n >= scenario.spec.N:
        return 0j
    s = synthesized_signals(phi, scenario.steering_corr)
    return complex(np.vdot(s[: scenario.spec.N - n, i], s[n:, j]))


def correlation_cache(phi: np.ndarray, scenario: Scenario) -> CorrelationCache:
    s = synthesized_signals(phi, scenario.steering_corr)
    values = np.stack([lag_overlap(s, n) for n in scenario.lags])
    return CorrelationCache(lags=scenario.lags, synth_signals=s, corr_values=values)


def lag_weights(spec: DesignSpec, n: int) -> np.ndarray:
    """Squared weights of B_n: w_cc^2 off the diagonal, w_ac^2 on it except at lag 0."""
    k = spec.K
    weights = np.full((k, k), spec.weight_cc**2)
    np.fill_diagonal(weights, 0.0 if n == 0 else spec.weight_ac**2)
    return weights


def _check_lag(scenario: Scenario, n: int) -> None:
    if n not in scenario.lags:
        raise DomainError(f"lag {n} is not in the lag set {scenario.lags}")


def _f_from_signals(signals: np.ndarray, spec: DesignSpec, n: int) -> float:
    overlap = lag_overlap(signals, n)
    return float(np.sum(lag_weights(spec, n) * (overlap.real**2 + overlap.imag**2)))


def mismatch_e(alpha: float, phi: np.ndarray, scenario: Scenario) -> float:
    """Squared error between alpha * desired and the synthesized beampattern."""
    residual = alpha * scenario.desired - beampattern(phi, scenario)
    return float(np.sum(residual**2))


def f_lag(phi: np.ndarray, scenario: Scenario, n: int) -> float:
    """f_n = ||B_n||_F^2, the weighted correlation energy at lag n."""
    _check_lag(scenario, n)
    signals = synthesized_signals(phi, scenario.steering_corr)
    return _f_from_signals(signals, scenario.spec, n)


def f_lags(phi: np.ndarray, scenario: Scenario) -> np.ndarray:
    """f_n for every lag of the set, in lag order."""
    signals = synthesized_signals(phi, scenario.steering_corr)
    return np.array([_f_from_signals(signals, scenario.spec, n) for n in scenario.lags])


def corr_penalty(phi: np.ndarray, scenario: Scenario) -> float:
    return float(sum(f_lags(phi, scenario)))


def grad_h(alpha: float, phi: np.ndarray, scenario: Scenario) -> Tuple[float, np.ndarray]:
    """
    Gradient of the mismatch h(alpha, Phi) = e(alpha, X(Phi)).

    d/dalpha = 2 (p alpha - sum P_bar P), and
    d/dphi_{i,m} = sum_theta 4 (P - alpha P_bar) Im(s_theta(i) conj(x_{i,m} a_theta(m))),
    evaluated for all (i, m) with two matrix products over the grid.
    """
    x = synthesize_waveform(phi)
    steering = scenario.steering_beam
    s = x @ steering
    power = np.sum(s.real**2 + s.imag**2, axis=0)
    d_alpha = 2.0 * (scenario.p_scalar * alpha - float(scenario.desired @ power))
    residual = power - alpha * scenario.desired
    back = (s * (4.0 * residual)) @ steering.conj().T
    d_phi = np.imag(x.conj() * back)
    return d_alpha, d_phi


def _grad_f_from_signals(
    x: np.ndarray, signals: np.ndarray, steering: np.ndarray, spec: DesignSpec, n: int
) -> np.ndarray:
    length = signals.shape[0]
    if n >= length:
        return np.zeros(x.shape)
    overlap = lag_overlap(signals, n)
    coeff = 2.0 * lag_weights(spec, n) * overlap.conj()

    # dP_ij/dphi_{r,m} = j x a_j(m) conj(s_i(r-n)) - j conj(x a_i(m)) s_j(r+n)
    delayed = np.zeros_like(signals)
    delayed[n:] = signals[: length - n].conj()
    advanced = np.zeros_like(signals)
    advanced[: length - n] = signals[n:]

    first = (delayed @ coeff) @ steering.T
    second = (advanced @ coeff.T) @ steering.conj().T
    return np.imag(x.conj() * second) - np.imag(x * first)


def grad_f_lag(phi: np.ndarray, scenario: Scenario, n: int) -> np.ndarray:
    _check_lag(scenario, n)
    x = synthesize_waveform(phi)
    signals = x @ scenario.steering_corr
    return _grad_f_from_signals(x, signals, scenario.steering_corr, scenario.spec, n)


def lag_gradients(
    phi: np.ndarray, scenario: Scenario, lags: Optional[Sequence[int]] = None, executor=None
) -> np.ndarray:
    """
    grad f_n(Phi) for several lags, stacked in the given order.

    The synthesized signals are shared; per-lag work goes to ``executor`` when one
    is given. Output order never depends on completion order.
    """
    lags = tuple(scenario.lags if lags is None else lags)
    x = synthesize_waveform(phi)
    signals = x @ scenario.steering_corr

    def one(n: int) -> np.ndarray:
        return _grad_f_from_signals(x, signals, scenario.steering_corr, scenario.spec, n)

    if not lags:
        return np.zeros((0,) + x.shape)
    if executor is None:
        return np.stack([one(n) for n in lags])
    return np.stack(list(executor.map(one, lags)))


def lipschitz_constants(spec: DesignSpec, p_scalar: float) -> LipschitzConstants:
    """
    Gradient Lipschitz constants:

        L_alpha = 2 p
        L       = 4 (M-1) (alpha_max P_max + M^2 N + 2M - 2) |grid|
        L_n     = 2 w_c^2 (2M-1) (M^2 N + 2M - 1) K^2
    """
    m, n, k = spec.M, spec.N, spec.K
    l_alpha = 2.0 * p_scalar
    l_phi = 4.0 * (m - 1) * (spec.alpha_max * spec.desired_max + m * m * n + 2 * m - 2) * spec.grid_size
    l_lag = 2.0 * spec.weight_c**2 * (2 * m - 1) * (m * m * n + 2 * m - 1) * k * k
    if l_lag <= 0.0:
        logger.info("correlation weights are zero; using L_n = %g", LIPSCHITZ_FLOOR)
        l_lag = LIPSCHITZ_FLOOR
    return LipschitzConstants(
        L_alpha=l_alpha,
        L_phi=l_phi,
        L_n=np.full(len(spec.lag_set), l_lag),
    )
