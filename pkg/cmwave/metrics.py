"""Post-hoc analysis of a designed waveform: beampattern, correlation levels, objective parts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Tuple

import numpy as np

from .exceptions import DomainError
from .model import Scenario, project_alpha
from .objective import (
    beampattern,
    corr_penalty,
    correlation_cache,
    grad_h,
    lag_gradients,
    mismatch_e,
)

DEFAULT_FLOOR_DB = -300.0


def _to_db(ratio: np.ndarray, floor_db: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(ratio)
    return np.where(ratio > 0, np.maximum(level, floor_db), floor_db)


@dataclass(frozen=True)
class CorrelationReport:
    """
    Raw correlations and normalized levels for every ordered angle pair and lag.

    values[t, i, j] is P_{theta_i, theta_j, lags[t]}; levels_db holds
    10 log10 |P| / max(|P_ii0|, |P_jj0|), floored at ``floor_db``.
    """

    corr_angles: Tuple[float, ...]
    lags: Tuple[int, ...]
    values: np.ndarray
    levels_db: np.ndarray
    normalizer: np.ndarray
    floor_db: float = DEFAULT_FLOOR_DB

    def rows(self) -> Iterator[Tuple[float, float, int, float, float, float]]:
        for i, theta_i in enumerate(self.corr_angles):
            for j, theta_j in enumerate(self.corr_angles):
                for t, lag in enumerate(self.lags):
                    value = self.values[t, i, j]
                    yield theta_i, theta_j, lag, float(value.real), float(value.imag), float(self.levels_db[t, i, j])

    def level(self, i: int, j: int, n: int) -> float:
        return float(self.levels_db[self.lags.index(n), i, j])


def normalized_correlation_db(
    phi: np.ndarray, scenario: Scenario, floor_db: float = DEFAULT_FLOOR_DB
) -> CorrelationReport:
    cache = correlation_cache(phi, scenario)
    s = cache.synth_signals
    energy = np.sum(s.real**2 + s.imag**2, axis=0)  # |P_{theta_i, theta_i, 0}|
    normalizer = np.maximum(energy[:, None], energy[None, :])
    if np.any(normalizer <= 0):
        raise DomainError("zero-lag correlation energy is zero; cannot normalize")
    levels = _to_db(np.abs(cache.corr_values) / normalizer[None, :, :], floor_db)
    return CorrelationReport(
        corr_angles=scenario.spec.corr_angles,
        lags=scenario.lags,
        values=cache.corr_values,
        levels_db=levels,
        normalizer=normalizer,
        floor_db=floor_db,
    )


def correlation_table_rows(report: CorrelationReport) -> List[Tuple[float, float, int, float, float, float]]:
    return list(report.rows())


def beampattern_trace(
    phi: np.ndarray, scenario: Scenario, floor_db: float = DEFAULT_FLOOR_DB
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(angles in degrees, power, power in dB relative to the peak) over the beam grid."""
    angles = np.asarray(scenario.spec.beam_grid, dtype=float)
    power = beampattern(phi, scenario)
    peak = float(np.max(power))
    if peak <= 0:
        raise DomainError("beampattern is identically zero")
    return angles, power, _to_db(power / peak, floor_db)


def objective_decomposition(alpha: float, phi: np.ndarray, scenario: Scenario) -> Dict[str, float]:
    e_value = mismatch_e(alpha, phi, scenario)
    pc_value = corr_penalty(phi, scenario)
    return {"e": e_value, "pc": pc_value, "total": e_value + pc_value}


def stationarity_gap(alpha: float, phi: np.ndarray, scenario: Scenario) -> Tuple[float, float]:
    """
    Distance from the first-order stationarity conditions.

    alpha is box constrained, so its gap is the projected-gradient step
    |alpha - Pi(alpha - d/dalpha e)|. Phi lives on the circle, so every entry may
    move either way and its gap is the plain gradient norm of e + P_c.
    """
    d_alpha, d_phi = grad_h(alpha, phi, scenario)
    total = d_phi + np.sum(lag_gradients(phi, scenario), axis=0)
    alpha_gap = abs(alpha - project_alpha(alpha - d_alpha, scenario.spec.alpha_max))
    return float(alpha_gap), float(np.linalg.norm(total))


def mainlobe_contrast_db(phi: np.ndarray, scenario: Scenario, guard_deg: float = 5.0) -> float:
    """Mean power over the desired mainlobe versus points further than ``guard_deg`` from it, in dB."""
    angles = np.asarray(scenario.spec.beam_grid, dtype=float)
    mainlobe = scenario.desired > 0
    distance = np.min(np.abs(angles[:, None] - angles[None, mainlobe]), axis=1)
    outside = distance > guard_deg
    if not np.any(outside):
        raise DomainError(f"no grid points lie more than {guard_deg} deg from the mainlobe")
    power = beampattern(phi, scenario)
    sidelobe = float(np.mean(power[outside]))
    if sidelobe <= 0:
        return float("inf")
    return float(10.0 * np.log10(np.mean(power[mainlobe]) / sidelobe))
