"""
Problem definition for constant-modulus MIMO probing waveform design.

A design is an M-antenna half-wavelength uniform linear array transmitting an
N-sample waveform X (N x M). X is parameterized by its phases, x = exp(j*phi),
so the constant-modulus constraint holds by construction and the only box
constraint left is 0 <= phi < 2*pi.

Angles are given in degrees at the API boundary and converted to radians once,
when the scenario is built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    field_validator,
    model_validator,
)

from .exceptions import DomainError, NumericError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

# Lower end of the alpha projection, relative to alpha_max.
ALPHA_FLOOR_RATIO = 1e-8

# Relative tolerance on the beam grid spacing.
GRID_SPACING_RTOL = 1e-9

# Inclusive band edges are matched with this slack (degrees).
BAND_EDGE_TOL_DEG = 1e-9


def _check_open_angle(theta_deg: float) -> None:
    if not (-90.0 < theta_deg < 90.0) or not math.isfinite(theta_deg):
        raise DomainError(f"angle {theta_deg} deg is outside the open interval (-90, 90)")


class DesignSpec(BaseModel):
    """Full problem statement: array, waveform length, angle sets, desired beampattern, lags and weights."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    num_antennas: int = Field(..., ge=2, alias="M")
    waveform_length: int = Field(..., ge=2, alias="N")
    beam_grid: Tuple[float, ...] = Field(..., min_length=1)
    desired_pattern: Tuple[NonNegativeFloat, ...] = Field(..., min_length=1)
    corr_angles: Tuple[float, ...] = Field(..., min_length=1)
    lag_set: Tuple[int, ...] = Field(..., min_length=1)
    weight_ac: NonNegativeFloat = 10.0
    weight_cc: NonNegativeFloat = 10.0
    alpha_max: PositiveFloat

    @model_validator(mode="before")
    @classmethod
    def _default_alpha_max(cls, data):
        # Beampattern values never exceed N*M^2, so 2*N*M^2/max(P) keeps the cap inactive.
        if not isinstance(data, dict) or data.get("alpha_max") is not None:
            return data
        try:
            m = int(data.get("num_antennas", data.get("M")))
            n = int(data.get("waveform_length", data.get("N")))
            peak = max(float(v) for v in data["desired_pattern"])
        except (KeyError, TypeError, ValueError):
            return data
        if peak > 0:
            data = {**data, "alpha_max": 2.0 * n * m * m / peak}
        return data

    @field_validator("beam_grid", "corr_angles")
    @classmethod
    def _angles_in_scope(cls, angles: Tuple[float, ...]) -> Tuple[float, ...]:
        for theta in angles:
            if not (-90.0 < theta < 90.0):
                raise ValueError(f"angle {theta} deg is outside the open interval (-90, 90)")
        return angles

    @field_validator("beam_grid")
    @classmethod
    def _uniform_grid(cls, grid: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(grid) < 2:
            return grid
        steps = np.diff(np.asarray(grid, dtype=float))
        if np.any(steps <= 0):
            raise ValueError("beam_grid must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > GRID_SPACING_RTOL * steps[0]:
            raise ValueError("beam_grid spacing must be uniform")
        return grid

    @field_validator("lag_set")
    @classmethod
    def _sorted_unique_lags(cls, lags: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(lag < 0 for lag in lags):
            raise ValueError("lags must be nonnegative")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise ValueError("lag_set must be unique and sorted ascending")
        return lags

    @model_validator(mode="after")
    def _consistent(self) -> "DesignSpec":
        if len(self.desired_pattern) != len(self.beam_grid):
            raise ValueError(
                f"desired_pattern has {len(self.desired_pattern)} entries, "
                f"beam_grid has {len(self.beam_grid)}"
            )
        if not any(v > 0 for v in self.desired_pattern):
            raise ValueError("desired_pattern needs at least one positive entry")
        top = self.waveform_length - 1
        for lag in self.lag_set:
            if lag > top:
                raise ValueError(f"lag {lag} exceeds the bound waveform_length - 1 = {top}")
        return self

    @property
    def M(self) -> int:
        return self.num_antennas

    @property
    def N(self) -> int:
        return self.waveform_length

    @property
    def K(self) -> int:
        return len(self.corr_angles)

    @property
    def grid_size(self) -> int:
        return len(self.beam_grid)

    @property
    def desired_max(self) -> float:
        return max(self.desired_pattern)

    @property
    def weight_c(self) -> float:
        return max(self.weight_ac, self.weight_cc)


@dataclass(frozen=True)
class LipschitzConstants:
    """Gradient Lipschitz constants of h in alpha, of h in Phi, and of each f_n."""

    L_alpha: float
    L_phi: float
    L_n: np.ndarray

    def scaled(self, factor: float) -> "LipschitzConstants":
        if factor == 1.0:
            return self
        return LipschitzConstants(self.L_alpha * factor, self.L_phi * factor, self.L_n * factor)


@dataclass(frozen=True)
class Scenario:
    """Immutable precomputed problem data shared by every evaluator."""

    spec: DesignSpec
    steering_beam: np.ndarray  # (M, |grid|), column t is a_theta for beam_grid[t]
    steering_corr: np.ndarray  # (M, K)
    desired: np.ndarray  # (|grid|,)
    p_scalar: float
    lipschitz: LipschitzConstants

    @property
    def lags(self) -> Tuple[int, ...]:
        return self.spec.lag_set

    @property
    def shape(self) -> Tuple[int, int]:
        return self.spec.N, self.spec.M


def steering_vector(theta_deg: float, M: int) -> np.ndarray:
    """Element m is exp(j*pi*m*sin(theta)) for a half-wavelength ULA."""
    _check_open_angle(theta_deg)
    if M < 1:
        raise DomainError(f"antenna count must be positive, got {M}")
    return np.exp(1j * np.pi * np.arange(M) * np.sin(np.deg2rad(theta_deg)))


def steering_matrix(angles_deg: Sequence[float], M: int) -> np.ndarray:
    """Steering vectors for several angles, one per column."""
    columns = [steering_vector(theta, M) for theta in angles_deg]
    return np.stack(columns, axis=1)


def synthesize_waveform(phi: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.asarray(phi, dtype=float))


def wrap_phase(raw: np.ndarray) -> np.ndarray:
    """Project phases onto [0, 2*pi) by wrap-around."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise NumericError("cannot wrap non-finite phases")
    out = np.mod(raw, TWO_PI)
    # np.mod can round a tiny negative input up to exactly 2*pi
    return np.where(out >= TWO_PI, out - TWO_PI, out)


def project_alpha(x: float, alpha_max: float) -> float:
    if alpha_max <= 0:
        raise DomainError(f"alpha_max must be positive, got {alpha_max}")
    return float(min(max(x, ALPHA_FLOOR_RATIO * alpha_max), alpha_max))


def band_pattern(
    bands: Sequence[Tuple[float, float]], grid_step: float = 0.1
) -> Tuple[Tuple[float, ...], Tuple[float, ...], Tuple[float, ...]]:
    """
    Uniform grid over (-90, 90) with unit desired power inside each inclusive band.

    Returns (beam_grid, desired_pattern, band_centers).
    """
    if grid_step <= 0 or grid_step >= 180:
        raise DomainError(f"grid_step must lie in (0, 180), got {grid_step}")
    if not bands:
        raise DomainError("at least one band is required")
    for lo, hi in bands:
        if lo > hi:
            raise DomainError(f"band [{lo}, {hi}] is reversed")

    count = int(math.ceil(180.0 / grid_step - 1e-9))
    angles = -90.0 + grid_step * np.arange(1, count)
    angles = angles[angles < 90.0 - BAND_EDGE_TOL_DEG]

    desired = np.zeros_like(angles)
    for lo, hi in bands:
        inside = (angles >= lo - BAND_EDGE_TOL_DEG) & (angles <= hi + BAND_EDGE_TOL_DEG)
        desired[inside] = 1.0
    centers = tuple(0.5 * (lo + hi) for lo, hi in bands)
    return tuple(angles.tolist()), tuple(desired.tolist()), centers


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def build_scenario(spec: DesignSpec) -> Scenario:
    """Precompute steering vectors, the scalar p and the Lipschitz constants."""
    from .objective import lipschitz_constants

    desired = np.asarray(spec.desired_pattern, dtype=float)
    p_scalar = float(np.sum(desired**2))
    scenario = Scenario(
        spec=spec,
        steering_beam=_readonly(steering_matrix(spec.beam_grid, spec.M)),
        steering_corr=_readonly(steering_matrix(spec.corr_angles, spec.M)),
        desired=_readonly(desired),
        p_scalar=p_scalar,
        lipschitz=lipschitz_constants(spec, p_scalar),
    )
    logger.debug(
        "scenario M=%d N=%d |grid|=%d K=%d lags=%s p=%.6g",
        spec.M, spec.N, spec.grid_size, spec.K, spec.lag_set, p_scalar,
    )
    return scenario


def random_phases(shape: Tuple[int, int], rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """I.i.d. uniform phases on [0, 2*pi)."""
    rng = rng if rng is not None else np.random.default_rng()
    return wrap_phase(rng.uniform(0.0, TWO_PI, size=shape))
