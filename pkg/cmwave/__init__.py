"""Constant-modulus MIMO radar probing waveform design by consensus ADMM."""

from .exceptions import (
    AuditViolation,
    ConfigError,
    DomainError,
    NumericError,
    OracleGuardError,
    SolverDivergedError,
    WaveformDesignError,
)
from .model import DesignSpec, Scenario, band_pattern, build_scenario
from .solver import ConsensusADMM, SolverConfig, SolverResult, run
from .variants import AgdConsensusADMM, SbcdConsensusADMM, run_agd, run_sbcd, solve_variant

__all__ = [
    "AgdConsensusADMM",
    "AuditViolation",
    "ConfigError",
    "ConsensusADMM",
    "DesignSpec",
    "DomainError",
    "NumericError",
    "OracleGuardError",
    "SbcdConsensusADMM",
    "Scenario",
    "SolverConfig",
    "SolverDivergedError",
    "SolverResult",
    "WaveformDesignError",
    "band_pattern",
    "build_scenario",
    "run",
    "run_agd",
    "run_sbcd",
    "solve_variant",
]
