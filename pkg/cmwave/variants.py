"""
Randomized-subset (SBCD) and momentum (AGD) variants of the consensus ADMM loop.

SBCD updates each lag block independently with probability p_n per iteration;
lags left out keep their Phi_n and Lambda_n. AGD extrapolates the per-lag phase
minimizers with gamma_k = (k-1)/(k+t-1), restarting the momentum when the
residuals stop shrinking; it carries no descent guarantee.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from .audit import LagrangianAudit, penalty_condition
from .exceptions import DomainError
from .model import Scenario
from .solver import (
    ConsensusADMM,
    IterationRecord,
    SolverConfig,
    SolverResult,
    SolverState,
    majorized_lag_minimizer,
    update_lambda_n,
)

logger = logging.getLogger(__name__)

Callback = Optional[Callable[[ConsensusADMM, IterationRecord], None]]


class SbcdPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    probabilities: Tuple[float, ...] = Field(..., min_length=1)
    p_min: PositiveFloat

    @model_validator(mode="after")
    def _bounded(self) -> "SbcdPolicy":
        for p in self.probabilities:
            if not (self.p_min <= p <= 1.0):
                raise ValueError(f"selection probability {p} outside [p_min={self.p_min}, 1]")
        return self

    @classmethod
    def uniform(cls, count: int, fraction: float) -> "SbcdPolicy":
        return cls(probabilities=(fraction,) * count, p_min=fraction)


class AgdPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t: float = Field(3.0, ge=3.0)

    def gamma(self, k: int) -> float:
        if k < 1:
            raise DomainError(f"iteration index must be >= 1, got {k}")
        if math.isinf(self.t):
            return 0.0
        return (k - 1) / (k + self.t - 1)


def sbcd_select(lag_set: Sequence[int], policy: SbcdPolicy, rng: np.random.Generator) -> Tuple[int, ...]:
    """Independent Bernoulli(p_n) draw per lag. The subset may be empty."""
    if len(policy.probabilities) != len(lag_set):
        raise DomainError(
            f"policy has {len(policy.probabilities)} probabilities for {len(lag_set)} lags"
        )
    keep = rng.random(len(lag_set)) < np.asarray(policy.probabilities)
    return tuple(lag for lag, chosen in zip(lag_set, keep) if chosen)


def agd_extrapolate(hat_next: np.ndarray, hat_prev: np.ndarray, k: int, policy: AgdPolicy) -> np.ndarray:
    gamma = policy.gamma(k)
    if gamma == 0.0:
        return np.array(hat_next, dtype=float, copy=True)
    return hat_next + gamma * (hat_next - hat_prev)


class SbcdConsensusADMM(ConsensusADMM):
    def __init__(
        self,
        scenario: Scenario,
        config: SolverConfig,
        state: Optional[SolverState] = None,
        policy: Optional[SbcdPolicy] = None,
    ):
        self.policy = policy or SbcdPolicy.uniform(len(scenario.lags), config.sbcd_fraction)
        super().__init__(scenario, config, state)

    def select_lags(self, k: int) -> np.ndarray:
        chosen = sbcd_select(self.scenario.lags, self.policy, self.state.rng)
        return np.isin(np.asarray(self.scenario.lags), chosen)


class AgdConsensusADMM(ConsensusADMM):
    """
    Momentum on the per-lag phases.

    With ``agd_dual="minimizer"`` the multiplier moves with the un-extrapolated
    minimizer, Lambda_n += rho_n (Phi_hat_n - Phi), so Lambda_n = -grad f_n(Phi)
    - L_n (Phi_hat_n - Phi) holds as in the base loop and momentum reaches Phi only
    through rho_n Phi_n. ``"extrapolated"`` feeds the extrapolated Phi_n to the
    multiplier; there the momentum accumulates in Lambda_n and is amplified by
    gamma sum(rho_n + L_n) / (L + sum(rho_n)) in the Phi step, which passes 1 for
    moderate gamma once sum(L_n) exceeds L.

    With ``agd_restart`` the momentum counter starts over whenever the combined
    residual fails to shrink by the factor ``agd_restart_eta``.
    """

    keeps_dual_identity = False

    def __init__(
        self,
        scenario: Scenario,
        config: SolverConfig,
        state: Optional[SolverState] = None,
        policy: Optional[AgdPolicy] = None,
    ):
        self.policy = policy or AgdPolicy(t=config.agd_t)
        super().__init__(scenario, config, state)
        if self.state.phi_n_hat is None:
            self.state.phi_n_hat = self.state.phi_n.copy()
        self.momentum_origin = self.state.k
        self.restarts = 0
        self._residual_ref: Optional[float] = None

    def make_audit(self) -> LagrangianAudit:
        # heuristic variant: violations are logged, never raised
        condition = penalty_condition(self.state.rho_n, self.state.lipschitz.L_n)
        return LagrangianAudit(condition, lipschitz_valid=self.config.lipschitz_scale >= 1.0, strict=False)

    def momentum_index(self, k: int) -> int:
        return k - self.momentum_origin + 1

    def momentum(self, k: int) -> float:
        return self.policy.gamma(self.momentum_index(k))

    def lag_phase_step(self, slot: int, grad: np.ndarray) -> np.ndarray:
        st = self.state
        hat = majorized_lag_minimizer(st, slot, grad)
        value = agd_extrapolate(hat, st.phi_n_hat[slot], self.momentum_index(st.k), self.policy)
        st.phi_n_hat[slot] = hat
        st.phi_n[slot] = value
        return value

    def dual_step(self, slot: int) -> np.ndarray:
        st = self.state
        anchor = st.phi_n_hat[slot] if self.config.agd_dual == "minimizer" else None
        return update_lambda_n(st, self.scenario.lags[slot], anchor=anchor)

    def observe_residual(self, record: IterationRecord) -> bool:
        """Restart the momentum after ``record`` when its combined residual did not shrink."""
        combined = record.residual_consensus + record.residual_successive
        eta = self.config.agd_restart_eta
        ref = self._residual_ref
        if ref is None or combined < eta * ref:
            self._residual_ref = combined
            return False
        self._residual_ref = ref / eta
        self.momentum_origin = record.k + 1
        self.restarts += 1
        logger.debug("k=%d momentum restart (residual %.3g, reference %.3g)", record.k, combined, ref)
        return True

    def step(self) -> IterationRecord:
        record = super().step()
        if self.config.agd_restart:
            self.observe_residual(record)
        return record

    def solve(self, callback: Callback = None, keep_trace: bool = True) -> SolverResult:
        result = super().solve(callback=callback, keep_trace=keep_trace)
        logger.info("momentum restarts: %d", self.restarts)
        return result

    def audit_scope(self, k: int, identity_at_start: np.ndarray, updated: np.ndarray) -> dict:
        settled = k >= 2 or self.config.dual_init == "gradient"
        return {
            "descent_eligible": settled,
            "bound_eligible": settled,
            "identity_slots": (),
            "dual_bound_slots": (),
        }


def run_sbcd(
    scenario: Scenario,
    config: SolverConfig,
    callback: Callback = None,
    keep_trace: bool = True,
    policy: Optional[SbcdPolicy] = None,
) -> SolverResult:
    return SbcdConsensusADMM(scenario, config, policy=policy).solve(callback=callback, keep_trace=keep_trace)


def run_agd(
    scenario: Scenario,
    config: SolverConfig,
    callback: Callback = None,
    keep_trace: bool = True,
    policy: Optional[AgdPolicy] = None,
) -> SolverResult:
    return AgdConsensusADMM(scenario, config, policy=policy).solve(callback=callback, keep_trace=keep_trace)


SOLVERS = {
    "admm": ConsensusADMM,
    "sbcd": SbcdConsensusADMM,
    "agd": AgdConsensusADMM,
}


def solve_variant(
    scenario: Scenario, config: SolverConfig, callback: Callback = None, keep_trace: bool = True
) -> SolverResult:
    """Run the algorithm named by ``config.variant``."""
    solver = SOLVERS[config.variant](scenario, config)
    logger.debug("variant %s", config.variant)
    return solver.solve(callback=callback, keep_trace=keep_trace)
