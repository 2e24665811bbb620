"""
Consensus ADMM for constant-modulus waveform design.

One iteration runs in two phases:

  1. alpha and Phi from the majorized mismatch plus the consensus terms, both
     computed from the same (alpha^k, Phi^k) snapshot; Phi is wrapped onto [0, 2 pi).
  2. for every lag n, Phi_n from the majorized f_n followed by dual ascent on Lambda_n.

Per-lag gradients run on a thread pool. Every reduction over lags runs in
lag_set order, so traces do not depend on the worker count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat

from .audit import AuditReport, LagrangianAudit, penalty_condition
from .exceptions import DomainError, SolverDivergedError
from .model import (
    TWO_PI,
    LipschitzConstants,
    Scenario,
    project_alpha,
    random_phases,
    synthesize_waveform,
    wrap_phase,
)
from .objective import (
    beampattern,
    corr_penalty,
    f_lag,
    grad_f_lag,
    grad_h,
    lag_gradients,
    mismatch_e,
)

logger = logging.getLogger(__name__)

StopReason = Literal["residual-tolerance", "iteration-cap"]

# Below this the practical penalty max|grad f_n(Phi^1)| is treated as zero.
RHO_FLOOR = 1e-12
THEORY_RHO_FACTOR = 9.0


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rho_mode: Literal["theory", "practical"] = "practical"
    tol_residual: PositiveFloat = 1e-4
    max_iterations: int = Field(60000, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2**64)
    lipschitz_scale: PositiveFloat = 1.0
    record_lagrangian: bool = False
    variant: Literal["admm", "sbcd", "agd"] = "admm"
    sbcd_fraction: float = Field(0.25, gt=0.0, le=1.0)
    agd_t: float = Field(3.0, ge=3.0)
    agd_dual: Literal["minimizer", "extrapolated"] = "minimizer"
    agd_restart: bool = True
    agd_restart_eta: float = Field(0.999, gt=0.0, le=1.0)
    dual_init: Literal["zero", "gradient"] = "zero"
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    audit: bool = False
    audit_strict: bool = False
    log_every: int = Field(1000, ge=0)


@dataclass
class SolverState:
    """
    Mutable ADMM state. Per-lag arrays are stacked along axis 0 in lag_set order.

    ``phi_n_prev`` holds Phi_n^k during and after iteration k (on the branch of
    Phi^{k+1}); ``phi_n_hat`` is only used by the momentum variant.
    ``identity_holds[slot]`` records whether Lambda_n = -grad f_n(Phi) - L_n (Phi_n - Phi)
    holds for the current iterate.
    """

    lags: Tuple[int, ...]
    alpha: float
    phi: np.ndarray
    phi_n: np.ndarray
    lambda_n: np.ndarray
    rho_n: np.ndarray
    lipschitz: LipschitzConstants
    rng: np.random.Generator
    k: int = 1
    phi_n_prev: Optional[np.ndarray] = None
    phi_n_hat: Optional[np.ndarray] = None
    identity_holds: Optional[np.ndarray] = None

    def slot(self, n: int) -> int:
        try:
            return self.lags.index(n)
        except ValueError:
            raise DomainError(f"lag {n} is not in the lag set {self.lags}") from None


@dataclass
class IterationRecord:
    k: int
    e_value: float
    pc_value: float
    objective: float
    residual_consensus: float
    residual_successive: float
    alpha: float
    lagrangian: Optional[float] = None
    gamma: Optional[float] = None
    selected: Optional[int] = None


@dataclass
class SolverResult:
    alpha: float
    phi: np.ndarray
    waveform: np.ndarray
    trace: List[IterationRecord]
    stop_reason: StopReason
    iterations: int
    state: SolverState
    audit: Optional[AuditReport] = None

    @property
    def solution(self) -> dict:
        return {"alpha": self.alpha, "phi": self.phi, "waveform": self.waveform}


def penalty_parameters(grads: np.ndarray, L_n: np.ndarray, mode: str) -> np.ndarray:
    """rho_n = 9 L_n (theory) or max|grad f_n(Phi^1)| with a 9 L_n fallback (practical)."""
    theory = THEORY_RHO_FACTOR * np.asarray(L_n, dtype=float)
    if mode == "theory":
        return theory.copy()
    if mode != "practical":
        raise DomainError(f"unknown rho_mode {mode!r}")
    peaks = np.max(np.abs(grads), axis=(1, 2)) if grads.size else np.zeros(len(theory))
    return np.where(peaks < RHO_FLOOR, theory, peaks)


def init_state(scenario: Scenario, config: SolverConfig) -> SolverState:
    rng = np.random.default_rng(config.rng_seed)
    phi = random_phases(scenario.shape, rng)
    lipschitz = scenario.lipschitz.scaled(config.lipschitz_scale)

    power = beampattern(phi, scenario)
    alpha = project_alpha(float(scenario.desired @ power) / scenario.p_scalar, scenario.spec.alpha_max)

    grads = lag_gradients(phi, scenario)
    rho_n = penalty_parameters(grads, lipschitz.L_n, config.rho_mode)
    phi_n = np.repeat(phi[None, :, :], len(scenario.lags), axis=0)

    if config.dual_init == "gradient":
        lambda_n = -grads
        identity = np.ones(len(scenario.lags), dtype=bool)
    else:
        lambda_n = np.zeros_like(phi_n)
        identity = np.array([not np.any(g) for g in grads], dtype=bool)

    return SolverState(
        lags=scenario.lags,
        alpha=alpha,
        phi=phi,
        phi_n=phi_n,
        lambda_n=lambda_n,
        rho_n=rho_n,
        lipschitz=lipschitz,
        rng=rng,
        phi_n_prev=phi_n.copy(),
        identity_holds=identity,
    )


def update_alpha_phi(state: SolverState, scenario: Scenario) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Step 1 from the snapshot (alpha^k, Phi^k). Does not modify ``state``.

    Returns (alpha^{k+1}, Phi^{k+1}, unwrapped Phi^{k+1}).
    """
    d_alpha, d_phi = grad_h(state.alpha, state.phi, scenario)
    if not (np.isfinite(d_alpha) and np.all(np.isfinite(d_phi))):
        raise SolverDivergedError("non-finite gradient of the beampattern mismatch", state.k)

    lip = state.lipschitz
    alpha = project_alpha(state.alpha - d_alpha / lip.L_alpha, scenario.spec.alpha_max)

    consensus = np.zeros_like(state.phi)
    for slot in range(len(state.lags)):
        consensus += state.lambda_n[slot] + state.rho_n[slot] * state.phi_n[slot]
    raw = (lip.L_phi * state.phi - d_phi + consensus) / (lip.L_phi + float(np.sum(state.rho_n)))
    if not np.all(np.isfinite(raw)):
        raise SolverDivergedError("non-finite consensus phase", state.k)
    return alpha, wrap_phase(raw), raw


def align_branches(state: SolverState, phi_raw: np.ndarray, phi_wrapped: np.ndarray) -> None:
    """Shift stored Phi_n (and Phi_n hat) by the whole turns Phi lost when it was wrapped."""
    turns = np.rint((phi_raw - phi_wrapped) / TWO_PI)
    moved = turns != 0
    if not np.any(moved):
        return
    shift = TWO_PI * turns
    state.phi_n = np.where(moved, state.phi_n - shift, state.phi_n)
    if state.phi_n_hat is not None:
        state.phi_n_hat = np.where(moved, state.phi_n_hat - shift, state.phi_n_hat)


def majorized_lag_minimizer(state: SolverState, slot: int, grad: np.ndarray) -> np.ndarray:
    return state.phi - (grad + state.lambda_n[slot]) / (state.rho_n[slot] + state.lipschitz.L_n[slot])


def update_phi_n(
    state: SolverState, scenario: Scenario, n: int, grad: Optional[np.ndarray] = None
) -> np.ndarray:
    """Phi_n = Phi - (grad f_n(Phi) + Lambda_n) / (rho_n + L_n). Left unwrapped."""
    slot = state.slot(n)
    if grad is None:
        grad = grad_f_lag(state.phi, scenario, n)
    value = majorized_lag_minimizer(state, slot, grad)
    state.phi_n[slot] = value
    return value


def update_lambda_n(state: SolverState, n: int, anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """Lambda_n += rho_n (anchor - Phi); the anchor defaults to Phi_n."""
    slot = state.slot(n)
    if anchor is None:
        anchor = state.phi_n[slot]
    value = state.lambda_n[slot] + state.rho_n[slot] * (anchor - state.phi)
    state.lambda_n[slot] = value
    return value


def residuals(state: SolverState) -> Tuple[float, float]:
    """(sum_n ||Phi_n - Phi||_F, sum_n ||Phi_n - Phi_n prev||_F)."""
    prev = state.phi_n if state.phi_n_prev is None else state.phi_n_prev
    consensus = 0.0
    successive = 0.0
    for slot in range(len(state.lags)):
        consensus += float(np.linalg.norm(state.phi_n[slot] - state.phi))
        successive += float(np.linalg.norm(state.phi_n[slot] - prev[slot]))
    return consensus, successive


def augmented_lagrangian(state: SolverState, scenario: Scenario) -> float:
    value = mismatch_e(state.alpha, state.phi, scenario)
    for slot, n in enumerate(scenario.lags):
        gap = state.phi_n[slot] - state.phi
        value += f_lag(state.phi_n[slot], scenario, n)
        value += float(np.sum(state.lambda_n[slot] * gap))
        value += 0.5 * state.rho_n[slot] * float(np.sum(gap * gap))
    return value


class ConsensusADMM:
    """
    The consensus-ADMM loop with two hooks for the variants:

      select_lags(k)              boolean mask of lag slots updated in iteration k
      lag_phase_step(slot, grad)  writes and returns the new Phi_n for one slot
      dual_step(slot)             multiplier update for one slot after its phase step
    """

    keeps_dual_identity = True

    def __init__(self, scenario: Scenario, config: SolverConfig, state: Optional[SolverState] = None):
        self.scenario = scenario
        self.config = config
        self.state = state if state is not None else self.init_state()
        if self.state.identity_holds is None:
            self.state.identity_holds = np.zeros(len(scenario.lags), dtype=bool)
        self.audit = self.make_audit() if config.audit else None
        self.trace: List[IterationRecord] = []
        self._executor: Optional[ThreadPoolExecutor] = None
        self._lagrangian: Optional[float] = None

    def init_state(self) -> SolverState:
        return init_state(self.scenario, self.config)

    def make_audit(self) -> LagrangianAudit:
        condition = penalty_condition(self.state.rho_n, self.state.lipschitz.L_n)
        return LagrangianAudit(
            condition,
            lipschitz_valid=self.config.lipschitz_scale >= 1.0,
            strict=self.config.audit_strict,
        )

    def select_lags(self, k: int) -> np.ndarray:
        return np.ones(len(self.scenario.lags), dtype=bool)

    def lag_phase_step(self, slot: int, grad: np.ndarray) -> np.ndarray:
        return update_phi_n(self.state, self.scenario, self.scenario.lags[slot], grad=grad)

    def dual_step(self, slot: int) -> np.ndarray:
        return update_lambda_n(self.state, self.scenario.lags[slot])

    def momentum(self, k: int) -> Optional[float]:
        return None

    def audit_scope(self, k: int, identity_at_start: np.ndarray, updated: np.ndarray) -> dict:
        full = bool(np.all(updated))
        return {
            "descent_eligible": full and bool(np.all(identity_at_start)),
            "bound_eligible": full,
            "identity_slots": np.flatnonzero(updated),
            "dual_bound_slots": np.flatnonzero(updated & identity_at_start),
        }

    def step(self) -> IterationRecord:
        st, sc = self.state, self.scenario
        k = st.k
        track = self.audit is not None or self.config.record_lagrangian
        if self.audit is not None and self._lagrangian is None:
            self._lagrangian = augmented_lagrangian(st, sc)

        # phase 1
        phi_prev = st.phi
        alpha, phi, phi_raw = update_alpha_phi(st, sc)
        align_branches(st, phi_raw, phi)
        st.alpha, st.phi = alpha, phi
        st.phi_n_prev = st.phi_n.copy()
        lambda_prev = st.lambda_n.copy()

        # phase 2
        updated = np.asarray(self.select_lags(k), dtype=bool)
        slots = np.flatnonzero(updated)
        grads = np.zeros_like(st.phi_n)
        if len(slots):
            lags = [sc.lags[s] for s in slots]
            grads[slots] = lag_gradients(phi, sc, lags=lags, executor=self._executor)
        for slot in slots:
            self.lag_phase_step(int(slot), grads[slot])
            self.dual_step(int(slot))
        if not (np.all(np.isfinite(st.phi_n)) and np.all(np.isfinite(st.lambda_n))):
            raise SolverDivergedError("non-finite per-lag iterate", k)

        identity_at_start = st.identity_holds.copy()
        if self.keeps_dual_identity:
            unchanged = bool(np.array_equal(phi, phi_prev))
            st.identity_holds = updated | (identity_at_start & unchanged)
        else:
            st.identity_holds = np.zeros_like(updated)

        r_consensus, r_successive = residuals(st)
        e_value = mismatch_e(alpha, phi, sc)
        pc_value = corr_penalty(phi, sc)
        lagrangian = augmented_lagrangian(st, sc) if track else None

        if self.audit is not None:
            self.audit.observe(
                k,
                self._lagrangian,
                lagrangian,
                **self.audit_scope(k, identity_at_start, updated),
                grads=grads,
                lambda_prev=lambda_prev,
                lambda_next=st.lambda_n,
                phi_n_prev=st.phi_n_prev,
                phi_n_next=st.phi_n,
                phi_next=phi,
                step_phi=phi_raw - phi_prev,
                rho_n=st.rho_n,
                L_n=st.lipschitz.L_n,
            )
        self._lagrangian = lagrangian

        st.k += 1
        return IterationRecord(
            k=k,
            e_value=e_value,
            pc_value=pc_value,
            objective=e_value + pc_value,
            residual_consensus=r_consensus,
            residual_successive=r_successive,
            alpha=alpha,
            lagrangian=lagrangian,
            gamma=self.momentum(k),
            selected=int(len(slots)),
        )

    def _log_start(self) -> None:
        st = self.state
        lip = st.lipschitz
        condition = penalty_condition(st.rho_n, lip.L_n)
        logger.info(
            "%s: M=%d N=%d |lags|=%d L_alpha=%.6g L=%.6g L_n=%.6g rho=[%.6g, %.6g] rho_mode=%s",
            type(self).__name__,
            self.scenario.spec.M,
            self.scenario.spec.N,
            len(st.lags),
            lip.L_alpha,
            lip.L_phi,
            float(lip.L_n[0]),
            float(np.min(st.rho_n)),
            float(np.max(st.rho_n)),
            self.config.rho_mode,
        )
        logger.info(
            "penalty condition %s",
            "satisfied" if condition.descent_certified else "not satisfied (no descent certificate)",
        )

    def solve(
        self,
        callback: Optional[Callable[["ConsensusADMM", IterationRecord], None]] = None,
        keep_trace: bool = True,
    ) -> SolverResult:
        """
        Iterate until both residuals fall below ``tol_residual`` or the iteration cap.

        ``callback(solver, record)`` runs after every iteration; with
        ``keep_trace=False`` records are only handed to the callback.
        """
        cfg = self.config
        self._log_start()
        stop: StopReason = "iteration-cap"
        workers = min(cfg.threads, len(self.scenario.lags))
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self._executor = pool
        try:
            while self.state.k <= cfg.max_iterations:
                record = self.step()
                if keep_trace:
                    self.trace.append(record)
                if callback is not None:
                    callback(self, record)
                if cfg.log_every and record.k % cfg.log_every == 0:
                    logger.info(
                        "k=%d objective=%.6g e=%.6g pc=%.6g res=(%.3g, %.3g)",
                        record.k,
                        record.objective,
                        record.e_value,
                        record.pc_value,
                        record.residual_consensus,
                        record.residual_successive,
                    )
                if record.residual_consensus < cfg.tol_residual and record.residual_successive < cfg.tol_residual:
                    stop = "residual-tolerance"
                    break
        finally:
            self._executor = None
            if pool is not None:
                pool.shutdown()

        st = self.state
        logger.info("stopped after %d iterations: %s", st.k - 1, stop)
        return SolverResult(
            alpha=st.alpha,
            phi=st.phi.copy(),
            waveform=synthesize_waveform(st.phi),
            trace=self.trace,
            stop_reason=stop,
            iterations=st.k - 1,
            state=st,
            audit=None if self.audit is None else self.audit.report,
        )


def run(
    scenario: Scenario,
    config: SolverConfig,
    callback: Optional[Callable[[ConsensusADMM, IterationRecord], None]] = None,
    keep_trace: bool = True,
) -> SolverResult:
    """Base consensus ADMM; ``config.variant`` is ignored here, see ``variants.solve_variant``."""
    return ConsensusADMM(scenario, config).solve(callback=callback, keep_trace=keep_trace)
