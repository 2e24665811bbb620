"""
Numerical audits of the consensus-ADMM convergence guarantees.

Each iteration can be checked against:

  - descent:        L(k+1) <= L(k) up to 1e-9 * (1 + |L(k)|)
  - lower bound:    L(k+1) >= -1e-9
  - dual identity:  Lambda_n = -grad f_n(Phi) - L_n (Phi_n - Phi) after the update
  - dual bound:     ||dLambda_n||^2 <= 2 L_n^2 (2 ||dPhi_n||^2 + 3 ||dPhi||^2)

Descent and the dual bound are derived assuming the dual identity already held at
the start of the step, so they are only checked on such steps. The penalty
condition decides whether descent and the lower bound are claimed at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import AuditViolation

logger = logging.getLogger(__name__)

DESCENT_RTOL = 1e-9
LOWER_BOUND_FLOOR = -1e-9
IDENTITY_ATOL = 1e-9
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class PenaltyCondition:
    """Sign of the cubic conditions behind rho_n >= 9 L_n, per lag."""

    c_bar: np.ndarray
    c_tilde: np.ndarray
    above_lower_bound: np.ndarray  # rho_n > 5 L_n

    @property
    def descent_certified(self) -> bool:
        return bool(np.all(self.c_bar > 0) and np.all(self.c_tilde > 0) and np.all(self.above_lower_bound))

    @property
    def lower_bound_certified(self) -> bool:
        return bool(np.all(self.above_lower_bound))


def penalty_condition(rho_n: np.ndarray, L_n: np.ndarray) -> PenaltyCondition:
    rho = np.asarray(rho_n, dtype=float)
    lip = np.asarray(L_n, dtype=float)
    c_bar = rho**3 - 7 * rho**2 * lip - 8 * rho * lip**2 - 32 * lip**3
    c_tilde = rho**3 - 12 * rho * lip**2 - 48 * lip**3
    return PenaltyCondition(c_bar=c_bar, c_tilde=c_tilde, above_lower_bound=rho > 5 * lip)


def sufficient_decrease_bound(
    rho_n: np.ndarray,
    L_n: np.ndarray,
    L_phi: float,
    L_alpha: float,
    step_phi_n_sq: np.ndarray,
    step_phi_sq: float,
    step_alpha: float,
) -> float:
    """Guaranteed one-step decrease of the augmented Lagrangian when the condition holds."""
    cond = penalty_condition(rho_n, L_n)
    rho = np.asarray(rho_n, dtype=float)
    per_lag = (cond.c_bar * np.asarray(step_phi_n_sq) + cond.c_tilde * step_phi_sq) / (2 * rho**2)
    return float(np.sum(per_lag) + 0.5 * L_phi * step_phi_sq + 0.5 * L_alpha * step_alpha**2)


def dual_identity_residual(
    lambda_n: np.ndarray, grad_n: np.ndarray, phi_n: np.ndarray, phi: np.ndarray, L_n: float
) -> float:
    return float(np.max(np.abs(lambda_n + grad_n + L_n * (phi_n - phi))))


def dual_identity_tolerance(
    lambda_n: np.ndarray, grad_n: np.ndarray, phi: np.ndarray, rho_n: float, L_n: float
) -> float:
    # Phi_n - Phi is a difference of O(2 pi) numbers, so its rounding error is
    # amplified by rho_n + L_n before it reaches Lambda_n.
    scale = 1.0 + float(np.max(np.abs(lambda_n))) + float(np.max(np.abs(grad_n)))
    return IDENTITY_ATOL * scale + 16 * _EPS * (rho_n + L_n) * (1.0 + float(np.max(np.abs(phi))))


@dataclass
class AuditRecord:
    k: int
    descent: float  # L(k) - L(k+1)
    lower_bound: float  # L(k+1)
    dual_identity_max: float = float("nan")
    dual_bound_lhs: float = float("nan")
    dual_bound_rhs: float = float("nan")


@dataclass
class AuditReport:
    checked: dict = field(default_factory=lambda: {"descent": 0, "lower_bound": 0, "dual_identity": 0, "dual_bound": 0})
    violations: dict = field(default_factory=lambda: {"descent": 0, "lower_bound": 0, "dual_identity": 0, "dual_bound": 0})
    records: List[AuditRecord] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not any(self.violations.values())


class LagrangianAudit:
    """
    Collects per-iteration audit records and counts violations.

    The caller decides which checks apply on each iteration (``descent_eligible``,
    ``identity_slots``, ``dual_bound_slots``); this class only evaluates them.
    ``strict`` turns a violation into AuditViolation.
    """

    def __init__(
        self,
        condition: PenaltyCondition,
        lipschitz_valid: bool = True,
        strict: bool = False,
        keep_records: bool = True,
    ):
        self.condition = condition
        self.descent_certified = condition.descent_certified and lipschitz_valid
        self.lower_bound_certified = condition.lower_bound_certified and lipschitz_valid
        self.strict = strict
        self.keep_records = keep_records
        self.report = AuditReport()
        if not self.descent_certified:
            logger.info("penalty condition not met; descent and dual-bound audits skipped")

    def _flag(self, kind: str, k: int, message: str) -> None:
        self.report.violations[kind] += 1
        text = f"iteration {k}: {kind} audit failed: {message}"
        if self.strict:
            raise AuditViolation(text)
        logger.warning(text)

    def observe(
        self,
        k: int,
        lagrangian_prev: float,
        lagrangian_next: float,
        *,
        descent_eligible: bool,
        bound_eligible: bool,
        identity_slots: Sequence[int],
        dual_bound_slots: Sequence[int],
        grads: np.ndarray,
        lambda_prev: np.ndarray,
        lambda_next: np.ndarray,
        phi_n_prev: np.ndarray,
        phi_n_next: np.ndarray,
        phi_next: np.ndarray,
        step_phi: np.ndarray,
        rho_n: np.ndarray,
        L_n: np.ndarray,
    ) -> AuditRecord:
        """Check one iteration. ``phi_n_prev`` must already be on the branch of ``phi_next``."""
        record = AuditRecord(k=k, descent=lagrangian_prev - lagrangian_next, lower_bound=lagrangian_next)
        report = self.report

        if self.descent_certified and descent_eligible:
            report.checked["descent"] += 1
            if record.descent < -DESCENT_RTOL * (1.0 + abs(lagrangian_prev)):
                self._flag("descent", k, f"L rose by {-record.descent:.6g}")

        if self.lower_bound_certified and bound_eligible:
            report.checked["lower_bound"] += 1
            if lagrangian_next < LOWER_BOUND_FLOOR:
                self._flag("lower_bound", k, f"L = {lagrangian_next:.6g}")

        if len(identity_slots):
            worst = 0.0
            for idx in identity_slots:
                residual = dual_identity_residual(lambda_next[idx], grads[idx], phi_n_next[idx], phi_next, L_n[idx])
                tol = dual_identity_tolerance(lambda_next[idx], grads[idx], phi_next, rho_n[idx], L_n[idx])
                worst = max(worst, residual)
                report.checked["dual_identity"] += 1
                if residual > tol:
                    self._flag("dual_identity", k, f"lag slot {idx}: residual {residual:.3g} > {tol:.3g}")
            record.dual_identity_max = worst

        if self.descent_certified and len(dual_bound_slots):
            step_phi_sq = float(np.sum(step_phi**2))
            worst_gap = -np.inf
            for idx in dual_bound_slots:
                lhs = float(np.sum((lambda_next[idx] - lambda_prev[idx]) ** 2))
                step_n_sq = float(np.sum((phi_n_next[idx] - phi_n_prev[idx]) ** 2))
                rhs = 2 * L_n[idx] ** 2 * (2 * step_n_sq + 3 * step_phi_sq)
                slack = (IDENTITY_ATOL * (1.0 + float(np.linalg.norm(lambda_next[idx])))) ** 2
                report.checked["dual_bound"] += 1
                if lhs - rhs > worst_gap:
                    worst_gap = lhs - rhs
                    record.dual_bound_lhs, record.dual_bound_rhs = lhs, rhs
                if lhs > rhs + slack:
                    self._flag("dual_bound", k, f"lag slot {idx}: {lhs:.6g} > {rhs:.6g}")

        if self.keep_records:
            report.records.append(record)
        return record


def summarize(report: Optional[AuditReport]) -> dict:
    if report is None:
        return {}
    return {"checked": dict(report.checked), "violations": dict(report.violations)}
