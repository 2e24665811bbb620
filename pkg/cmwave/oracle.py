"""
Brute-force reference evaluators used by the test-suite.

Everything here builds the dense objects the fast paths avoid (the
(M^2+1) x (M^2+1) quadratic-form matrix, explicit shift matrices) and is
size-guarded so it cannot be used at production scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DomainError, NumericError, OracleGuardError
from .model import Scenario, synthesize_waveform
from .objective import lag_weights

MAX_ORACLE_ANTENNAS = 6
MAX_ORACLE_LENGTH = 64


def _vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return matrix.reshape(-1, order="F")


@dataclass(frozen=True)
class ExplicitQ:
    """Q = [[p, q^H], [q, A]] with A = sum a a^H and q = -sum P_bar a over a = vec(a_theta a_theta^H)."""

    matrix: np.ndarray
    p: float
    q: np.ndarray
    A: np.ndarray
    M: int


def explicit_Q(scenario: Scenario) -> ExplicitQ:
    m = scenario.spec.M
    if m > MAX_ORACLE_ANTENNAS:
        raise OracleGuardError(f"explicit Q needs M <= {MAX_ORACLE_ANTENNAS}, got {m}")

    size = m * m
    A = np.zeros((size, size), dtype=complex)
    q = np.zeros(size, dtype=complex)
    for t in range(scenario.steering_beam.shape[1]):
        a = scenario.steering_beam[:, t]
        outer = _vec(np.outer(a, a.conj()))
        A += np.outer(outer, outer.conj())
        q -= scenario.desired[t] * outer
    p = float(np.sum(scenario.desired**2))

    matrix = np.zeros((size + 1, size + 1), dtype=complex)
    matrix[0, 0] = p
    matrix[0, 1:] = q.conj()
    matrix[1:, 0] = q
    matrix[1:, 1:] = A
    return ExplicitQ(matrix=matrix, p=p, q=q, A=A, M=m)


def quadratic_form(v: np.ndarray, q_explicit: ExplicitQ) -> complex:
    if v.shape != (q_explicit.matrix.shape[0],):
        raise DomainError(f"vector of shape {v.shape} does not match Q of size {q_explicit.matrix.shape[0]}")
    return complex(np.vdot(v, q_explicit.matrix @ v))


def h_via_Q(alpha: float, phi: np.ndarray, q_explicit: ExplicitQ) -> float:
    """v^H Q v with v = [alpha; vec(X^H X)]."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[1] != q_explicit.M:
        raise DomainError(f"phase matrix of shape {phi.shape} does not match M = {q_explicit.M}")
    x = synthesize_waveform(phi)
    gram = x.conj().T @ x
    v = np.concatenate(([complex(alpha)], _vec(gram)))
    return quadratic_form(v, q_explicit).real


def correlation_direct(phi: np.ndarray, scenario: Scenario, i: int, j: int, n: int) -> complex:
    """a_i^H X^H S_n X a_j with (S_n)[t, t+n] = 1; negative lags are allowed."""
    length = scenario.spec.N
    if length > MAX_ORACLE_LENGTH:
        raise OracleGuardError(f"explicit shift matrix needs N <= {MAX_ORACLE_LENGTH}, got {length}")
    k = scenario.spec.K
    if not (0 <= i < k and 0 <= j < k):
        raise DomainError(f"correlation angle index out of range: ({i}, {j}) with K={k}")
    shift = np.eye(length, k=n)
    x = synthesize_waveform(phi)
    a_i = scenario.steering_corr[:, i]
    a_j = scenario.steering_corr[:, j]
    return complex(a_i.conj() @ x.conj().T @ shift @ x @ a_j)


def explicit_B(phi: np.ndarray, scenario: Scenario, n: int) -> np.ndarray:
    """Weighted K x K correlation matrix whose squared Frobenius norm is f_n."""
    k = scenario.spec.K
    weights = np.sqrt(lag_weights(scenario.spec, n))
    values = np.array(
        [[correlation_direct(phi, scenario, i, j, n) for j in range(k)] for i in range(k)]
    )
    return weights * values


def finite_diff_grad(fun: Callable[[np.ndarray], float], point: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences (f(x + h e) - f(x - h e)) / 2h, one coordinate at a time."""
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    base = np.array(point, dtype=float)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        keep = flat[idx]
        flat[idx] = keep + step
        upper = float(fun(base))
        flat[idx] = keep - step
        lower = float(fun(base))
        flat[idx] = keep
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError(f"function is not finite near coordinate {idx}")
        out[idx] = (upper - lower) / (2.0 * step)
    return grad
