"""Fixed-point solver for the equilibrium CCP vector and its stationary state law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import D_P, N_STATES, GameSpec, best_response, transition_matrix


@dataclass(frozen=True)
class EquilibriumSolution:
    p_star: np.ndarray      # length-8 CCP vector
    m_star: np.ndarray      # length-4 stationary state law
    residual: float         # max-norm fixed-point residual
    iterations: int


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def default_start() -> np.ndarray:
    """Canonical starting point: all choice probabilities at one half."""
    return np.full(D_P, 0.5)


def solve_equilibrium(spec: GameSpec, p_init: np.ndarray | None = None,
                      tol: float = 1e-12, max_iter: int = 10_000,
                      alpha: np.ndarray | None = None) -> EquilibriumSolution:
    """Solve P = Psi(alpha, P) by damped iteration with a Newton fallback.

    Starts with undamped iteration (rho = 1), drops to rho = 0.5 if the
    residual oscillates, and switches to Newton steps on the residual map
    (with a finite-difference Jacobian) if damped iteration stalls.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = spec.alpha if alpha is None else np.asarray(alpha, dtype=float)
    p = default_start() if p_init is None else np.asarray(p_init, dtype=float).copy()
    rho = 1.0
    prev_res = np.inf
    worse_count = 0
    newton_from = None
    for it in range(1, max_iter + 1):
        psi = best_response(a, p, spec)
        res = float(np.max(np.abs(psi - p)))
        if res <= tol:
            m = stationary_distribution(psi, spec)
            return EquilibriumSolution(p_star=psi, m_star=m, residual=res, iterations=it)
        if res > prev_res:
            worse_count += 1
            if worse_count >= 5 and rho == 1.0:
                rho = 0.5
                worse_count = 0
            elif worse_count >= 20:
                newton_from = p
        prev_res = res
        if newton_from is not None:
            p = _newton_step(a, p, psi, spec)
            newton_from = None
        else:
            p = (1.0 - rho) * p + rho * psi
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
    raise ConvergenceError(
        f"equilibrium solve did not converge in {max_iter} iterations "
        f"(last residual {prev_res:.3e})", prev_res)


def _newton_step(alpha: np.ndarray, p: np.ndarray, psi: np.ndarray,
                 spec: GameSpec) -> np.ndarray:
    """One Newton step on R(p) = Psi(p) - p using a central-difference Jacobian."""
    h = 1e-7
    J = np.empty((D_P, D_P))
    for i in range(D_P):
        dp = np.zeros(D_P)
        dp[i] = h
        J[:, i] = (best_response(alpha, p + dp, spec)
                   - best_response(alpha, p - dp, spec)) / (2 * h)
    try:
        step = np.linalg.solve(J - np.eye(D_P), -(psi - p))
    except np.linalg.LinAlgError:
        return psi
    out = p - step
    if not np.all((out > 0.0) & (out < 1.0)):
        return psi
    return out


def stationary_distribution(p: np.ndarray, spec: GameSpec) -> np.ndarray:
    """Stationary law of the state chain induced by CCP vector p."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("stationary_distribution requires an interior CCP vector")
    F = transition_matrix(p)
    A = F.T - np.eye(N_STATES)
    A[-1, :] = 1.0
    b = np.zeros(N_STATES)
    b[-1] = 1.0
    try:
        m = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("induced chain has no unique stationary law") from exc
    if np.any(m < -1e-12):
        raise ValueError("stationary law has negative entries (reducible chain?)")
    m = np.clip(m, 0.0, None)
    return m / m.sum()
