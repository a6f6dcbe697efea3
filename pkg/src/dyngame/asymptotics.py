"""Closed-form asymptotic variance engine for the K-stage estimators.

Everything here is deterministic linear algebra at a given evaluation point:
numerical Jacobians of the best-response mapping, the stage-coefficient
matrix recursions, and the sandwich variance formulas for the K-stage
pseudo-likelihood and minimum-distance estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import D_ALPHA, D_P, GameSpec, best_response
from .sampling import CovarianceBundle


@dataclass(frozen=True)
class DerivativeBundle:
    """First derivatives of the best-response mapping at an evaluation point."""

    psi_alpha: np.ndarray               # d_P x d_alpha
    psi_p: np.ndarray                   # d_P x d_P
    psi_g: np.ndarray = field(default_factory=lambda: np.zeros((D_P, 0)))
    eval_point: tuple | None = None     # (alpha, p)

    def __post_init__(self):
        if np.linalg.matrix_rank(self.psi_alpha) < self.psi_alpha.shape[1]:
            raise ValueError("psi_alpha is rank deficient")
        stack = np.hstack([np.eye(self.psi_p.shape[0]) - self.psi_p, -self.psi_g])
        if np.linalg.matrix_rank(stack) < stack.shape[0]:
            raise ValueError("[I - psi_p, -psi_g] is not full row rank")

    @property
    def d_g(self) -> int:
        return self.psi_g.shape[1]


def numerical_jacobians(alpha: np.ndarray, p: np.ndarray, spec: GameSpec,
                        h_alpha: float = 1e-6, h_p: float = 1e-6) -> DerivativeBundle:
    """Central-difference Jacobians of the best-response mapping in (alpha, p)."""
    alpha = np.asarray(alpha, dtype=float)
    p = np.asarray(p, dtype=float)
    psi_alpha = np.empty((D_P, D_ALPHA))
    for i in range(D_ALPHA):
        h = h_alpha * max(1.0, abs(alpha[i]))
        da = np.zeros(D_ALPHA)
        da[i] = h
        psi_alpha[:, i] = (best_response(alpha + da, p, spec)
                           - best_response(alpha - da, p, spec)) / (2 * h)
    psi_p = np.empty((D_P, D_P))
    for i in range(D_P):
        dp = np.zeros(D_P)
        dp[i] = h_p
        psi_p[:, i] = (best_response(alpha, p + dp, spec)
                       - best_response(alpha, p - dp, spec)) / (2 * h_p)
    return DerivativeBundle(psi_alpha=psi_alpha, psi_p=psi_p,
                            eval_point=(alpha.copy(), p.copy()))


@dataclass(frozen=True)
class PhiSequence:
    """Stage-coefficient matrices for k = 1..K (lists indexed by k-1)."""

    phi_p: list
    phi_0: list
    phi_g: list

    @property
    def phi_p0(self) -> list:
        return [pp + p0 for pp, p0 in zip(self.phi_p, self.phi_0)]


def _resolve_weights(weights, omega_pp: np.ndarray, K: int) -> list:
    """Expand the weights argument to a list of K matrices."""
    if isinstance(weights, str):
        if weights != "pml":
            raise ValueError(f"unknown weights mode: {weights!r}")
        w = np.linalg.inv(omega_pp)
        return [w] * K
    ws = list(weights)
    if len(ws) < K:
        raise ValueError(f"need {K} weight matrices, got {len(ws)}")
    return ws[:K]


def phi_recursion(derivs: DerivativeBundle, weights, omega_pp: np.ndarray,
                  K: int) -> PhiSequence:
    """Stage-coefficient recursion.

    With Pi_k = Psi_a (Psi_a' W_k Psi_a)^-1 Psi_a' W_k:
      Phi_{k+1,P} = (I - Pi_k) Psi_P Phi_{k,P} + Pi_k
      Phi_{k+1,0} = (I - Pi_k) Psi_P Phi_{k,0}
      Phi_{k+1,g} = (I - Pi_k) (I + Psi_P Phi_{k,g})
    starting from Phi_{1,P} = 0, Phi_{1,0} = I, Phi_{1,g} = 0.  The
    pseudo-likelihood case is W_k = omega_pp^-1 for every k.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    ws = _resolve_weights(weights, omega_pp, K)
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    phi_p = [np.zeros((D_P, D_P))]
    phi_0 = [eye.copy()]
    phi_g = [np.zeros((D_P, D_P))]
    for k in range(K - 1):
        W = ws[k]
        gram = pa.T @ W @ pa
        try:
            pi = pa @ np.linalg.solve(gram, pa.T @ W)
        except np.linalg.LinAlgError as exc:
            raise ValueError("psi_alpha' W psi_alpha is singular") from exc
        proj = eye - pi
        phi_p.append(proj @ pp @ phi_p[-1] + pi)
        phi_0.append(proj @ pp @ phi_0[-1])
        phi_g.append(proj @ (eye + pp @ phi_g[-1]))
    return PhiSequence(phi_p=phi_p, phi_0=phi_0, phi_g=phi_g)


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def _sandwich(derivs: DerivativeBundle, cov: CovarianceBundle, phis: PhiSequence,
              W_last: np.ndarray, K: int) -> np.ndarray:
    """Generic K-stage sandwich variance against the full covariance stack."""
    pa, pp, pg = derivs.psi_alpha, derivs.psi_p, derivs.psi_g
    eye = np.eye(D_P)
    gram = pa.T @ W_last @ pa
    A = np.linalg.solve(gram, pa.T @ W_last)       # d_alpha x d_P
    k = K - 1
    load_p = eye - pp @ phis.phi_p[k]              # coefficient on P-hat
    load_0 = -pp @ phis.phi_0[k]                   # coefficient on P0-hat
    load_g = -(eye + pp @ phis.phi_g[k]) @ pg      # coefficient on g-hat
    J = A @ np.hstack([load_p, load_0, load_g])
    return _symmetrize(J @ cov.full_matrix() @ J.T)


def sigma_kpml(derivs: DerivativeBundle, cov: CovarianceBundle, K: int) -> np.ndarray:
    """Asymptotic variance of the K-stage pseudo-likelihood estimator.

    With the frequency estimator as the preliminary CCP (all P-blocks equal)
    and no nuisance parameter, this reduces to the closed form
    (Psi_a' O^-1 Psi_a)^-1 Psi_a' O^-1 (I - Psi_P Phi_{K,P0}) O
    (I - Psi_P Phi_{K,P0})' O^-1 Psi_a (Psi_a' O^-1 Psi_a)^-1, with the
    combined coefficient Phi_{K,P0} on both sides of the middle factor.
    """
    phis = phi_recursion(derivs, "pml", cov.omega_pp, K)
    W = np.linalg.inv(cov.omega_pp)
    return _sandwich(derivs, cov, phis, W, K)


def sigma_kmd(derivs: DerivativeBundle, cov: CovarianceBundle, weights,
              K: int) -> np.ndarray:
    """Asymptotic variance of the K-stage minimum-distance estimator.

    `weights` is a list of K positive-definite matrices, the string "pml"
    (meaning W_k = omega_pp^-1 throughout), or the string "optimal" (the
    stagewise-optimal sequence).
    """
    if isinstance(weights, str) and weights == "optimal":
        weights = optimal_weight_sequence(derivs, cov.omega_pp, K)
    ws = _resolve_weights(weights, cov.omega_pp, K)
    for W in ws:
        if not np.allclose(W, W.T, atol=1e-12 * max(1.0, np.abs(W).max())):
            raise ValueError("weight matrix is not symmetric")
    phis = phi_recursion(derivs, ws, cov.omega_pp, K)
    return _sandwich(derivs, cov, phis, ws[K - 1], K)


def optimal_first_weight(derivs: DerivativeBundle, cov: CovarianceBundle) -> np.ndarray:
    """Optimal single-stage weight: inverse of the variance of the stacked moment."""
    pa, pp, pg = derivs.psi_alpha, derivs.psi_p, derivs.psi_g
    eye = np.eye(D_P)
    ImP = eye - pp
    bracket = ImP @ cov.omega_pp @ ImP.T
    if derivs.d_g > 0 and cov.d_g > 0:
        bracket = (bracket + pg @ cov.omega_gg @ pg.T
                   - pg @ cov.omega_pg.T @ ImP.T - ImP @ cov.omega_pg @ pg.T)
    try:
        W = np.linalg.inv(bracket)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "optimal-weight bracket is singular (rank-deficient moment variance)"
        ) from exc
    return _symmetrize(W)


def optimal_stage_weight(phi_p0: np.ndarray, psi_p: np.ndarray,
                         omega_pp: np.ndarray) -> np.ndarray:
    """Optimal stage-k weight ((I - Psi_P Phi_{k,P0})')^-1 O^-1 (I - Psi_P Phi_{k,P0})^-1."""
    A = np.eye(D_P) - psi_p @ phi_p0
    if np.linalg.cond(A) > 1e12:
        raise ValueError("I - psi_p @ phi_p0 is singular; optimal weight undefined")
    Ainv = np.linalg.inv(A)
    W = Ainv.T @ np.linalg.inv(omega_pp) @ Ainv
    return _symmetrize(W)


def optimal_weight_sequence(derivs: DerivativeBundle, omega_pp: np.ndarray,
                            K: int) -> list:
    """Stagewise-optimal weight matrices W*_k for k = 1..K.

    Built jointly with the combined coefficient recursion
    Phi*_{k+1} = Psi_P Phi*_k - Psi_a q_a^-1 Psi_a' ((I - Psi_P)')^-1 O^-1,
    starting from Phi*_1 = I.
    """
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    omega_inv = np.linalg.inv(omega_pp)
    C = np.linalg.solve((eye - pp).T, omega_inv)        # ((I-Psi_P)')^-1 O^-1
    qa = -pa.T @ C @ np.linalg.solve(eye - pp, pa)
    correction = pa @ np.linalg.solve(qa, pa.T @ C)
    phi = eye.copy()
    weights = []
    for _ in range(K):
        weights.append(optimal_stage_weight(phi, pp, omega_pp))
        phi = pp @ phi - correction
    return weights


def sigma_star(derivs: DerivativeBundle, cov: CovarianceBundle) -> np.ndarray:
    """Efficiency bound for the minimum-distance class: (Psi_a' W1* Psi_a)^-1."""
    W = optimal_first_weight(derivs, cov)
    try:
        S = np.linalg.inv(derivs.psi_alpha.T @ W @ derivs.psi_alpha)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sigma_star inner matrix is singular") from exc
    return _symmetrize(S)


def mle_variance(derivs: DerivativeBundle, cov: CovarianceBundle,
                 mg: np.ndarray | None = None) -> np.ndarray:
    """Asymptotic variance of the maximum-likelihood estimator of alpha.

    [Psi_a' [(I - Psi_P) O (I - Psi_P)' + Psi_g Mg^-1 Psi_g']^-1 Psi_a]^-1.
    With no nuisance parameter this coincides with sigma_star.
    """
    pa, pp, pg = derivs.psi_alpha, derivs.psi_p, derivs.psi_g
    eye = np.eye(D_P)
    ImP = eye - pp
    bracket = ImP @ cov.omega_pp @ ImP.T
    if derivs.d_g > 0:
        if mg is None:
            raise ValueError("mg required when psi_g is nonempty")
        bracket = bracket + pg @ np.linalg.inv(mg) @ pg.T
    try:
        S = np.linalg.inv(pa.T @ np.linalg.solve(bracket, pa))
    except np.linalg.LinAlgError as exc:
        raise ValueError("mle_variance bracket is singular") from exc
    return _symmetrize(S)


def psd_gap(a: np.ndarray, b: np.ndarray) -> tuple[bool, float]:
    """Whether a - b is PSD up to roundoff; returns (flag, min eigenvalue)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = 0.5 * ((a - b) + (a - b).T)
    min_eig = float(np.linalg.eigvalsh(diff).min())
    return min_eig >= -1e-6 * abs(np.trace(a)), min_eig


def lambda_factor(derivs: DerivativeBundle, omega_pp: np.ndarray, K: int) -> np.ndarray:
    """Geometric factor sum_{i<K} (Psi_P (I - Pi))^i with the likelihood projector."""
    pa, pp = derivs.psi_alpha, derivs.psi_p
    omega_inv = np.linalg.inv(omega_pp)
    gram = pa.T @ omega_inv @ pa
    pi = pa @ np.linalg.solve(gram, pa.T @ omega_inv)
    M = pp @ (np.eye(D_P) - pi)
    out = np.eye(D_P)
    term = np.eye(D_P)
    for _ in range(1, K):
        term = M @ term
        out = out + term
    return out


def sigma_from_stage_constants(derivs: DerivativeBundle, cov: CovarianceBundle,
                               weights, K: int) -> np.ndarray:
    """Variance via the general iterated-estimator recursion (cross-check path).

    Uses the per-stage constants A_k = (Psi_a' W Psi_a)^-1 Psi_a' W,
    B_k = -A_k Psi_P, C_k = -A_k Psi_g and the loading recursion
      Y_{k+1,P} = (Psi_P + Psi_a B_k) Y_{k,P} + Psi_a A_k
      Y_{k+1,0} = (Psi_P + Psi_a B_k) Y_{k,0}
      Y_{k+1,g} = (Psi_P + Psi_a B_k) Y_{k,g} + Psi_g + Psi_a C_k
    started from Y_{1,P} = 0, Y_{1,0} = I, Y_{1,g} = 0.
    """
    pa, pp, pg = derivs.psi_alpha, derivs.psi_p, derivs.psi_g
    dg = derivs.d_g
    ws = _resolve_weights(weights, cov.omega_pp, K)

    def abc(W):
        gram = pa.T @ W @ pa
        A = np.linalg.solve(gram, pa.T @ W)
        return A, -A @ pp, -A @ pg

    y_p = np.zeros((D_P, D_P))
    y_0 = np.eye(D_P)
    y_g = np.zeros((D_P, dg))
    for k in range(K - 1):
        A, B, C = abc(ws[k])
        M = pp + pa @ B
        y_p, y_0, y_g = (M @ y_p + pa @ A, M @ y_0, M @ y_g + pg + pa @ C)
    A, B, C = abc(ws[K - 1])
    J = np.hstack([A + B @ y_p, B @ y_0, B @ y_g + C])
    return _symmetrize(J @ cov.full_matrix() @ J.T)
