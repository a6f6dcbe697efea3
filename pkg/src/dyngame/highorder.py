"""Higher-order expansion terms of the stagewise-optimal K-MD estimator.

The estimator admits the expansion
    sqrt(n)(alpha_hat - alpha*) = leading + n^{-1/2} R_K + o_p(n^{-1/2}),
where the leading term is linear in sqrt(n)(P_hat - P*) and R_K = R1 + R2 + R3
collects the quadratic corrections.  R_K depends on K even though the leading
term does not, which is what makes the first few iterations matter in finite
samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asymptotics import DerivativeBundle, numerical_jacobians
from .equilibrium import solve_equilibrium
from .game import D_ALPHA, D_P, GameSpec, best_response
from .sampling import covariance_bundle, draw_dataset, frequency_ccp


@dataclass(frozen=True)
class SecondDerivTensor:
    """Second derivatives of the best-response mapping in (alpha, P).

    `d2[j, u, v]` is the full second derivative of output coordinate j with
    respect to stacked coordinates u, v of lambda = (alpha', P')'; `h[j]` is
    half of that Hessian.
    """

    d2: np.ndarray  # (d_P, d_alpha + d_P, d_alpha + d_P)

    @property
    def h(self) -> np.ndarray:
        return 0.5 * self.d2


@dataclass(frozen=True)
class HighOrderSample:
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    leading_term: np.ndarray
    scaled_phat_dev: np.ndarray

    @property
    def r_total(self) -> np.ndarray:
        return self.r1 + self.r2 + self.r3


def second_derivatives(alpha: np.ndarray, p: np.ndarray, spec: GameSpec,
                       step: float = 1e-4) -> SecondDerivTensor:
    """Central second differences of the best-response mapping, symmetrized."""
    alpha = np.asarray(alpha, dtype=float)
    p = np.asarray(p, dtype=float)
    d = D_ALPHA + D_P

    def f(z):
        return best_response(z[:D_ALPHA], z[D_ALPHA:], spec)

    z0 = np.concatenate([alpha, p])
    f0 = f(z0)
    d2 = np.empty((D_P, d, d))
    for u in range(d):
        eu = np.zeros(d)
        eu[u] = step
        d2[:, u, u] = (f(z0 + eu) - 2.0 * f0 + f(z0 - eu)) / step**2
    for u in range(d):
        eu = np.zeros(d)
        eu[u] = step
        for v in range(u + 1, d):
            ev = np.zeros(d)
            ev[v] = step
            cross = (f(z0 + eu + ev) - f(z0 + eu - ev)
                     - f(z0 - eu + ev) + f(z0 - eu - ev)) / (4.0 * step**2)
            d2[:, u, v] = cross
            d2[:, v, u] = cross
    return SecondDerivTensor(d2=d2)


def q_alpha(derivs: DerivativeBundle, omega_pp: np.ndarray) -> np.ndarray:
    """Curvature matrix -Psi_a' ((I - Psi_P)')^-1 O^-1 (I - Psi_P)^-1 Psi_a."""
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    omega_inv = np.linalg.inv(omega_pp)
    try:
        C = np.linalg.solve((eye - pp).T, omega_inv)
        q = -pa.T @ C @ np.linalg.solve(eye - pp, pa)
    except np.linalg.LinAlgError as exc:
        raise ValueError("I - psi_p is singular") from exc
    return 0.5 * (q + q.T)


def phi_star_sequence(derivs: DerivativeBundle, omega_pp: np.ndarray,
                      K: int) -> list:
    """Combined stage coefficients under stagewise-optimal weights.

    Phi*_1 = I and Phi*_{k+1} = Psi_P Phi*_k - Psi_a q_a^-1 Psi_a'
    ((I - Psi_P)')^-1 O^-1.
    """
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    omega_inv = np.linalg.inv(omega_pp)
    C = np.linalg.solve((eye - pp).T, omega_inv)
    qa = q_alpha(derivs, omega_pp)
    correction = pa @ np.linalg.solve(qa, pa.T @ C)
    seq = [eye.copy()]
    for _ in range(K - 1):
        seq.append(pp @ seq[-1] - correction)
    return seq


def _r_sequence(scaled_dev: np.ndarray, derivs: DerivativeBundle,
                tensors: SecondDerivTensor, omega_pp: np.ndarray,
                k_max: int) -> list:
    """R-term triples (r1, r2, r3) for k = 1..k_max at one sample deviation."""
    s = np.asarray(scaled_dev, dtype=float)
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    omega_inv = np.linalg.inv(omega_pp)
    C = np.linalg.solve((eye - pp).T, omega_inv)   # ((I-Psi_P)')^-1 O^-1
    qa = q_alpha(derivs, omega_pp)
    qa_inv = np.linalg.inv(qa)
    lead_coef = -qa_inv @ pa.T @ C                 # d_alpha x d_P
    L = lead_coef @ s
    D1 = np.hstack([pa, pp])                       # d_P x (d_alpha + d_P)
    d2 = tensors.d2
    h = tensors.h
    phis = phi_star_sequence(derivs, omega_pp, k_max)

    out = []
    r5 = np.zeros(D_P)
    for k in range(1, k_max + 1):
        phi = phis[k - 1]
        A = eye - pp @ phi
        if np.linalg.cond(A) > 1e12:
            raise ValueError("I - psi_p @ phi_star is singular")
        Ainv = np.linalg.inv(A)
        M = Ainv.T @ omega_inv @ Ainv
        M = 0.5 * (M + M.T)
        v = np.concatenate([L, phi @ s])

        # R1: quadratic forms v' U_a v for each alpha coordinate.
        r1 = np.empty(D_ALPHA)
        Mv_D1 = M @ D1
        for a in range(D_ALPHA):
            T2a = d2[:, a, :]                       # d_P x (d_alpha + d_P)
            U = (T2a.T @ Mv_D1 + Mv_D1.T @ T2a
                 + np.einsum("j,juv->uv", M @ pa[:, a], d2)) / 2.0
            r1[a] = v @ U @ v
        r1 = qa_inv @ r1

        # R2: weighted second-derivative contractions.
        w = M @ s
        phi_s = phi @ s
        d2_aP = d2[:, :D_ALPHA, D_ALPHA:]           # (d_P, d_alpha, d_P)
        d2_aa = d2[:, :D_ALPHA, :D_ALPHA]           # (d_P, d_alpha, d_alpha)
        inner = (-np.einsum("jap,p->ja", d2_aP, phi_s)
                 + np.einsum("jab,b->ja", d2_aa, -L))
        r2 = qa_inv @ (w @ inner)

        # R3: propagated lower-stage remainders (zero at k = 1).
        if k == 1:
            r3 = np.zeros(D_ALPHA)
        else:
            r3 = qa_inv @ (pa.T @ C @ Ainv @ pp @ r5)
        out.append((r1, r2, r3))

        # Advance the remainder recursion for the next stage.
        r_total = r1 + r2 + r3
        hquad = np.einsum("u,juv,v->j", v, h, v)
        r5 = pp @ r5 + pa @ r_total + hquad
    return out


def r_terms(scaled_phat_dev: np.ndarray, derivs: DerivativeBundle,
            tensors: SecondDerivTensor, omega_pp: np.ndarray,
            K: int) -> HighOrderSample:
    """High-order terms R1, R2, R3 at one sample deviation sqrt(n)(P_hat - P*)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    s = np.asarray(scaled_phat_dev, dtype=float)
    seq = _r_sequence(s, derivs, tensors, omega_pp, K)
    r1, r2, r3 = seq[K - 1]
    pa, pp = derivs.psi_alpha, derivs.psi_p
    eye = np.eye(D_P)
    omega_inv = np.linalg.inv(omega_pp)
    C = np.linalg.solve((eye - pp).T, omega_inv)
    qa_inv = np.linalg.inv(q_alpha(derivs, omega_pp))
    leading = (-qa_inv @ pa.T @ C) @ s
    return HighOrderSample(r1=r1, r2=r2, r3=r3, leading_term=leading,
                           scaled_phat_dev=s)


def highorder_table(design: GameSpec, S: int, n: int, K_list,
                    seed: int) -> list[dict]:
    """Monte Carlo moments of the high-order term across S simulated samples.

    Reports, per K, the bias, variance, and mean squared error of the
    n^{-1/2} R_K correction for each alpha coordinate.
    """
    sol = solve_equilibrium(design)
    cov = covariance_bundle(sol.p_star, sol.m_star)
    derivs = numerical_jacobians(design.alpha, sol.p_star, design)
    tensors = second_derivatives(design.alpha, sol.p_star, design)
    K_list = sorted(K_list)
    k_max = K_list[-1]
    sqrt_n = np.sqrt(n)
    samples = {K: [] for K in K_list}
    for s_idx in range(1, S + 1):
        ds = draw_dataset(sol.p_star, sol.m_star, n, seed ^ s_idx)
        dev = sqrt_n * (frequency_ccp(ds) - sol.p_star)
        seq = _r_sequence(dev, derivs, tensors, cov.omega_pp, k_max)
        for K in K_list:
            r1, r2, r3 = seq[K - 1]
            samples[K].append((r1 + r2 + r3) / sqrt_n)
    rows = []
    for K in K_list:
        arr = np.array(samples[K])  # (S, d_alpha)
        bias = arr.mean(axis=0)
        var = arr.var(axis=0)
        mse = (arr**2).mean(axis=0)
        rows.append({
            "K": K,
            "bias_rn": float(bias[0]), "var_rn": float(var[0]), "mse_rn": float(mse[0]),
            "bias_ec": float(bias[1]), "var_ec": float(var[1]), "mse_ec": float(mse[1]),
        })
    return rows
