"""Second-order expansion terms of the stagewise-optimal estimator."""

import numpy as np
import pytest

from dyngame.asymptotics import (
    numerical_jacobians,
    optimal_weight_sequence,
    phi_recursion,
    sigma_star,
)
from dyngame.estimation import WeightSchedule, k_stage_estimate
from dyngame.game import GameSpec
from dyngame.highorder import (
    highorder_table,
    phi_star_sequence,
    q_alpha,
    r_terms,
    second_derivatives,
)
from dyngame.sampling import draw_dataset, frequency_ccp

from conftest import solved


# ---------------------------------------------------------------------------
# second derivatives
# ---------------------------------------------------------------------------

def test_second_derivatives_zero_for_flat_spec():
    spec = GameSpec(0.0, 0.0, 0.0, (0.0, 0.0), beta=0.0)
    t = second_derivatives(spec.alpha, np.full(8, 0.5), spec)
    # the mapping is constant in p; only pure-alpha curvature can survive
    assert np.max(np.abs(t.d2[:, 2:, 2:])) <= 1e-6


def test_second_derivatives_symmetric_and_stable(solved1):
    spec, sol, _, _ = solved1
    t1 = second_derivatives(spec.alpha, sol.p_star, spec, step=1e-4)
    for j in range(8):
        assert np.max(np.abs(t1.d2[j] - t1.d2[j].T)) <= 1e-6
    t2 = second_derivatives(spec.alpha, sol.p_star, spec, step=5e-5)
    assert np.max(np.abs(t1.d2 - t2.d2)) <= 1e-4
    assert np.allclose(t1.h, 0.5 * t1.d2)


# ---------------------------------------------------------------------------
# curvature matrix
# ---------------------------------------------------------------------------

def test_q_alpha_is_negative_inverse_of_bound(each_design):
    _, (_, _, cov, derivs) = each_design
    qa = q_alpha(derivs, cov.omega_pp)
    star = sigma_star(derivs, cov)
    assert np.max(np.abs(qa + np.linalg.inv(star))) <= 1e-8 * np.abs(qa).max()
    assert np.linalg.eigvalsh(qa).max() < 0


def test_q_alpha_zero_jacobian_reduction(solved1):
    _, _, cov, derivs = solved1
    from dyngame.asymptotics import DerivativeBundle
    flat = DerivativeBundle(psi_alpha=derivs.psi_alpha, psi_p=np.zeros((8, 8)))
    qa = q_alpha(flat, cov.omega_pp)
    direct = -flat.psi_alpha.T @ np.linalg.inv(cov.omega_pp) @ flat.psi_alpha
    assert np.allclose(qa, direct, atol=1e-12)


# ---------------------------------------------------------------------------
# combined coefficients under optimal weights
# ---------------------------------------------------------------------------

def test_phi_star_starts_at_identity(solved1):
    _, _, cov, derivs = solved1
    seq = phi_star_sequence(derivs, cov.omega_pp, 1)
    assert np.array_equal(seq[0], np.eye(8))


def test_phi_star_matches_general_recursion(each_design):
    _, (_, _, cov, derivs) = each_design
    K = 5
    seq = phi_star_sequence(derivs, cov.omega_pp, K)
    ws = optimal_weight_sequence(derivs, cov.omega_pp, K)
    phis = phi_recursion(derivs, ws, cov.omega_pp, K)
    for k in range(K):
        diff = np.max(np.abs(seq[k] - phis.phi_p0[k]))
        assert diff <= 1e-9 * max(1.0, np.abs(seq[k]).max())


def test_phi_star_collapses_without_ccp_feedback(solved1):
    _, _, cov, derivs = solved1
    from dyngame.asymptotics import DerivativeBundle
    flat = DerivativeBundle(psi_alpha=derivs.psi_alpha, psi_p=np.zeros((8, 8)))
    seq = phi_star_sequence(flat, cov.omega_pp, 4)
    assert np.allclose(seq[1], seq[2], atol=1e-12)
    assert np.allclose(seq[2], seq[3], atol=1e-12)


# ---------------------------------------------------------------------------
# R terms
# ---------------------------------------------------------------------------

def _ingredients(design=1):
    spec, sol, cov, derivs = solved(design)
    tensors = second_derivatives(spec.alpha, sol.p_star, spec)
    return spec, sol, cov, derivs, tensors


def test_r3_exactly_zero_at_first_stage():
    _, sol, cov, derivs, tensors = _ingredients()
    rng = np.random.default_rng(3)
    for _ in range(5):
        dev = rng.normal(size=8)
        s = r_terms(dev, derivs, tensors, cov.omega_pp, 1)
        assert np.array_equal(s.r3, np.zeros(2))
        assert np.array_equal(s.r_total, s.r1 + s.r2 + s.r3)


def test_r_terms_vanish_at_zero_deviation():
    _, _, cov, derivs, tensors = _ingredients()
    s = r_terms(np.zeros(8), derivs, tensors, cov.omega_pp, 3)
    for v in (s.r1, s.r2, s.r3, s.leading_term):
        assert np.max(np.abs(v)) <= 1e-12


def test_r_terms_zero_with_zero_curvature():
    from dyngame.highorder import SecondDerivTensor
    _, _, cov, derivs, _ = _ingredients()
    flat = SecondDerivTensor(d2=np.zeros((8, 10, 10)))
    s = r_terms(np.random.default_rng(5).normal(size=8), derivs, flat,
                cov.omega_pp, 4)
    assert np.max(np.abs(s.r1)) <= 1e-12
    assert np.max(np.abs(s.r2)) <= 1e-12


def test_r_terms_rejects_bad_k():
    _, _, cov, derivs, tensors = _ingredients()
    with pytest.raises(ValueError):
        r_terms(np.zeros(8), derivs, tensors, cov.omega_pp, 0)


def test_r_terms_bounded_in_probability():
    _, sol, cov, derivs, tensors = _ingredients()
    q99 = {}
    for n in (500, 2000):
        norms = []
        for s_idx in range(1, 2001):
            ds = draw_dataset(sol.p_star, sol.m_star, n, 97 ^ s_idx)
            dev = np.sqrt(n) * (frequency_ccp(ds) - sol.p_star)
            smp = r_terms(dev, derivs, tensors, cov.omega_pp, 3)
            norms.append(np.linalg.norm(smp.r_total))
        q99[n] = np.quantile(norms, 0.99)
    ratio = max(q99.values()) / min(q99.values())
    assert ratio < 2.0


def test_expansion_remainder_shrinks():
    """The quadratic expansion tracks the actual optimal estimator: the
    remainder shrinks relative to the correction term as n grows."""
    spec, sol, cov, derivs, tensors = _ingredients()
    K = 2
    ws = optimal_weight_sequence(derivs, cov.omega_pp, K)
    schedule = WeightSchedule(mode="fixed-list", matrices=list(ws))
    rel = {}
    for n in (10_000, 100_000):
        rem, corr = [], []
        for seed in range(30):
            ds = draw_dataset(sol.p_star, sol.m_star, n, 7000 + seed)
            dev = np.sqrt(n) * (frequency_ccp(ds) - sol.p_star)
            smp = r_terms(dev, derivs, tensors, cov.omega_pp, K)
            trace = k_stage_estimate(ds, K, "md", schedule, spec)
            lhs = np.sqrt(n) * (trace.alpha_hat - spec.alpha)
            correction = smp.r_total / np.sqrt(n)
            rem.append(np.linalg.norm(lhs - smp.leading_term - correction))
            corr.append(np.linalg.norm(correction))
        rel[n] = np.median(rem) / np.median(corr)
    assert rel[100_000] < rel[10_000]


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------

def test_highorder_table_shape_and_determinism(design1):
    rows = highorder_table(design1, S=50, n=500, K_list=[1, 3], seed=11)
    again = highorder_table(design1, S=50, n=500, K_list=[1, 3], seed=11)
    assert [r["K"] for r in rows] == [1, 3]
    for r, r2 in zip(rows, again):
        assert r == r2
        assert set(r) == {"K", "bias_rn", "var_rn", "mse_rn",
                          "bias_ec", "var_ec", "mse_ec"}
        assert r["mse_rn"] >= r["var_rn"] - 1e-12
