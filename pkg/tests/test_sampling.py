"""Dataset simulation, frequency estimators, and the CCP covariance blocks."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngame.asymptotics import psd_gap
from dyngame.game import next_state
from dyngame.sampling import (
    CovarianceBundle,
    Dataset,
    cell_counts,
    covariance_bundle,
    draw_dataset,
    empirical_state_law,
    frequency_ccp,
    omega_pp,
    omega_pp_inverse,
)


def _handmade(x, a1, a2):
    x = np.asarray(x)
    a1 = np.asarray(a1)
    a2 = np.asarray(a2)
    return Dataset(x=x, a1=a1, a2=a2, x_next=1 + 2 * a1 + a2, n=len(x), seed=0)


# ---------------------------------------------------------------------------
# draw_dataset
# ---------------------------------------------------------------------------

def test_draw_dataset_deterministic(solved1):
    _, sol, _, _ = solved1
    d1 = draw_dataset(sol.p_star, sol.m_star, 200, 7)
    d2 = draw_dataset(sol.p_star, sol.m_star, 200, 7)
    for f in ("x", "a1", "a2", "x_next"):
        assert np.array_equal(getattr(d1, f), getattr(d2, f))
    d3 = draw_dataset(sol.p_star, sol.m_star, 200, 8)
    assert not np.array_equal(d1.x, d3.x) or not np.array_equal(d1.a1, d3.a1)


def test_draw_dataset_rejects_empty(solved1):
    _, sol, _, _ = solved1
    with pytest.raises(ValueError):
        draw_dataset(sol.p_star, sol.m_star, 0, 1)


def test_draw_dataset_transition_consistency(solved1):
    _, sol, _, _ = solved1
    ds = draw_dataset(sol.p_star, sol.m_star, 5000, 99)
    expect = np.array([next_state(a, b) for a, b in zip(ds.a1, ds.a2)])
    assert np.array_equal(ds.x_next, expect)


def test_draw_dataset_symmetric_dgp_frequencies():
    ds = draw_dataset(np.full(8, 0.5), np.full(4, 0.25), 1_000_000, 123)
    assert 0.498 <= ds.a1.mean() <= 0.502
    assert 0.498 <= ds.a2.mean() <= 0.502


def test_draw_dataset_design1_cell_frequencies(solved1):
    _, sol, _, _ = solved1
    n = 1_000_000
    ds = draw_dataset(sol.p_star, sol.m_star, n, 2024)
    state_counts, entries = cell_counts(ds)
    phat = (entries / state_counts).reshape(-1)
    se = np.sqrt(sol.p_star * (1 - sol.p_star) / np.tile(state_counts, 2))
    assert np.all(np.abs(phat - sol.p_star) <= 4 * se)


def test_dataset_csv_round_trip(tmp_path, solved1):
    _, sol, _, _ = solved1
    ds = draw_dataset(sol.p_star, sol.m_star, 50, 5)
    path = tmp_path / "ds.csv"
    text = ds.to_csv(str(path))
    assert text.splitlines()[0] == "i,x,a1,a2,x_next"
    back = Dataset.from_csv(str(path))
    for f in ("x", "a1", "a2", "x_next"):
        assert np.array_equal(getattr(ds, f), getattr(back, f))


# ---------------------------------------------------------------------------
# frequency estimators
# ---------------------------------------------------------------------------

def test_frequency_ccp_counting_example():
    ds = _handmade([1, 1, 1, 1], [1, 1, 0, 1], [0, 0, 0, 0])
    p = frequency_ccp(ds)
    assert p[0] == pytest.approx(0.75)
    # player 2 never enters in state 1: clamped to 0.5/n
    assert p[4] == pytest.approx(0.5 / 4)


def test_frequency_ccp_empty_cell_is_half():
    ds = _handmade([1, 3, 4, 1], [1, 0, 1, 0], [0, 1, 1, 0])
    p = frequency_ccp(ds)
    assert p[1] == 0.5 and p[5] == 0.5  # state 2 never visited


def test_frequency_ccp_close_to_truth_at_n2000(solved1):
    _, sol, _, _ = solved1
    ds = draw_dataset(sol.p_star, sol.m_star, 2000, 31)
    phat = frequency_ccp(ds)
    bound = 5 * np.max(np.sqrt(sol.p_star * (1 - sol.p_star)
                               / (2000 * np.tile(sol.m_star, 2))))
    assert np.max(np.abs(phat - sol.p_star)) <= bound


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 400))
def test_frequency_ccp_always_interior(seed, n):
    from conftest import solved
    _, sol, _, _ = solved(1)
    ds = draw_dataset(sol.p_star, sol.m_star, n, seed)
    p = frequency_ccp(ds)
    assert np.all((p > 0) & (p < 1))


def test_empirical_state_law_floor_and_normalization():
    ds = _handmade([1, 1, 3], [0, 1, 0], [1, 0, 0])
    m = empirical_state_law(ds)
    assert abs(m.sum() - 1.0) <= 1e-12
    assert np.all(m > 0)  # unvisited states floored, not zero


# ---------------------------------------------------------------------------
# omega_pp and its closed-form inverse
# ---------------------------------------------------------------------------

def test_omega_pp_single_cell_values():
    p = np.full(8, 0.5)
    m = np.full(4, 0.25)
    O = omega_pp(p, m)
    assert np.allclose(np.diag(O), 0.25 / 0.25)
    Oinv = omega_pp_inverse(p, m)
    assert np.allclose(np.diag(Oinv), 0.25 * 4.0)


def test_omega_pp_inverse_matches_dense_inverse(each_design):
    _, (_, sol, _, _) = each_design
    O = omega_pp(sol.p_star, sol.m_star)
    Oinv = omega_pp_inverse(sol.p_star, sol.m_star)
    assert np.max(np.abs(O @ Oinv - np.eye(8))) <= 1e-10
    assert np.max(np.abs(Oinv - np.linalg.inv(O))) <= 1e-10 * np.abs(Oinv).max()


def test_omega_pp_inverse_linear_in_state_law(solved1):
    _, sol, _, _ = solved1
    a = omega_pp_inverse(sol.p_star, sol.m_star)
    b = omega_pp_inverse(sol.p_star, 2.0 * sol.m_star)
    assert np.allclose(b, 2.0 * a, atol=1e-12)


def test_omega_pp_positive_diagonal(solved1):
    _, sol, _, _ = solved1
    assert np.all(np.diag(omega_pp(sol.p_star, sol.m_star)) > 0)


def test_omega_pp_rejects_zero_state_mass(solved1):
    _, sol, _, _ = solved1
    with pytest.raises(ValueError):
        omega_pp(sol.p_star, np.array([0.5, 0.5, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# covariance bundle
# ---------------------------------------------------------------------------

def test_bundle_default_mode_blocks_equal(solved1):
    _, sol, cov, _ = solved1
    assert np.array_equal(cov.omega_p0, cov.omega_pp)
    assert np.array_equal(cov.omega_00, cov.omega_pp)
    assert cov.d_g == 0
    full = cov.full_matrix()
    assert np.allclose(full, full.T, atol=1e-12)
    assert np.linalg.eigvalsh(full).min() >= -1e-8 * np.trace(full)


def test_bundle_custom_rejects_asymmetric(solved1):
    _, sol, cov, _ = solved1
    bad = cov.omega_pp.copy()
    bad[0, 1] = 0.7  # breaks symmetry of the stack
    with pytest.raises(ValueError):
        covariance_bundle(sol.p_star, sol.m_star, mode="custom",
                          blocks={"omega_pp": cov.omega_pp, "omega_p0": bad,
                                  "omega_00": cov.omega_pp})


def test_bundle_custom_rejects_non_psd(solved1):
    _, sol, cov, _ = solved1
    O = cov.omega_pp
    with pytest.raises(ValueError):
        covariance_bundle(sol.p_star, sol.m_star, mode="custom",
                          blocks={"omega_pp": O, "omega_p0": 2.0 * O,
                                  "omega_00": O})


def test_bundle_unknown_mode(solved1):
    _, sol, _, _ = solved1
    with pytest.raises(ValueError):
        covariance_bundle(sol.p_star, sol.m_star, mode="nope")


def test_bundle_json_serializable(solved1):
    _, _, cov, _ = solved1
    obj = json.loads(cov.to_json())
    assert np.allclose(np.array(obj["omega_pp"]), cov.omega_pp)


def test_noisy_preliminary_estimate_inflates_covariance():
    """The stack with an independently-noised preliminary CCP estimate always
    dominates (in PSD order) the stack where the preliminary estimate is the
    frequency estimator itself, for any nuisance correlation."""
    rng = np.random.default_rng(77)
    d_p, d_g = 8, 2
    for _ in range(100):
        A = rng.normal(size=(d_p, d_p))       # common factor loadings
        B = rng.normal(size=(d_p, d_p))       # independent preliminary noise
        C = rng.normal(size=(d_g, d_g))       # nuisance-only noise
        D = rng.normal(size=(d_g, d_p))       # nuisance loading on the common factor
        opp = A @ A.T
        opg = A @ D.T
        ogg = D @ D.T + C @ C.T
        full = CovarianceBundle(
            omega_pp=opp, omega_p0=opp, omega_00=opp + B @ B.T,
            omega_pg=opg, omega_0g=opg, omega_gg=ogg).full_matrix()
        base = CovarianceBundle(
            omega_pp=opp, omega_p0=opp, omega_00=opp,
            omega_pg=opg, omega_0g=opg, omega_gg=ogg).full_matrix()
        ok, _ = psd_gap(full, base)
        assert ok
