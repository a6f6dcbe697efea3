"""Shared fixtures: the three benchmark designs, solved once per session."""

from functools import lru_cache

import pytest

from dyngame.asymptotics import numerical_jacobians
from dyngame.equilibrium import solve_equilibrium
from dyngame.game import GameSpec
from dyngame.sampling import covariance_bundle

DESIGNS = {
    1: GameSpec(lambda_rn=2.8, lambda_ec=0.8, lambda_rs=0.7,
                lambda_fc=(0.6, 0.4), beta=0.95),
    2: GameSpec(lambda_rn=2.0, lambda_ec=1.8, lambda_rs=0.2,
                lambda_fc=(0.01, 0.03), beta=0.95),
    3: GameSpec(lambda_rn=2.2, lambda_ec=1.45, lambda_rs=0.45,
                lambda_fc=(0.22, 0.29), beta=0.95),
}


@lru_cache(maxsize=None)
def solved(design: int):
    """(spec, equilibrium solution, covariance bundle, derivative bundle)."""
    spec = DESIGNS[design]
    sol = solve_equilibrium(spec)
    cov = covariance_bundle(sol.p_star, sol.m_star)
    derivs = numerical_jacobians(spec.alpha, sol.p_star, spec)
    return spec, sol, cov, derivs


@pytest.fixture
def design1():
    return DESIGNS[1]


@pytest.fixture
def solved1():
    return solved(1)


@pytest.fixture(params=[1, 2, 3], ids=["design1", "design2", "design3"])
def each_design(request):
    return request.param, solved(request.param)
