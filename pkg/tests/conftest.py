"""
测试公共夹具
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.divergences import DivergenceTables  # noqa: E402
from src.partition import build_partition  # noqa: E402
from src.presets import make_bernoulli_bandit, make_hybrid_mdp, make_layered_mdp, make_toy_bandit  # noqa: E402


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def toy_env():
    return make_toy_bandit(T=1024)


@pytest.fixture(scope="session")
def toy_tables(toy_env):
    return DivergenceTables(build_partition(toy_env))


@pytest.fixture(scope="session")
def layered_env():
    return make_layered_mdp(bellman_complete=True)


@pytest.fixture(scope="session")
def layered_tables(layered_env):
    return DivergenceTables(build_partition(layered_env))


@pytest.fixture(scope="session")
def incomplete_env():
    return make_layered_mdp(bellman_complete=False)


@pytest.fixture(scope="session")
def hybrid_env():
    return make_hybrid_mdp()


@pytest.fixture(scope="session")
def hybrid_tables(hybrid_env):
    return DivergenceTables(build_partition(hybrid_env))


@pytest.fixture(scope="session")
def bernoulli_two_tables():
    return DivergenceTables(build_partition(make_bernoulli_bandit([[0.7, 0.3], [0.3, 0.7]])))
