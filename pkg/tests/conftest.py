import numpy as np
import pytest

import cachelib


@pytest.fixture(scope="session")
def desk_corpus():
    return cachelib.desk_corpus()


@pytest.fixture(scope="session")
def desk_chains(desk_corpus):
    return cachelib.desk_chains(desk_corpus)


@pytest.fixture(scope="session")
def desk_robustness(desk_chains, desk_corpus):
    return cachelib.desk_robustness(desk_chains, desk_corpus)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
