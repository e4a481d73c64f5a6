import numpy as np
import pytest

from neur2sp.milp import SolveParams
from neur2sp.problems import generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_cflp():
    return generate_instance("cflp", n_facilities=4, n_customers=4, seed=3)


@pytest.fixture(scope="session")
def tiny_sslp():
    return generate_instance("sslp", n_servers=2, m_clients=3, seed=5)


@pytest.fixture(scope="session")
def invp_be():
    return generate_instance("invp", variant="B_E")


@pytest.fixture
def quiet_params():
    return SolveParams(collect_incumbents=False)
