import pytest

from remidi.envs import GridEnv, LeverEnv, TabularGameEnv, lottery_mdp


@pytest.fixture(scope="session")
def lottery():
    return lottery_mdp()


@pytest.fixture(scope="session")
def lever():
    return LeverEnv()


@pytest.fixture(scope="session")
def tab_distinct():
    return TabularGameEnv("distinct")


@pytest.fixture(scope="session")
def tab_paired():
    return TabularGameEnv("paired")


@pytest.fixture(scope="session")
def grid():
    return GridEnv(size=7, horizon=20, wall_count=5)
