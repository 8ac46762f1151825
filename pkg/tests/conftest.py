import pytest

from iegs import centralized, fixtures, partition


@pytest.fixture(scope="session")
def two_block():
    return fixtures.two_block()


@pytest.fixture(scope="session")
def four_block():
    return fixtures.four_block()


@pytest.fixture(scope="session")
def two_block_cf(two_block):
    return partition.assemble_compact(partition.decouple(two_block))


@pytest.fixture(scope="session")
def four_block_cf(four_block):
    return partition.assemble_compact(partition.decouple(four_block))


@pytest.fixture(scope="session")
def two_block_central(two_block_cf):
    return centralized.solve_centralized(two_block_cf)


@pytest.fixture(scope="session")
def four_block_central(four_block_cf):
    return centralized.solve_centralized(four_block_cf)
