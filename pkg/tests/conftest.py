import numpy as np
import pytest

from spcantor.cantor import SParams, build_tree
from spcantor.operator import PsOperator


@pytest.fixture(scope="session")
def tree_s1_k1():
    return build_tree(SParams(1, 1.0), 0.3, 1)


@pytest.fixture(scope="session")
def tree_s1_k2():
    return build_tree(SParams(1, 1.0), 0.3, 2)


@pytest.fixture(scope="session")
def tree_s75_k1():
    return build_tree(SParams(1, 0.75), 0.3, 1)


@pytest.fixture(scope="session")
def op_s1_k1(tree_s1_k1):
    return PsOperator(tree_s1_k1)


@pytest.fixture(scope="session")
def op_s1_k2(tree_s1_k2):
    return PsOperator(tree_s1_k2)


@pytest.fixture(scope="session")
def op_s75_k1(tree_s75_k1):
    return PsOperator(tree_s75_k1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20250810)
