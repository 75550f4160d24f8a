import pytest
from hypothesis import settings

from dualprobe.topo import from_links

settings.register_profile("repo", deadline=None, max_examples=100)
settings.load_profile("repo")


@pytest.fixture
def triangle():
    return from_links(3, [(1, 2), (2, 3), (1, 3)])


@pytest.fixture
def star():
    return from_links(4, [(1, 2), (1, 3), (1, 4)])


@pytest.fixture
def path3():
    return from_links(3, [(1, 2), (2, 3)])


@pytest.fixture
def cycle4():
    return from_links(4, [(1, 2), (2, 3), (3, 4), (1, 4)])


@pytest.fixture
def fig6():
    # five-switch network containing the AP [2, 4, 5, 3]
    return from_links(5, [(1, 2), (1, 3), (2, 4), (4, 5), (3, 5)])
