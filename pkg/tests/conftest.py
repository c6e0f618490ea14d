import numpy as np
import pytest

from sdiff.data import interactions_from_rows


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_corpus(n_users, n_items, density=0.3, seed=0):
    """Random bipartite corpus; every user gets at least one item."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_users):
        r = np.flatnonzero(rng.random(n_items) < density)
        if r.size == 0:
            r = np.array([int(rng.integers(n_items))])
        rows.append(r)
    return interactions_from_rows(rows, n_items=n_items)


@pytest.fixture
def toy_corpus():
    # 4 users x 4 items, connected
    return interactions_from_rows([[0, 1], [1, 2], [2, 3], [0, 3]], n_items=4)
