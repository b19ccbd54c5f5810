import numpy as np
import pytest
from hypothesis import strategies as st

from viewbpr.core import FeedbackDataset


def random_dataset(rng, num_users=5, num_items=12, max_purchases=4, max_views=4, min_purchases=1, view_prob=1.0):
    """Dataset with disjoint per-user purchase/view sets and room for negatives."""
    purchases, views, ptimes, vtimes = [], [], [], []
    for _ in range(num_users):
        n_p = int(rng.integers(min_purchases, max_purchases + 1))
        n_v = int(rng.integers(0, max_views + 1)) if rng.random() < view_prob else 0
        chosen = rng.choice(num_items, size=min(n_p + n_v, num_items - 1), replace=False)
        purchases.append(sorted(chosen[:n_p].tolist()))
        views.append(sorted(chosen[n_p:].tolist()))
        ptimes.append(rng.integers(0, 10**6, size=len(purchases[-1])).tolist())
        vtimes.append(rng.integers(0, 10**6, size=len(views[-1])).tolist())
    return FeedbackDataset.from_sets(
        num_users, num_items, purchases, views, purchase_times=ptimes, view_times=vtimes
    )


@st.composite
def datasets(draw, max_users=6, max_items=15, min_purchases=1):
    seed = draw(st.integers(0, 2**32 - 1))
    m = draw(st.integers(1, max_users))
    n = draw(st.integers(min_purchases + 4, max_items))
    return random_dataset(np.random.default_rng(seed), m, n, max_purchases=3, max_views=3, min_purchases=min_purchases)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    # users 0 and 1 have views, user 2 does not
    return FeedbackDataset.from_sets(
        3, 6,
        purchases=[[0, 1], [2], [3, 4]],
        views=[[2, 3], [0], []],
        purchase_times=[[10, 20], [5], [1, 2]],
        view_times=[[11, 12], [3], []],
    )
