import numpy as np
import pytest
from hypothesis import given, settings

from viewbpr.core import (
    FactorModel,
    FeedbackDataset,
    SamplerConfig,
    TrainConfig,
    WeightingConfig,
    WeightingMode,
    Interaction,
    Behavior,
    validate_dataset,
)

from conftest import datasets


def test_overlap_is_reported():
    d = FeedbackDataset.from_sets(1, 3, [[1]], [[1]])
    problems = validate_dataset(d)
    assert len(problems) == 1
    assert "user 0" in problems[0] and "item 1" in problems[0]


def test_valid_dataset_has_no_violations():
    d = FeedbackDataset.from_sets(1, 3, [[1]], [[2]])
    assert validate_dataset(d) == []


def test_empty_purchase_set_is_reported():
    d = FeedbackDataset.from_sets(2, 3, [[0], []], [[], [1]])
    problems = validate_dataset(d)
    assert problems == ["user 1 has no purchases"]


def test_out_of_range_item_is_reported():
    d = FeedbackDataset.from_sets(1, 3, [[0, 5]], [[]])
    assert any("out-of-range item 5" in p for p in validate_dataset(d))


@given(datasets())
@settings(max_examples=50, deadline=None)
def test_validate_is_idempotent(d):
    assert validate_dataset(d) == validate_dataset(d) == []


def test_membership_helpers(small_dataset):
    d = small_dataset
    assert d.is_purchased(0, 1) and not d.is_purchased(0, 2)
    assert d.is_viewed(0, 2)
    users = np.array([0, 0, 0, 2])
    items = np.array([1, 2, 5, 4])
    assert d.purchased_mask(users, items).tolist() == [True, False, False, True]
    assert d.observed_mask(users, items).tolist() == [True, True, False, True]


def test_dataset_arrays_are_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.purchases.indices[0] = 3


def test_interaction_rejects_negative_timestamp():
    with pytest.raises(ValueError):
        Interaction("u", "i", Behavior.VIEW, -1)


@pytest.mark.parametrize("omega", [(0.5, 0.5, 0.1), (-0.1, 0.6, 0.5), (0.5, 0.5)])
def test_sampler_config_rejects_bad_omega(omega):
    with pytest.raises(ValueError):
        SamplerConfig(omega=omega)


@pytest.mark.parametrize("gamma", [0.0, -0.5, 1.5])
def test_sampler_config_rejects_bad_gamma(gamma):
    with pytest.raises(ValueError):
        SamplerConfig(gamma=gamma)


def test_omega_sum_tolerance():
    SamplerConfig(omega=(0.1, 0.2, 0.7 + 5e-10))


def test_weighting_config_bounds():
    with pytest.raises(ValueError):
        WeightingConfig(alpha=1.2)
    with pytest.raises(ValueError):
        WeightingConfig(mode=WeightingMode.PER_USER, beta=0.0)
    with pytest.raises(ValueError):
        WeightingConfig(mode=WeightingMode.PER_USER, session_gap=0)


def test_train_config_bounds():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(regularization=-1)
    with pytest.raises(ValueError):
        TrainConfig(factors=0)


def test_factor_model_shape_check():
    with pytest.raises(ValueError):
        FactorModel(np.zeros((2, 3)), np.zeros((4, 2)))
