"""Random forest head: hand cases, XOR, and bit-determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hemoclass.classifiers import predict_forest, train_forest
from hemoclass.classifiers.forest import _gini_weighted
from hemoclass.errors import ConfigError


def test_single_sample_single_tree():
    x = np.array([[3.0, 1.0]])
    y = np.array([1])
    model = train_forest(x, y, n_trees=1, max_depth=None, seed=0,
                         num_classes=3)
    queries = np.array([[0.0, 0.0], [100.0, -5.0], [3.0, 1.0]])
    np.testing.assert_array_equal(predict_forest(model, queries), [1, 1, 1])


def test_pure_node_becomes_root_leaf():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 4))
    y = np.full(20, 2)
    model = train_forest(x, y, n_trees=5, max_depth=None, seed=0,
                         num_classes=3)
    for tree in model.trees:
        assert len(tree.feature) == 1        # single node
        assert tree.feature[0] < 0           # ... which is a leaf
        assert tree.label[0] == 2
    np.testing.assert_array_equal(
        predict_forest(model, rng.normal(size=(10, 4))), 2)


def test_xor_reaches_perfect_training_accuracy():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    model = train_forest(x, y, n_trees=50, max_depth=2, seed=4,
                         num_classes=2)
    assert (predict_forest(model, x) == y).mean() == 1.0


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(80, 6))
    y = rng.integers(0, 3, size=80)
    a = train_forest(x, y, n_trees=12, max_depth=8, seed=123, num_classes=3)
    b = train_forest(x, y, n_trees=12, max_depth=8, seed=123, num_classes=3)
    assert len(a.trees) == len(b.trees)
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)
        np.testing.assert_array_equal(ta.threshold, tb.threshold)
        np.testing.assert_array_equal(ta.left, tb.left)
        np.testing.assert_array_equal(ta.right, tb.right)
        np.testing.assert_array_equal(ta.label, tb.label)
    c = train_forest(x, y, n_trees=12, max_depth=8, seed=124, num_classes=3)
    assert any(not np.array_equal(ta.feature, tc.feature)
               for ta, tc in zip(a.trees, c.trees))


def test_depth_limit_respected():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 5))
    y = rng.integers(0, 4, size=200)
    model = train_forest(x, y, n_trees=3, max_depth=2, seed=0, num_classes=4)
    for tree in model.trees:
        # depth <= 2 means at most 1 + 2 + 4 = 7 nodes
        assert len(tree.feature) <= 7


def test_gini_hand_values():
    # (0,0,1,1) vs (1,1): 4*(1-.5^2-.5^2) + 2*(1-1) = 2.0
    score = _gini_weighted(np.array([2.0, 2.0]), np.array([0.0, 2.0]))
    assert score == pytest.approx(2.0)
    # two pure children: total impurity 0
    assert _gini_weighted(np.array([4.0, 0.0]),
                          np.array([0.0, 3.0])) == pytest.approx(0.0)


def test_parameter_validation():
    x = np.zeros((4, 2))
    y = np.array([0, 1, 0, 1])
    with pytest.raises(ConfigError):
        train_forest(x, y, n_trees=0, max_depth=None, seed=0, num_classes=2)


def test_depth_zero_yields_majority_stumps():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 3))
    y = np.array([0] * 20 + [1] * 10)
    model = train_forest(x, y, n_trees=10, max_depth=0, seed=1,
                         num_classes=2)
    assert all(len(t.feature) == 1 and t.feature[0] < 0
               for t in model.trees)


def test_beats_majority_baseline_on_separable_data():
    rng = np.random.default_rng(17)
    centers = np.array([[-5.0, 0.0], [5.0, 0.0], [0.0, 6.0]])
    x = np.vstack([rng.normal(scale=0.4, size=(25, 2)) + c for c in centers])
    y = np.repeat([0, 1, 2], 25)
    model = train_forest(x, y, n_trees=30, max_depth=None, seed=5,
                         num_classes=3)
    assert (predict_forest(model, x) == y).mean() == 1.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_scaling_features_does_not_change_predictions(seed):
    # axis-aligned splits are invariant to positive per-column scaling
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 2, size=40)
    scale = np.array([2.0, 0.5, 10.0])
    a = train_forest(x, y, n_trees=7, max_depth=4, seed=seed, num_classes=2)
    b = train_forest(x * scale, y, n_trees=7, max_depth=4, seed=seed,
                     num_classes=2)
    queries = rng.normal(size=(25, 3))
    np.testing.assert_array_equal(
        predict_forest(a, queries), predict_forest(b, queries * scale))
