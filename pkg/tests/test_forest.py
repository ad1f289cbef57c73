import numpy as np
import pytest

from idtsim.analysis import ForestParams, RandomForestModel, predict, train_forest
from idtsim.analysis.forest import Tree
from idtsim.errors import DegenerateDataset


def blobs(n=60, d=400, seed=0, classes=3):
    g = np.random.default_rng(seed)
    y = np.repeat(np.arange(classes), n // classes)
    x = g.poisson(3.0, (len(y), d)).astype(float)
    for c in range(classes):
        x[y == c, c * 5:(c + 1) * 5] += 6
    return x, [f"c{k}" for k in y]


def test_single_class_rejected():
    with pytest.raises(DegenerateDataset):
        train_forest(np.zeros((4, 400)), ["a"] * 4)


def test_separable_depth_one():
    x = np.zeros((20, 400))
    x[10:, 123] = np.arange(10) + 5.0
    x[:10, 123] = np.arange(10) * 0.1
    y = ["lo"] * 10 + ["hi"] * 10
    m = train_forest(x, y, ForestParams(n_trees=1, max_depth=1, max_features=400, bootstrap=False))
    assert m.predict(x) == y
    t = m.trees[0]
    # exhaustive threshold check: midway between the classes' closest values
    assert t.feature[0] == 123 and t.threshold[0] == pytest.approx((0.9 + 5.0) / 2)


def test_defaults():
    assert ForestParams().n_trees == 100


def test_unbagged_full_tree_fits_training_set():
    x, y = blobs(seed=3)
    m = train_forest(x, y, ForestParams(n_trees=1, bootstrap=False), seed=1)
    assert m.predict(x) == y


def test_deterministic_and_serializable():
    x, y = blobs()
    a = train_forest(x, y, ForestParams(n_trees=5), seed=11)
    b = train_forest(x, y, ForestParams(n_trees=5), seed=11)
    assert a.dumps() == b.dumps()
    assert a.dumps().startswith("RFMODEL v1\n")
    c = RandomForestModel.loads(a.dumps())
    assert np.allclose(c.predict_proba(x), a.predict_proba(x))
    assert train_forest(x, y, ForestParams(n_trees=5), seed=12).dumps() != a.dumps()


def test_generalizes():
    x, y = blobs(n=120, seed=1)
    xt, yt = blobs(n=60, seed=2)
    m = train_forest(x, y, ForestParams(n_trees=20), seed=0)
    assert np.mean(np.array(m.predict(xt)) == np.array(yt)) >= 0.9


def test_leaf_invariants():
    x, y = blobs()
    m = train_forest(x, y, ForestParams(n_trees=3), seed=0)
    for t in m.trees:
        inner = t.feature >= 0
        assert np.all(t.feature[inner] < 400)
        assert np.allclose(t.value.sum(axis=1), 1.0)


def _stub(values):
    return Tree(np.full(1, -1), np.zeros(1), np.full(1, -1), np.full(1, -1), np.array([values]))


def test_unanimous_and_tie():
    m = RandomForestModel(["a", "b"], 400, [_stub([1.0, 0.0])] * 3, ForestParams(n_trees=3))
    label, proba = predict(m, np.zeros(400))
    assert label == "a" and proba[0] == 1.0
    m = RandomForestModel(["a", "b"], 400, [_stub([1.0, 0.0]), _stub([0.0, 1.0])], ForestParams(n_trees=2))
    assert predict(m, np.zeros(400))[0] == "a"
