import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featprop.data import (
    FRAUD,
    NORMAL,
    FraudGenConfig,
    LabeledEdgeDataset,
    generate_fraud_dataset,
    load_dataset,
    load_zachary,
    save_dataset,
)
from featprop.graph import ParseError


def test_zachary_bundle():
    g, clubs = load_zachary()
    assert (g.n, g.m, g.directed) == (34, 78, False)
    assert np.bincount(clubs).tolist() == [17, 17]
    # the two leaders (nodes 0 and 33) head different clubs
    assert clubs[0] != clubs[33]
    assert g.degree[0] == 16 and g.degree[33] == 17


def test_default_dataset_shape(fraud_ds):
    ds = fraud_ds
    assert (ds.graph.n, ds.graph.m) == (400, 5000)
    assert ds.fraud.sum() == 100
    assert ds.X.shape == (400, 4) and ds.Xe.shape == (5000, 4)
    # buyers are sources, sellers targets
    assert ds.graph.sources.max() < 300 <= ds.graph.targets.min()


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.floats(0.005, 0.3))
def test_fraud_rate_exact_and_split_stratified(seed, rate):
    cfg = FraudGenConfig(seed=seed, fraud_rate=rate, n_edges=600, n_buyers=60, n_sellers=20)
    ds = generate_fraud_dataset(cfg)
    n_fraud = int(ds.fraud.sum())
    assert n_fraud == round(rate * 600)
    assert abs(n_fraud / 600 - rate) <= 0.1 * rate + 1 / 600
    assert ds.fraud[ds.test_idx].any() and ds.fraud[ds.train_idx].any()
    assert (~ds.fraud[ds.test_idx]).any()


def test_generator_is_seeded():
    a = generate_fraud_dataset(FraudGenConfig(seed=3, n_edges=300))
    b = generate_fraud_dataset(FraudGenConfig(seed=3, n_edges=300))
    c = generate_fraud_dataset(FraudGenConfig(seed=4, n_edges=300))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.graph.sources, b.graph.sources)
    assert not np.array_equal(a.Xe, c.Xe)


def test_fraud_signal_lives_in_the_graph(fraud_ds):
    """Fraud sellers are indistinguishable by their own features, but their
    average buyer profile is shifted."""
    ds = fraud_ds
    g = ds.graph
    fraud_sellers = np.unique(g.targets[ds.fraud])
    normal_sellers = np.setdiff1d(np.unique(g.targets), fraud_sellers)
    buyer_mean = np.zeros(g.n)
    np.add.at(buyer_mean, g.targets, ds.X[g.sources, 0])
    counts = np.bincount(g.targets, minlength=g.n)
    buyer_mean = buyer_mean / np.maximum(counts, 1)
    assert buyer_mean[fraud_sellers].mean() > buyer_mean[normal_sellers].mean() + 0.3
    assert abs(ds.X[fraud_sellers, 0].mean() - ds.X[normal_sellers, 0].mean()) < 1.5


def test_config_validation():
    with pytest.raises(ValueError):
        generate_fraud_dataset(FraudGenConfig(fraud_rate=0.0))
    with pytest.raises(ValueError):
        generate_fraud_dataset(FraudGenConfig(n_fraud_sellers=200))
    with pytest.raises(ValueError):
        generate_fraud_dataset(FraudGenConfig(n_edges=10, fraud_rate=0.01))


def test_label_validation(small_ds):
    Y = small_ds.Y.copy()
    Y[0] = [1, 1]
    with pytest.raises(ValueError, match="one-hot"):
        LabeledEdgeDataset(small_ds.graph, small_ds.X, small_ds.Xe, Y, small_ds.is_train)
    with pytest.raises(ValueError):
        LabeledEdgeDataset(small_ds.graph, small_ds.X[:-1], small_ds.Xe, small_ds.Y, small_ds.is_train)
    assert FRAUD.tolist() == [1, 0] and NORMAL.tolist() == [0, 1]


def test_save_load_roundtrip(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(back.X, small_ds.X)
    np.testing.assert_array_equal(back.Xe, small_ds.Xe)
    np.testing.assert_array_equal(back.Y, small_ds.Y)
    np.testing.assert_array_equal(back.is_train, small_ds.is_train)
    assert back.graph.edges == small_ds.graph.edges and back.graph.directed is False


def test_load_reports_bad_label_line(tmp_path, small_ds):
    root = save_dataset(small_ds, tmp_path / "ds")
    lines = (root / "labels.csv").read_text().splitlines()
    lines[3] = lines[3].replace("train", "holdout").replace("test", "holdout")
    (root / "labels.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="labels.csv:4:"):
        load_dataset(root)
