import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from featprop.learning import (
    ExpanderMode,
    Model,
    TrainConfig,
    cross_entropy,
    expand,
    grad,
    init_model,
    load_checkpoint,
    loss,
    predict_proba,
    save_checkpoint,
    softmax,
    train,
    with_params,
)
from featprop.propagation import OverflowDetected

MODES = list(ExpanderMode)


def flat(arrays: dict) -> np.ndarray:
    return np.concatenate([np.ravel(arrays[k]) for k in sorted(arrays)])


def numeric_grad(model, ds, idx, lam, depth, h=1e-6):
    out = {}
    for name, W in model.named_arrays().items():
        G = np.zeros_like(W)
        for i in np.ndindex(W.shape):
            orig = W[i]
            W[i] = orig + h
            fp = loss(model, ds, idx, lam, depth)
            W[i] = orig - h
            fm = loss(model, ds, idx, lam, depth)
            W[i] = orig
            G[i] = (fp - fm) / (2 * h)
        out[name] = G
    return out


def gradient_rel_error(model, ds, idx=None, lam=1e-3, depth=None) -> float:
    _, analytic, _ = grad(model, ds, idx, lam, depth)
    numeric = numeric_grad(model, ds, idx, lam, depth)
    a, n = flat(analytic), flat(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def perturbed_model(mode, ds, seed, node_dim=3):
    """Random model away from the origin so ReLUs and head are nontrivial."""
    cfg = TrainConfig(node_dim=node_dim, unroll_depth=2, seed=seed)
    rng = np.random.default_rng(seed)
    model = init_model(mode, ds.X.shape[1], ds.Xe.shape[1], cfg, rng)
    for W in model.named_arrays().values():
        W += rng.normal(0, 0.3, size=W.shape)
    if "W5" in model.params:
        model.params["W5"] = np.abs(model.params["W5"]) * 0.2
    return model


@pytest.mark.parametrize("mode", MODES)
def test_gradients_match_finite_differences(small_ds, mode):
    model = perturbed_model(mode, small_ds, seed=3)
    assert gradient_rel_error(model, small_ds, lam=1e-2) < 1e-6


def test_gradient_on_minibatch(small_ds):
    model = perturbed_model(ExpanderMode.EDGE2VEC, small_ds, seed=5)
    idx = small_ds.train_idx[:17]
    assert gradient_rel_error(model, small_ds, idx=idx, depth=4) < 1e-6


def test_cross_entropy_oracle():
    logits = np.array([[2.0, 0.5], [-1.0, 1.0], [0.0, 0.0]])
    Y = np.array([[1, 0], [0, 1], [1, 0]])
    expected = -np.mean([math.log(math.exp(2) / (math.exp(2) + math.exp(0.5))),
                         math.log(math.exp(1) / (math.exp(-1) + math.exp(1))),
                         math.log(0.5)])
    assert cross_entropy(logits, Y) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError, match="row 1"):
        cross_entropy(logits, np.array([[1, 0], [1, 1], [0, 1]]))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(row, shift):
    z = np.array([row])
    np.testing.assert_allclose(softmax(z), softmax(z + shift), atol=1e-12)
    assert softmax(z).sum() == pytest.approx(1.0)


def test_control1_nested_in_edge2vec(small_ds):
    d_e = small_ds.Xe.shape[1]
    cfg = TrainConfig(node_dim=3, edge_dim=d_e, seed=1)
    e2v = init_model("edge2vec", small_ds.X.shape[1], d_e, cfg)
    e2v.params.update(W1=np.eye(d_e), W2=np.zeros((3, d_e)), W3=np.zeros((3, d_e)))
    c1 = Model(ExpanderMode.CONTROL1, {}, e2v.theta.copy(), e2v.bias.copy())
    np.testing.assert_array_equal(predict_proba(e2v, small_ds), predict_proba(c1, small_ds))
    np.testing.assert_array_equal(predict_proba(e2v, small_ds, converged=False), predict_proba(c1, small_ds))


def test_control2_concatenates_endpoints(small_ds):
    g = small_ds.graph
    E = expand("control2", small_ds.X, small_ds.Xe, {}, g)
    e = 7
    s, t = g.edges[e]
    np.testing.assert_array_equal(E[e], np.concatenate([small_ds.Xe[e], small_ds.X[s], small_ds.X[t]]))


def test_unrolled_approaches_converged(small_ds):
    model = perturbed_model(ExpanderMode.EDGE2VEC, small_ds, seed=2)
    p = model.params
    E_conv = expand("edge2vec", small_ds.X, small_ds.Xe, p, small_ds.graph)
    errs = [np.max(np.abs(expand("edge2vec", small_ds.X, small_ds.Xe, p, small_ds.graph, depth=k) - E_conv))
            for k in (1, 5, 30)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-8


def test_projection_keeps_w5_feasible(small_ds):
    cfg = TrainConfig(learning_rate=2.0, epochs=30, node_dim=3, projection_margin=0.05)
    model, log = train(small_ds, "edge2vec", cfg)
    for row in log:
        assert row["w5_colsum_max"] <= 1 - 0.05
    assert np.all(model.params["W5"] >= 0)


def test_training_reduces_loss_and_is_deterministic(small_ds):
    cfg = TrainConfig(learning_rate=0.5, epochs=40, node_dim=3, seed=4)
    m1, log1 = train(small_ds, "edge2vec", cfg)
    m2, log2 = train(small_ds, "edge2vec", cfg)
    assert log1[-1]["loss"] < log1[0]["loss"]
    assert log1 == log2
    np.testing.assert_array_equal(flat(m1.named_arrays()), flat(m2.named_arrays()))


def test_minibatch_training(small_ds):
    cfg = TrainConfig(learning_rate=0.3, epochs=5, node_dim=3, batch=16)
    _, log = train(small_ds, "control2", cfg)
    assert len(log) == 5 and all(math.isfinite(r["loss"]) for r in log)


def test_large_lambda_shrinks_expander(small_ds):
    base = dict(learning_rate=0.3, epochs=60, node_dim=3, seed=0)
    small, _ = train(small_ds, "edge2vec", TrainConfig(lam=0.0, **base))
    big, _ = train(small_ds, "edge2vec", TrainConfig(lam=0.5, **base))
    norm = lambda m: sum(float((W * W).sum()) for W in m.params.values())  # noqa: E731
    assert norm(big) < norm(small)


def test_overflow_names_epoch_and_condition(small_ds):
    cfg = TrainConfig(learning_rate=50.0, epochs=50, node_dim=3, unroll_depth=5, projection=False,
                      overflow_limit=1e6)
    with pytest.raises(OverflowDetected) as exc:
        train(small_ds, "structure2vec", cfg)
    assert "epoch" in exc.value.detail and "violated" in exc.value.detail


def test_order_zero_is_plain_regression(small_ds):
    cfg = TrainConfig(learning_rate=0.05, epochs=20, node_dim=3, unroll_depth=0, projection=False)
    model, log = train(small_ds, "structure2vec", cfg)
    assert math.isfinite(log[-1]["loss"])
    # with no propagation steps the node weights receive no gradient
    _, grads, _ = grad(model, small_ds, depth=0)
    assert not np.any(grads["W5"]) and not np.any(grads["W4"])


def test_checkpoint_roundtrip(tmp_path, small_ds):
    model, _ = train(small_ds, "edge2vec", TrainConfig(epochs=3, node_dim=3))
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    assert back.mode == model.mode and back.meta["config"]["lambda"] == 1e-4
    np.testing.assert_array_equal(predict_proba(back, small_ds), predict_proba(model, small_ds))


def test_with_params_copies(small_ds):
    model = init_model("edge2vec", 3, 2, TrainConfig(node_dim=3))
    other = with_params(model, W5=np.zeros((3, 3)), bias=[1.0, 2.0])
    assert not np.any(other.params["W5"]) and np.any(model.params["W5"])
    assert other.bias.tolist() == [1.0, 2.0] and model.bias.tolist() == [0.0, 0.0]


def test_config_validation():
    for bad in (dict(lam=-1), dict(unroll_depth=-1), dict(epochs=-1), dict(batch=0), dict(batch="half")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig().to_dict()["lambda"] == 1e-4
