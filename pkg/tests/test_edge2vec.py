import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from featprop.edge2vec import (
    EdgePropWeights,
    check_edge2vec_conditions,
    coupled_input,
    edge2vec_propagate,
    edge_embeddings,
    full_coupled_propagate,
)
from featprop.graph import build_graph
from featprop.propagation import InfeasibleWeights, SolverConfig

from .conftest import feasible_w2, graphs, seeds
from .test_graph import dense_oracles

TIGHT = SolverConfig(tol=1e-13, max_iter=20000)


def make_weights(rng, d=2, de=3, dn=2, dee=2, full=False, colsum=0.6):
    W = dict(
        W1=rng.standard_normal((de, dee)),
        W2=rng.standard_normal((dn, dee)),
        W3=rng.standard_normal((dn, dee)),
        W4=rng.standard_normal((d, dn)),
        W5=feasible_w2(rng, dn, colsum),
    )
    if full:
        # small nonnegative feedback keeps the combined matrix feasible
        W["W2"] = np.abs(W["W2"]) * 0.1
        W["W6"] = rng.random((dee, dn)) * 0.1
        W["W7"] = rng.random((dee, dn)) * 0.1
    return EdgePropWeights(**W)


def test_shape_validation(rng):
    w = make_weights(rng)
    assert (w.node_dim, w.edge_dim, w.is_reduced) == (2, 2, True)
    with pytest.raises(ValueError, match="has shape"):
        EdgePropWeights(w.W1, w.W2, w.W3, w.W4, np.eye(3))
    with pytest.raises(ValueError, match="W6"):
        EdgePropWeights(w.W1, w.W2, w.W3, w.W4, w.W5, W6=np.ones((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        EdgePropWeights(w.W1, w.W2, w.W3, w.W4, w.W5 * np.nan)


def test_conditions_reduced_and_full(rng):
    w = make_weights(rng, full=True)
    with pytest.raises(ValueError):
        check_edge2vec_conditions(w, "reduced")
    r = check_edge2vec_conditions(w, "full")
    np.testing.assert_allclose(r.colsum_max, (w.W5 + w.W2 @ w.W6 + w.W2 @ w.W7).sum(0).max())
    bad = EdgePropWeights(w.W1, w.W2, w.W3, w.W4, w.W5 - 1.0, w.W6, w.W7)
    r = check_edge2vec_conditions(bad, "full")
    assert not r.verdict and "W5 + W2 W6 + W2 W7" in r.violated[0]


def test_strict_positivity_flag():
    w = EdgePropWeights(np.ones((1, 1)), np.ones((2, 1)), np.ones((2, 1)), np.ones((1, 2)),
                        np.array([[0.3, 0.0], [0.2, 0.4]]))
    assert check_edge2vec_conditions(w).verdict
    r = check_edge2vec_conditions(w, strict=True)
    assert not r.verdict and "strict positivity" in r.violated[-1]


def test_infeasible_gate(rng):
    w = make_weights(rng)
    w = EdgePropWeights(w.W1, w.W2, w.W3, w.W4, 2 * np.eye(2))
    g = build_graph([(0, 1), (1, 0)], 2)
    with pytest.raises(InfeasibleWeights):
        edge2vec_propagate(np.ones((2, 2)), np.ones((2, 3)), w, g)


@given(graphs(max_n=8, max_m=20), seeds)
def test_reduced_matches_dense_solve(g, seed):
    rng = np.random.default_rng(seed)
    w = make_weights(rng)
    X, Xe = rng.standard_normal((g.n, 2)), rng.standard_normal((g.m, 3))
    H, E = edge2vec_propagate(X, Xe, w, g, TIGHT)
    _, T, Cs, Ct = dense_oracles(g)
    # vec(H) with row-major unknowns: (I - kron(T, W5^T)) vec(H) = vec(X W4)
    n, d = g.n, w.node_dim
    Hd = np.linalg.solve(np.eye(n * d) - np.kron(T, w.W5.T), (X @ w.W4).reshape(-1)).reshape(n, d)
    np.testing.assert_allclose(H, Hd, atol=1e-10)
    np.testing.assert_allclose(E, Xe @ w.W1 + Cs @ Hd @ w.W2 + Ct @ Hd @ w.W3, atol=1e-10)


@given(graphs(max_n=8, max_m=20), seeds)
def test_full_matches_eliminated_dense_oracle(g, seed):
    rng = np.random.default_rng(seed)
    w = make_weights(rng, full=True)
    assume(check_edge2vec_conditions(w, "full").verdict)
    X, Xe = rng.standard_normal((g.n, 2)), rng.standard_normal((g.m, 3))
    A, T, Cs, Ct = dense_oracles(g)
    L = X @ w.W4 + A @ Cs.T @ Xe @ w.W1 @ w.W6 + A @ Ct.T @ Xe @ w.W1 @ w.W7
    np.testing.assert_allclose(coupled_input(X, Xe, w, g), L, atol=1e-12)
    M = w.W5 + w.W2 @ w.W6 + w.W2 @ w.W7
    n, d = g.n, w.node_dim
    Hd = np.linalg.solve(np.eye(n * d) - np.kron(T, M.T), L.reshape(-1)).reshape(n, d)
    for method in ("iterative", "direct"):
        H, E = full_coupled_propagate(X, Xe, w, g, TIGHT, method=method)
        np.testing.assert_allclose(H, Hd, atol=1e-9)
        np.testing.assert_allclose(E, edge_embeddings(Xe, Hd, w, g), atol=1e-9)


@given(st.integers(2, 9), seeds)
def test_literal_joint_system_on_directed_cycle(n, seed):
    """On a directed cycle (one in- and one out-edge per node) with W3 = W7 = 0,
    iterating the joint edge/node system equals the eliminated solve."""
    rng = np.random.default_rng(seed)
    g = build_graph([(i, (i + 1) % n) for i in range(n)], n)
    w0 = make_weights(rng, full=True)
    w = EdgePropWeights(w0.W1, w0.W2, np.zeros_like(w0.W3), w0.W4, w0.W5, w0.W6, np.zeros_like(w0.W7))
    X, Xe = rng.standard_normal((n, 2)), rng.standard_normal((n, 3))
    A, T, Cs, Ct = dense_oracles(g)
    H = X @ w.W4
    for _ in range(2000):
        E = Xe @ w.W1 + Cs @ H @ w.W2 + Ct @ H @ w.W3
        H = X @ w.W4 + T @ H @ w.W5 + A @ Cs.T @ E @ w.W6 + A @ Ct.T @ E @ w.W7
    E = Xe @ w.W1 + Cs @ H @ w.W2 + Ct @ H @ w.W3
    Hf, Ef = full_coupled_propagate(X, Xe, w, g, TIGHT)
    np.testing.assert_allclose(Hf, H, atol=1e-9)
    np.testing.assert_allclose(Ef, E, atol=1e-9)


def test_joint_system_differs_off_the_cycle(rng):
    """With two out-edges at one node, C_s^T C_s is no longer the identity and
    the elimination no longer matches the joint system."""
    g = build_graph([(0, 1), (0, 2), (1, 2), (2, 0)], 3)
    w0 = make_weights(rng, full=True)
    w = EdgePropWeights(w0.W1, w0.W2, np.zeros_like(w0.W3), w0.W4, w0.W5, w0.W6, np.zeros_like(w0.W7))
    X, Xe = rng.standard_normal((3, 2)), rng.standard_normal((4, 3))
    A, T, Cs, Ct = dense_oracles(g)
    assert not np.allclose(Cs.T @ Cs, np.eye(3))
    H = X @ w.W4
    for _ in range(2000):
        E = Xe @ w.W1 + Cs @ H @ w.W2
        H = X @ w.W4 + T @ H @ w.W5 + A @ Cs.T @ E @ w.W6
    Hf, _ = full_coupled_propagate(X, Xe, w, g, TIGHT)
    assert np.max(np.abs(Hf - H)) > 1e-6


@given(graphs(max_n=8, max_m=20), seeds)
def test_zero_feedback_reduces_to_edge2vec(g, seed):
    rng = np.random.default_rng(seed)
    w = make_weights(rng)
    z = np.zeros((w.edge_dim, w.node_dim))
    wf = EdgePropWeights(w.W1, w.W2, w.W3, w.W4, w.W5, z, z)
    X, Xe = rng.standard_normal((g.n, 2)), rng.standard_normal((g.m, 3))
    H1, E1 = edge2vec_propagate(X, Xe, w, g)
    H2, E2 = full_coupled_propagate(X, Xe, wf, g)
    assert np.max(np.abs(H1 - H2), initial=0.0) <= 1e-12
    assert np.max(np.abs(E1 - E2), initial=0.0) <= 1e-12


def test_parallel_edges_get_distinct_embeddings(rng):
    g = build_graph([(0, 1), (0, 1), (1, 2)], 3)
    w = make_weights(rng)
    Xe = rng.standard_normal((3, 3))
    _, E = edge2vec_propagate(rng.standard_normal((3, 2)), Xe, w, g)
    assert not np.allclose(E[0], E[1])
    # same endpoints: the difference comes from the edge's own features only
    np.testing.assert_allclose(E[0] - E[1], (Xe[0] - Xe[1]) @ w.W1, atol=1e-12)


def test_bad_method(rng):
    w = make_weights(rng, full=True)
    g = build_graph([(0, 1)], 2)
    with pytest.raises(ValueError):
        full_coupled_propagate(np.ones((2, 2)), np.ones((1, 3)), w, g, method="magic")
