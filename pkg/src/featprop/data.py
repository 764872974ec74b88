"""Bundled Zachary karate club graph and a synthetic fraud-transaction generator.

The generator builds a buyer -> seller multigraph. A few sellers are
fraudulent; that fact is never written into any feature column. It shows up
only through who buys from them: fraudulent transactions mostly come from a
"susceptible" buyer population, so the average buyer profile of a fraud
seller is shifted. A single edge sees one buyer; propagation sees them all.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import (
    ParseError,
    SparseGraph,
    build_graph,
    load_graph,
    read_edge_list,
    read_feature_csv,
    write_edge_list,
    write_feature_csv,
)

FRAUD = np.array([1.0, 0.0])
NORMAL = np.array([0.0, 1.0])


@dataclass(frozen=True, eq=False)
class LabeledEdgeDataset:
    """Graph plus node/edge features and one-hot edge labels (fraud = [1, 0])."""

    graph: SparseGraph
    X: np.ndarray
    Xe: np.ndarray
    Y: np.ndarray
    is_train: np.ndarray

    def __post_init__(self):
        g = self.graph
        if self.X.shape[0] != g.n or self.Xe.shape[0] != g.m:
            raise ValueError("feature rows must match node and edge counts")
        if self.Y.shape != (g.m, 2) or not ((self.Y == FRAUD).all(1) | (self.Y == NORMAL).all(1)).all():
            raise ValueError("labels must be one-hot rows [1, 0] or [0, 1], one per edge")
        if self.is_train.shape != (g.m,):
            raise ValueError("split must assign every edge")

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.is_train)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.is_train)

    @property
    def fraud(self) -> np.ndarray:
        return self.Y[:, 0] == 1.0


@dataclass(frozen=True)
class FraudGenConfig:
    n_buyers: int = 300
    n_sellers: int = 100
    n_edges: int = 5000
    fraud_rate: float = 0.02
    n_fraud_sellers: int = 5
    d: int = 4
    d_e: int = 4
    noise: float = 1.0
    seed: int = 0
    susceptible_frac: float = 0.1
    # P(buyer of a fraud edge is drawn from the susceptible population)
    susceptible_pull: float = 0.8
    buyer_shift: float = 2.5
    edge_shift: float = 0.5
    repeat_rate: float = 0.1
    test_frac: float = 0.2

    def validate(self):
        if not 0 < self.fraud_rate < 1:
            raise ValueError("fraud_rate must lie in (0, 1)")
        for name in ("n_buyers", "n_sellers", "n_edges", "n_fraud_sellers", "d", "d_e"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_fraud_sellers > self.n_sellers:
            raise ValueError("more fraud sellers than sellers")
        if round(self.fraud_rate * self.n_edges) < 1:
            raise ValueError("fraud_rate * n_edges rounds to zero fraud edges")
        if round(self.fraud_rate * self.n_edges) >= self.n_edges:
            raise ValueError("no normal edges left")
        if not 0 < self.test_frac < 1:
            raise ValueError("test_frac must lie in (0, 1)")


def generate_fraud_dataset(cfg: FraudGenConfig | None = None) -> LabeledEdgeDataset:
    """Seeded bipartite transaction multigraph with planted, graph-level fraud signal."""
    cfg = cfg or FraudGenConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    nb, ns, m = cfg.n_buyers, cfg.n_sellers, cfg.n_edges
    n_fraud = int(round(cfg.fraud_rate * m))

    n_susc = max(1, int(round(cfg.susceptible_frac * nb)))
    susceptible = rng.choice(nb, size=n_susc, replace=False)
    fraud_sellers = nb + rng.choice(ns, size=cfg.n_fraud_sellers, replace=False)

    is_fraud = np.zeros(m, bool)
    is_fraud[rng.choice(m, size=n_fraud, replace=False)] = True

    buyers = rng.integers(0, nb, size=m)
    sellers = nb + rng.integers(0, ns, size=m)
    pull = rng.random(m) < cfg.susceptible_pull
    fraud_idx = np.flatnonzero(is_fraud)
    sellers[fraud_idx] = rng.choice(fraud_sellers, size=n_fraud)
    pulled = fraud_idx[pull[fraud_idx]]
    buyers[pulled] = rng.choice(susceptible, size=pulled.size)
    # repeat purchases: copy the endpoints of an earlier normal edge
    normal_idx = np.flatnonzero(~is_fraud)
    repeat = rng.random(normal_idx.size) < cfg.repeat_rate
    for k in np.flatnonzero(repeat):
        if k == 0:
            continue
        src = normal_idx[rng.integers(0, k)]
        e = normal_idx[k]
        buyers[e], sellers[e] = buyers[src], sellers[src]

    X = cfg.noise * rng.standard_normal((nb + ns, cfg.d))
    X[susceptible, 0] += cfg.buyer_shift
    Xe = cfg.noise * rng.standard_normal((m, cfg.d_e))
    Xe[is_fraud, 0] += cfg.edge_shift
    Y = np.where(is_fraud[:, None], FRAUD, NORMAL)

    # stratified split so both classes appear on each side
    is_train = np.ones(m, bool)
    for cls in (fraud_idx, normal_idx):
        n_test = max(1, int(round(cfg.test_frac * cls.size)))
        is_train[rng.choice(cls, size=n_test, replace=False)] = False

    g = build_graph(np.column_stack([buyers, sellers]), nb + ns, directed=False)
    return LabeledEdgeDataset(g, X, Xe, Y, is_train)


# --- Zachary karate club ----------------------------------------------------


def load_zachary() -> tuple[SparseGraph, np.ndarray]:
    """Return the 34-node karate club graph (undirected) and its two-club labels."""
    root = resources.files("featprop") / "datafiles"
    try:
        with resources.as_file(root / "karate.tsv") as path:
            edges = read_edge_list(path)
        with resources.as_file(root / "karate_clubs.csv") as path:
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise RuntimeError(f"bundled karate club data missing: {exc}") from None
    labels = np.array([int(r["community"]) for r in sorted(rows, key=lambda r: int(r["node"]))])
    if labels.shape != (34,) or len(edges) != 78:
        raise RuntimeError("bundled karate club data is corrupt")
    return build_graph(edges, 34, directed=False), labels


# --- serialization ----------------------------------------------------------


def save_dataset(ds: LabeledEdgeDataset, path) -> Path:
    """Write edges.tsv, node_features.csv, edge_features.csv, labels.csv, meta.json."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_edge_list(root / "edges.tsv", ds.graph)
    write_feature_csv(root / "node_features.csv", ds.X, "node_index")
    write_feature_csv(root / "edge_features.csv", ds.Xe, "edge_index")
    with open(root / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_index", "y0", "y1", "split"])
        for e, (y, tr) in enumerate(zip(ds.Y.astype(int).tolist(), ds.is_train.tolist())):
            w.writerow([e, y[0], y[1], "train" if tr else "test"])
    meta = {"n": ds.graph.n, "m": ds.graph.m, "directed": ds.graph.directed}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return root


def load_dataset(path) -> LabeledEdgeDataset:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text()) if (root / "meta.json").exists() else {}
    X = read_feature_csv(root / "node_features.csv")
    n = int(meta.get("n", X.shape[0]))
    g = load_graph(root / "edges.tsv", n=n, directed=bool(meta.get("directed", True)))
    Xe = read_feature_csv(root / "edge_features.csv", rows=g.m)
    Y = np.zeros((g.m, 2))
    is_train = np.zeros(g.m, bool)
    path = root / "labels.csv"
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, 2):
            try:
                e = int(row["edge_index"])
                Y[e] = (float(row["y0"]), float(row["y1"]))
                split = row["split"]
            except (KeyError, ValueError, IndexError) as exc:
                raise ParseError(path, lineno, f"bad label row: {exc}") from None
            if split not in ("train", "test"):
                raise ParseError(path, lineno, f"split must be train or test, got {split!r}")
            is_train[e] = split == "train"
    try:
        return LabeledEdgeDataset(g, X, Xe, Y, is_train)
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None

