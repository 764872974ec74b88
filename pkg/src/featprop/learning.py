"""Edge classification with a feature-expansion stage and a linear softmax head.

Four expanders are available:

* ``control1``: raw edge features.
* ``control2``: edge features concatenated with both endpoint node features.
* ``edge2vec``: reduced edge/node propagation (normalised transition matrix).
* ``structure2vec``: ReLU propagation over the raw adjacency, used to study
  divergence when the propagation matrix is left unconstrained.

Training differentiates through a fixed number of propagation steps
(``unroll_depth``) with hand-written reverse-mode gradients. Prediction with
``edge2vec`` solves the propagation to tolerance instead.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .data import LabeledEdgeDataset
from .edge2vec import EdgePropWeights, edge2vec_propagate
from .graph import (
    SparseGraph,
    adjacency_apply,
    adjacency_transpose_apply,
    incidence_apply,
    incidence_transpose_apply,
    transition_apply,
    transition_transpose_apply,
)
from .propagation import (
    OverflowDetected,
    SolverConfig,
    check_convergence_conditions,
    project_to_feasible,
    solver_config_for,
)


class ExpanderMode(str, Enum):
    CONTROL1 = "control1"
    CONTROL2 = "control2"
    EDGE2VEC = "edge2vec"
    STRUCTURE2VEC = "structure2vec"


PROPAGATING = (ExpanderMode.EDGE2VEC, ExpanderMode.STRUCTURE2VEC)
# W6 here is the neighbour raw-feature injection of the ReLU expander
PARAM_NAMES = {
    ExpanderMode.CONTROL1: (),
    ExpanderMode.CONTROL2: (),
    ExpanderMode.EDGE2VEC: ("W1", "W2", "W3", "W4", "W5"),
    ExpanderMode.STRUCTURE2VEC: ("W1", "W2", "W3", "W4", "W5", "W6"),
}


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-4
    learning_rate: float = 0.05
    epochs: int = 200
    unroll_depth: int = 3
    batch: int | str = "full"
    seed: int = 0
    projection: bool = True
    projection_margin: float = 1e-3
    node_dim: int = 8
    edge_dim: int | None = None
    overflow_limit: float = 1e12

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.unroll_depth < 0:
            raise ValueError("unroll_depth must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch != "full" and (not isinstance(self.batch, int) or self.batch < 1):
            raise ValueError("batch must be 'full' or a positive integer")

    @property
    def edge_out_dim(self) -> int:
        return self.edge_dim if self.edge_dim is not None else self.node_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(eq=False)
class Model:
    mode: ExpanderMode
    params: dict
    theta: np.ndarray
    bias: np.ndarray
    unroll_depth: int = 3
    meta: dict = field(default_factory=dict)

    def named_arrays(self) -> dict:
        """Every trainable array, expander first, then ``theta`` and ``bias``."""
        out = dict(self.params)
        out["theta"] = self.theta
        out["bias"] = self.bias
        return out

    def edge_weights(self) -> EdgePropWeights:
        p = self.params
        return EdgePropWeights(p["W1"], p["W2"], p["W3"], p["W4"], p["W5"])

    def copy(self) -> "Model":
        return Model(self.mode, {k: v.copy() for k, v in self.params.items()}, self.theta.copy(),
                     self.bias.copy(), self.unroll_depth, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "unroll_depth": self.unroll_depth,
            "dims": {k: list(v.shape) for k, v in self.named_arrays().items()},
            "params": {k: v.tolist() for k, v in self.params.items()},
            "theta": self.theta.tolist(),
            "bias": self.bias.tolist(),
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        mode = ExpanderMode(d["mode"])
        params = {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()}
        meta = {k: v for k, v in d.items() if k not in ("mode", "unroll_depth", "dims", "params", "theta", "bias")}
        return cls(mode, params, np.asarray(d["theta"], dtype=np.float64), np.asarray(d["bias"], dtype=np.float64),
                   int(d.get("unroll_depth", 3)), meta)


def save_checkpoint(path, model: Model) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return Model.from_dict(json.load(fh))


def head_input_dim(mode: ExpanderMode, d: int, d_e: int, cfg: TrainConfig) -> int:
    if mode == ExpanderMode.CONTROL1:
        return d_e
    if mode == ExpanderMode.CONTROL2:
        return d_e + 2 * d
    return cfg.edge_out_dim


def init_model(mode, d: int, d_e: int, cfg: TrainConfig, rng: np.random.Generator | None = None) -> Model:
    """W5 ~ U[0, 0.1/d'] (inside the feasible region); everything else ~ U[-0.1, 0.1]; bias 0."""
    mode = ExpanderMode(mode)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    dn, de = cfg.node_dim, cfg.edge_out_dim
    shapes = {"W1": (d_e, de), "W2": (dn, de), "W3": (dn, de), "W4": (d, dn), "W5": (dn, dn), "W6": (d, dn)}
    params = {}
    for name in PARAM_NAMES[mode]:
        if name == "W5":
            params[name] = rng.uniform(0.0, 0.1 / dn, size=shapes[name])
        else:
            params[name] = rng.uniform(-0.1, 0.1, size=shapes[name])
    theta = rng.uniform(-0.1, 0.1, size=(head_input_dim(mode, d, d_e, cfg), 2))
    return Model(mode, params, theta, np.zeros(2), cfg.unroll_depth)


# --- forward ----------------------------------------------------------------


def _edge_compose(Xe, H, p, g):
    return Xe @ p["W1"] + incidence_apply(g, "source", H) @ p["W2"] + incidence_apply(g, "target", H) @ p["W3"]


def _forward(mode, X, Xe, p, g, depth):
    """Expanded edge features plus whatever the backward pass needs."""
    if mode == ExpanderMode.CONTROL1:
        return Xe, None
    if mode == ExpanderMode.CONTROL2:
        return np.hstack([Xe, incidence_apply(g, "source", X), incidence_apply(g, "target", X)]), None
    if mode == ExpanderMode.EDGE2VEC:
        L = X @ p["W4"]
        Hs, SHs = [L], []
        for _ in range(depth):
            SH = transition_apply(g, Hs[-1])
            SHs.append(SH)
            Hs.append(L + SH @ p["W5"])
        H = Hs[-1]
        return _edge_compose(Xe, H, p, g), {"H": H, "SHs": SHs}
    if mode == ExpanderMode.STRUCTURE2VEC:
        AX = adjacency_apply(g, X)
        c = X @ p["W4"] + AX @ p["W6"]
        H = np.zeros_like(c)
        SHs, Zs = [], []
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(depth):
                SH = adjacency_apply(g, H)
                Z = c + SH @ p["W5"]
                SHs.append(SH)
                Zs.append(Z)
                H = np.maximum(Z, 0.0)
            E = _edge_compose(Xe, H, p, g)
        return E, {"H": H, "SHs": SHs, "Zs": Zs, "AX": AX}
    raise ValueError(f"unknown mode {mode!r}")


def expand(mode, X, Xe, params, g: SparseGraph, cfg: SolverConfig | None = None, depth: int | None = None):
    """Expanded edge features.

    For ``edge2vec`` a ``depth`` of None solves the node propagation to
    tolerance; an integer unrolls exactly that many steps (training path).
    ``structure2vec`` always unrolls (default depth 3).
    """
    mode = ExpanderMode(mode)
    if mode == ExpanderMode.EDGE2VEC and depth is None:
        w = EdgePropWeights(params["W1"], params["W2"], params["W3"], params["W4"], params["W5"])
        _, E = edge2vec_propagate(X, Xe, w, g, cfg, check=False)
        return E
    if mode == ExpanderMode.STRUCTURE2VEC and depth is None:
        depth = 3
    E, _ = _forward(mode, np.asarray(X, float), np.asarray(Xe, float), params, g, depth or 0)
    return E


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_one_hot(Y):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise ValueError("labels must be an (m, 2) array of one-hot rows")
    ok = ((Y == 0) | (Y == 1)).all(axis=1) & (Y.sum(axis=1) == 1)
    if not ok.all():
        raise ValueError(f"label row {int(np.flatnonzero(~ok)[0])} is not one-hot")
    return Y


def cross_entropy(logits, Y) -> float:
    """Mean of -sum(y * log softmax(logits)) over rows."""
    Y = _check_one_hot(Y)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(Y * logp).sum() / Y.shape[0])


def l2_penalty(model: Model, lam: float) -> float:
    return lam * sum(float((W * W).sum()) for W in model.params.values())


def _resolve(ds, idx):
    return ds.train_idx if idx is None else np.asarray(idx)


def loss(model: Model, ds: LabeledEdgeDataset, idx=None, lam: float = 0.0, depth: int | None = None) -> float:
    """Mean cross-entropy over edges ``idx`` plus ``lam`` times the squared expander norms."""
    idx = _resolve(ds, idx)
    depth = model.unroll_depth if depth is None else depth
    E, _ = _forward(model.mode, ds.X, ds.Xe, model.params, ds.graph, depth)
    logits = E[idx] @ model.theta + model.bias
    return cross_entropy(logits, ds.Y[idx]) + l2_penalty(model, lam)


def grad(model: Model, ds: LabeledEdgeDataset, idx=None, lam: float = 0.0, depth: int | None = None):
    """Loss and exact gradients of the unrolled computation.

    Returns ``(loss, grads, stats)``; ``grads`` has one array per entry of
    ``model.named_arrays()`` and ``stats`` carries activation magnitudes.
    """
    idx = _resolve(ds, idx)
    depth = model.unroll_depth if depth is None else depth
    g, X, Xe, p = ds.graph, ds.X, ds.Xe, model.params
    E, cache = _forward(model.mode, X, Xe, p, g, depth)
    Y = _check_one_hot(ds.Y[idx])
    Eb = E[idx]
    with np.errstate(over="ignore", invalid="ignore"):
        logits = Eb @ model.theta + model.bias
        P = softmax(logits)
        value = cross_entropy(logits, Y) + l2_penalty(model, lam)
    G = (P - Y) / len(idx)
    grads = {"theta": Eb.T @ G, "bias": G.sum(axis=0)}
    stats = {"max_abs_activation": float(np.max(np.abs(E))) if E.size else 0.0}

    if model.mode in PROPAGATING:
        dE = np.zeros_like(E)
        np.add.at(dE, idx, G @ model.theta.T)
        grads["W1"] = Xe.T @ dE
        H = cache["H"]
        grads["W2"] = incidence_apply(g, "source", H).T @ dE
        grads["W3"] = incidence_apply(g, "target", H).T @ dE
        dH = incidence_transpose_apply(g, "source", dE @ p["W2"].T) + incidence_transpose_apply(g, "target", dE @ p["W3"].T)
        dW5 = np.zeros_like(p["W5"])
        stats["max_abs_activation"] = max(stats["max_abs_activation"], float(np.max(np.abs(H))))
        if model.mode == ExpanderMode.EDGE2VEC:
            dL = np.zeros_like(dH)
            for SH in reversed(cache["SHs"]):
                dL += dH
                dW5 += SH.T @ dH
                dH = transition_transpose_apply(g, dH @ p["W5"].T)
            dL += dH
            grads["W4"] = X.T @ dL
        else:
            dc = np.zeros_like(dH)
            for SH, Z in zip(reversed(cache["SHs"]), reversed(cache["Zs"])):
                dZ = dH * (Z > 0)
                dc += dZ
                dW5 += SH.T @ dZ
                dH = adjacency_transpose_apply(g, dZ @ p["W5"].T)
            grads["W4"] = X.T @ dc
            grads["W6"] = cache["AX"].T @ dc
        grads["W5"] = dW5
        for name in PARAM_NAMES[model.mode]:
            grads[name] = grads[name] + 2.0 * lam * p[name]
    return value, grads, stats


# --- training ---------------------------------------------------------------


def _propagation_bound(mode, g):
    if mode == ExpanderMode.STRUCTURE2VEC:
        return 1.0 / g.max_degree if g.max_degree > 0 else 1.0
    return 1.0


def _w5_report(model, g):
    mode = "unnormalized" if model.mode == ExpanderMode.STRUCTURE2VEC else "normalized"
    return check_convergence_conditions(model.params["W5"], mode, g)


def _overflow(model, g, epoch, value, limit, stats, what):
    detail = f"epoch {epoch}: {what}"
    if "W5" in model.params:
        report = _w5_report(model, g)
        detail += "; violated: " + (", ".join(report.violated) if report.violated else "none")
    max_abs = stats.get("max_abs_activation", math.inf)
    return OverflowDetected(epoch, max_abs if math.isfinite(max_abs) else math.inf, detail=detail)


def max_abs_weight(model: Model) -> float:
    return max(float(np.max(np.abs(W))) for W in model.named_arrays().values())


def train(ds: LabeledEdgeDataset, mode, cfg: TrainConfig | None = None):
    """Gradient descent on the training split; returns ``(model, log)``.

    With ``cfg.projection`` the propagation matrix W5 is projected back onto
    the convergence region after every update. Raises ``OverflowDetected``
    (naming the epoch and the violated condition) as soon as a loss,
    activation or weight stops being finite or exceeds the overflow limit.
    """
    cfg = cfg or TrainConfig()
    mode = ExpanderMode(mode)
    g = ds.graph
    rng = np.random.default_rng(cfg.seed)
    model = init_model(mode, ds.X.shape[1], ds.Xe.shape[1], cfg, rng)
    model.meta = {"seed": cfg.seed, "config": cfg.to_dict()}
    train_idx = ds.train_idx
    bound = _propagation_bound(mode, g)
    project = cfg.projection and mode in PROPAGATING
    if project:
        model.params["W5"] = project_to_feasible(model.params["W5"], cfg.projection_margin, bound)
    log = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch == "full":
            batches = [train_idx]
        else:
            perm = rng.permutation(train_idx)
            batches = [perm[i:i + cfg.batch] for i in range(0, perm.size, cfg.batch)]
        values = []
        for b in batches:
            value, grads, stats = grad(model, ds, b, cfg.lam, cfg.unroll_depth)
            if not math.isfinite(value):
                raise _overflow(model, g, epoch, value, cfg.overflow_limit, stats, "loss is not finite")
            if stats["max_abs_activation"] > cfg.overflow_limit:
                raise _overflow(model, g, epoch, value, cfg.overflow_limit, stats, "activation magnitude over limit")
            values.append(value)
            with np.errstate(over="ignore", invalid="ignore"):
                for name, W in model.params.items():
                    W -= cfg.learning_rate * grads[name]
                model.theta -= cfg.learning_rate * grads["theta"]
                model.bias -= cfg.learning_rate * grads["bias"]
            if project:
                model.params["W5"] = project_to_feasible(model.params["W5"], cfg.projection_margin, bound)
            mw = max_abs_weight(model)
            if not math.isfinite(mw) or mw > cfg.overflow_limit:
                raise _overflow(model, g, epoch, value, cfg.overflow_limit, {"max_abs_activation": mw},
                                "weight magnitude over limit")
        row = {"epoch": epoch, "loss": float(np.mean(values)), "max_abs_weight": max_abs_weight(model),
               "w5_colsum_max": float(model.params["W5"].sum(axis=0).max()) if "W5" in model.params else float("nan")}
        log.append(row)
    return model, log


def write_training_log(path, log) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "max_abs_weight", "w5_colsum_max"])
        for row in log:
            w.writerow([row["epoch"], repr(row["loss"]), repr(row["max_abs_weight"]), repr(row["w5_colsum_max"])])


def predict_proba(model: Model, ds: LabeledEdgeDataset, idx=None, cfg: SolverConfig | None = None,
                  converged: bool = True) -> np.ndarray:
    """Fraud probability (class 0) per edge in ``idx`` (all edges when None).

    ``converged=True`` solves edge2vec propagation to tolerance; False uses
    the same unrolled depth as training.
    """
    depth = None if (converged and model.mode == ExpanderMode.EDGE2VEC) else model.unroll_depth
    if depth is None and cfg is None:
        cfg = solver_config_for(model.params["W5"])
    E = expand(model.mode, ds.X, ds.Xe, model.params, ds.graph, cfg, depth)
    if idx is not None:
        E = E[np.asarray(idx)]
    return softmax(E @ model.theta + model.bias)[:, 0]


def with_params(model: Model, **arrays) -> Model:
    """Copy of ``model`` with some arrays replaced (by name)."""
    out = model.copy()
    for name, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        if name == "theta":
            out.theta = value
        elif name == "bias":
            out.bias = value
        else:
            out.params[name] = value
    return out


__all__ = [
    "ExpanderMode",
    "Model",
    "TrainConfig",
    "cross_entropy",
    "expand",
    "grad",
    "init_model",
    "load_checkpoint",
    "loss",
    "predict_proba",
    "save_checkpoint",
    "train",
    "with_params",
    "write_training_log",
]
