"""Edge embeddings from coupled edge/node propagation on multigraphs.

Reduced system (node side does not read edge embeddings)::

    H = X W4 + T H W5
    E = Xe W1 + C_s H W2 + C_t H W3

Full system adds edge-to-node feedback through W6/W7. After eliminating the
edge unknowns the node equation becomes

    H = X W4 + A C_s^T Xe W1 W6 + A C_t^T Xe W1 W7 + T H (W5 + W2 W6 + W2 W7)

which is what ``full_coupled_propagate`` solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SparseGraph, adjacency_apply, check_features, incidence_apply, incidence_transpose_apply
from .propagation import (
    ConvergenceReport,
    InfeasibleWeights,
    NodePropWeights,
    SolverConfig,
    _report,
    propagate_fixed_point,
    solve_direct_vec,
)

EDGE_MODES = ("reduced", "full")


def _mat(W, name):
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if not np.all(np.isfinite(W)):
        raise ValueError(f"{name} has non-finite entries")
    return W


@dataclass(frozen=True, eq=False)
class EdgePropWeights:
    """Weights of the edge/node system; W6 and W7 are None in the reduced form."""

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    W4: np.ndarray
    W5: np.ndarray
    W6: np.ndarray | None = None
    W7: np.ndarray | None = None

    def __post_init__(self):
        for name in ("W1", "W2", "W3", "W4", "W5", "W6", "W7"):
            W = getattr(self, name)
            if W is not None:
                object.__setattr__(self, name, _mat(W, name))
        dn, de = self.W5.shape[0], self.W1.shape[1]
        expect = {
            "W2": (dn, de),
            "W3": (dn, de),
            "W4": (self.W4.shape[0], dn),
            "W5": (dn, dn),
            "W6": (de, dn),
            "W7": (de, dn),
        }
        for name, shape in expect.items():
            W = getattr(self, name)
            if W is not None and W.shape != shape:
                raise ValueError(f"{name} has shape {W.shape}, expected {shape}")

    @property
    def node_dim(self) -> int:
        return self.W5.shape[0]

    @property
    def edge_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def is_reduced(self) -> bool:
        return self.W6 is None and self.W7 is None

    def combined_propagation(self) -> np.ndarray:
        """W5 + W2 W6 + W2 W7, absent feedback terms counting as zero."""
        M = self.W5.copy()
        for W in (self.W6, self.W7):
            if W is not None:
                M += self.W2 @ W
        return M


def check_edge2vec_conditions(w: EdgePropWeights, mode: str = "reduced", strict: bool = False,
                              margin: float = 0.0) -> ConvergenceReport:
    """Convergence conditions for the reduced (W5 only) or full (combined) system.

    ``strict`` demands W5 > 0 entrywise in reduced mode instead of W5 >= 0.
    """
    if mode == "reduced":
        if not w.is_reduced:
            raise ValueError("reduced mode requires W6 and W7 to be absent")
        M, label = w.W5, "W5"
    elif mode == "full":
        M, label = w.combined_propagation(), "W5 + W2 W6 + W2 W7"
    else:
        raise ValueError(f"mode must be one of {EDGE_MODES}, got {mode!r}")
    report = _report(M, 1.0, mode, margin, None, label)
    if strict and mode == "reduced" and not np.all(M > 0):
        violated = report.violated + ("strict positivity (W5 has zero entries)",)
        report = ConvergenceReport(False, report.colsum_max, report.colsum_ok, mode, None, violated)
    return report


def edge_embeddings(Xe, H, w: EdgePropWeights, g: SparseGraph) -> np.ndarray:
    """Xe W1 + C_s H W2 + C_t H W3: one shot, no iteration."""
    Xe = check_features(Xe, g.m, "Xe")
    return Xe @ w.W1 + incidence_apply(g, "source", H) @ w.W2 + incidence_apply(g, "target", H) @ w.W3


def edge2vec_propagate(X, Xe, w: EdgePropWeights, g: SparseGraph, cfg: SolverConfig | None = None,
                       check: bool = True, strict: bool = False):
    """Solve the reduced system; returns ``(H, E)``.

    ``check=False`` skips the feasibility gate, for divergence experiments.
    """
    if check:
        report = check_edge2vec_conditions(w, "reduced", strict=strict)
        if not report.verdict:
            raise InfeasibleWeights(report)
    node_w = NodePropWeights(w.W4, w.W5)
    H, _, _ = propagate_fixed_point(X, node_w, g, cfg, mode="normalized")
    return H, edge_embeddings(Xe, H, w, g)


def coupled_input(X, Xe, w: EdgePropWeights, g: SparseGraph) -> np.ndarray:
    """X W4 + A C_s^T Xe W1 W6 + A C_t^T Xe W1 W7."""
    X = check_features(X, g.n, "X")
    Xe = check_features(Xe, g.m, "Xe")
    L = X @ w.W4
    XeW1 = Xe @ w.W1
    for side, W in (("source", w.W6), ("target", w.W7)):
        if W is not None:
            L = L + adjacency_apply(g, incidence_transpose_apply(g, side, XeW1)) @ W
    return L


def full_coupled_propagate(X, Xe, w: EdgePropWeights, g: SparseGraph, cfg: SolverConfig | None = None,
                           check: bool = True, method: str = "iterative"):
    """Solve the full system through its node-level elimination; returns ``(H, E)``.

    ``method="direct"`` uses the dense vectorised solve instead of iteration.
    """
    if check:
        report = check_edge2vec_conditions(w, "full")
        if not report.verdict:
            raise InfeasibleWeights(report)
    L = coupled_input(X, Xe, w, g)
    node_w = NodePropWeights(w.W4, w.combined_propagation())
    if method == "iterative":
        H, _, _ = propagate_fixed_point(None, node_w, g, cfg, mode="normalized", L=L)
    elif method == "direct":
        H = solve_direct_vec(None, node_w, g, mode="normalized", L=L)
    else:
        raise ValueError(f"method must be 'iterative' or 'direct', got {method!r}")
    return H, edge_embeddings(Xe, H, w, g)
