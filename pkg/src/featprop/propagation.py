"""Node feature propagation: feasibility checks, projection and solvers.

The fixed point solved here is ``H = X W1 + S H W2`` where ``S`` is the
adjacency ``A`` ("unnormalized") or the transition matrix ``D^-1 A``
("normalized"). With ``W2 >= 0`` and every column sum of ``W2`` below the
bound, the update is a sup-norm contraction with rate equal to the largest
column sum, so the iteration converges from any start.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg

from .graph import SparseGraph, adjacency_apply, check_features, transition_apply

MODES = ("normalized", "unnormalized")
DIRECT_SOLVE_LIMIT = 5000


class PropagationError(RuntimeError):
    pass


class OverflowDetected(PropagationError):
    """Iterates exceeded the overflow limit, or are certain to.

    ``projected`` is True when the solver stopped early after observing
    sustained geometric growth that reaches the limit within the iteration
    budget.
    """

    def __init__(self, iteration, max_abs, projected=False, detail=""):
        self.iteration = iteration
        self.max_abs = max_abs
        self.projected = projected
        self.detail = detail
        how = "projected to exceed" if projected else "exceeded"
        msg = f"iterates {how} the overflow limit at iteration {iteration} (max |entry| = {max_abs:.3g})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


class NotConverged(PropagationError):
    def __init__(self, iteration, residual):
        self.iteration = iteration
        self.residual = residual
        super().__init__(f"no convergence after {iteration} iterations (residual {residual:.3g})")


class SingularSystem(PropagationError):
    pass


class InfeasibleWeights(PropagationError):
    def __init__(self, report):
        self.report = report
        super().__init__("propagation matrix violates: " + ", ".join(report.violated))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 1000
    overflow_limit: float = 1e12
    # consecutive growing residuals before extrapolating to overflow
    growth_window: int = 20

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.overflow_limit > 0:
            raise ValueError("overflow_limit must be positive")


@dataclass(frozen=True, eq=False)
class NodePropWeights:
    W1: np.ndarray
    W2: np.ndarray
    feasible: bool = False

    def __post_init__(self):
        W1 = np.atleast_2d(np.asarray(self.W1, dtype=np.float64))
        W2 = np.atleast_2d(np.asarray(self.W2, dtype=np.float64))
        if W2.shape[0] != W2.shape[1]:
            raise ValueError(f"W2 must be square, got {W2.shape}")
        if W1.shape[1] != W2.shape[0]:
            raise ValueError(f"W1 output dim {W1.shape[1]} does not match W2 {W2.shape}")
        if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(W2))):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)

    def checked(self, g: SparseGraph | None = None, mode: str = "normalized") -> "NodePropWeights":
        """Copy with ``feasible`` set from the convergence check."""
        report = check_convergence_conditions(self.W2, mode, g)
        return replace(self, feasible=report.verdict)


@dataclass(frozen=True)
class ConvergenceReport:
    nonneg_ok: bool
    colsum_max: float
    colsum_ok: bool
    mode: str
    degree_bound: float | None = None
    violated: tuple = field(default=())

    @property
    def verdict(self) -> bool:
        return self.nonneg_ok and self.colsum_ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violated"] = list(self.violated)
        d["verdict"] = self.verdict
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _square(W, name="W2"):
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"{name} must be square, got shape {W.shape}")
    return W


def colsum_bound(mode: str, g: SparseGraph | None) -> float:
    """Upper bound for the column sums: 1, or 1/max degree without normalisation."""
    if mode == "normalized":
        return 1.0
    if mode == "unnormalized":
        if g is None:
            raise ValueError("unnormalized mode needs the graph for its degree bound")
        return 1.0 / g.max_degree if g.max_degree > 0 else math.inf
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _report(M, bound, mode, margin, degree_bound, label):
    nonneg_ok = bool(np.all(M >= 0))
    colsum_max = float(M.sum(axis=0).max()) if M.size else 0.0
    if margin > 0:
        colsum_ok = colsum_max <= bound * (1.0 - margin)
    else:
        colsum_ok = colsum_max < bound
    violated = []
    if not nonneg_ok:
        violated.append(f"nonnegativity ({label} has negative entries)")
    if not colsum_ok:
        violated.append(f"column sum ({label} max column sum {colsum_max:.6g} >= {bound:.6g})")
    return ConvergenceReport(nonneg_ok, colsum_max, colsum_ok, mode, degree_bound, tuple(violated))


def check_convergence_conditions(W2, mode: str = "normalized", g: SparseGraph | None = None,
                                 margin: float = 0.0) -> ConvergenceReport:
    """Test the two sufficient conditions on the propagation matrix.

    Column sums must be strictly below 1 (normalized) or below ``1/max d_i``
    (unnormalized). A positive ``margin`` tightens this to
    ``<= bound * (1 - margin)``.
    """
    W2 = _square(W2)
    bound = colsum_bound(mode, g)
    degree_bound = bound if mode == "unnormalized" else None
    return _report(W2, bound, mode, margin, degree_bound, "W2")


def project_to_feasible(W2, margin: float = 1e-3, bound: float = 1.0) -> np.ndarray:
    """Clamp negatives to zero, then rescale columns summing above ``bound*(1-margin)``.

    Idempotent, and the identity on matrices that already satisfy both
    conditions at this margin.
    """
    W = np.maximum(_square(W2), 0.0)
    if not 0 < margin < 1:
        raise ValueError("margin must lie in (0, 1)")
    target = bound * (1.0 - margin)
    sums = W.sum(axis=0)
    for j in np.flatnonzero(sums > target):
        scale = target / sums[j]
        col = W[:, j] * scale
        while col.sum() > target:
            scale = np.nextafter(scale, 0.0)
            col = W[:, j] * scale
        W[:, j] = col
    return W


def solver_config_for(W2, mode: str = "normalized", g: SparseGraph | None = None, tol: float = 1e-8,
                      floor: int = 1000) -> SolverConfig:
    """Solver budget large enough for the contraction rate certified by W2.

    The sup-norm residual shrinks by at least ``colsum_max / bound`` per
    step, so near the feasibility boundary (e.g. after projection with a
    small margin) the default cap of 1000 iterations cannot reach ``tol``.
    Infeasible W2 gets the floor budget.
    """
    report = check_convergence_conditions(W2, mode, g)
    rate = report.colsum_max / colsum_bound(mode, g) if report.verdict else 0.0
    max_iter = floor
    if 0 < rate < 1:
        max_iter = max(floor, math.ceil(math.log(tol * 1e-4) / math.log(rate)) + 10)
    return SolverConfig(tol=tol, max_iter=max_iter)


def _operator(g, mode):
    if mode == "normalized":
        return transition_apply
    if mode == "unnormalized":
        return adjacency_apply
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def propagate_fixed_point(X, weights: NodePropWeights, g: SparseGraph, cfg: SolverConfig | None = None,
                          mode: str = "normalized", history: list | None = None, L=None):
    """Iterate ``H <- L + S H W2`` from ``H = L`` with ``L = X W1``.

    Returns ``(H, iterations, residual)`` where residual is the sup-norm of the
    last update. ``history``, when given, receives
    ``(iteration, residual, max_abs_entry)`` per step. Passing ``L`` directly
    skips the ``X W1`` product (X is then ignored).
    """
    cfg = cfg or SolverConfig()
    apply = _operator(g, mode)
    if L is None:
        X = check_features(X, g.n, "X")
        if X.shape[1] != weights.W1.shape[0]:
            raise ValueError(f"X has {X.shape[1]} columns, W1 expects {weights.W1.shape[0]}")
        L = X @ weights.W1
    W2 = weights.W2
    H = L
    prev_res = math.inf
    growth = 0
    window = []
    for it in range(1, cfg.max_iter + 1):
        H_new = L + apply(g, H) @ W2
        max_abs = float(np.max(np.abs(H_new))) if H_new.size else 0.0
        res = float(np.max(np.abs(H_new - H))) if H_new.size else 0.0
        if history is not None:
            history.append((it, res, max_abs))
        if not math.isfinite(max_abs) or max_abs > cfg.overflow_limit:
            raise OverflowDetected(it, max_abs)
        H = H_new
        if res <= cfg.tol:
            return H, it, res
        growth = growth + 1 if res > prev_res else 0
        prev_res = res
        window.append(res)
        if growth >= cfg.growth_window:
            rate = (window[-1] / window[-1 - cfg.growth_window]) ** (1.0 / cfg.growth_window)
            if rate > 1.0 + 1e-3 and max_abs > 0:
                remaining = math.log(cfg.overflow_limit / max_abs) / math.log(rate)
                if it + remaining <= cfg.max_iter:
                    raise OverflowDetected(
                        it, max_abs, projected=True,
                        detail=f"residual growing at rate {rate:.4g} per iteration, "
                               f"limit reached near iteration {it + math.ceil(remaining)}")
    raise NotConverged(cfg.max_iter, prev_res)


def write_residual_log(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "residual", "max_abs_entry"])
        for it, res, mx in history:
            w.writerow([it, repr(float(res)), repr(float(mx))])


def dense_operator(g: SparseGraph, mode: str = "normalized") -> np.ndarray:
    """Dense S built straight from the edge list (no CSR), for oracles."""
    A = np.zeros((g.n, g.n))
    np.add.at(A, (g.sources, g.targets), 1.0)
    if not g.directed:
        np.add.at(A, (g.targets, g.sources), 1.0)
    if mode == "unnormalized":
        return A
    if mode != "normalized":
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    d = A.sum(axis=1)
    return np.divide(A, d[:, None], out=np.zeros_like(A), where=d[:, None] > 0)


def solve_direct_vec(X, weights: NodePropWeights, g: SparseGraph, mode: str = "normalized", L=None) -> np.ndarray:
    """Exact solution of the vectorised system ``(I - A') z = l``.

    Unknowns are ordered row-major, ``s = i*d' + j``, which gives
    ``A' = kron(S, W2^T)``. Only for small systems (``n*d' <= 5000``).
    """
    W2 = weights.W2
    dp = W2.shape[0]
    size = g.n * dp
    if size > DIRECT_SOLVE_LIMIT:
        raise ValueError(f"direct solve needs n*d' <= {DIRECT_SOLVE_LIMIT}, got {size}")
    if L is None:
        X = check_features(X, g.n, "X")
        L = X @ weights.W1
    S = dense_operator(g, mode)
    A_prime = np.kron(S, W2.T)
    system = np.eye(size) - A_prime
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            z = scipy.linalg.solve(system, np.ascontiguousarray(L).reshape(-1))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSystem(f"I - A' is numerically singular: {exc}") from None
    return z.reshape(g.n, dp)


# --- proximity embeddings ---------------------------------------------------


def schedule_weights(schedule: str, K: int, alpha: float | None = None) -> list[tuple[int, float]]:
    """``(k, w_k)`` pairs of a proximity schedule.

    geometric: ``alpha**k`` for k = 0..K; deepwalk: ``1 - (k-1)/K`` and
    glove: ``1/k``, both for k = 1..K.
    """
    if schedule == "geometric":
        if alpha is None or not alpha < 1:
            raise ValueError("geometric schedule needs alpha < 1")
        if K < 0:
            raise ValueError("K must be >= 0")
        return [(k, alpha**k) for k in range(K + 1)]
    if K < 1:
        raise ValueError("K must be >= 1")
    if schedule == "deepwalk":
        return [(k, 1.0 - (k - 1) / K) for k in range(1, K + 1)]
    if schedule == "glove":
        return [(k, 1.0 / k) for k in range(1, K + 1)]
    raise ValueError(f"unknown schedule {schedule!r}")


def proximity_matrix(g: SparseGraph, schedule: str = "geometric", K: int = 10,
                     alpha: float | None = None) -> np.ndarray:
    """Dense ``P = sum_k w_k T^k`` for the chosen schedule."""
    weights = dict(schedule_weights(schedule, K, alpha))
    P = np.zeros((g.n, g.n))
    Tk = np.eye(g.n)
    for k in range(0, max(weights) + 1):
        if k > 0:
            Tk = transition_apply(g, Tk)
        if k in weights:
            P += weights[k] * Tk
    return P


def structure_embedding(g: SparseGraph, C, alpha: float, K: int | None = None,
                        subtract_identity: bool = False, tol: float = 1e-12) -> np.ndarray:
    """``(I + aT + a^2 T^2 + ...) C`` truncated at K, or to tolerance when K is None.

    ``subtract_identity`` drops the k=0 term, returning the embedding minus C.
    """
    if not alpha < 1:
        raise ValueError("alpha must be < 1 for the series to converge")
    C = check_features(C, g.n, "C")
    term = C
    acc = C.copy()
    k = 0
    while True:
        if K is not None and k >= K:
            break
        if K is None:
            tail = np.max(np.abs(term)) * abs(alpha) / (1.0 - abs(alpha)) if term.size else 0.0
            if tail <= tol * max(1.0, float(np.max(np.abs(acc)))):
                break
        term = alpha * transition_apply(g, term)
        acc += term
        k += 1
    return acc - C if subtract_identity else acc


def relu_propagate(X, W1, W2, W3, g: SparseGraph, cfg: SolverConfig | None = None,
                   mode: str = "unnormalized"):
    """Iterate ``H <- relu(X W1 + S H W2 + S X W3)`` from ``H = 0``.

    Returns ``(H, overflowed, iterations)``. Overflow is reported, not
    raised; an iteration count equal to ``cfg.max_iter`` without overflow
    means the tolerance was not reached.
    """
    cfg = cfg or SolverConfig()
    apply = _operator(g, mode)
    X = check_features(X, g.n, "X")
    W1, W2, W3 = (np.atleast_2d(np.asarray(W, dtype=np.float64)) for W in (W1, W2, W3))
    c = X @ W1 + apply(g, X) @ W3
    H = np.zeros_like(c)
    for it in range(1, cfg.max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            H_new = np.maximum(c + apply(g, H) @ W2, 0.0)
        max_abs = float(np.max(np.abs(H_new))) if H_new.size else 0.0
        if not math.isfinite(max_abs) or max_abs > cfg.overflow_limit:
            return H_new, True, it
        res = float(np.max(np.abs(H_new - H))) if H_new.size else 0.0
        H = H_new
        if res <= cfg.tol:
            return H, False, it
    return H, False, cfg.max_iter
