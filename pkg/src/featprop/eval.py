"""Precision-recall evaluation, mode comparison, the overflow grid and community metrics."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledEdgeDataset
from .learning import ExpanderMode, TrainConfig, predict_proba, train
from .propagation import OverflowDetected

COMPARISON_MODES = (ExpanderMode.CONTROL1, ExpanderMode.CONTROL2, ExpanderMode.EDGE2VEC)


@dataclass
class PRCurve:
    """Points ``(threshold, precision, recall)`` in decreasing threshold order."""

    points: list
    auc_pr: float

    @property
    def thresholds(self):
        return np.array([p[0] for p in self.points])

    @property
    def precision(self):
        return np.array([p[1] for p in self.points])

    @property
    def recall(self):
        return np.array([p[2] for p in self.points])


def _positives(labels):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels[:, 0] == 1
    return labels.astype(bool)


def pr_curve(scores, labels) -> PRCurve:
    """PR curve with one point per distinct score; fraud (label [1, 0]) is positive.

    The area is the step sum ``sum((r_i - r_{i-1}) * p_i)`` over decreasing
    thresholds, without interpolation.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = _positives(labels).ravel()
    if scores.shape != pos.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == pos.size:
        raise ValueError("need at least one positive and one negative example")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], pos[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last position of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp, thr = tp[ends], fp[ends], s[ends]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    auc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    points = list(zip(thr.tolist(), precision.tolist(), recall.tolist()))
    return PRCurve(points, auc)


def write_pr_csv(path, curve: PRCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in curve.points:
            w.writerow([repr(t), repr(p), repr(r)])


def evaluate(model, ds: LabeledEdgeDataset, idx=None) -> PRCurve:
    idx = ds.test_idx if idx is None else idx
    return pr_curve(predict_proba(model, ds, idx), ds.Y[idx])


def run_comparison(ds: LabeledEdgeDataset, cfgs, modes=COMPARISON_MODES) -> dict:
    """Train each mode on the train split and return ``{mode: PRCurve}`` on the test split.

    ``cfgs`` is a single ``TrainConfig`` shared by every mode, or a dict
    keyed by mode name.
    """
    out = {}
    for mode in modes:
        mode = ExpanderMode(mode)
        cfg = cfgs[mode.value] if isinstance(cfgs, dict) else cfgs
        model, _ = train(ds, mode, cfg)
        out[mode.value] = evaluate(model, ds)
    return out


# --- overflow grid ----------------------------------------------------------


@dataclass
class OverflowGrid:
    lambdas: list
    orders: list
    result: np.ndarray
    epochs_run: np.ndarray = field(default=None, repr=False)

    def violations(self) -> list[str]:
        """Cells breaking the expected staircase (closed upward in order, downward in lambda)."""
        bad = []
        R = self.result
        order_idx = np.argsort(self.orders)
        lam_idx = np.argsort(self.lambdas)[::-1]
        for i in range(len(self.lambdas)):
            row = R[i, order_idx]
            for a in range(len(row) - 1):
                if row[a] and not row[a + 1]:
                    bad.append(f"lambda={self.lambdas[i]:g}: overflow at order {self.orders[order_idx[a]]} "
                               f"but not at order {self.orders[order_idx[a + 1]]}")
        for j in range(len(self.orders)):
            col = R[lam_idx, j]
            for a in range(len(col) - 1):
                if col[a] and not col[a + 1]:
                    bad.append(f"order={self.orders[j]}: overflow at lambda {self.lambdas[lam_idx[a]]:g} "
                               f"but not at lambda {self.lambdas[lam_idx[a + 1]]:g}")
        return bad

    def is_staircase(self) -> bool:
        return not self.violations()

    def to_rows(self) -> list[list[str]]:
        rows = [["lambda"] + [f"{k}-order" for k in self.orders]]
        for lam, r in zip(self.lambdas, self.result):
            rows.append([f"{lam:g}"] + ["Y" if v else "N" for v in r])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerows(self.to_rows())
            bad = self.violations()
            fh.write("# staircase: monotone\n" if not bad else "# staircase: VIOLATED; " + "; ".join(bad) + "\n")


def _overflow_cell(args):
    ds, cfg = args
    try:
        _, log = train(ds, ExpanderMode.STRUCTURE2VEC, cfg)
    except OverflowDetected as exc:
        return True, exc.iteration
    return False, len(log)


def overflow_experiment(ds: LabeledEdgeDataset, lambdas=(1e-3, 1e-4, 1e-5, 1e-6), orders=(1, 2, 3, 4, 5),
                        epochs: int = 100, cfg: TrainConfig | None = None, projection: bool = False,
                        jobs: int = 1) -> OverflowGrid:
    """Train the ReLU expander for every (lambda, order) cell and record overflow.

    ``order`` is the number of propagation steps unrolled during training.
    Cells are independent and deterministic, so ``jobs > 1`` only changes
    wall time.
    """
    base = cfg or overflow_config()
    tasks = [(ds, replace(base, lam=lam, unroll_depth=k, epochs=epochs, projection=projection))
             for lam in lambdas for k in orders]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_overflow_cell, tasks))
    else:
        results = [_overflow_cell(t) for t in tasks]
    shape = (len(lambdas), len(orders))
    R = np.array([r[0] for r in results], dtype=bool).reshape(shape)
    E = np.array([r[1] for r in results]).reshape(shape)
    return OverflowGrid(list(lambdas), list(orders), R, E)


def overflow_config(**overrides) -> TrainConfig:
    """Default protocol for the overflow grid."""
    params = dict(learning_rate=0.05, node_dim=8, seed=0, projection=False)
    params.update(overrides)
    return TrainConfig(**params)


def comparison_config(**overrides) -> TrainConfig:
    """Default protocol for the mode comparison.

    The fraud signal lives in about 80 training edges, so the head needs a
    larger step and more epochs than the generic defaults to pick it up.
    """
    params = dict(learning_rate=0.5, epochs=1000, lam=1e-4, node_dim=8, projection=True)
    params.update(overrides)
    return TrainConfig(**params)


def median_auc(runs: list[dict]) -> dict:
    """``{mode: median auc_pr}`` over a list of ``{mode: PRCurve}`` runs."""
    modes = list(runs[0])
    return {m: float(np.median([r[m].auc_pr for r in runs])) for m in modes}


# --- embedding quality ------------------------------------------------------


def community_separation(embedding, communities) -> float:
    """Mean intra-community pairwise distance over mean inter-community distance."""
    Z = np.asarray(embedding, dtype=np.float64)
    labels = np.asarray(communities)
    if Z.ndim == 1:
        Z = Z[:, None]
    if labels.shape != (Z.shape[0],):
        raise ValueError("one community label per row required")
    if np.unique(labels).size < 2:
        raise ValueError("need at least two nonempty communities")
    diff = Z[:, None, :] - Z[None, :, :]
    D = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(Z.shape[0], k=1)
    same = (labels[:, None] == labels[None, :])[iu]
    d = D[iu]
    if not same.any():
        raise ValueError("every community is a singleton")
    inter = d[~same].mean()
    if inter == 0:
        return math.inf
    return float(d[same].mean() / inter)
