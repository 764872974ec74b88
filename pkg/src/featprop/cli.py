"""Command-line entry point: ``featprop {embed,train,eval,overflow,zachary}``.

Every subcommand writes its outputs into ``--out`` (a directory) together
with ``config.json``, an echo of the parsed flags. All randomness comes from
``--seed``; no output depends on wall-clock time or ambient entropy.

Exit codes::

    0  success
    1  other propagation failure (e.g. singular direct solve)
    2  parse error (bad flags, malformed input file)
    3  infeasible propagation weights
    4  numerical overflow
    5  fixed-point iteration did not converge
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .data import FraudGenConfig, generate_fraud_dataset, load_dataset, load_zachary
from .edge2vec import EdgePropWeights, check_edge2vec_conditions, edge2vec_propagate, full_coupled_propagate
from .eval import (
    COMPARISON_MODES,
    comparison_config,
    community_separation,
    evaluate,
    median_auc,
    overflow_config,
    overflow_experiment,
    write_pr_csv,
)
from .graph import GraphError, ParseError, load_graph, read_feature_csv, write_feature_csv
from .learning import (
    ExpanderMode,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)
from .propagation import (
    InfeasibleWeights,
    NodePropWeights,
    NotConverged,
    OverflowDetected,
    PropagationError,
    SolverConfig,
    check_convergence_conditions,
    propagate_fixed_point,
    solver_config_for,
    structure_embedding,
    write_residual_log,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_OVERFLOW = 4
EXIT_NOT_CONVERGED = 5


class CLIError(Exception):
    def __init__(self, code, msg, payload=None):
        super().__init__(msg)
        self.code = code
        self.payload = payload or {}


# --- helpers ----------------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(args) -> dict:
    cfg = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    cfg["backend"] = BACKEND
    return cfg


def _load_weights(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    if not isinstance(raw, dict):
        raise ParseError(path, 1, "weights file must hold a JSON object of matrices")
    try:
        return {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ParseError(path, 1, f"bad matrix: {exc}") from None


def _graph(args):
    if args.graph is None:
        g, _ = load_zachary()
        return g
    return load_graph(args.graph, n=args.n, directed=not args.undirected)


def _dataset(args, seed):
    if args.dataset is not None:
        return load_dataset(args.dataset)
    return generate_fraud_dataset(FraudGenConfig(seed=seed, n_edges=args.n_edges))


def _train_config(args, seed, **extra):
    base = comparison_config(seed=seed)
    fields = dict(lam=args.lam, learning_rate=args.lr, epochs=args.epochs, unroll_depth=args.unroll,
                  node_dim=args.node_dim, projection=not args.no_projection)
    fields = {k: v for k, v in fields.items() if v is not None}
    fields.update(extra)
    if getattr(args, "batch", None):
        fields["batch"] = args.batch
    return replace(base, **fields)


def _solver(args, W2, mode, g):
    if args.max_iter is not None:
        return SolverConfig(tol=args.tol, max_iter=args.max_iter)
    return solver_config_for(W2, mode, g, tol=args.tol)


# --- embed ------------------------------------------------------------------


def cmd_embed(args, out: Path) -> dict:
    g = _graph(args)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    weights = _load_weights(args.weights) if args.weights else {}
    X = read_feature_csv(args.features, rows=g.n) if args.features else np.eye(g.n)
    summary = {"n": g.n, "m": g.m}

    if args.mode == "structure":
        C = rng.standard_normal((g.n, args.dim))
        report = check_convergence_conditions(args.alpha * np.eye(args.dim), "normalized")
        if not report.verdict:
            _write_json(out / "report.json", report.to_dict())
            raise CLIError(EXIT_INFEASIBLE, "alpha must lie in [0, 1)", report.to_dict())
        Z = structure_embedding(g, C, args.alpha, K=args.K, subtract_identity=args.subtract_identity)
        write_feature_csv(out / "embedding.csv", Z, "node_index", "z")
        _write_json(out / "report.json", report.to_dict())
        return summary

    if args.mode == "node":
        W1 = weights.get("W1")
        if W1 is None:
            W1 = rng.standard_normal((X.shape[1], args.dim))
        W2 = weights.get("W2", args.alpha * np.eye(W1.shape[1]))
        prop_mode = "unnormalized" if args.unnormalized else "normalized"
        try:
            w = NodePropWeights(W1, W2)
        except ValueError as exc:
            raise ParseError(args.weights or "<generated>", 1, str(exc)) from None
        report = check_convergence_conditions(w.W2, prop_mode, g)
        _write_json(out / "report.json", report.to_dict())
        if not report.verdict and not args.no_check:
            raise InfeasibleWeights(report)
        solver = _solver(args, w.W2, prop_mode, g)
        history = []
        try:
            H, it, res = propagate_fixed_point(X, w, g, solver, mode=prop_mode, history=history)
        finally:
            write_residual_log(out / "residuals.csv", history)
        write_feature_csv(out / "embedding.csv", H, "node_index", "h")
        summary.update(iterations=it, residual=res)
        return summary

    # edge2vec
    Xe = read_feature_csv(args.edge_features, rows=g.m) if args.edge_features else np.ones((g.m, 1))
    dim = args.dim
    defaults = {
        "W1": lambda: rng.standard_normal((Xe.shape[1], dim)),
        "W2": lambda: 0.1 * rng.standard_normal((dim, dim)),
        "W3": lambda: 0.1 * rng.standard_normal((dim, dim)),
        "W4": lambda: rng.standard_normal((X.shape[1], dim)),
        "W5": lambda: args.alpha * np.eye(dim),
    }
    mats = {k: weights[k] if k in weights else make() for k, make in defaults.items()}
    try:
        w = EdgePropWeights(**mats, W6=weights.get("W6"), W7=weights.get("W7"))
    except ValueError as exc:
        raise ParseError(args.weights or "<generated>", 1, str(exc)) from None
    system = "reduced" if w.is_reduced else "full"
    report = check_edge2vec_conditions(w, system)
    _write_json(out / "report.json", report.to_dict())
    if not report.verdict and not args.no_check:
        raise InfeasibleWeights(report)
    solver = _solver(args, w.combined_propagation(), "normalized", g)
    if w.is_reduced:
        H, E = edge2vec_propagate(X, Xe, w, g, solver, check=False)
    else:
        H, E = full_coupled_propagate(X, Xe, w, g, solver, check=False)
    write_feature_csv(out / "embedding.csv", H, "node_index", "h")
    write_feature_csv(out / "edge_embedding.csv", E, "edge_index", "e")
    summary["system"] = system
    return summary


# --- train / eval -----------------------------------------------------------


def cmd_train(args, out: Path) -> dict:
    ds = _dataset(args, args.seed)
    cfg = _train_config(args, args.seed)
    mode = ExpanderMode(args.mode)
    try:
        model, log = train(ds, mode, cfg)
    except OverflowDetected as exc:
        _write_json(out / "error.json", {"error": "overflow", "stage": "training", "epoch": exc.iteration,
                                          "detail": str(exc)})
        raise
    write_training_log(out / "training_log.csv", log)
    save_checkpoint(out / "checkpoint.json", model)
    summary = {"final_loss": log[-1]["loss"] if log else None}
    # the deployed model solves propagation to convergence; check it does
    try:
        curve = evaluate(model, ds)
    except PropagationError as exc:
        _write_json(out / "error.json", {"error": type(exc).__name__, "stage": "converged evaluation",
                                          "detail": str(exc)})
        raise
    write_pr_csv(out / "pr_test.csv", curve)
    summary["auc_pr"] = curve.auc_pr
    _write_json(out / "metrics.json", summary)
    return summary


def _comparison_run(job):
    args, run_seed, modes = job
    ds = _dataset(args, run_seed)
    cfg = _train_config(args, run_seed)
    out = {}
    for mode in modes:
        model, _ = train(ds, mode, cfg)
        out[mode.value] = evaluate(model, ds)
    return out


def cmd_eval(args, out: Path) -> dict:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        ds = _dataset(args, args.seed)
        curve = evaluate(model, ds)
        write_pr_csv(out / f"pr_{model.mode.value}.csv", curve)
        _write_summary(out / "summary.csv", {model.mode.value: curve.auc_pr})
        return {"auc_pr": curve.auc_pr}

    modes = COMPARISON_MODES if args.compare else (ExpanderMode(args.mode),)
    seeds = [args.seed + i for i in range(args.seeds)]
    jobs = [(args, s, modes) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            runs = list(pool.map(_comparison_run, jobs))
    else:
        runs = [_comparison_run(j) for j in jobs]

    with open(out / "runs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "mode", "auc_pr"])
        for s, run in zip(seeds, runs):
            for mode, curve in run.items():
                w.writerow([s, mode, repr(curve.auc_pr)])
                write_pr_csv(out / f"pr_{mode}_seed{s}.csv", curve)
    medians = median_auc(runs)
    _write_summary(out / "summary.csv", medians)
    result = {"median_auc_pr": medians}
    if args.compare:
        c1, c2, e2v = (medians[m.value] for m in COMPARISON_MODES)
        result["ordering_holds"] = bool(e2v >= c2 >= c1)
    return result


def _write_summary(path, aucs: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "auc_pr"])
        for mode, v in aucs.items():
            w.writerow([mode, repr(v)])


# --- overflow / zachary -----------------------------------------------------


def cmd_overflow(args, out: Path) -> dict:
    ds = _dataset(args, args.seed)
    cfg = overflow_config(seed=args.seed, learning_rate=args.lr, node_dim=args.node_dim)
    grid = overflow_experiment(ds, args.lambdas, args.orders, epochs=args.epochs, cfg=cfg,
                               projection=args.projection, jobs=args.jobs)
    grid.write_csv(out / "overflow.csv")
    with open(out / "overflow_epochs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda"] + [f"{k}-order" for k in grid.orders])
        for lam, row in zip(grid.lambdas, grid.epochs_run.tolist()):
            w.writerow([f"{lam:g}"] + row)
    return {"overflow_cells": int(grid.result.sum()), "staircase": grid.is_staircase(),
            "violations": grid.violations()}


def cmd_zachary(args, out: Path) -> dict:
    g, clubs = load_zachary()
    children = np.random.SeedSequence(args.seed).spawn(args.runs)
    rows = []
    for run, child in enumerate(children):
        C = np.random.default_rng(child).standard_normal((g.n, args.dim))
        for alpha in args.alphas:
            Z = structure_embedding(g, C, alpha, subtract_identity=not args.keep_identity)
            write_feature_csv(out / f"embedding_run{run}_alpha{alpha:g}.csv", Z, "node_index", "z")
            rows.append((run, alpha, community_separation(Z, clubs)))
    with open(out / "separation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "alpha", "ratio"])
        for run, alpha, r in rows:
            w.writerow([run, f"{alpha:g}", repr(r)])
    with open(out / "communities.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "community"])
        w.writerows(enumerate(clubs.tolist()))
    return {"max_ratio": max(r for _, _, r in rows)}


# --- parser -----------------------------------------------------------------


def _add_data_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="generate the synthetic fraud dataset (default)")
    src.add_argument("--dataset", type=Path, help="directory written by save_dataset")
    p.add_argument("--n-edges", type=int, default=FraudGenConfig.n_edges, help="synthetic dataset size")


def _add_train_flags(p, with_mode=True):
    if with_mode:
        p.add_argument("--mode", choices=[m.value for m in ExpanderMode], default="edge2vec")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="L2 weight")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--unroll", type=int, default=None, help="propagation steps unrolled in training")
    p.add_argument("--node-dim", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, help="minibatch size (default: full batch)")
    p.add_argument("--no-projection", action="store_true", help="leave W5 unconstrained during training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featprop", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("embed", help="node, edge or structure-only embeddings")
    common(p)
    p.add_argument("--mode", choices=["node", "edge2vec", "structure"], default="node")
    p.add_argument("--graph", type=Path, help="edge list (source<TAB>target); Zachary karate club if omitted")
    p.add_argument("--n", type=int, default=None, help="node count (default: max index + 1)")
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--features", type=Path, help="node feature CSV (default: identity)")
    p.add_argument("--edge-features", type=Path, help="edge feature CSV (default: one constant column)")
    p.add_argument("--weights", type=Path, help="JSON object of weight matrices (W1, W2, ...)")
    p.add_argument("--alpha", type=float, default=0.5, help="scale of the default propagation matrix alpha*I")
    p.add_argument("--dim", type=int, default=2, help="embedding dimension for generated weights")
    p.add_argument("--K", type=int, default=None, help="truncate the structure series after K steps")
    p.add_argument("--subtract-identity", action="store_true", help="structure mode: drop the k=0 term")
    p.add_argument("--unnormalized", action="store_true", help="node mode: propagate with A instead of D^-1 A")
    p.add_argument("--no-check", action="store_true", help="skip the feasibility gate")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=None,
                   help="iteration cap (default: 1000, raised as needed for the certified contraction rate)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train one expander + softmax head")
    common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or compare expanders by AUC-PR")
    common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--compare", action="store_true", help="train and compare control1, control2, edge2vec")
    p.add_argument("--checkpoint", type=Path, help="evaluate this checkpoint instead of training")
    p.add_argument("--seeds", type=int, default=1, help="number of runs, seeds seed..seed+N-1")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overflow", help="lambda x order overflow grid for the ReLU expander")
    common(p)
    _add_data_flags(p)
    p.add_argument("--lambdas", type=_float_list, default=[1e-3, 1e-4, 1e-5, 1e-6])
    p.add_argument("--orders", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--node-dim", type=int, default=8)
    p.add_argument("--projection", action="store_true", help="project W5 after every update")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_overflow)

    p = sub.add_parser("zachary", help="structure-only embeddings of the karate club")
    common(p)
    p.add_argument("--alphas", type=_float_list, default=[0.5, 0.8, 0.9])
    p.add_argument("--runs", type=int, default=5, help="number of random C draws")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--keep-identity", action="store_true", help="do not subtract C from the embedding")
    p.set_defaults(func=cmd_zachary)
    return parser


def _fail(out, code, msg, payload=None):
    print(f"featprop: error: {msg}", file=sys.stderr)
    if out is not None and out.is_dir():
        body = {"exit_code": code, "message": msg}
        body.update(payload or {})
        _write_json(out / "status.json", body)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", _echo(args))
        result = args.func(args, out)
    except (ParseError, GraphError, FileNotFoundError) as exc:
        return _fail(out, EXIT_PARSE, str(exc))
    except InfeasibleWeights as exc:
        return _fail(out, EXIT_INFEASIBLE, str(exc), {"report": exc.report.to_dict()})
    except OverflowDetected as exc:
        return _fail(out, EXIT_OVERFLOW, str(exc))
    except NotConverged as exc:
        return _fail(out, EXIT_NOT_CONVERGED, str(exc))
    except CLIError as exc:
        return _fail(out, exc.code, str(exc), exc.payload)
    except PropagationError as exc:
        return _fail(out, EXIT_ERROR, str(exc))
    for k, v in (result or {}).items():
        print(f"{k}: {v}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
