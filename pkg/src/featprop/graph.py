"""Directed multigraph storage and the sparse operators used by propagation.

Edges keep their list position as identity, so parallel edges stay distinct in
the incidence operators while they accumulate as multiplicities in the
adjacency matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class GraphError(ValueError):
    """Invalid graph construction or operand shape."""


class ParseError(ValueError):
    """Malformed edge-list or feature file."""

    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _csr(rows, cols, n):
    """CSR arrays for the 0/1 pattern rows x cols, duplicates summed."""
    if rows.size == 0:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64)
    keys, counts = np.unique(rows * n + cols, return_counts=True)
    r, c = np.divmod(keys, n)
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return indptr, c.astype(np.int64), counts.astype(np.float64)


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Immutable multigraph with CSR adjacency in both orientations.

    ``directed=False`` symmetrises the adjacency (each edge contributes
    ``a[s, t]`` and ``a[t, s]``) while ``sources``/``targets`` still describe
    the ``m`` original edges.
    """

    n: int
    sources: np.ndarray
    targets: np.ndarray
    directed: bool = True
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)
    data: np.ndarray = field(init=False, repr=False)
    t_indptr: np.ndarray = field(init=False, repr=False)
    t_indices: np.ndarray = field(init=False, repr=False)
    t_data: np.ndarray = field(init=False, repr=False)
    degree: np.ndarray = field(init=False, repr=False)
    _inv_degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        src, tgt = self.sources, self.targets
        if self.directed:
            rows, cols = src, tgt
        else:
            rows, cols = np.concatenate([src, tgt]), np.concatenate([tgt, src])
        fwd = _csr(rows, cols, self.n)
        bwd = _csr(cols, rows, self.n)
        set_ = object.__setattr__
        for name, arr in zip(("indptr", "indices", "data"), fwd):
            set_(self, name, _frozen(arr))
        for name, arr in zip(("t_indptr", "t_indices", "t_data"), bwd):
            set_(self, name, _frozen(arr))
        degree = np.bincount(rows, minlength=self.n).astype(np.float64)
        inv = np.zeros(self.n)
        np.divide(1.0, degree, out=inv, where=degree > 0)
        set_(self, "degree", _frozen(degree))
        set_(self, "_inv_degree", _frozen(inv))
        set_(self, "sources", _frozen(src))
        set_(self, "targets", _frozen(tgt))

    @property
    def m(self) -> int:
        return int(self.sources.shape[0])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.sources.tolist(), self.targets.tolist()))

    @property
    def out_degree(self) -> np.ndarray:
        return np.bincount(self.sources, minlength=self.n)

    @property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.n)

    @property
    def max_degree(self) -> float:
        return float(self.degree.max()) if self.n else 0.0

    def inv_degree(self) -> np.ndarray:
        """1/d_i, with 0 for isolated nodes (their transition rows are zero)."""
        return self._inv_degree

    def dense_adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i in range(self.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            A[i, self.indices[lo:hi]] = self.data[lo:hi]
        return A


def build_graph(edge_list, n: int, directed: bool = True) -> SparseGraph:
    """Build a graph from ``(source, target)`` pairs; list order is edge identity."""
    n = int(n)
    if n < 0:
        raise GraphError(f"node count must be nonnegative, got {n}")
    arr = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list)
    if arr.size == 0:
        arr = np.zeros((0, 2), np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError("edge list must be a sequence of (source, target) pairs")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise GraphError("edge endpoints must be integers")
    arr = arr.astype(np.int64)
    bad = np.flatnonzero((arr < 0).any(axis=1) | (arr >= n).any(axis=1))
    if bad.size:
        e = int(bad[0])
        raise GraphError(f"edge {e} {tuple(arr[e].tolist())} has an endpoint outside 0..{n - 1}")
    return SparseGraph(n, arr[:, 0].copy(), arr[:, 1].copy(), directed)


def _check_rows(M, rows, what):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2 or M.shape[0] != rows:
        raise GraphError(f"{what} needs {rows} rows, got shape {M.shape}")
    return np.ascontiguousarray(M)


def check_features(M, rows: int, name: str = "features") -> np.ndarray:
    """Validate a dense feature matrix: 2-D, ``rows`` rows, all finite."""
    M = _check_rows(M, rows, name)
    if not np.all(np.isfinite(M)):
        raise GraphError(f"{name} contains non-finite entries")
    return M


def adjacency_apply(g: SparseGraph, M) -> np.ndarray:
    """A @ M, parallel edges counted with multiplicity."""
    M = _check_rows(M, g.n, "adjacency_apply operand")
    return _kernels.csr_matmul(g.indptr, g.indices, g.data, M)


def adjacency_transpose_apply(g: SparseGraph, M) -> np.ndarray:
    M = _check_rows(M, g.n, "adjacency_transpose_apply operand")
    return _kernels.csr_matmul(g.t_indptr, g.t_indices, g.t_data, M)


def transition_apply(g: SparseGraph, M) -> np.ndarray:
    """D^-1 A @ M; rows of isolated nodes are zero."""
    return adjacency_apply(g, M) * g.inv_degree()[:, None]


def transition_transpose_apply(g: SparseGraph, M) -> np.ndarray:
    """(D^-1 A)^T @ M, needed for reverse-mode gradients."""
    M = _check_rows(M, g.n, "transition_transpose_apply operand")
    return adjacency_transpose_apply(g, M * g.inv_degree()[:, None])


def _side_index(g, side):
    if side == "source":
        return g.sources
    if side == "target":
        return g.targets
    raise GraphError(f"side must be 'source' or 'target', got {side!r}")


def incidence_apply(g: SparseGraph, side: str, M) -> np.ndarray:
    """C_s @ M (side='source') or C_t @ M: row e is M at that endpoint of e."""
    idx = _side_index(g, side)
    M = _check_rows(M, g.n, "incidence_apply operand")
    return M[idx]


def incidence_transpose_apply(g: SparseGraph, side: str, E) -> np.ndarray:
    """C_s^T @ E or C_t^T @ E: row j sums edge rows whose endpoint is j."""
    idx = _side_index(g, side)
    E = _check_rows(E, g.m, "incidence_transpose_apply operand")
    return _kernels.scatter_rows(idx, E, g.n)


# --- file formats -----------------------------------------------------------


def read_edge_list(path) -> list[tuple[int, int]]:
    """Parse ``source<TAB>target`` lines; ``#`` lines and blanks are skipped."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 'source<TAB>target', got {s!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, lineno, f"non-integer endpoint in {s!r}") from None
    return edges


def write_edge_list(path, g: SparseGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# n={g.n} m={g.m} directed={int(g.directed)}\n")
        for s, t in zip(g.sources.tolist(), g.targets.tolist()):
            fh.write(f"{s}\t{t}\n")


def load_graph(path, n: int | None = None, directed: bool = True) -> SparseGraph:
    edges = read_edge_list(path)
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    try:
        return build_graph(edges, n, directed=directed)
    except GraphError as exc:
        raise ParseError(path, 0, str(exc)) from None


def read_feature_csv(path, rows: int | None = None) -> np.ndarray:
    """Read a feature CSV (header row, entity index, then feature columns)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file, header row required") from None
        width = len(header) - 1
        if width < 1:
            raise ParseError(path, 1, "header needs an index column and at least one feature")
        index, values = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ParseError(path, lineno, f"expected {width + 1} fields, got {len(row)}")
            try:
                index.append(int(row[0]))
                values.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    count = rows if rows is not None else (max(index) + 1 if index else 0)
    out = np.zeros((count, width))
    seen = np.zeros(count, bool)
    for k, (i, v) in enumerate(zip(index, values)):
        if not 0 <= i < count:
            raise ParseError(path, k + 2, f"entity index {i} outside 0..{count - 1}")
        out[i] = v
        seen[i] = True
    if not seen.all():
        raise ParseError(path, 0, f"missing rows for entities {np.flatnonzero(~seen)[:5].tolist()}")
    if not np.all(np.isfinite(out)):
        raise ParseError(path, 0, "non-finite feature value")
    return out


def write_feature_csv(path, M, index_name: str = "index", prefix: str = "f") -> None:
    M = np.asarray(M, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name] + [f"{prefix}{j}" for j in range(M.shape[1])])
        for i, row in enumerate(M):
            w.writerow([i] + [repr(float(v)) for v in row])
