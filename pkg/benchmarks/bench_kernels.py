"""Compare the numba and numpy backends of the sparse kernels.

Kernel timings call both implementations directly in this process. The
end-to-end timing runs a fixed-point solve in a subprocess per backend,
since the backend is fixed at import time by ``FEATPROP_NO_NUMBA``.

    python benchmarks/bench_kernels.py [--n 20000] [--deg 8] [--dim 16]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from featprop import _kernels
from featprop.graph import build_graph

E2E = """
import time, numpy as np
from featprop import BACKEND, build_graph
from featprop.propagation import NodePropWeights, NotConverged, SolverConfig, propagate_fixed_point
rng = np.random.default_rng(0)
n, m, d = {n}, {m}, {dim}
g = build_graph(rng.integers(0, n, size=(m, 2)), n)
w = NodePropWeights(rng.standard_normal((d, d)), np.full((d, d), 0.9 / d))
X = rng.standard_normal((n, d))
try:
    propagate_fixed_point(X, w, g, SolverConfig(max_iter=2))  # warm-up / JIT
except NotConverged:
    pass
t = time.perf_counter()
_, it, _ = propagate_fixed_point(X, w, g)
print(BACKEND, it, time.perf_counter() - t)
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--deg", type=int, default=8)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    if not _kernels.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    n, m, k = args.n, args.n * args.deg, args.dim
    g = build_graph(rng.integers(0, n, size=(m, 2)), n)
    M = rng.standard_normal((n, k))
    E = rng.standard_normal((m, k))
    idx = np.asarray(g.targets)

    cases = {
        "csr_matmul": (lambda f: f(g.indptr, g.indices, g.data, M),
                       _kernels.csr_matmul_numba, _kernels.csr_matmul_numpy),
        "scatter_rows": (lambda f: f(idx, E, n), _kernels.scatter_rows_numba, _kernels.scatter_rows_numpy),
    }
    print(f"n={n} m={m} dim={k}")
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  max|diff|")
    for name, (call, fast, slow) in cases.items():
        a, b = call(fast), call(slow)  # also compiles the numba path
        t_fast = best_of(lambda: call(fast), args.repeat)
        t_slow = best_of(lambda: call(slow), args.repeat)
        print(f"{name:<14}{1e3 * t_fast:>10.2f}{1e3 * t_slow:>10.2f}{t_slow / t_fast:>9.2f}  "
              f"{np.max(np.abs(a - b)):.1e}")

    print("\nend-to-end fixed-point solve")
    code = E2E.format(n=n, m=m, dim=k)
    for flag in ("0", "1"):
        env = dict(os.environ, FEATPROP_NO_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, iters, secs = res.stdout.split()
        print(f"  {backend:<6} {iters:>4} iterations  {float(secs):.3f} s")


if __name__ == "__main__":
    main()
