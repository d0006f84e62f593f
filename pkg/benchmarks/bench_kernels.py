"""Compare the compiled (Cython) and pure-numpy sparse kernels.

    python benchmarks/bench_kernels.py [--nodes 20000] [--degree 4] [--repeat 5]

Times the hot kernels on random sparse matrices, then one forward+backward
pass of GTN on the planted synthetic dataset, under each available backend.
Results are checked for agreement before timing is reported.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from gtnet.data import generate_synthetic, planted_spec
from gtnet.model import GtnConfig, gtn_forward, init_params, loss
from gtnet.sparse import (CsrMatrix, available_backends, masked_row_dots, spmm_sd, spmm_ss,
                          transpose, use_backend)
from gtnet.sparse import _backend


def random_graph(rng, n, degree):
    nnz = n * degree
    return CsrMatrix.from_coo(rng.integers(0, n, nnz), rng.integers(0, n, nnz), rng.random(nnz),
                              (n, n), duplicates="collapse")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _same(x, y):
    if isinstance(x, CsrMatrix):
        return x.shape == y.shape and np.allclose(x.to_dense() if x.n_rows <= 2000 else x.values,
                                                  y.to_dense() if y.n_rows <= 2000 else y.values)
    return np.allclose(x, y)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000, help="matrix size (default: 20000)")
    ap.add_argument("--degree", type=int, default=4, help="nonzeros per row (default: 4)")
    ap.add_argument("--features", type=int, default=64, help="dense width for spmm_sd (default: 64)")
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats, best taken (default: 5)")
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    a = random_graph(rng, args.nodes, args.degree)
    b = random_graph(rng, args.nodes, args.degree)
    x = rng.standard_normal((args.nodes, args.features))
    mask = spmm_ss(a, b)
    cases = {
        "spmm_ss": lambda: spmm_ss(a, b),
        "spmm_sd": lambda: spmm_sd(a, x),
        "transpose": lambda: transpose(a),
        "masked_row_dots": lambda: masked_row_dots(a, transpose(b), mask),
    }

    graph, split, _ = generate_synthetic(planted_spec(0))
    cfg = GtnConfig()
    params = init_params(cfg, len(graph.adj) + 1, graph.num_features, split.num_classes)

    def epoch():
        out = gtn_forward(graph, params, cfg)
        loss(out, split)
        return out.backward()["selectors"]

    cases["gtn_epoch"] = epoch

    before = _backend.BACKEND
    results: dict[str, dict[str, float]] = {}
    outputs: dict[str, dict] = {}
    for name in sorted(available_backends()):
        use_backend(name)
        results[name], outputs[name] = {}, {}
        for case, fn in cases.items():
            results[name][case], outputs[name][case] = best_of(fn, args.repeat)
    use_backend(before)

    backends = sorted(results)
    for case in cases:
        ref = outputs[backends[0]][case]
        for other in backends[1:]:
            if not _same(ref, outputs[other][case]):
                raise SystemExit(f"backends disagree on {case}")

    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
        return 0
    print(f"N={args.nodes} degree={args.degree} features={args.features} best of {args.repeat}")
    head = f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends)
    if "cython" in results and "numpy" in results:
        head += f"{'speedup':>10}"
    print(head)
    for case in cases:
        row = f"{case:<16}" + "".join(f"{results[b][case] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in results and "numpy" in results:
            row += f"{results['numpy'][case] / results['cython'][case]:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
