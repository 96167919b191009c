"""Compare the compiled and pure-Python sparse kernels.

Run with ``python3 benchmarks/bench_kernels.py``. The compiled timings are
skipped when the extension is not built.
"""
import argparse
import timeit

import numpy as np

from graphunlearn import kernels
from graphunlearn.gnn import ModelConfig, OptimizerConfig, normalize_adjacency, train
from graphunlearn.graph import SbmConfig, SplitConfig, generate_sbm, make_splits


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_spmm(g, width, repeat):
    m = normalize_adjacency(g)
    dense = np.random.default_rng(0).random((g.num_nodes, width))
    out = {"python": _best(lambda: kernels.py_csr_matmul(m.indptr, m.indices, m.data, dense), repeat, 20)}
    if kernels.BACKEND == "cython":
        out["cython"] = _best(lambda: kernels.csr_matmul(m.indptr, m.indices, m.data, dense), repeat, 20)
    return out


def bench_pair_dots(n, width, pairs, repeat):
    rng = np.random.default_rng(1)
    z = rng.random((n, width))
    left, right = rng.integers(0, n, pairs), rng.integers(0, n, pairs)
    out = {"python": _best(lambda: kernels.py_row_pair_dots(z, left, right), repeat, 50)}
    if kernels.BACKEND == "cython":
        out["cython"] = _best(lambda: kernels.row_pair_dots(z, left, right), repeat, 50)
    return out


def bench_training(g, epochs):
    cfg = ModelConfig(g.feature_dim, g.num_classes, seed=0)
    _, rep = train(g, cfg, OptimizerConfig(), epochs)
    return rep.wall_time


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--nodes-per-block", type=int, default=2500)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    n = args.blocks * args.nodes_per_block
    g = generate_sbm(SbmConfig(args.blocks, args.nodes_per_block, p_in=20 / args.nodes_per_block,
                               p_out=2 / n, seed=0))
    g = make_splits(g, SplitConfig(seed=0))
    print(f"backend={kernels.BACKEND} nodes={g.num_nodes} edges={g.num_edges}")
    for width in (4, 64):
        t = bench_spmm(g, width, args.repeat)
        line = "  ".join(f"{k}={v * 1e3:.3f}ms" for k, v in t.items())
        speed = f"  speedup={t['python'] / t['cython']:.2f}x" if "cython" in t else ""
        print(f"spmm width={width:<3d} {line}{speed}")
    t = bench_pair_dots(g.num_nodes, 64, 5000, args.repeat)
    line = "  ".join(f"{k}={v * 1e3:.3f}ms" for k, v in t.items())
    speed = f"  speedup={t['python'] / t['cython']:.2f}x" if "cython" in t else ""
    print(f"pair_dots pairs=5000 {line}{speed}")
    print(f"train 50 epochs ({kernels.BACKEND}) {bench_training(g, 50):.3f}s")


if __name__ == "__main__":
    main()
