"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on element-sized inputs, then a full element-operator
build and a level-4 assembly, and checks that both backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from wgbrinkman import _kernels as K
from wgbrinkman.mesh import build_mesh
from wgbrinkman.system import assemble
from wgbrinkman.verify import brinkman_2d_case
from wgbrinkman.weakops import CellGeometry, element_ops


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(k: int = 3):
    rng = np.random.default_rng(0)
    pts = rng.random((200, 2))
    t = rng.uniform(-1, 1, 50)
    a = rng.random((dim := (k + 4) * (k + 5) // 2, 200))
    w = rng.random(200)
    geom = CellGeometry.of_cell(build_mesh("poly", 2), 0)
    case = brinkman_2d_case(check=False)
    mesh = build_mesh("poly", 4)
    return {
        "monomials (P6, 200 pts)": lambda: K.monomials(pts, (0.5, 0.5), 0.3, k + 3),
        "monomial_grads (P6, 200 pts)": lambda: K.monomial_grads(pts, (0.5, 0.5), 0.3, k + 3),
        "powers (deg 3, 50 pts)": lambda: K.powers(t, k),
        f"weighted_gram ({dim}x{dim}, 200 pts)": lambda: K.weighted_gram(a, w, a),
        "element_ops (hexagon, k=3, r=6)": lambda: element_ops(geom, k, k + 3),
        "assemble (poly level 4, k=2)": lambda: assemble(mesh, 2, f=case.f, load_exactness=9),
    }


def agreement(k: int = 3) -> float:
    geom = CellGeometry.of_cell(build_mesh("poly", 2), 0)
    out = []
    for use in (True, False):
        K.set_backend(use)
        ops = element_ops(geom, k, k + 3)
        out.append(np.concatenate([ops.G.ravel(), ops.D.ravel(), ops.S.ravel()]))
    return float(np.abs(out[0] - out[1]).max() / np.abs(out[1]).max())


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    initial = K.USE_NUMBA
    rows = []
    for name, fn in workloads().items():
        res = {}
        for use in (True, False):
            K.set_backend(use)
            fn()  # warm up (and compile)
            res[use] = best_of(fn, args.repeat if "assemble" not in name else 1)
        rows.append((name, res[True], res[False]))
    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>7}")
    for name, tn, tp in rows:
        print(f"{name:<{width}}  {tn * 1e3:>8.3f}ms  {tp * 1e3:>8.3f}ms  {tp / tn:>6.1f}x")
    print(f"backend agreement on G, D, S (relative): {agreement():.1e}")
    K.set_backend(initial)


if __name__ == "__main__":
    main()
