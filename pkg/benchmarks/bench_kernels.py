"""Numba vs pure-numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--sizes 12 14 16 18] [--repeat 5]

Matvec is timed on the J1-J2 chain (periodic, J2 = 1) at half filling;
the search kernel scores a fixed block of single-qubit candidates.
Both backends are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from signstruct import _kernels
from signstruct.hamiltonian import apply_terms, heisenberg_terms
from signstruct.lattice import build_chain, enumerate_sector
from signstruct.search import SearchConfig


def best_time(fn, repeat):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_matvec(n, repeat, backends):
    basis = enumerate_sector(n, n // 2)
    H = heisenberg_terms(build_chain(n, "pbc", 1.0, 1.0))
    x = np.random.default_rng(0).standard_normal(basis.dim)
    ref = apply_terms(H, basis, x, kernels=_kernels.numpy_impl)
    out = {}
    for name, kern in backends.items():
        y = apply_terms(H, basis, x, kernels=kern)
        assert np.allclose(y, ref, atol=1e-12), name
        out[name] = best_time(lambda: apply_terms(H, basis, x, kernels=kern), repeat)
    return basis.dim, out


def bench_scores(n, count, repeat, backends):
    basis = enumerate_sector(n, n // 2)
    psi = np.random.default_rng(1).standard_normal(basis.dim)
    psi /= np.linalg.norm(psi)
    ref = int(np.argmax(np.abs(psi)))
    thr = 1e-12 * float(np.abs(psi).max())
    tol = SearchConfig().phase_tol
    base = np.zeros(basis.dim, np.int64)
    count = min(count, 5 ** (n - 1))

    def run(kern):
        return kern.score_range(psi, basis.configs, n, True, 0, count, base, ref, thr, tol)[0]

    first = run(_kernels.numpy_impl)
    out = {}
    for name, kern in backends.items():
        np.testing.assert_allclose(run(kern), first, atol=1e-12, equal_nan=True)
        out[name] = best_time(lambda: run(kern), repeat)
    return count, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[12, 14, 16, 18])
    ap.add_argument("--search-sizes", type=int, nargs="+", default=[8, 10, 12])
    ap.add_argument("--candidates", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {"numpy": _kernels.numpy_impl}
    if _kernels.HAVE_NUMBA:
        backends["numba"] = _kernels.numba_impl
    else:
        print("numba not importable; timing the numpy kernels only")

    print(f"{'kernel':8s} {'n':>3s} {'size':>9s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for n in args.sizes:
        dim, t = bench_matvec(n, args.repeat, backends)
        line = " ".join(f"{t[b] * 1e3:8.2f}ms" for b in backends)
        ratio = f"{t['numpy'] / t['numba']:8.1f}x" if "numba" in t else ""
        print(f"{'matvec':8s} {n:3d} {dim:9d} {line} {ratio}")
    for n in args.search_sizes:
        count, t = bench_scores(n, args.candidates, args.repeat, backends)
        line = " ".join(f"{t[b] * 1e3:8.2f}ms" for b in backends)
        ratio = f"{t['numpy'] / t['numba']:8.1f}x" if "numba" in t else ""
        print(f"{'scores':8s} {n:3d} {count:9d} {line} {ratio}")


if __name__ == "__main__":
    main()
