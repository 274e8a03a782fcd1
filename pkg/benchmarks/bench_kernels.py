"""Compiled vs numpy kernels: greedy nearest-source search and Hungarian.

    python benchmarks/bench_kernels.py [--sizes 250 500 1000] [--dim 32] [--repeat 3]

Prints best-of-``repeat`` wall times and checks that both backends return
identical results.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from osdr import _fallback, kernels


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[250, 500, 1000])
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args(argv)

    if kernels.compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`",
              file=sys.stderr)
        return 1
    impls = {"compiled": kernels.compiled, "python": _fallback}
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in args.sizes:
        s, t = rng.normal(size=(n, args.dim)), rng.normal(size=(n, args.dim))
        cost = np.ascontiguousarray(rng.random((n, n)))
        ref = kernels.compiled.greedy_match(s, t)
        alt = _fallback.greedy_match(s, t)
        same = np.array_equal(ref[0], alt[0]) and np.array_equal(ref[1], alt[1])
        same &= np.array_equal(kernels.compiled.hungarian(cost), _fallback.hungarian(cost))
        row = {"n": n, "dim": args.dim, "identical": bool(same)}
        for name, impl in impls.items():
            row[f"greedy_{name}_ms"] = best_ms(lambda: impl.greedy_match(s, t), args.repeat)
            row[f"hungarian_{name}_ms"] = best_ms(lambda: impl.hungarian(cost), args.repeat)
        rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print("wall time in ms, best of", args.repeat)
    print(f"{'n':>6} {'greedy C':>10} {'greedy py':>10} {'hung C':>10} {'hung py':>10}  same")
    for r in rows:
        print(f"{r['n']:>6} {r['greedy_compiled_ms']:>10.1f} {r['greedy_python_ms']:>10.1f} "
              f"{r['hungarian_compiled_ms']:>10.1f} {r['hungarian_python_ms']:>10.1f}  "
              f"{r['identical']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
