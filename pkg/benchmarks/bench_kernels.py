"""Compare the compiled kernel core with the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py`` after an editable install. Each
kernel is timed on the shapes the desk-size network produces, outputs of the
two backends are checked for agreement, and one line per kernel is printed.
"""
import argparse
import time

import numpy as np

from ckmfield.kernels import backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # (name, callable(backend) -> ndarray)
    x = rng.standard_normal((256, 16, 8, 16))
    cols = backends()["python"].im2col(x, 3, 1, 1)

    def im2col(be):
        return be.im2col(x, 3, 1, 1)

    def col2im(be):
        return be.col2im(cols, x.shape, 3, 1, 1)

    def im2col_stride2(be):
        return be.im2col(x, 3, 2, 1)

    t = rng.uniform(0.5, 1.0, (8, 256, 16))    # batch x rays x radiators

    def cumprod(be):
        return be.cumprod_exclusive(t)

    y = backends()["python"].cumprod_exclusive(t)
    g = rng.standard_normal(t.shape)

    def cumprod_grad(be):
        return be.cumprod_exclusive_grad(t, y, g)

    return [("im2col 3x3", im2col), ("im2col 3x3/2", im2col_stride2), ("col2im 3x3", col2im),
            ("cumprod_exclusive", cumprod), ("cumprod_exclusive_grad", cumprod_grad)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = backends()
    if "compiled" not in impls:
        print("compiled core not built; only the python fallback is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24s}" + "".join(f"{name + ' ms':>14s}" for name in impls) + f"{'speedup':>10s}  max|diff|")
    for name, fn in cases(rng):
        ms = {be: 1e3 * best_of(lambda m=mod: fn(m), args.repeat) for be, mod in impls.items()}
        outs = {be: fn(mod) for be, mod in impls.items()}
        ref = outs["python"]
        diff = max(float(np.abs(o - ref).max()) for o in outs.values())
        speed = ms["python"] / ms["compiled"] if "compiled" in ms else 1.0
        print(f"{name:<24s}" + "".join(f"{ms[be]:14.2f}" for be in impls) + f"{speed:10.2f}  {diff:.1e}")


if __name__ == "__main__":
    main()
