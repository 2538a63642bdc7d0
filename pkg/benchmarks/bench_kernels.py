"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--batch B]

Shapes follow the default desk network on 64x64 inputs. Each backend is
also checked for bit-identical output before timing.
"""
import argparse
import time

import numpy as np

from ildnet import kernels


def cases(batch, rng):
    x1 = rng.normal(size=(batch, 3, 64, 64)).astype(np.float32)
    x2 = rng.normal(size=(batch, 16, 32, 32)).astype(np.float32)
    x3 = rng.normal(size=(batch, 32, 16, 16)).astype(np.float32)
    p1 = rng.normal(size=(batch, 16, 64, 64)).astype(np.float32)
    out = []
    for name, x, k, pad in (("conv1", x1, 5, 2), ("conv2", x2, 5, 2), ("conv3", x3, 3, 1)):
        def fwd(impl, x=x, k=k, pad=pad):
            return impl.im2col(x, k, k, 1, pad)

        cols_shape = fwd(kernels.get_backend("python")).shape
        g = rng.normal(size=cols_shape).astype(np.float32)

        def bwd(impl, g=g, shape=x.shape, k=k, pad=pad):
            return impl.col2im(g, shape, k, k, 1, pad)

        out += [(f"im2col {name}", fwd), (f"col2im {name}", bwd)]

    def pool_f(impl):
        return impl.maxpool_forward(p1, 2, 2)

    o, arg = pool_f(kernels.get_backend("python"))
    d = rng.normal(size=o.shape).astype(np.float32)

    def pool_b(impl):
        return impl.maxpool_backward(d, arg, p1.shape, 2, 2)

    out += [("maxpool fwd pool1", pool_f), ("maxpool bwd pool1", pool_b)]
    return out


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(names)}")
    if "cython" not in names:
        print("compiled backend not built; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    totals = dict.fromkeys(names, 0.0)
    for label, fn in cases(args.batch, rng):
        results = [fn(kernels.get_backend(n)) for n in names]
        ref = results[0]
        for r in results[1:]:
            r0 = ref[0] if isinstance(ref, tuple) else ref
            r1 = r[0] if isinstance(r, tuple) else r
            assert np.array_equal(r0, r1), f"{label}: backends disagree"
        t = {n: best_of(lambda n=n: fn(kernels.get_backend(n)), args.repeat) for n in names}
        for n in names:
            totals[n] += t[n]
        row = f"{label:<22}" + "".join(f"{t[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{t['python'] / t['cython']:>11.2f}x"
        print(row)
    row = f"{'total':<22}" + "".join(f"{totals[n] * 1e3:>10.2f}ms" for n in names)
    if len(names) > 1:
        row += f"{totals['python'] / totals['cython']:>11.2f}x"
    print(row)


if __name__ == "__main__":
    main()
