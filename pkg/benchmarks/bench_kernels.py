"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time for each backend and
checks that both backends agree bit for bit.
"""
import argparse
import timeit

import numpy as np

from wavescore import kernels


def cases(rng):
    x = rng.standard_normal((16, 32, 32, 32)).astype(np.float32)
    cols = kernels.im2col(x, 3, backend="python")
    img = rng.standard_normal((64, 64, 64))
    det, low = kernels.haar_analysis(img, backend="python")
    return {
        "im2col 16x32x32x32 k3": lambda b: kernels.im2col(x, 3, backend=b),
        "col2im 16x32x32x32 k3": lambda b: kernels.col2im(cols, x.shape, 3, backend=b),
        "haar analysis 64x64x64": lambda b: kernels.haar_analysis(img, backend=b),
        "haar synthesis 64x64x64": lambda b: kernels.haar_synthesis(det, low, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernels not built; only the python backend is available")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup  identical")
    for name, fn in cases(rng).items():
        times = []
        for b in backends:
            t = min(timeit.repeat(lambda: fn(b), number=args.number, repeat=args.repeat))
            times.append(t / args.number)
        same = ""
        if len(backends) == 2:
            a, c = fn("python"), fn("cython")
            a, c = (a, c) if isinstance(a, tuple) else ((a,), (c,))
            same = str(all(np.array_equal(u, v) for u, v in zip(a, c)))
        speed = f"{times[0] / times[-1]:8.1f}x" if len(times) == 2 else ""
        print(f"{name:28s} " + " ".join(f"{t * 1e3:10.2f}ms" for t in times) + f"  {speed}  {same}")


if __name__ == "__main__":
    main()
