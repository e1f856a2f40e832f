"""Compare the numba and numpy convolution backends.

Times the two LeNet conv layers (forward and backward) and a full
forward/backward pass at the training batch size, then prints a small
table. Run:

    python3 benchmarks/bench_backends.py [--batch 128] [--repeats 5]
"""

import argparse
import time

import numpy as np

from modbias import models


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_convs(backend, batch, repeats):
    mod = models.resolve_backend(backend)
    rng = np.random.default_rng(0)
    x1 = rng.random((batch, 3, 28, 28))
    w1 = rng.normal(size=(6, 3, 5, 5))
    b1 = np.zeros(6)
    x2 = rng.random((batch, 6, 12, 12))
    w2 = rng.normal(size=(16, 6, 5, 5))
    b2 = np.zeros(16)
    dy1 = rng.normal(size=(batch, 6, 24, 24))
    dy2 = rng.normal(size=(batch, 16, 8, 8))

    mod.conv2d_fwd(x1, w1, b1)  # warm the jit cache before timing
    mod.conv2d_bwd(x1, w1, dy1)
    mod.conv2d_bwd(x1, w1, dy1, False)
    rows = {}
    rows["conv1 fwd"] = _time(lambda: mod.conv2d_fwd(x1, w1, b1), repeats)
    rows["conv1 bwd"] = _time(lambda: mod.conv2d_bwd(x1, w1, dy1), repeats)
    # the trainer skips the first conv's input gradient
    rows["conv1 bwd, no dx"] = _time(
        lambda: mod.conv2d_bwd(x1, w1, dy1, False), repeats)
    rows["conv2 fwd"] = _time(lambda: mod.conv2d_fwd(x2, w2, b2), repeats)
    rows["conv2 bwd"] = _time(lambda: mod.conv2d_bwd(x2, w2, dy2), repeats)
    return rows


def bench_model(backend, batch, repeats):
    models.set_backend(backend)
    params = models.init_params("lenet", 0)
    rng = np.random.default_rng(1)
    px = rng.random((batch, 2352))
    dfeat = rng.normal(size=(batch, 64))

    def step():
        _, cache = models.forward(params, px)
        models.backward(params, cache, dfeat)

    step()  # warm up
    return _time(step, repeats)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    backends = ["numpy"]
    try:
        import numba  # noqa: F401
        backends.insert(0, "numba")
    except ImportError:
        print("numba not importable; timing numpy only")

    results = {}
    for backend in backends:
        results[backend] = bench_convs(backend, args.batch, args.repeats)
        results[backend]["lenet fwd+bwd"] = bench_model(
            backend, args.batch, args.repeats)
    models.set_backend("auto")

    names = list(next(iter(results.values())))
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}" + "".join(f"  {b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name in names:
        line = f"{name:<{width}}"
        for b in backends:
            line += f"  {1e3 * results[b][name]:>10.2f}ms"
        if len(backends) == 2:
            ratio = results["numpy"][name] / results["numba"][name]
            line += f"  {ratio:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
