"""Compiled vs numpy convolution patch kernels.

Times im2col / col2im on their own, a conv forward+backward pass, and one
full training step at the default synthetic size, once per backend, and
checks that both backends give identical results.

    python benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""

import argparse
import json
import platform
import statistics
import time

import numpy as np

from travelgan import trainer as T
from travelgan.data import DatasetSpec, gen_domain, to_tensor
from travelgan.diffcore import Tensor, backward, conv2d_s2, kernels
from travelgan.networks import ArchitectureSpec


def use(backend):
    kernels.im2col, kernels.col2im = kernels.backends()[backend]


def timed(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 32, 16, 16)).astype(np.float32)
    cols = kernels.backends()["python"][0](x, 4, 2, 1)
    k = Tensor(rng.standard_normal((64, 32, 4, 4)).astype(np.float32) * 0.02, requires_grad=True)
    xt = Tensor(x, requires_grad=True)

    def conv_fb():
        y = conv2d_s2(xt, k)
        return backward((y * y).sum(), {"x": xt, "k": k})

    cfg = T.TrainingConfig(arch=ArchitectureSpec(32, 16, 1000), batch_size=16, steps=1, seed=0)
    bx = to_tensor(gen_domain(DatasetSpec(kind="beads", count=16, seed=0))[0])
    by = to_tensor(gen_domain(DatasetSpec(kind="grid", count=16, seed=0))[0])

    state = T.init_state(cfg)

    def step():
        return T.train_step(state, bx, by)

    return {
        "im2col (16x32x16x16)": lambda: kernels.im2col(x, 4, 2, 1),
        "col2im (16x32x16x16)": lambda: kernels.col2im(cols, x.shape, 4, 2, 1),
        "conv fwd+bwd (32->64 ch)": conv_fb,
        "train step (d=32, n=16, B=16, both directions)": step,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    available = kernels.backends()
    if "cython" not in available:
        print("compiled backend not built; only the numpy fallback is available")
    results, outputs = {}, {}
    for backend in available:
        use(backend)
        bench = cases()
        results[backend] = {name: timed(fn, args.repeat if "train" not in name else max(1, args.repeat // 3))
                            for name, fn in bench.items()}
        outputs[backend] = [bench[n]() for n in list(bench)[:2]]
    use("cython" if "cython" in available else "python")

    identical = all(np.array_equal(a, b) for a, b in zip(*outputs.values())) if len(outputs) > 1 else None
    print(f"python {platform.python_version()}, numpy {np.__version__}, {platform.machine()}")
    header = f"{'case':48s}" + "".join(f"{b:>12s}" for b in results) + ("     speedup" if len(results) > 1 else "")
    print(header)
    for name in results["python"]:
        row = f"{name:48s}" + "".join(f"{results[b][name] * 1e3:10.2f}ms" for b in results)
        if "cython" in results:
            row += f"{results['python'][name] / results['cython'][name]:11.2f}x"
        print(row)
    if identical is not None:
        print(f"backends bit-identical on im2col/col2im: {identical}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"seconds": results, "identical": identical}, fh, indent=2)


if __name__ == "__main__":
    main()
