"""Time the pure-Python and compiled kernels side by side.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-``repeat`` time per call for one minibatch loss+gradient
at the default network size, a 10k-element Fisher-Yates shuffle and a 20k
uniform fill.
"""

import argparse
import timeit

import numpy as np

from lpanet import _backend
from lpanet.network import Dims, init_network
from lpanet.rng import Xoshiro256pp
from lpanet.training import default_lambdas


def cases(k, dims, batch):
    net = init_network(dims, 0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (batch, dims.d_in))
    y = rng.normal(size=(batch, dims.d_y))
    lam = np.array(default_lambdas(dims.n_blocks))
    grad = np.empty(dims.n_params)
    state = Xoshiro256pp(1).state
    idx = np.arange(10_000, dtype=np.int64)
    buf = np.empty(20_000)
    return {
        f"loss_grad (batch {batch})": lambda: k.loss_grad(net.theta, *dims.kernel_args(), x, y, lam, grad),
        "shuffle 10k": lambda: k.xoshiro_shuffle(state, idx),
        "uniform 20k": lambda: k.xoshiro_fill_uniform(state, buf),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=128)
    args = ap.parse_args()
    dims = Dims()
    names = _backend.available()
    results = {}
    for name in names:
        for label, fn in cases(_backend.get(name), dims, args.batch).items():
            timer = timeit.Timer(fn)
            n, _ = timer.autorange()
            best = min(timer.repeat(args.repeat, n)) / n
            results[(label, name)] = best
    labels = list(dict.fromkeys(lbl for lbl, _ in results))
    print(f"{'kernel':<24}" + "".join(f"{n:>14}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for lbl in labels:
        row = f"{lbl:<24}" + "".join(f"{results[(lbl, n)] * 1e6:>11.1f} us" for n in names)
        if len(names) > 1:
            row += f"  {results[(lbl, 'python')] / results[(lbl, 'cython')]:>9.1f}x"
        print(row)
    if len(names) == 1:
        print("compiled kernels not built; only the python backend was timed")


if __name__ == "__main__":
    main()
