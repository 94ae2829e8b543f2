"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 48]

Each kernel is called once per backend before timing so JIT compilation is
excluded. Reports the best-of-N wall time and the speedup.
"""
import argparse
import os
import time

import numpy as np

from bloblib.components import label_components
from bloblib.losses import BLOB_DICE
from bloblib.metrics import surface_dice
from bloblib.synth import SynthSpec, generate, max_distance
from bloblib.train import Sample, VoxelModel, featurize, loss_and_grad


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(size):
    rng = np.random.default_rng(0)
    intensity, gt = generate(SynthSpec(dims=(size, size, size), seed=1))
    noisy = rng.random(gt.shape) < 0.2
    sample = Sample.build(intensity, gt)
    model = VoxelModel(np.array([2.0, 1.0, -0.5, 0.5]), -1.0)
    shifted = np.roll(gt, 1, axis=2)
    points = rng.random((4000, 3)) * size
    return {
        "label_components (20% noise)": lambda: label_components(noisy),
        "surface_dice tol=2": lambda: surface_dice(gt, shifted, 2.0),
        "featurize": lambda: featurize(intensity),
        "loss_and_grad (blob dice)": lambda: loss_and_grad(model, sample, BLOB_DICE),
        "max_distance (4000 pts)": lambda: max_distance(points),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=48)
    args = ap.parse_args()
    timings = {}
    for backend in ("numba", "numpy"):
        if backend == "numpy":
            os.environ["BLOBLIB_DISABLE_NUMBA"] = "1"
        else:
            os.environ.pop("BLOBLIB_DISABLE_NUMBA", None)
        for name, fn in cases(args.size).items():
            timings.setdefault(name, {})[backend] = best_of(fn, args.repeat)
    os.environ.pop("BLOBLIB_DISABLE_NUMBA", None)
    print(f"volume {args.size}^3, best of {args.repeat}")
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, t in timings.items():
        print(f"{name:32s} {t['numba'] * 1e3:10.2f} {t['numpy'] * 1e3:10.2f} "
              f"{t['numpy'] / t['numba']:8.1f}x")


if __name__ == "__main__":
    main()
