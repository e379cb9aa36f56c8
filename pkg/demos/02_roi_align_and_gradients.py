"""Poke at the RoI-Align pooling rule and its gradient.

Two small experiments:
  1. how the bin average changes with sampling density, and where densities
     agree exactly (bins inside one interpolation cell);
  2. the analytic gradient against central finite differences.
"""

import numpy as np

from posehoi.features import FeatureMap, roi_align, roi_align_backward, roi_align_batch
from posehoi.geometry import Box


def density_sweep():
    rng = np.random.default_rng(0)
    fm = FeatureMap(rng.uniform(0, 1, (12, 12, 1)), 1)

    wide = Box(1.3, 2.1, 10.6, 11.2)     # bins straddle many cells
    narrow = Box(4.6, 5.6, 5.4, 6.4)     # bins inside a single cell

    print("sampling-density sweep (absolute drift of the pooled mean):")
    for name, box in (("wide box", wide), ("sub-cell box", narrow)):
        dense = roi_align(fm, box, 5, samples=50)
        for s in (1, 2, 4, 8):
            coarse = roi_align(fm, box, 5, samples=s)
            drift = float(np.max(np.abs(coarse - dense)))
            print(f"  {name:>12} samples={s}: max |pooled - dense| = {drift:.2e}")
    print("sub-cell bins make every midpoint rule exact; wide bins do not.\n")


def gradient_check():
    rng = np.random.default_rng(1)
    data = rng.uniform(0, 1, (6, 6, 2))
    boxes = np.array([[0.8, 1.1, 5.2, 5.6]])
    weights = rng.uniform(-1, 1, (1, 3, 3, 2))

    pooled, cache = roi_align_batch(data[None], np.zeros(1, dtype=np.int64), boxes, 3, 1, 2)
    analytic = roi_align_backward(cache, weights)[0]

    h = 1e-6
    worst = 0.0
    for idx in np.ndindex(data.shape):
        up, down = data.copy(), data.copy()
        up[idx] += h
        down[idx] -= h
        lp, _ = roi_align_batch(up[None], np.zeros(1, dtype=np.int64), boxes, 3, 1, 2)
        lm, _ = roi_align_batch(down[None], np.zeros(1, dtype=np.int64), boxes, 3, 1, 2)
        fd = float(((lp - lm) * weights).sum() / (2 * h))
        worst = max(worst, abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), 1e-9))
    print(f"gradient check: worst relative error over all feature cells = {worst:.2e}")


if __name__ == "__main__":
    density_sweep()
    gradient_check()
