"""Convolutional features, RoI-Align pooling, and object-centered coordinate maps.

The backbone is a small trainable stand-in for a large pretrained trunk:
three same-padded 3x3 convolutions with relu, interleaved with two 2x2
average-pooling stages, for an overall stride of 4 and a configurable channel
count.

RoI-Align follows the usual continuous convention: a feature cell (r, c)
covers the unit square with center (c + 0.5, r + 0.5); sampling is bilinear
between cell centers with border clamping; each output bin averages an
s x s grid of samples placed at sub-bin midpoints. The sample count per bin
axis is a parameter because midpoint rules of different density only agree
where a bin does not straddle interpolation cells; callers that need to
match a dense reference must pool at the reference's density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import Box, HOIProposal, part_boxes
from .layers import AvgPool2d, Conv2d

BACKBONE_STRIDE = 4
DEFAULT_SAMPLES = 2


@dataclass
class FeatureMap:
    """Dense feature grid at a known stride: data is (H', W', D)."""

    data: np.ndarray
    stride: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be 3-D, got shape {self.data.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


class Backbone:
    """conv-relu-pool-conv-relu-pool-conv-relu; stride 4, D output channels."""

    def __init__(self, d: int, rng: np.random.Generator, k: int = 3, dtype=np.float64):
        self.d = d
        self.dtype = np.dtype(dtype)
        self.conv1 = Conv2d(3, d, k, rng, dtype)
        self.conv2 = Conv2d(d, d, k, rng, dtype)
        self.conv3 = Conv2d(d, d, k, rng, dtype)
        self.pool1 = AvgPool2d()
        self.pool2 = AvgPool2d()
        self.stride = BACKBONE_STRIDE

    def forward(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) -> (B, H/4, W/4, D); H and W must be divisible by 4."""
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ValueError(f"expected (B, H, W, 3) images, got {images.shape}")
        _, h, w, _ = images.shape
        if h % self.stride or w % self.stride:
            raise ValueError(f"image dims {h}x{w} not divisible by stride {self.stride}")
        images = images.astype(self.dtype, copy=False)
        a = self.conv1.forward(images)
        self._m1 = a > 0
        a = self.pool1.forward(a * self._m1)
        a = self.conv2.forward(a)
        self._m2 = a > 0
        a = self.pool2.forward(a * self._m2)
        a = self.conv3.forward(a)
        self._m3 = a > 0
        return a * self._m3

    def backward(self, grad: np.ndarray) -> None:
        g = self.conv3.backward(grad * self._m3)
        g = self.conv2.backward(self.pool2.backward(g) * self._m2)
        self.conv1.backward(self.pool1.backward(g) * self._m1, need_input_grad=False)

    def zero_grad(self):
        for c in (self.conv1, self.conv2, self.conv3):
            c.zero_grad()

    def params(self, prefix: str):
        return (
            self.conv1.params(f"{prefix}.conv1")
            + self.conv2.params(f"{prefix}.conv2")
            + self.conv3.params(f"{prefix}.conv3")
        )


def backbone_forward(backbone: Backbone, image: np.ndarray) -> FeatureMap:
    """Run one (H, W, 3) image through the backbone."""
    out = backbone.forward(image[None])
    return FeatureMap(out[0], backbone.stride)


def _lattice_coords(coords: np.ndarray, size: int):
    """Continuous axis coords -> (lower cell index, fraction), border-clamped."""
    q = np.clip(coords - 0.5, 0.0, size - 1.0)
    i0 = np.minimum(q.astype(np.int64), max(size - 2, 0))
    return i0, q - i0


def _sample_positions(lo: np.ndarray, hi: np.ndarray, r: int, s: int) -> np.ndarray:
    """Midpoint sample coordinates along one axis: (n, r*s) for n boxes."""
    span = (hi - lo) / r
    offs = (np.arange(r)[:, None] + (np.arange(s)[None, :] + 0.5) / s).reshape(-1)
    return lo[:, None] + offs[None, :] * span[:, None]


def roi_align_batch(
    fms: np.ndarray,
    img_idx: np.ndarray,
    boxes: np.ndarray,
    r: int,
    stride: int,
    samples: int = DEFAULT_SAMPLES,
):
    """RoI-Align n boxes against a stack of feature maps.

    fms: (B, H', W', D); img_idx: (n,) map index per box; boxes: (n, 4) in
    image coordinates. Returns ((n, r, r, D) pooled output, cache), the cache
    feeding roi_align_backward.
    """
    b, hf, wf, d = fms.shape
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    img_idx = np.asarray(img_idx, dtype=np.int64).reshape(-1)
    n = boxes.shape[0]
    clipped = np.empty_like(boxes)
    clipped[:, 0] = np.clip(boxes[:, 0], 0.0, wf * stride)
    clipped[:, 1] = np.clip(boxes[:, 1], 0.0, hf * stride)
    clipped[:, 2] = np.clip(boxes[:, 2], 0.0, wf * stride)
    clipped[:, 3] = np.clip(boxes[:, 3], 0.0, hf * stride)
    bad = (clipped[:, 2] <= clipped[:, 0]) | (clipped[:, 3] <= clipped[:, 1])
    if np.any(bad):
        raise ValueError(f"box {int(np.flatnonzero(bad)[0])} empty after clipping to the feature extent")
    fb = clipped / stride

    xs = _sample_positions(fb[:, 0], fb[:, 2], r, samples)  # (n, r*s)
    ys = _sample_positions(fb[:, 1], fb[:, 3], r, samples)
    x0, fx = _lattice_coords(xs, wf)
    y0, fy = _lattice_coords(ys, hf)
    x1 = np.minimum(x0 + 1, wf - 1)
    y1 = np.minimum(y0 + 1, hf - 1)

    # flat gather indices; the other three interpolation corners are offsets
    idx = (img_idx * (hf * wf))[:, None, None] + (y0 * wf)[:, :, None] + x0[:, None, :]
    dx = (x1 - x0)[:, None, :]
    dy = ((y1 - y0) * wf)[:, :, None]
    flat = fms.reshape(-1, d)
    wy1 = fy[:, :, None, None]
    wx1 = fx[:, None, :, None]
    out = (1.0 - wy1) * ((1.0 - wx1) * flat[idx] + wx1 * flat[idx + dx])
    out += wy1 * ((1.0 - wx1) * flat[idx + dy] + wx1 * flat[idx + dy + dx])
    pooled = out.reshape(n, r, samples, r, samples, d).mean(axis=(2, 4))
    cache = (fms.shape, idx, dx, dy, fy, fx, r, samples)
    return pooled, cache


def roi_align_backward(cache, grad: np.ndarray) -> np.ndarray:
    """Gradient of roi_align_batch output with respect to the feature stack.

    The scatter-add runs through a sparse sample-to-cell matrix, which keeps
    the accumulation order fixed and the cost linear in the sample count.
    """
    (b, hf, wf, d), idx, dx, dy, fy, fx, r, s = cache
    n = idx.shape[0]
    rs = r * s
    g = np.ascontiguousarray(
        np.broadcast_to(grad[:, :, None, :, None, :] / (s * s), (n, r, s, r, s, d))
    ).reshape(n * rs * rs, d)

    wy1 = np.broadcast_to(fy[:, :, None], (n, rs, rs))
    wx1 = np.broadcast_to(fx[:, None, :], (n, rs, rs))
    wy0, wx0 = 1.0 - wy1, 1.0 - wx1
    full = (n, rs, rs)
    rows = np.concatenate([
        np.broadcast_to(idx, full).ravel(),
        np.broadcast_to(idx + dx, full).ravel(),
        np.broadcast_to(idx + dy, full).ravel(),
        np.broadcast_to(idx + dy + dx, full).ravel(),
    ])
    weights = np.concatenate(
        [(wy0 * wx0).ravel(), (wy0 * wx1).ravel(), (wy1 * wx0).ravel(), (wy1 * wx1).ravel()]
    ).astype(grad.dtype, copy=False)
    cols = np.tile(np.arange(n * rs * rs), 4)
    scatter = sparse.csr_matrix((weights, (rows, cols)), shape=(b * hf * wf, n * rs * rs))
    return np.asarray(scatter @ g).reshape(b, hf, wf, d)


def roi_align(fm: FeatureMap, box: Box, r: int, samples: int = DEFAULT_SAMPLES) -> np.ndarray:
    """Pool one box from one feature map -> (r, r, D)."""
    pooled, _ = roi_align_batch(
        fm.data[None], np.zeros(1, dtype=np.int64), box.as_array()[None], r, fm.stride, samples
    )
    return pooled[0]


def coordinate_map(shape: tuple[int, int], obj: Box, stride: int) -> np.ndarray:
    """(H', W', 2) map of cell-center offsets from the object center.

    Offsets are measured in image pixels and normalized by the object width
    (x channel) and height (y channel), so the cell covering the object
    center reads approximately (0, 0) and one object-width to the right
    reads x = 1.
    """
    hf, wf = shape
    ox, oy = obj.center
    xs = ((np.arange(wf) + 0.5) * stride - ox) / obj.width
    ys = ((np.arange(hf) + 0.5) * stride - oy) / obj.height
    out = np.empty((hf, wf, 2), dtype=np.float64)
    out[:, :, 0] = xs[None, :]
    out[:, :, 1] = ys[:, None]
    return out


def crop_part_features(
    fm: FeatureMap,
    cmap: np.ndarray,
    prop: HOIProposal,
    gamma: float,
    r_p: int,
    image_size: tuple[float, float] | None = None,
    samples: int = DEFAULT_SAMPLES,
):
    """Pool the K keypoint regions plus the object region from fm and cmap.

    Returns (part features (K, r_p, r_p, D), object feature (r_p, r_p, D),
    part offset crops (K, r_p, r_p, 2), object offset crop (r_p, r_p, 2)).
    """
    hf, wf, _ = fm.data.shape
    if image_size is None:
        image_size = (wf * fm.stride, hf * fm.stride)
    pboxes = part_boxes(prop.pose, prop.human, gamma, image_size)
    regions = np.stack([b.as_array() for b in pboxes] + [prop.object.as_array()])
    zeros = np.zeros(regions.shape[0], dtype=np.int64)
    feats, _ = roi_align_batch(fm.data[None], zeros, regions, r_p, fm.stride, samples)
    offs, _ = roi_align_batch(cmap[None], zeros, regions, r_p, fm.stride, samples)
    return feats[:-1], feats[-1], offs[:-1], offs[-1]
