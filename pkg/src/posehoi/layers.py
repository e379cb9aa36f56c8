"""Minimal differentiable layers on numpy arrays.

Each layer caches what its backward pass needs and writes parameter
gradients (``gw``, ``gb``) in place, overwriting whatever the previous step
left there; call backward exactly once per forward. ``need_input_grad=False``
skips the input-gradient matmul for layers fed by constant data. Weights are
initialized from a fan-in-scaled uniform distribution (drawn in float64 so
the stream is dtype-independent) and biases start at zero.
"""

from __future__ import annotations

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to stay overflow-free
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    """Affine map x @ w + b for batched row vectors."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.w = _uniform_init(rng, n_in, (n_in, n_out), dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad: np.ndarray, need_input_grad: bool = True):
        np.matmul(self._x.T, grad, out=self.gw)
        np.sum(grad, axis=0, out=self.gb)
        if not need_input_grad:
            return None
        return grad @ self.w.T

    def zero_grad(self):
        self.gw[...] = 0.0
        self.gb[...] = 0.0

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w, self.gw), (f"{prefix}.b", self.b, self.gb)]


class TwoLayerMLP:
    """Dense -> relu -> Dense, the embedding block used throughout the heads."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Dense(n_in, n_hidden, rng, dtype)
        self.fc2 = Dense(n_hidden, n_out, rng, dtype)
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.fc1.forward(x)
        self._mask = h > 0
        return self.fc2.forward(h * self._mask)

    def backward(self, grad: np.ndarray, need_input_grad: bool = True):
        gh = self.fc2.backward(grad)
        return self.fc1.backward(gh * self._mask, need_input_grad)

    def zero_grad(self):
        self.fc1.zero_grad()
        self.fc2.zero_grad()

    def params(self, prefix: str):
        return self.fc1.params(f"{prefix}.fc1") + self.fc2.params(f"{prefix}.fc2")


class Conv2d:
    """Same-padded 2-D convolution over (batch, height, width, channel) input.

    Implemented as im2col followed by a single matmul; the kernel is stored
    as (k, k, c_in, c_out).
    """

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype=np.float64):
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.k = k
        self.c_in = c_in
        self.c_out = c_out
        fan_in = k * k * c_in
        self.w = _uniform_init(rng, fan_in, (k, k, c_in, c_out), dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cols = None
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, _ = x.shape
        k, p = self.k, self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((n, h, w, k, k, self.c_in), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = xp[:, i : i + h, j : j + w, :]
        cols = cols.reshape(n * h * w, k * k * self.c_in)
        out = cols @ self.w.reshape(-1, self.c_out) + self.b
        self._cols = cols
        self._shape = (n, h, w)
        return out.reshape(n, h, w, self.c_out)

    def backward(self, grad: np.ndarray, need_input_grad: bool = True):
        n, h, w = self._shape
        k, p = self.k, self.k // 2
        g = grad.reshape(n * h * w, self.c_out)
        np.matmul(self._cols.T, g, out=self.gw.reshape(-1, self.c_out))
        np.sum(g, axis=0, out=self.gb)
        if not need_input_grad:
            return None
        gcols = (g @ self.w.reshape(-1, self.c_out).T).reshape(n, h, w, k, k, self.c_in)
        gxp = np.zeros((n, h + 2 * p, w + 2 * p, self.c_in), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + h, j : j + w, :] += gcols[:, :, :, i, j, :]
        return gxp[:, p : p + h, p : p + w, :]

    def zero_grad(self):
        self.gw[...] = 0.0
        self.gb[...] = 0.0

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w, self.gw), (f"{prefix}.b", self.b, self.gb)]


class AvgPool2d:
    """2x2 average pooling; height and width must be even."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        self._shape = x.shape
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2)
        return g * 0.25
