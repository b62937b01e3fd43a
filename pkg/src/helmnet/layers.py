"""Layer kernels with hand-written backward passes.

The free functions are the numerical kernels; the classes wrap them with
parameter storage and the forward caches needed by ``backward``. All
kernels are dtype-preserving so gradient checks can run them in float64.

Convolutions are 3x3, stride 1, valid padding. Pooling is 2x2 / stride 2
with floor semantics (a trailing odd row or column is dropped).
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError

KERNEL = 3


class ContractError(RuntimeError):
    """A layer was driven out of order (e.g. backward with no forward)."""


# -- convolution -------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out[n,o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * in[n,c,y+i,x+j]."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if weight.shape[1:] != (c, KERNEL, KERNEL):
        raise ShapeError(f"input has {c} channels, weights expect {weight.shape}")
    if h < KERNEL or w < KERNEL:
        raise ShapeError(f"spatial dims {h}x{w} smaller than the 3x3 kernel")
    windows = sliding_window_view(xb, (KERNEL, KERNEL), axis=(2, 3))
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Return (grad_input, grad_weight, grad_bias) for ``conv2d_forward``."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    n, c, h, w = xb.shape
    ho, wo = h - KERNEL + 1, w - KERNEL + 1
    if gb.shape != (n, weight.shape[0], ho, wo):
        raise ShapeError(f"grad_out shape {gb.shape} inconsistent with forward")
    windows = sliding_window_view(xb, (KERNEL, KERNEL), axis=(2, 3))
    grad_w = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = gb.sum(axis=(0, 2, 3))
    grad_in = np.zeros_like(xb)
    for i in range(KERNEL):
        for j in range(KERNEL):
            # [N,O,Ho,Wo] x [O,C] -> [N,Ho,Wo,C]
            contrib = np.tensordot(gb, weight[:, :, i, j], axes=([1], [0]))
            grad_in[:, :, i:i + ho, j:j + wo] += contrib.transpose(0, 3, 1, 2)
    return (grad_in[0] if single else grad_in), grad_w, grad_b


# -- max pooling -------------------------------------------------------------


def maxpool2x2_forward(x: np.ndarray):
    """Return (pooled, argmax) where argmax indexes each 2x2 window row-major.

    Ties resolve to the first (smallest flat index) element of the window.
    """
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise ShapeError(f"max-pool needs H, W >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = xb[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (arg, xb.shape, single)
    return (out[0] if single else out), cache


def maxpool2x2_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    arg, in_shape, single = cache
    gb, _ = _as_batch(grad_out)
    if gb.shape != arg.shape:
        raise ShapeError(f"grad_out shape {gb.shape} does not match pooling indices {arg.shape}")
    n, c, h, w = in_shape
    ho, wo = arg.shape[2], arg.shape[3]
    win = np.zeros((n, c, ho, wo, 4), dtype=gb.dtype)
    np.put_along_axis(win, arg[..., None], gb[..., None], axis=-1)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    grad_in = np.zeros(in_shape, dtype=gb.dtype)
    grad_in[:, :, :2 * ho, :2 * wo] = win
    return grad_in[0] if single else grad_in


# -- elementwise -------------------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


# -- batch norm --------------------------------------------------------------


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, *, train: bool,
                        eps: float = 1e-5, momentum: float = 0.1):
    """Normalize per channel over (N, H, W).

    In train mode the running statistics are updated in place and a cache
    for the backward pass is returned; in eval mode the cache is None.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch norm over {gamma.shape[0]} channels got input {x.shape}")
    if train:
        n, _, h, w = x.shape
        if n == 1:
            warnings.warn("batch norm in train mode with N=1; statistics come from H*W only",
                          RuntimeWarning, stacklevel=2)
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += momentum * var.astype(running_var.dtype)
        mean, var = mean.astype(x.dtype), var.astype(x.dtype)
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma) if train else None
    return out, cache


def batchnorm2d_backward(cache, grad_out):
    """Return (grad_input, grad_gamma, grad_beta)."""
    if cache is None:
        raise ContractError("batch norm backward needs a train-mode forward")
    xhat, inv_std, gamma = cache
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    axes = (0, 2, 3)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    scale = (gamma * inv_std / m)[None, :, None, None]
    grad_in = scale * (m * grad_out - grad_beta[None, :, None, None]
                       - xhat * grad_gamma[None, :, None, None])
    return grad_in.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


# -- dropout -----------------------------------------------------------------


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=DTYPE) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate) if rate else np.ones(shape, dtype=dtype)


# -- linear ------------------------------------------------------------------


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects [N,{weight.shape[1]}], got {x.shape}")
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    """Return (grad_input, grad_weight, grad_bias)."""
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError(f"grad_out {grad_out.shape} inconsistent with forward")
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


# -- layer objects -----------------------------------------------------------


class Layer:
    """Base class. Subclasses set ``name`` and override forward/backward."""

    name = "layer"
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv2d(Layer):
    name = "Conv2d"

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator | None = None, dtype=DTYPE):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        fan_in = in_ch * KERNEL * KERNEL
        bound = np.sqrt(6.0 / fan_in)
        shape = (out_ch, in_ch, KERNEL, KERNEL)
        w = rng.uniform(-bound, bound, size=shape) if rng is not None else np.zeros(shape)
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(out_ch, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (self.out_ch, h - KERNEL + 1, w - KERNEL + 1)

    def forward(self, x, train):
        self._x = x
        return conv2d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        if self._x is None:
            raise ContractError("Conv2d.backward called before forward")
        gi, gw, gb = conv2d_backward(self._x, self.params["weight"], grad_out)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gi


class BatchNorm2d(Layer):
    name = "BatchNorm2d"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=DTYPE):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps, self.momentum = eps, momentum
        self.params = {"gamma": np.ones(channels, dtype=dtype), "beta": np.zeros(channels, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.buffers = {"running_mean": np.zeros(channels, dtype=dtype),
                        "running_var": np.ones(channels, dtype=dtype)}
        self._cache = None

    def forward(self, x, train):
        out, self._cache = batchnorm2d_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train=train, eps=self.eps, momentum=self.momentum)
        return out

    def backward(self, grad_out):
        gi, gg, gb = batchnorm2d_backward(self._cache, grad_out)
        self.grads["gamma"] += gg
        self.grads["beta"] += gb
        return gi


class ReLU(Layer):
    name = "ReLU"

    def forward(self, x, train):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out):
        return relu_backward(self._x, grad_out)


class MaxPool2x2(Layer):
    name = "MaxPool2d"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, train):
        out, self._cache = maxpool2x2_forward(x)
        return out

    def backward(self, grad_out):
        return maxpool2x2_backward(self._cache, grad_out)


class Dropout(Layer):
    """Inverted dropout driven by a counter-based stream.

    The mask for a forward call depends only on (seed, index, step), so a
    run can be resumed or replayed without carrying generator state.
    """

    name = "Dropout"

    def __init__(self, rate: float, index: int = 0, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate, self.index, self.seed = rate, index, seed
        self.step = 0
        self.mask = None

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            self.mask = np.ones_like(x) if train else None
            return x
        rng = np.random.default_rng([self.seed, self.index, self.step])
        self.mask = dropout_mask(x.shape, self.rate, rng, dtype=x.dtype.type)
        return x * self.mask

    def backward(self, grad_out):
        if self.mask is None:
            raise ContractError("Dropout.backward needs a cached train-mode mask")
        return grad_out * self.mask


class Flatten(Layer):
    name = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        if x.ndim != 4:
            raise ShapeError(f"flatten expects [N,C,H,W], got {x.shape}")
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class Linear(Layer):
    name = "Linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None,
                 dtype=DTYPE):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        bound = np.sqrt(6.0 / in_features)
        shape = (out_features, in_features)
        w = rng.uniform(-bound, bound, size=shape) if rng is not None else np.zeros(shape)
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(out_features, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def output_shape(self, in_shape):
        return (self.out_features,)

    def forward(self, x, train):
        self._x = x
        return linear_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        if self._x is None:
            raise ContractError("Linear.backward called before forward")
        gi, gw, gb = linear_backward(self._x, self.params["weight"], grad_out)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gi
