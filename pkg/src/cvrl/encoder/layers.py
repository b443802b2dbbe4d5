"""Differentiable layers with hand-written reverse passes.

Activations are channels-last: ``(batch, time, height, width, channels)``.
Each layer caches what it needs in ``forward`` and writes parameter
gradients into :attr:`Parameter.grad` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import BoundsError, StateError


class Parameter:
    """A value array with a same-shaped gradient buffer."""

    def __init__(self, value: np.ndarray, requires_grad: bool = True):
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0


class Layer:
    def __init__(self):
        self.params: dict[str, Parameter] = {}
        self._cache = None

    def _pop_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a preceding forward")
        cache, self._cache = self._cache, None
        return cache


def _conv_out(n: int, k: int, s: int) -> int:
    return (n + 2 * (k // 2) - k) // s + 1


class Conv3d(Layer):
    """3D convolution with ``k // 2`` zero padding on every axis.

    The weight is stored as ``(kt, kh, kw, in_channels, out_channels)``.
    """

    def __init__(self, in_channels, out_channels, kernel, stride, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        kt, kh, kw = self.kernel
        self.params["weight"] = Parameter(np.zeros((kt, kh, kw, in_channels, out_channels), dtype))
        self.params["bias"] = Parameter(np.zeros(out_channels, dtype))

    @property
    def fan_in(self) -> int:
        kt, kh, kw = self.kernel
        return kt * kh * kw * self.in_channels

    def output_shape(self, t, h, w):
        return tuple(_conv_out(n, k, s) for n, k, s in zip((t, h, w), self.kernel, self.stride))

    def _offsets(self):
        kt, kh, kw = self.kernel
        for dt in range(kt):
            for dh in range(kh):
                for dw in range(kw):
                    yield dt, dh, dw

    def _window(self, dt, dh, dw, out_shape):
        (st, sh, sw), (To, Ho, Wo) = self.stride, out_shape
        return (
            slice(None),
            slice(dt, dt + st * (To - 1) + 1, st),
            slice(dh, dh + sh * (Ho - 1) + 1, sh),
            slice(dw, dw + sw * (Wo - 1) + 1, sw),
            slice(None),
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 5 or x.shape[-1] != self.in_channels:
            raise BoundsError(f"expected (B, T, H, W, {self.in_channels}) input, got {x.shape}")
        B = x.shape[0]
        out_shape = self.output_shape(*x.shape[1:4])
        if min(out_shape) < 1:
            raise BoundsError(f"input {x.shape[1:4]} too small for kernel {self.kernel}")
        pads = [(0, 0)] + [(k // 2, k // 2) for k in self.kernel] + [(0, 0)]
        xp = np.pad(x, pads)
        st, sh, sw = self.stride
        To, Ho, Wo = out_shape
        # (B, To, Ho, Wo, C, kt, kh, kw) view -> kernel-major columns
        win = sliding_window_view(xp, self.kernel, axis=(1, 2, 3))
        win = win[:, : st * (To - 1) + 1 : st, : sh * (Ho - 1) + 1 : sh, : sw * (Wo - 1) + 1 : sw]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4))
        cols = cols.reshape(-1, int(np.prod(self.kernel)) * self.in_channels)
        w = self.params["weight"].value.reshape(-1, self.out_channels)
        y = cols @ w + self.params["bias"].value
        self._cache = (cols, xp.shape, x.shape, out_shape)
        return y.reshape(B, *out_shape, self.out_channels)

    def backward(self, dy: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        cols, xp_shape, x_shape, out_shape = self._pop_cache()
        dy2 = dy.reshape(-1, self.out_channels)
        weight, bias = self.params["weight"], self.params["bias"]
        if weight.requires_grad:
            weight.grad += (cols.T @ dy2).reshape(weight.shape)
        if bias.requires_grad:
            bias.grad += dy2.sum(axis=0)
        if not input_grad:
            return None
        dcols = (dy2 @ weight.value.reshape(-1, self.out_channels).T).reshape(
            x_shape[0], *out_shape, -1, self.in_channels
        )
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i, off in enumerate(self._offsets()):
            dxp[self._window(*off, out_shape)] += dcols[..., i, :]
        kt, kh, kw = self.kernel
        T, H, W = x_shape[1:4]
        return dxp[:, kt // 2 : kt // 2 + T, kh // 2 : kh // 2 + H, kw // 2 : kw // 2 + W, :]


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._pop_cache()


class ChannelStandardize(Layer):
    """Per-sample standardization over (t, h, w) within channel groups.

    ``groups=None`` standardizes every channel on its own; ``groups=1``
    standardizes all channels jointly, which keeps their relative levels.
    """

    def __init__(self, groups: int | None = None, eps: float = 1e-5):
        super().__init__()
        self.groups = groups
        self.eps = eps

    def _grouped(self, x):
        C = x.shape[-1]
        G = C if self.groups is None else self.groups
        if C % G:
            raise BoundsError(f"{C} channels do not split into {G} groups")
        return x.reshape(*x.shape[:-1], G, C // G)

    _AXES = (1, 2, 3, 5)

    def forward(self, x):
        xg = self._grouped(x)
        mean = xg.mean(axis=self._AXES, keepdims=True)
        centred = xg - mean
        inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=self._AXES, keepdims=True) + self.eps)
        y = centred * inv_std
        self._cache = (y, inv_std)
        return y.reshape(x.shape)

    def backward(self, dy):
        y, inv_std = self._pop_cache()
        dyg = dy.reshape(y.shape)
        axes = self._AXES
        dx = inv_std * (dyg - dyg.mean(axis=axes, keepdims=True) - y * (dyg * y).mean(axis=axes, keepdims=True))
        return dx.reshape(dy.shape)


class BatchStandardize(Layer):
    """Per-feature standardization over every axis but the last.

    In training mode the statistics come from the current batch and are
    folded into running averages; in inference mode the running averages
    are used, so a clip's output does not depend on its batch-mates.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self.buffers = {
            "running_mean": np.zeros(num_features, dtype),
            "running_var": np.ones(num_features, dtype),
        }

    def forward(self, x):
        axes = tuple(range(x.ndim - 1))
        if not self.training:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
            return (x - mean) / np.sqrt(var + self.eps).astype(x.dtype)
        mean = x.mean(axis=axes)
        centred = x - mean
        var = (centred * centred).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        y = centred * inv_std
        n = x.size // x.shape[-1]
        m = self.momentum
        self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
        self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * var * n / max(n - 1, 1)).astype(x.dtype)
        self._cache = (y, inv_std, axes)
        return y

    def backward(self, dy):
        y, inv_std, axes = self._pop_cache()
        return inv_std * (dy - dy.mean(axis=axes) - y * (dy * y).mean(axis=axes))


class GlobalAvgPool(Layer):
    """Mean over time and space: ``(B, T, H, W, C) -> (B, C)``."""

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(1, 2, 3))

    def backward(self, dy):
        shape = self._pop_cache()
        scale = 1.0 / (shape[1] * shape[2] * shape[3])
        return np.broadcast_to((dy * scale)[:, None, None, None, :], shape).copy()


class Linear(Layer):
    def __init__(self, in_features, out_features, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = Parameter(np.zeros((in_features, out_features), dtype))
        self.params["bias"] = Parameter(np.zeros(out_features, dtype))

    @property
    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise BoundsError(f"expected (B, {self.in_features}) input, got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].value + self.params["bias"].value

    def backward(self, dy):
        x = self._pop_cache()
        weight, bias = self.params["weight"], self.params["bias"]
        if weight.requires_grad:
            weight.grad += x.T @ dy
        if bias.requires_grad:
            bias.grad += dy.sum(axis=0)
        return dy @ weight.value.T
