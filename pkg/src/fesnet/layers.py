"""Neural network layers with explicit forward and backward passes.

All layers operate on 4-D arrays in (batch, channels, height, width)
layout and preserve whatever float dtype the input carries: float32
for training, float64 for gradient checking. Outputs are freshly
allocated; a layer caches only what its own backward pass needs, and
``backward`` overwrites parameter gradients rather than accumulating.

Convolutions are evaluated tap-by-tap: each kernel offset contributes
one strided slice of the padded input, turned into a matmul over
channels. This keeps peak memory at one slice instead of a full
im2col buffer while still routing the arithmetic through BLAS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PROB_FLOOR = 1e-12


class Param:
    """A trainable tensor plus its gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


@dataclass
class ConvSpec:
    """Geometry of a 2-D convolution."""

    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    depthwise: bool = False

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w) < 1:
            raise ValueError(f"kernel extents must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.depthwise and self.in_channels != self.out_channels:
            raise ValueError(
                f"depthwise convolution requires out_channels == in_channels, "
                f"got {self.out_channels} != {self.in_channels}"
            )

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        ow = (w + 2 * self.padding - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        return oh, ow

    @property
    def weight_shape(self) -> tuple:
        if self.depthwise:
            return (self.in_channels, self.kernel_h, self.kernel_w)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


def he_init(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _tap(spec: ConvSpec, oh: int, ow: int, di: int, dj: int) -> tuple[slice, slice]:
    i0 = di * spec.dilation
    j0 = dj * spec.dilation
    return (
        slice(i0, i0 + spec.stride * oh, spec.stride),
        slice(j0, j0 + spec.stride * ow, spec.stride),
    )


class Conv2d:
    """General 2-D convolution (optionally depthwise) with bias."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "conv"):
        self.spec = spec
        self.name = name
        fan_in = (1 if spec.depthwise else spec.in_channels) * spec.kernel_h * spec.kernel_w
        if rng is None:
            w = np.zeros(spec.weight_shape, dtype=dtype)
        else:
            w = he_init(spec.weight_shape, fan_in, rng, dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(spec.out_channels, dtype=dtype))
        self._xp = None
        self._x_shape = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        spec = self.spec
        if x.ndim != 4:
            raise ValueError(f"conv input must be 4-D (N,C,H,W), got {x.ndim}-D")
        n, c, h, w = x.shape
        if c != spec.in_channels:
            raise ValueError(f"conv input has {c} channels, spec expects {spec.in_channels}")
        oh, ow = spec.out_hw(h, w)
        if oh < 1 or ow < 1:
            raise ValueError(f"conv output extent would be {oh}x{ow} for input {h}x{w}")
        xp = _pad2d(x, spec.padding)
        wv = self.w.value
        if spec.depthwise:
            y = np.zeros((n, spec.out_channels, oh, ow), dtype=x.dtype)
            for di in range(spec.kernel_h):
                for dj in range(spec.kernel_w):
                    si, sj = _tap(spec, oh, ow, di, dj)
                    y += xp[:, :, si, sj] * wv[None, :, di, dj, None, None]
        else:
            acc = np.zeros((n, oh, ow, spec.out_channels), dtype=x.dtype)
            for di in range(spec.kernel_h):
                for dj in range(spec.kernel_w):
                    si, sj = _tap(spec, oh, ow, di, dj)
                    # (n,C,oh,ow) x (O,C) -> (n,oh,ow,O)
                    acc += np.tensordot(xp[:, :, si, sj], wv[:, :, di, dj], axes=([1], [1]))
            y = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
        y += self.b.value[None, :, None, None]
        self._xp = xp
        self._x_shape = x.shape
        self._out_hw = (oh, ow)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        spec = self.spec
        if self._xp is None:
            raise RuntimeError("backward called before forward")
        n, c, h, w = self._x_shape
        oh, ow = self._out_hw
        if dy.shape != (n, spec.out_channels, oh, ow):
            raise ValueError(
                f"output gradient shape {dy.shape} does not match forward output "
                f"{(n, spec.out_channels, oh, ow)}"
            )
        xp = self._xp
        wv = self.w.value
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wv)
        if spec.depthwise:
            for di in range(spec.kernel_h):
                for dj in range(spec.kernel_w):
                    si, sj = _tap(spec, oh, ow, di, dj)
                    dw[:, di, dj] = (dy * xp[:, :, si, sj]).sum(axis=(0, 2, 3))
                    dxp[:, :, si, sj] += dy * wv[None, :, di, dj, None, None]
        else:
            dyt = np.ascontiguousarray(dy.transpose(0, 2, 3, 1))  # (n,oh,ow,O)
            for di in range(spec.kernel_h):
                for dj in range(spec.kernel_w):
                    si, sj = _tap(spec, oh, ow, di, dj)
                    dw[:, :, di, dj] = np.tensordot(dy, xp[:, :, si, sj], axes=([0, 2, 3], [0, 2, 3]))
                    dxp[:, :, si, sj] += np.tensordot(dyt, wv[:, :, di, dj],
                                                      axes=([3], [0])).transpose(0, 3, 1, 2)
        self.w.grad = dw
        self.b.grad = dy.sum(axis=(0, 2, 3))
        p = spec.padding
        if p:
            return np.ascontiguousarray(dxp[:, :, p:p + h, p:p + w])
        return dxp


class SeparableConv2d:
    """Depthwise spatial filter followed by a 1x1 channel-mixing convolution."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 padding: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "sepconv"):
        self.depthwise = Conv2d(
            ConvSpec(kernel, kernel, in_channels, in_channels, padding=padding, depthwise=True),
            rng=rng, dtype=dtype, name=f"{name}.depth")
        self.pointwise = Conv2d(
            ConvSpec(1, 1, in_channels, out_channels),
            rng=rng, dtype=dtype, name=f"{name}.point")
        if self.pointwise.spec.in_channels != self.depthwise.spec.out_channels:
            raise ValueError("pointwise input channels do not match depthwise output channels")
        self.name = name

    def params(self) -> list[Param]:
        return self.depthwise.params() + self.pointwise.params()

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        return self.pointwise.forward(self.depthwise.forward(x, train), train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.depthwise.backward(self.pointwise.backward(dy))


class ConvTranspose2d:
    """Learnable upsampling with kernel size equal to the stride (no overlap)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 name: str = "tconv"):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.name = name
        shape = (in_channels, out_channels, stride, stride)
        fan_in = in_channels * stride * stride
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = he_init(shape, fan_in, rng, dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(out_channels, dtype=dtype))
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 4:
            raise ValueError(f"transposed conv input must be 4-D, got {x.ndim}-D")
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"transposed conv input has {c} channels, expects {self.in_channels}")
        k = self.stride
        # (n,C,h,w) x (C,O,k,k) -> (n,h,w,O,k,k); kernel==stride so taps tile the output
        t = np.tensordot(x, self.w.value, axes=([1], [0]))
        y = t.transpose(0, 3, 1, 4, 2, 5).reshape(n, self.out_channels, h * k, w * k)
        y = y + self.b.value[None, :, None, None]
        self._x = x
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        x = self._x
        n, c, h, w = x.shape
        k = self.stride
        if dy.shape != (n, self.out_channels, h * k, w * k):
            raise ValueError(
                f"output gradient shape {dy.shape} does not match forward output "
                f"{(n, self.out_channels, h * k, w * k)}"
            )
        t = dy.reshape(n, self.out_channels, h, k, w, k).transpose(0, 2, 4, 1, 3, 5)
        dx = np.tensordot(t, self.w.value, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        self.w.grad = np.tensordot(x, t, axes=([0, 2, 3], [0, 1, 2]))
        self.b.grad = dy.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dx)


class BatchNorm2d:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, dtype=np.float32, name: str = "bn"):
        self.channels = channels
        self.name = name
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"batchnorm expects (N,{self.channels},H,W), got {x.shape}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (BN_MOMENTUM * self.running_mean
                                 + (1.0 - BN_MOMENTUM) * mean).astype(x.dtype)
            self.running_var = (BN_MOMENTUM * self.running_var
                                + (1.0 - BN_MOMENTUM) * var).astype(x.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, train)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xhat, inv_std, train = self._cache
        if dy.shape != xhat.shape:
            raise ValueError(f"output gradient shape {dy.shape} does not match {xhat.shape}")
        self.gamma.grad = (dy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad = dy.sum(axis=(0, 2, 3))
        g = self.gamma.value[None, :, None, None] * inv_std[None, :, None, None]
        if not train:
            return dy * g
        dxhat = dy  # channel-wise means over the normalization axes
        m_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        m_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return g * (dxhat - m_d - xhat * m_dx)


class ReLU:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""

    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return np.where(self._mask, dy, dy.dtype.type(0))


def concat_channels(inputs: list[np.ndarray]) -> np.ndarray:
    """Depth-wise concatenation; inputs must agree on batch and spatial extents."""
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    first = inputs[0]
    for i, arr in enumerate(inputs[1:], start=1):
        if arr.shape[0] != first.shape[0] or arr.shape[2:] != first.shape[2:]:
            raise ValueError(
                f"concat input {i} has batch/spatial shape "
                f"{(arr.shape[0],) + arr.shape[2:]}, expected "
                f"{(first.shape[0],) + first.shape[2:]}"
            )
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(dy: np.ndarray, channel_counts: list[int]) -> list[np.ndarray]:
    """Slice the concatenated gradient back into per-input pieces."""
    if dy.shape[1] != sum(channel_counts):
        raise ValueError(f"gradient has {dy.shape[1]} channels, inputs sum to {sum(channel_counts)}")
    pieces = []
    start = 0
    for c in channel_counts:
        pieces.append(dy[:, start:start + c].copy())
        start += c
    return pieces


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis, stabilized by max subtraction."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient with respect to the logits given the softmax output."""
    inner = (probs * dprobs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def cross_entropy_loss(probs: np.ndarray, target: np.ndarray,
                       weight_mask: np.ndarray | None = None):
    """Mean pixel-wise negative log-likelihood and its gradient w.r.t. the logits.

    ``probs`` is the softmax output (N, classes, H, W); ``target`` holds class
    indices (N, H, W). When ``weight_mask`` is given, only mask>0 pixels
    contribute. Returns ``(loss, dlogits)`` where dlogits = (probs - onehot)/M
    over the M evaluated pixels.
    """
    n, k, h, w = probs.shape
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match probs {(n, h, w)}")
    if weight_mask is not None and weight_mask.shape != (n, h, w):
        raise ValueError(f"weight mask shape {weight_mask.shape} does not match {(n, h, w)}")
    tgt = target.astype(np.int64)
    if tgt.min() < 0 or tgt.max() >= k:
        raise ValueError(f"target classes must be in [0, {k}), got [{tgt.min()}, {tgt.max()}]")
    if weight_mask is None:
        active = np.ones((n, h, w), dtype=bool)
    else:
        active = weight_mask > 0
    m = int(active.sum())
    if m == 0:
        raise ValueError("no pixels to evaluate: weight mask is empty")
    p_true = np.take_along_axis(probs, tgt[:, None], axis=1)[:, 0]
    p_true = np.maximum(p_true, PROB_FLOOR)
    loss = float(-(np.log(p_true) * active).sum() / m)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, tgt[:, None], 1.0, axis=1)
    dlogits = (probs - onehot) * (active[:, None] / m)
    return loss, dlogits.astype(probs.dtype)
