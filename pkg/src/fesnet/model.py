"""FES-Net: a lightweight encoder with four prompt convolutional blocks,
a shallow transposed-convolution upsampling head, and a full-resolution
feature enhancement branch fused ahead of the pixel classifier.

Data flow for an input image (3 channels, extents multiples of 16):

    stem ──> pcb1 ──> pcb2 ──> pcb3 ──> pcb4          (each halves H and W)
      │                                   │
      │                            upsampling head    (two stride-4 transposed convs)
      │                                   │
      └──> feature enhancement block ──┐  │
                                       ▼  ▼
                        depth-wise concat -> fuse conv -> 1x1 conv -> softmax

The stem output feeds both the downsampling chain and the enhancement
branch, so its gradient is the sum of both paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvSpec,
    ConvTranspose2d,
    Param,
    ReLU,
    SeparableConv2d,
    concat_channels,
    concat_channels_backward,
    softmax_channels,
    softmax_channels_backward,
)

FEB_MAX_CHANNELS = 16


@dataclass
class ArchConfig:
    """Channel widths and wiring of the network."""

    in_channels: int = 3
    classes: int = 2
    pcb_channels: tuple = (16, 32, 64, 128)
    head_channels: tuple = (32, 16)
    feb_channels: tuple = (8, 16, 16, 16)
    fuse_channels: int = 16
    pcb_parallel: bool = False

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "classes": self.classes,
            "pcb_channels": list(self.pcb_channels),
            "head_channels": list(self.head_channels),
            "feb_channels": list(self.feb_channels),
            "fuse_channels": self.fuse_channels,
            "pcb_parallel": self.pcb_parallel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        cfg = cls(
            in_channels=int(d["in_channels"]),
            classes=int(d["classes"]),
            pcb_channels=tuple(d["pcb_channels"]),
            head_channels=tuple(d["head_channels"]),
            feb_channels=tuple(d["feb_channels"]),
            fuse_channels=int(d["fuse_channels"]),
            pcb_parallel=bool(d["pcb_parallel"]),
        )
        return cfg


class ConvBnRelu:
    """conv -> batchnorm -> ReLU, the unit every block is built from."""

    def __init__(self, conv, channels: int, dtype=np.float32, name: str = "block"):
        self.conv = conv
        self.bn = BatchNorm2d(channels, dtype=dtype, name=f"{name}.bn")
        self.relu = ReLU(name=f"{name}.relu")
        self.name = name

    def params(self):
        return self.conv.params() + self.bn.params()

    def buffers(self):
        return self.bn.buffers()

    def forward(self, x, train: bool = True):
        return self.relu.forward(self.bn.forward(self.conv.forward(x, train), train), train)

    def backward(self, dy):
        return self.conv.backward(self.bn.backward(self.relu.backward(dy)))


def _conv_unit(in_ch, out_ch, kernel, rng, dtype, name, stride=1, dilation=1):
    padding = dilation * (kernel - 1) // 2
    conv = Conv2d(ConvSpec(kernel, kernel, in_ch, out_ch, stride=stride,
                           dilation=dilation, padding=padding),
                  rng=rng, dtype=dtype, name=f"{name}.conv")
    return ConvBnRelu(conv, out_ch, dtype=dtype, name=name)


def _sep_unit(in_ch, out_ch, rng, dtype, name):
    conv = SeparableConv2d(in_ch, out_ch, kernel=3, padding=1,
                           rng=rng, dtype=dtype, name=f"{name}.conv")
    return ConvBnRelu(conv, out_ch, dtype=dtype, name=name)


def _tconv_unit(in_ch, out_ch, stride, rng, dtype, name):
    conv = ConvTranspose2d(in_ch, out_ch, stride, rng=rng, dtype=dtype, name=f"{name}.conv")
    return ConvBnRelu(conv, out_ch, dtype=dtype, name=name)


class PromptConvBlock:
    """Downsampling block: 3x3 conv, 3x3 separable conv, and 1x1 conv whose
    outputs are depth-concatenated and halved by a stride-2 convolution.

    The three convolutions chain sequentially by default (each feeds the
    next); ``parallel=True`` instead applies all three to the block input.
    """

    def __init__(self, in_channels: int, out_channels: int, parallel: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 name: str = "pcb"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.parallel = parallel
        branch_in = in_channels if parallel else out_channels
        self.conv_a = _conv_unit(in_channels, out_channels, 3, rng, dtype, f"{name}.a")
        self.conv_b = _sep_unit(branch_in, out_channels, rng, dtype, f"{name}.b")
        self.conv_c = _conv_unit(branch_in, out_channels, 1, rng, dtype, f"{name}.c")
        self.down = _conv_unit(3 * out_channels, out_channels, 3, rng, dtype,
                               f"{name}.down", stride=2)
        self.name = name

    def params(self):
        out = []
        for unit in (self.conv_a, self.conv_b, self.conv_c, self.down):
            out.extend(unit.params())
        return out

    def buffers(self):
        out = []
        for unit in (self.conv_a, self.conv_b, self.conv_c, self.down):
            out.extend(unit.buffers())
        return out

    def forward(self, x, train: bool = True):
        h, w = x.shape[2], x.shape[3]
        if h % 2 or w % 2:
            raise ValueError(f"block input extents must be even, got {h}x{w} (pad upstream)")
        a = self.conv_a.forward(x, train)
        b = self.conv_b.forward(a if not self.parallel else x, train)
        c = self.conv_c.forward(b if not self.parallel else x, train)
        merged = concat_channels([a, b, c])
        return self.down.forward(merged, train)

    def backward(self, dy):
        dmerged = self.down.backward(dy)
        da, db, dc = concat_channels_backward(dmerged, [self.out_channels] * 3)
        if self.parallel:
            return (self.conv_a.backward(da) + self.conv_b.backward(db)
                    + self.conv_c.backward(dc))
        db = db + self.conv_c.backward(dc)
        da = da + self.conv_b.backward(db)
        return self.conv_a.backward(da)


class FeatureEnhancementBlock:
    """Shallow full-resolution branch: four 3x3 convolutions, never wider
    than 16 channels, preserving the input's spatial extents."""

    def __init__(self, in_channels: int, widths=(8, 16, 16, 16),
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 name: str = "feb"):
        if max(widths) > FEB_MAX_CHANNELS:
            raise ValueError(f"enhancement block widths {widths} exceed {FEB_MAX_CHANNELS} channels")
        self.widths = tuple(widths)
        self.units = []
        prev = in_channels
        for i, width in enumerate(widths):
            self.units.append(_conv_unit(prev, width, 3, rng, dtype, f"{name}.{i}"))
            prev = width
        self.out_channels = prev
        self.name = name

    def params(self):
        return [p for u in self.units for p in u.params()]

    def buffers(self):
        return [b for u in self.units for b in u.buffers()]

    def forward(self, x, train: bool = True):
        for unit in self.units:
            x = unit.forward(x, train)
        return x

    def backward(self, dy):
        for unit in reversed(self.units):
            dy = unit.backward(dy)
        return dy


class FesNet:
    """The assembled network. ``forward`` returns per-pixel class
    probabilities; ``backward`` consumes the gradient at the logits
    (the softmax/cross-entropy fusion convention)."""

    def __init__(self, arch: ArchConfig | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if arch is None:
            arch = ArchConfig()
        if rng is None:
            rng = np.random.default_rng(0)
        self.arch = arch
        self.dtype = dtype

        self.stem = _conv_unit(arch.in_channels, arch.pcb_channels[0], 3, rng, dtype, "stem")
        self.pcbs = []
        prev = arch.pcb_channels[0]
        for i, out_ch in enumerate(arch.pcb_channels):
            self.pcbs.append(PromptConvBlock(prev, out_ch, parallel=arch.pcb_parallel,
                                             rng=rng, dtype=dtype, name=f"pcb{i + 1}"))
            prev = out_ch
        self.head = []
        head_stride = 4
        for i, out_ch in enumerate(arch.head_channels):
            self.head.append(_tconv_unit(prev, out_ch, head_stride, rng, dtype, f"head{i + 1}"))
            prev = out_ch
        self.feb = FeatureEnhancementBlock(arch.pcb_channels[0], arch.feb_channels,
                                           rng=rng, dtype=dtype, name="feb")
        fused_ch = arch.head_channels[-1] + arch.feb_channels[-1]
        self.fuse = _conv_unit(fused_ch, arch.fuse_channels, 3, rng, dtype, "fuse")
        self.classifier = Conv2d(ConvSpec(1, 1, arch.fuse_channels, arch.classes),
                                 rng=rng, dtype=dtype, name="classifier")

        self.downsample_factor = 2 ** len(self.pcbs)
        upsample_factor = head_stride ** len(self.head)
        if upsample_factor != self.downsample_factor:
            raise ValueError(
                f"upsampling head restores x{upsample_factor} but the encoder "
                f"reduces x{self.downsample_factor}"
            )
        self.activations: dict[str, np.ndarray] = {}
        self._probs = None

    # -- parameter bookkeeping -------------------------------------------------

    def _units(self):
        units = [self.stem] + self.pcbs + self.head + [self.feb, self.fuse]
        return units

    def params(self) -> list[Param]:
        out = []
        for unit in self._units():
            out.extend(unit.params())
        out.extend(self.classifier.params())
        return out

    def named_params(self) -> list[tuple[str, Param]]:
        return [(p.name, p) for p in self.params()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for unit in self._units():
            out.extend(unit.buffers())
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        for bname, arr in self.buffers():
            if bname == name:
                arr[...] = value
                return
        raise KeyError(name)

    # -- forward / backward ----------------------------------------------------

    def fuse_and_classify(self, upsampled: np.ndarray, enhanced: np.ndarray,
                          train: bool = False) -> np.ndarray:
        """Depth-concatenate the upsampled and enhancement features, then
        fuse conv, 1x1 classifier, and softmax into per-pixel probabilities."""
        if upsampled.shape[2:] != enhanced.shape[2:]:
            raise ValueError(
                f"branch spatial extents differ: upsampled {upsampled.shape}, "
                f"enhanced {enhanced.shape}"
            )
        fused = concat_channels([upsampled, enhanced])
        logits = self.classifier.forward(self.fuse.forward(fused, train), train)
        probs = softmax_channels(logits)
        self.activations["fused"] = fused
        self._probs = probs
        return probs

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4:
            raise ValueError(f"model input must be 4-D (N,C,H,W), got {x.ndim}-D")
        n, c, h, w = x.shape
        if c != self.arch.in_channels:
            raise ValueError(f"model input has {c} channels, expects {self.arch.in_channels}")
        f = self.downsample_factor
        if h % f or w % f:
            raise ValueError(
                f"model input extents must be multiples of {f}, got {h}x{w} (pad upstream)"
            )
        initial = self.stem.forward(x, train)
        deep = initial
        for pcb in self.pcbs:
            deep = pcb.forward(deep, train)
        upsampled = deep
        for unit in self.head:
            upsampled = unit.forward(upsampled, train)
        enhanced = self.feb.forward(initial, train)
        self.activations = {
            "initial": initial,
            "deep": deep,
            "upsampled": upsampled,
            "enhanced": enhanced,
        }
        return self.fuse_and_classify(upsampled, enhanced, train)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        dfused = self.fuse.backward(self.classifier.backward(dlogits))
        dup, denh = concat_channels_backward(
            dfused, [self.arch.head_channels[-1], self.arch.feb_channels[-1]])
        dinitial = self.feb.backward(denh)
        ddeep = dup
        for unit in reversed(self.head):
            ddeep = unit.backward(ddeep)
        for pcb in reversed(self.pcbs):
            ddeep = pcb.backward(ddeep)
        dinitial = dinitial + ddeep
        return self.stem.backward(dinitial)

    def backward_from_probs(self, dprobs: np.ndarray) -> np.ndarray:
        if self._probs is None:
            raise RuntimeError("backward called before forward")
        return self.backward(softmax_channels_backward(self._probs, dprobs))

    def predict_probs(self, image: np.ndarray) -> np.ndarray:
        """Inference on a single (C,H,W) image; returns (classes,H,W) probabilities."""
        return self.forward(image[None].astype(self.dtype), train=False)[0]


@dataclass
class ParamCount:
    total: int
    rows: list = field(default_factory=list)  # (name, shape, count) per trainable tensor
    running_stats: int = 0

    def checkpoint_bytes(self) -> int:
        return 4 * (self.total + self.running_stats)


def count_parameters(model: FesNet) -> ParamCount:
    """Count every trainable scalar; running statistics are tallied separately."""
    rows = []
    total = 0
    for name, p in model.named_params():
        n = int(p.value.size)
        rows.append((name, tuple(p.value.shape), n))
        total += n
    running = sum(int(arr.size) for _, arr in model.buffers())
    return ParamCount(total=total, rows=rows, running_stats=running)
