"""Time-distributed convolutional blocks (forward contracts only).

Each block applies, frame by frame with shared parameters: a strided 2-D
convolution with 'same' padding, a fixed affine normalization standing in
for batch norm, ReLU, and 'valid' max pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class ConvBlock:
    kernels: int
    kernel_size: tuple[int, int]
    conv_stride: tuple[int, int] = (2, 2)
    pool_size: tuple[int, int] = (4, 4)
    pool_stride: tuple[int, int] = (2, 2)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        """Spatial size after conv ('same') and pool ('valid')."""
        ch = math.ceil(h / self.conv_stride[0])
        cw = math.ceil(w / self.conv_stride[1])
        if ch < self.pool_size[0] or cw < self.pool_size[1]:
            raise ValueError(f"input {h}x{w} too small for block {self}")
        return ((ch - self.pool_size[0]) // self.pool_stride[0] + 1,
                (cw - self.pool_size[1]) // self.pool_stride[1] + 1)


# Three blocks of the radar feature extractor: 8, 16, 32 kernels.
RADAR_BLOCKS = (
    ConvBlock(8, (5, 5)),
    ConvBlock(16, (3, 3)),
    ConvBlock(32, (3, 3)),
)


@dataclass(frozen=True)
class ConvParams:
    weights: np.ndarray  # (kh, kw, c_in, kernels)
    bias: np.ndarray
    scale: np.ndarray
    shift: np.ndarray

    @classmethod
    def glorot(cls, block: ConvBlock, in_channels: int, rng: np.random.Generator) -> "ConvParams":
        kh, kw = block.kernel_size
        fan_in = kh * kw * in_channels
        fan_out = kh * kw * block.kernels
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        k = block.kernels
        return cls(rng.uniform(-limit, limit, (kh, kw, in_channels, k)), np.zeros(k), np.ones(k), np.zeros(k))


def _same_pad(size: int, k: int, s: int) -> tuple[int, int]:
    out = math.ceil(size / s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv_block_forward(x: np.ndarray, block: ConvBlock, params: ConvParams) -> np.ndarray:
    """(frames, H, W, C) -> (frames, H', W', kernels)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 4:
        raise ValueError(f"expected (frames, H, W, C), got shape {x.shape}")
    _, h, w, c = x.shape
    kh, kw = block.kernel_size
    if params.weights.shape != (kh, kw, c, block.kernels):
        raise ValueError(f"weights shape {params.weights.shape} does not match block and {c} input channels")
    out_h, out_w = block.output_hw(h, w)
    sh, sw = block.conv_stride
    (pt, pb), (pl, pr) = _same_pad(h, kh, sh), _same_pad(w, kw, sw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    patches = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]  # (F, ch, cw, C, kh, kw)
    conv = np.einsum("fhwcij,ijck->fhwk", patches, params.weights, optimize=True) + params.bias
    act = np.maximum(conv * params.scale + params.shift, 0.0)
    ph, pw = block.pool_size
    windows = sliding_window_view(act, (ph, pw), axis=(1, 2))[:, ::block.pool_stride[0], ::block.pool_stride[1]]
    pooled = windows.max(axis=(-2, -1))
    assert pooled.shape[1:3] == (out_h, out_w)
    return pooled


def feature_extractor_forward(x: np.ndarray, params: list[ConvParams],
                              blocks: tuple[ConvBlock, ...] = RADAR_BLOCKS) -> np.ndarray:
    """Chain the blocks and flatten each frame into a feature vector."""
    out = np.asarray(x, dtype=float)
    for block, p in zip(blocks, params, strict=True):
        out = conv_block_forward(out, block, p)
    return out.reshape(out.shape[0], -1)
