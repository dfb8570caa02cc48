"""Multidimensional interactive attention (MIA).

Three gates over a feature map x of shape (..., C, H, W):

* channel attention, a shared two-layer MLP over average- and max-pooled
  channel descriptors;
* local spatial attention, an 8x8/stride-4 sliding average pool followed by
  a per-cell channel mixing layer, ReLU and nearest expansion back to H x W;
* spatial cross attention, a softmax over globally pooled query channels
  used to weight the value channels into a single 1 x H x W map.

The block first rescales channels, then gates the rescaled features with
sigmoid(local * cross).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from priornet import ops
from priornet.errors import ShapeError
from priornet.tensor import ParamRegistry, Tensor

POOL_WINDOW = 8
POOL_STRIDE = 4


@dataclass
class ChannelAttentionWeights:
    w0: Tensor  # (C/r, C)
    w1: Tensor  # (C, C/r)
    r: int


@dataclass
class LocalAttentionWeights:
    mlp_w: Tensor  # (C, C)
    mlp_b: Tensor  # (C,)


@dataclass
class CrossAttentionWeights:
    wq: Tensor  # (C, C), a 1x1 convolution
    wv: Tensor  # (C, C), a 1x1 convolution


@dataclass
class MIAWeights:
    channel: ChannelAttentionWeights
    local: LocalAttentionWeights | None
    cross: CrossAttentionWeights | None


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_channel_attention(reg: ParamRegistry, rng: np.random.Generator, channels: int, r: int,
                           prefix: str = "mia") -> ChannelAttentionWeights:
    if r < 1 or channels % r:
        raise ShapeError(f"reduction ratio {r} must divide channel count {channels}")
    hidden = channels // r
    w0 = reg.add(f"{prefix}.ca.w0", Tensor(_uniform(rng, (hidden, channels), channels)))
    w1 = reg.add(f"{prefix}.ca.w1", Tensor(_uniform(rng, (channels, hidden), hidden)))
    return ChannelAttentionWeights(w0, w1, r)


def init_mia(reg: ParamRegistry, rng: np.random.Generator, channels: int, r: int,
             prefix: str = "mia") -> MIAWeights:
    ca = init_channel_attention(reg, rng, channels, r, prefix)
    c = channels
    local = LocalAttentionWeights(
        reg.add(f"{prefix}.local.w", Tensor(_uniform(rng, (c, c), c))),
        reg.add(f"{prefix}.local.b", Tensor(_uniform(rng, (c,), c))),
    )
    cross = CrossAttentionWeights(
        reg.add(f"{prefix}.cross.wq", Tensor(_uniform(rng, (c, c), c))),
        reg.add(f"{prefix}.cross.wv", Tensor(_uniform(rng, (c, c), c))),
    )
    return MIAWeights(ca, local, cross)


def _pointwise(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    c_out, c_in = w.shape
    return ops.conv2d(x, ops.reshape(w, (c_out, c_in, 1, 1)), b)


def channel_attention(F: Tensor, w: ChannelAttentionWeights) -> Tensor:
    """Per-channel gate in (0, 1), shape (..., C)."""
    c = F.shape[-3]
    if c % w.r or w.w0.shape != (c // w.r, c) or w.w1.shape != (c, c // w.r):
        raise ShapeError(f"channel attention weights {w.w0.shape}/{w.w1.shape} with r={w.r} "
                         f"do not fit {c} channels")
    avg = ops.relu(ops.fully_connected(ops.avg_pool_global(F), w.w0))
    mx = ops.relu(ops.fully_connected(ops.max_pool_global(F), w.w0))
    # W1 is linear, so W1(a) + W1(b) is computed as W1(a + b)
    return ops.sigmoid(ops.fully_connected(ops.add(avg, mx), w.w1))


def local_spatial(x: Tensor, w: LocalAttentionWeights) -> Tensor:
    h, wd = x.shape[-2:]
    pooled = ops.sliding_avg_pool(x, POOL_WINDOW, POOL_STRIDE)
    mixed = ops.relu(_pointwise(pooled, w.mlp_w, w.mlp_b))
    return ops.upsample_nearest(mixed, h, wd)


def spatial_cross(x: Tensor, w: CrossAttentionWeights) -> Tensor:
    """Single-channel map (..., 1, H, W) strictly inside (0, 1)."""
    *lead, c, h, wd = x.shape
    if w.wq.shape != (c, c) or w.wv.shape != (c, c):
        raise ShapeError(f"cross attention weights {w.wq.shape}/{w.wv.shape} do not fit {c} channels")
    q = ops.softmax(ops.avg_pool_global(_pointwise(x, w.wq)), axis=-1)
    q = ops.reshape(q, (*lead, 1, c))
    v = ops.reshape(_pointwise(x, w.wv), (*lead, c, h * wd))
    return ops.sigmoid(ops.reshape(ops.matmul(q, v), (*lead, 1, h, wd)))


def mia_forward(x: Tensor, w: MIAWeights) -> Tensor:
    """Channel gate, then the fused local/cross spatial gate. Same shape as ``x``.

    With ``w.local``/``w.cross`` set to None only the channel stage runs.
    """
    refined = ops.scale_channels(x, channel_attention(x, w.channel))
    if w.local is None or w.cross is None:
        return refined
    gate = ops.sigmoid(ops.mul(local_spatial(refined, w.local), spatial_cross(refined, w.cross)))
    return ops.mul(refined, gate)
