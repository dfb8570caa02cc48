"""The K-map estimation network and end-to-end dehazing.

Layer graph for the full variant (every conv has ``channels_per_conv``
outputs, call it c)::

    conv1(3 -> c)      -> relu -> f1
    conv2(c -> c)      -> relu -> f2
    conv3([f1, f2])    -> relu -> f3
    conv4([f2, f3])    -> relu -> f4
    mia([f1, f2, f3, f4])       -> g       (4c channels)
    conv5(g -> 3)      linear  -> K

The restoration step J = K * I - K + b is applied outside the network.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from priornet import ops
from priornet.attention import (ChannelAttentionWeights, CrossAttentionWeights, LocalAttentionWeights,
                                MIAWeights, init_channel_attention, init_mia, mia_forward)
from priornet.errors import (BadMagicError, DataIOError, FormatError, InputTooSmallError, ShapeError,
                             TruncatedPayloadError, UsageError, VersionMismatchError, WeightShapeError)
from priornet.haze import KMap, restore
from priornet.tensor import ParamRegistry, Tensor

VARIANTS = ("full", "no_mia", "channel_attention_only", "kernel3_only", "multi_kernel")
MULTI_KERNELS = (1, 3, 5, 7, 3)
MIN_SIZE = 8

MAGIC = b"PRNW"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PriorNetConfig:
    kernel_size: int = 5
    channels_per_conv: int = 3
    mia_reduction: int = 4
    bias_b: float = 1.0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise UsageError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.channels_per_conv < 1:
            raise UsageError("channels_per_conv must be positive")
        if self.uses_attention and (self.mia_reduction < 1 or self.fused_channels % self.mia_reduction):
            raise UsageError(f"mia_reduction {self.mia_reduction} must divide the fused channel "
                             f"count {self.fused_channels}")

    @property
    def fused_channels(self) -> int:
        return 4 * self.channels_per_conv

    @property
    def uses_attention(self) -> bool:
        return self.variant in ("full", "channel_attention_only", "multi_kernel")

    @property
    def uses_spatial_attention(self) -> bool:
        return self.variant in ("full", "multi_kernel")

    def kernels(self) -> tuple[int, ...]:
        if self.variant == "kernel3_only":
            return (3,) * 5
        if self.variant == "multi_kernel":
            return MULTI_KERNELS
        return (self.kernel_size,) * 5


def _conv_shapes(config: PriorNetConfig) -> list[tuple[int, int, int]]:
    c = config.channels_per_conv
    ins = (3, c, 2 * c, 2 * c, 4 * c)
    outs = (c, c, c, c, 3)
    return list(zip(outs, ins, config.kernels()))


class ModelWeights:
    """Configuration plus every learnable tensor, in a fixed registration order."""

    def __init__(self, config: PriorNetConfig, params: ParamRegistry):
        self.config = config
        self.params = params

    def conv(self, i: int) -> tuple[Tensor, Tensor]:
        return self.params[f"conv{i}.w"], self.params[f"conv{i}.b"]

    def mia(self) -> MIAWeights | None:
        if not self.config.uses_attention:
            return None
        p = self.params
        ca = ChannelAttentionWeights(p["mia.ca.w0"], p["mia.ca.w1"], self.config.mia_reduction)
        if not self.config.uses_spatial_attention:
            return MIAWeights(ca, None, None)
        return MIAWeights(ca, LocalAttentionWeights(p["mia.local.w"], p["mia.local.b"]),
                          CrossAttentionWeights(p["mia.cross.wq"], p["mia.cross.wv"]))

    def parameter_count(self) -> int:
        return self.params.count()

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, self.params.astype(dtype))

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, self.params.copy())


def build(config: PriorNetConfig | None = None, seed: int = 0) -> ModelWeights:
    """Seeded initialisation, uniform in +-sqrt(1 / fan_in) per layer."""
    config = config or PriorNetConfig()
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()
    for i, (c_out, c_in, k) in enumerate(_conv_shapes(config), start=1):
        bound = np.sqrt(1.0 / (c_in * k * k))
        reg.add(f"conv{i}.w", Tensor(rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(np.float32)))
        reg.add(f"conv{i}.b", Tensor(rng.uniform(-bound, bound, c_out).astype(np.float32)))
    if config.uses_spatial_attention:
        init_mia(reg, rng, config.fused_channels, config.mia_reduction)
    elif config.uses_attention:
        init_channel_attention(reg, rng, config.fused_channels, config.mia_reduction)
    return ModelWeights(config, reg)


def forward(weights: ModelWeights, x: Tensor) -> Tensor:
    """Raw K-map for hazy input ``x`` of shape (3, H, W) or (N, 3, H, W)."""
    if x.ndim not in (3, 4) or x.shape[-3] != 3:
        raise ShapeError(f"expected an RGB image tensor, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h < MIN_SIZE or w < MIN_SIZE:
        raise InputTooSmallError(f"input is {h}x{w}; the network needs at least {MIN_SIZE}x{MIN_SIZE} pixels")

    def conv(i, inp):
        wt, b = weights.conv(i)
        return ops.conv2d(inp, wt, b)

    f1 = ops.relu(conv(1, x))
    f2 = ops.relu(conv(2, f1))
    f3 = ops.relu(conv(3, ops.concat_channels([f1, f2])))
    f4 = ops.relu(conv(4, ops.concat_channels([f2, f3])))
    fused = ops.concat_channels([f1, f2, f3, f4])
    mia = weights.mia()
    if mia is not None:
        fused = mia_forward(fused, mia)
    return conv(5, fused)


def restore_tensor(x: Tensor, k: Tensor, b: float) -> Tensor:
    """Unclamped J = K * I - K + b on tensors, used for training losses."""
    return ops.add(ops.mul(k, ops.sub(x, 1.0)), b)


def _image_tensor(I: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(I, dtype=dtype), dtype=dtype)


def estimate_K(weights: ModelWeights, I: np.ndarray) -> KMap:
    dtype = weights.params.tensors()[0].dtype
    k = forward(weights, _image_tensor(I, dtype)).data
    return KMap(k=k.astype(np.float64), b=weights.config.bias_b)


def dehaze(weights: ModelWeights, I: np.ndarray) -> np.ndarray:
    """Dehazed image, clamped to [0, 1], same extents as ``I`` (3 x H x W)."""
    km = estimate_K(weights, I)
    return restore(I, km)


# -- serialisation --------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(f"truncated payload: needed {n} bytes for {what} at offset {self.pos}, "
                                        f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def serialize(weights: ModelWeights) -> bytes:
    cfg = weights.config
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<IIId", cfg.kernel_size, cfg.channels_per_conv, cfg.mia_reduction, cfg.bias_b),
             _pack_str(cfg.variant),
             struct.pack("<I", len(weights.params))]
    for name, t in weights.params:
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(buf: bytes) -> ModelWeights:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}: not a PriorNet weight file")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"weight format version {version} is not supported (expected {FORMAT_VERSION})")
    kernel, chans, red = r.u32("kernel_size"), r.u32("channels_per_conv"), r.u32("mia_reduction")
    bias_b = r.f64("bias_b")
    variant = r.take(r.u32("variant length"), "variant").decode("utf-8", errors="replace")
    try:
        config = PriorNetConfig(kernel, chans, red, bias_b, variant)
    except UsageError as exc:
        raise WeightShapeError(f"config block is invalid: {exc}") from exc
    expected = [(n, t.shape) for n, t in build(config).params]
    count = r.u32("record count")
    if count != len(expected):
        raise WeightShapeError(f"file has {count} parameter records, config {variant!r} needs {len(expected)}")
    reg = ParamRegistry()
    for exp_name, exp_shape in expected:
        name = r.take(r.u32("name length"), "name").decode("utf-8", errors="replace")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        if name != exp_name or tuple(shape) != tuple(exp_shape):
            raise WeightShapeError(f"record {name!r} {shape} does not match expected {exp_name!r} {exp_shape}")
        n = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * n, f"payload of {name}"), dtype="<f4").reshape(shape)
        reg.add(name, Tensor(data.astype(np.float32)))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} unexpected trailing bytes after the last record")
    return ModelWeights(config, reg)


def save_weights(weights: ModelWeights, path: str | Path) -> int:
    """Write the weight file; returns its size in bytes."""
    buf = serialize(weights)
    try:
        Path(path).write_bytes(buf)
    except OSError as exc:
        raise DataIOError(f"cannot write weights to {path}: {exc}") from exc
    return len(buf)


def load_weights(path: str | Path) -> ModelWeights:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read weights from {path}: {exc}") from exc
    return deserialize(buf)


def describe(weights: ModelWeights) -> dict:
    return {**asdict(weights.config), "parameters": weights.parameter_count(),
            "payload_bytes": 4 * weights.parameter_count(), "file_bytes": len(serialize(weights))}
