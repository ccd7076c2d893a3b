"""Encoders onto the unit hypersphere, the linear probe, and checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"CSLCKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    architecture: str = "mlp"
    input_dim: Optional[int] = None
    image_shape: Optional[tuple[int, int, int]] = None
    hidden_widths: tuple[int, ...] = (64, 64)
    embedding_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.image_shape is not None:
            object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        if self.architecture not in ("mlp", "small_cnn"):
            raise ConfigError("architecture", f"unknown architecture {self.architecture!r}")
        if not self.hidden_widths:
            raise ConfigError("hidden_widths", "must be nonempty")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden_widths", "widths must be positive")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim", "must be >= 2 for a nondegenerate hypersphere")
        if self.architecture == "mlp":
            if self.input_dim is None or self.input_dim < 1:
                raise ConfigError("input_dim", "mlp encoders need a positive input_dim")
        else:
            if self.image_shape is None or len(self.image_shape) != 3:
                raise ConfigError("image_shape", "small_cnn needs (channels, height, width)")
            _, h, w = self.image_shape
            if h % 4 or w % 4:
                raise ConfigError("image_shape", "height and width must be divisible by 4")
            if len(self.hidden_widths) != 3:
                raise ConfigError("hidden_widths", "small_cnn takes [conv1, conv2, head] widths")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        d["image_shape"] = list(self.image_shape) if self.image_shape else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if d.get("image_shape") is not None:
            d["image_shape"] = tuple(d["image_shape"])
        d["hidden_widths"] = tuple(d.get("hidden_widths", ()))
        return cls(**d)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class Encoder:
    """Backbone, then a linear-relu-linear projection head, then l2_normalize.

    For ``mlp`` every hidden width but the last is a backbone layer and the
    last width is the head's hidden layer. ``small_cnn`` is two
    conv3x3-relu-avgpool blocks followed by the same head.
    """

    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.params.values()]))

    def __call__(self, x) -> Tensor:
        return encode(self, x)

    def copy(self) -> "Encoder":
        return Encoder(self.config, {k: Tensor(v.data, requires_grad=True) for k, v in self.params.items()})

    def frozen(self) -> "Encoder":
        """Same weights, no gradient tracking (input gradients still flow)."""
        return Encoder(self.config, {k: Tensor(v.data) for k, v in self.params.items()})


def encoder_init(config: EncoderConfig) -> Encoder:
    rng = np.random.default_rng(config.seed)
    params: dict[str, Tensor] = {}
    widths = list(config.hidden_widths)
    if config.architecture == "mlp":
        prev = config.input_dim
        dims = widths + [config.embedding_dim]
        for i, width in enumerate(dims):
            params[f"fc{i}.weight"] = _uniform(rng, (prev, width), prev)
            params[f"fc{i}.bias"] = _uniform(rng, (width,), prev)
            prev = width
    else:
        c, h, w = config.image_shape
        c1, c2, head = widths
        params["conv0.weight"] = _uniform(rng, (c1, c, 3, 3), c * 9)
        params["conv0.bias"] = _uniform(rng, (c1,), c * 9)
        params["conv1.weight"] = _uniform(rng, (c2, c1, 3, 3), c1 * 9)
        params["conv1.bias"] = _uniform(rng, (c2,), c1 * 9)
        flat = c2 * (h // 4) * (w // 4)
        params["fc0.weight"] = _uniform(rng, (flat, head), flat)
        params["fc0.bias"] = _uniform(rng, (head,), flat)
        params["fc1.weight"] = _uniform(rng, (head, config.embedding_dim), head)
        params["fc1.bias"] = _uniform(rng, (config.embedding_dim,), head)
    return Encoder(config, params)


def _linear(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    return T.add_rowvec(T.matmul(x, p[f"{name}.weight"]), p[f"{name}.bias"])


def features(enc: Encoder, batch) -> Tensor:
    """Pre-normalization output of the encoder."""
    x = T.as_tensor(batch)
    cfg, p = enc.config, enc.params
    if cfg.architecture == "mlp":
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise DimensionError(f"expected [n x {cfg.input_dim}] input, got {x.shape}")
        n_layers = len(cfg.hidden_widths) + 1
        for i in range(n_layers - 1):
            x = T.relu(_linear(x, p, f"fc{i}"))
        return _linear(x, p, f"fc{n_layers - 1}")
    if x.ndim != 4 or x.shape[1:] != cfg.image_shape:
        raise DimensionError(f"expected [n x {cfg.image_shape}] input, got {x.shape}")
    x = T.avg_pool2d(T.relu(T.conv2d(x, p["conv0.weight"], p["conv0.bias"])))
    x = T.avg_pool2d(T.relu(T.conv2d(x, p["conv1.weight"], p["conv1.bias"])))
    x = T.reshape(x, (x.shape[0], -1))
    x = T.relu(_linear(x, p, "fc0"))
    return _linear(x, p, "fc1")


def encode(enc: Encoder, batch) -> Tensor:
    """Map inputs to unit-norm embeddings [n x d]."""
    return T.l2_normalize(features(enc, batch))


@dataclass
class LinearProbe:
    weight: Tensor
    bias: Tensor

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, dim: int, num_classes: int) -> "LinearProbe":
        return cls(Tensor(np.zeros((dim, num_classes)), requires_grad=True),
                   Tensor(np.zeros(num_classes), requires_grad=True))


def probe_forward(probe: LinearProbe, embeddings) -> Tensor:
    z = T.as_tensor(embeddings)
    if z.ndim != 2 or z.shape[1] != probe.weight.shape[0]:
        raise DimensionError(f"probe expects [n x {probe.weight.shape[0]}], got {z.shape}")
    return T.add_rowvec(T.matmul(z, probe.weight), probe.bias)


# ------------------------------------------------------------------ checkpoints
#
# Layout: magic, u32 header length, JSON header (format version, encoder
# config, metadata, tensor names/shapes in order), then little-endian float64
# payload. No timestamps, so identical parameters give identical bytes.


def save_checkpoint(path: Union[str, Path], enc: Encoder, metadata: Optional[dict] = None,
                    extra: Optional[dict[str, Tensor]] = None) -> None:
    tensors = {k: enc.params[k] for k in sorted(enc.params)}
    for k, v in sorted((extra or {}).items()):
        tensors[f"extra/{k}"] = v
    header = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_config": enc.config.to_dict(),
        "metadata": metadata or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(v.data, dtype="<f8").tobytes() for v in tensors.values())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path: Union[str, Path]) -> tuple[Encoder, dict, dict[str, Tensor]]:
    """Return (encoder, metadata, extra tensors)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen])
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    params, extra = {}, {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = math.prod(shape)
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        name = spec["name"]
        if name.startswith("extra/"):
            extra[name[len("extra/"):]] = Tensor(arr)
        else:
            params[name] = Tensor(arr, requires_grad=True)
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    config = EncoderConfig.from_dict(header["encoder_config"])
    expected = encoder_init(config).params
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise CheckpointError(f"{path}: parameters do not match the stored encoder config")
    return Encoder(config, params), header["metadata"], extra
