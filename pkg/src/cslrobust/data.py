"""Datasets, augmentations and contrastive batch assembly."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, ContractError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_SHAPE = (3, 32, 32)


class GenerationError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int
    samples_per_class: int
    ambient_dim: int
    cluster_std: float = 0.3
    min_centroid_angle: float = 60.0
    seed: int = 0
    test_samples_per_class: int = 50

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes", "need at least 2 classes")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class", "must be positive")
        if self.test_samples_per_class < 0:
            raise ConfigError("test_samples_per_class", "must be >= 0")
        if self.ambient_dim < 2:
            raise ConfigError("ambient_dim", "must be >= 2")
        if not self.cluster_std > 0:
            raise ConfigError("cluster_std", "must be positive")
        if not 0 <= self.min_centroid_angle <= 180:
            raise ConfigError("min_centroid_angle", "must lie in [0, 180] degrees")


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.shape[0] != self.labels.shape[0]:
            raise ContractError("samples and labels differ in length")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def kind(self) -> str:
        return "image" if self.x.ndim == 4 else "vector"

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.x.shape[1:]

    def subset(self, index) -> "Dataset":
        return Dataset(self.x[index], self.labels[index], self.split, self.num_classes)

    def to_csv(self, path: Union[str, Path]) -> None:
        if self.kind != "vector":
            raise ContractError("CSV export is for vector datasets")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"x{i}" for i in range(self.x.shape[1])])
            for lab, row in zip(self.labels, self.x):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: Union[str, Path], split: str = "train",
                 num_classes: Optional[int] = None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "label":
            raise FormatError(f"{path}: missing 'label' header")
        body = rows[1:]
        labels = np.array([int(r[0]) for r in body], dtype=np.int64)
        x = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
        return cls(x, labels, split, num_classes)


# ------------------------------------------------------------------ synthetic


def _unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_centroids(cfg: SyntheticConfig, max_tries: int = 10_000) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    limit = math.cos(math.radians(cfg.min_centroid_angle))
    centroids: list[np.ndarray] = []
    tries = 0
    while len(centroids) < cfg.num_classes:
        if tries >= max_tries:
            raise GenerationError(
                f"min_centroid_angle={cfg.min_centroid_angle} deg: could not place "
                f"{cfg.num_classes} centroids in dimension {cfg.ambient_dim} within {max_tries} tries")
        tries += 1
        c = _unit_vectors(rng, 1, cfg.ambient_dim)[0]
        if all(float(c @ other) <= limit for other in centroids):
            centroids.append(c)
    return np.stack(centroids)


def synth_gaussian_mixture(cfg: SyntheticConfig, split: str = "train") -> Dataset:
    """Isotropic Gaussian clusters around angle-separated unit centroids.

    Both splits share the centroids; their samples come from distinct streams.
    """
    if split not in ("train", "test"):
        raise ContractError(f"unknown split {split!r}")
    centroids = sample_centroids(cfg)
    per_class = cfg.samples_per_class if split == "train" else cfg.test_samples_per_class
    rng = np.random.default_rng([cfg.seed, 1 if split == "train" else 2])
    labels = np.repeat(np.arange(cfg.num_classes), per_class)
    noise = rng.normal(0.0, cfg.cluster_std, size=(labels.size, cfg.ambient_dim))
    return Dataset(centroids[labels] + noise, labels, split, cfg.num_classes)


# ---------------------------------------------------------------------- CIFAR


def cifar10_load(path: Union[str, Path], limit: Optional[int] = None, split: str = "train") -> Dataset:
    """Parse the CIFAR-10 binary layout: label byte + 3072 channel-planar pixels."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        offset = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
        raise FormatError(f"{path}: truncated record at byte offset {offset} "
                          f"({len(raw) - offset} of {CIFAR_RECORD} bytes)")
    n = len(raw) // CIFAR_RECORD
    if limit is not None:
        n = min(n, limit)
    rec = np.frombuffer(raw, dtype=np.uint8, count=n * CIFAR_RECORD).reshape(n, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: label {labels[bad]} > 9 at byte offset {bad * CIFAR_RECORD}")
    images = rec[:, 1:].reshape((n,) + CIFAR_SHAPE).astype(np.float64) / 255.0
    return Dataset(images, labels, split, 10)


def cifar10_write(path: Union[str, Path], dataset: Dataset) -> None:
    if dataset.x.shape[1:] != CIFAR_SHAPE:
        raise ContractError(f"CIFAR records are {CIFAR_SHAPE} images")
    pixels = np.rint(np.clip(dataset.x, 0, 1) * 255.0).astype(np.uint8).reshape(len(dataset), -1)
    labels = dataset.labels.astype(np.uint8)[:, None]
    Path(path).write_bytes(np.concatenate([labels, pixels], axis=1).tobytes())


# --------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentationConfig:
    """Stochastic view generation.

    Vectors: additive noise, then a per-sample scale drawn from
    ``1 + jitter_strength * (U(scale_jitter) - 1)``.
    Images: reflect-pad and random crop, horizontal flip, brightness and
    contrast jitter (scaled by ``jitter_strength``), additive noise, clamp.
    """

    kind: str = "vector"
    noise_std: float = 0.0
    scale_jitter: tuple[float, float] = (1.0, 1.0)
    crop_padding: int = 0
    flip_prob: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0
    jitter_strength: float = 1.0
    clamp: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("vector", "image"):
            raise ConfigError("kind", "must be 'vector' or 'image'")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip_prob", "must lie in [0, 1]")
        for name in ("noise_std", "brightness", "contrast", "jitter_strength", "crop_padding"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        lo, hi = self.scale_jitter
        if not 0 < lo <= hi:
            raise ConfigError("scale_jitter", "need 0 < low <= high")
        object.__setattr__(self, "scale_jitter", (float(lo), float(hi)))
        object.__setattr__(self, "clamp", tuple(float(c) for c in self.clamp))


def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1].copy()


def _augment_vectors(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    out = x + rng.normal(0.0, cfg.noise_std, size=x.shape) if cfg.noise_std > 0 else x.copy()
    lo, hi = cfg.scale_jitter
    if hi > lo or lo != 1.0:
        s = 1.0 + cfg.jitter_strength * (rng.uniform(lo, hi, size=(x.shape[0], 1)) - 1.0)
        out = out * s
    return out


def _augment_images(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    n, c, h, w = x.shape
    out = x.copy()
    p = cfg.crop_padding
    if p > 0:
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        oy = rng.integers(0, 2 * p + 1, size=n)
        ox = rng.integers(0, 2 * p + 1, size=n)
        for i in range(n):
            out[i] = padded[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w]
    if cfg.flip_prob > 0:
        flip = rng.uniform(size=n) < cfg.flip_prob
        out[flip] = hflip(out[flip])
    js = cfg.jitter_strength
    if cfg.brightness > 0 and js > 0:
        out += rng.uniform(-cfg.brightness * js, cfg.brightness * js, size=(n, 1, 1, 1))
    if cfg.contrast > 0 and js > 0:
        f = rng.uniform(1 - cfg.contrast * js, 1 + cfg.contrast * js, size=(n, 1, 1, 1))
        m = out.mean(axis=(1, 2, 3), keepdims=True)
        out = (out - m) * f + m
    if cfg.noise_std > 0:
        out += rng.normal(0.0, cfg.noise_std, size=out.shape)
    return np.clip(out, *cfg.clamp)


def augment_batch(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    kind = "image" if x.ndim == 4 else "vector"
    if kind != cfg.kind:
        raise ContractError(f"{kind} samples given to a {cfg.kind} augmentation")
    return _augment_images(x, cfg, rng) if kind == "image" else _augment_vectors(x, cfg, rng)


def augment(sample: np.ndarray, cfg: AugmentationConfig, seed) -> np.ndarray:
    """One augmented view of a single sample, deterministic per seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return augment_batch(np.asarray(sample, dtype=np.float64)[None], cfg, rng)[0]


# ------------------------------------------------------------------ batches


@dataclass
class ContrastiveInputs:
    """Two views of n instances plus label bookkeeping for audits."""

    indices: np.ndarray
    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray
    same_class: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def contrastive_inputs(dataset: Dataset, indices, aug: AugmentationConfig,
                       rng: np.random.Generator) -> ContrastiveInputs:
    indices = np.asarray(indices, dtype=np.int64)
    x = dataset.x[indices]
    v1 = augment_batch(x, aug, rng)
    v2 = augment_batch(x, aug, rng)
    labels = dataset.labels[indices]
    n = indices.size
    both = np.concatenate([labels, labels])
    same = both[:, None] == both[None, :]
    eye = np.eye(n, dtype=bool)
    same &= ~np.block([[eye, eye], [eye, eye]])
    return ContrastiveInputs(indices, v1, v2, labels, same)


def make_contrastive_batch(dataset: Dataset, batch_size: int, aug: AugmentationConfig,
                           seed) -> ContrastiveInputs:
    """Draw ``batch_size`` distinct instances and two augmented views of each.

    Anchor view i has its partner as positive and the other 2(n-1) views as
    negative candidates; ``same_class`` flags the candidates sharing its label.
    """
    if batch_size < 2:
        raise ContractError("batch_size must be >= 2 so that negatives exist")
    if batch_size > len(dataset):
        raise ContractError("batch_size exceeds dataset size")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=batch_size, replace=False)
    return contrastive_inputs(dataset, idx, aug, rng)
