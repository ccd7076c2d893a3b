"""Run configuration: YAML loading, overrides, validation and hashing."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union, get_type_hints

import yaml

from .attacks import AttackConfig, CorruptionConfig
from .data import AugmentationConfig, SyntheticConfig
from .errors import ConfigError, ContractError
from .models import EncoderConfig
from .trainer import AdversarialConfig, TrainConfig

ENV_OUTPUT_ROOT = "CSLROBUST_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
SOURCES = ("synthetic", "csv", "cifar10")

_SECTIONS = ("name", "seeds", "out", "checkpoint_every", "data", "encoder", "train", "probe", "eval", "sweep")
_SYNTHETIC_KEYS = ("num_classes", "samples_per_class", "ambient_dim", "cluster_std",
                   "min_centroid_angle", "test_samples_per_class")
_ENCODER_KEYS = ("architecture", "hidden_widths", "embedding_dim")
# special sweep axes; any other axis is a dotted config key
SWEEP_SHORTCUTS = ("loss", "rho", "epsilon")


@dataclass(frozen=True)
class DataSection:
    source: str
    synthetic: Optional[dict] = None
    train_path: Optional[Path] = None
    test_path: Optional[Path] = None
    limit: Optional[int] = None

    def synthetic_config(self, seed: int) -> SyntheticConfig:
        return SyntheticConfig(seed=seed, **self.synthetic)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 200
    learning_rate: float = 0.5
    momentum: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    name: str
    seeds: tuple[int, ...]
    out: Path
    data: DataSection
    encoder: dict
    train: TrainConfig
    probe: ProbeConfig
    attacks: tuple[AttackConfig, ...]
    corruptions: tuple[CorruptionConfig, ...]
    corruption_clamp: tuple[float, float]
    sweep: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    checkpoint_every: int = 0

    @property
    def config_hash(self) -> str:
        """Hash of everything that determines results; seeds and paths excluded."""
        return config_hash(self.normalized())

    @property
    def data_hash(self) -> str:
        return config_hash({"data": self.normalized()["data"]})

    @property
    def method(self) -> str:
        return method_label(self.train)

    def encoder_config(self, seed: int, sample_shape: tuple[int, ...]) -> EncoderConfig:
        kw = dict(self.encoder)
        if kw.get("architecture", "mlp") == "mlp":
            if len(sample_shape) != 1:
                raise ConfigError("encoder.architecture", f"mlp needs vector data, got samples of shape {sample_shape}")
            kw["input_dim"] = sample_shape[0]
        else:
            kw["image_shape"] = tuple(sample_shape)
        return _build("encoder", EncoderConfig, dict(kw, seed=seed))

    def normalized(self) -> dict:
        """Fully defaulted, JSON-safe view of the config."""
        data = {"source": self.data.source}
        if self.data.synthetic is not None:
            data.update(self.data.synthetic)
        else:
            # file contents, not locations, identify the data
            data.update(train_sha256=_sha256(self.data.train_path), limit=self.data.limit,
                         test_sha256=_sha256(self.data.test_path) if self.data.test_path else None)
        return json_safe({
            "data": data,
            "encoder": self.encoder,
            "train": train_dict(self.train),
            "probe": asdict(self.probe),
            "eval": {"attacks": [attack_dict(a) for a in self.attacks],
                     "corruptions": [asdict(c) for c in self.corruptions],
                     "corruption_clamp": list(self.corruption_clamp)},
        })


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def json_safe(obj: Any) -> Any:
    """Replace non-finite floats by strings and tuples by lists."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_hash(d: dict) -> str:
    blob = json.dumps(json_safe(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def method_label(cfg: TrainConfig) -> str:
    label = cfg.loss
    if cfg.loss == "adaptive_fnc":
        if cfg.rho_initial == cfg.rho_final:
            label = f"fnc_fixed({cfg.rho_initial:g})"
        else:
            label = f"adaptive_fnc({cfg.rho_initial:g}->{cfg.rho_final:g})"
    if cfg.adversarial is not None:
        label += "+adv"
    return label


def attack_dict(a: AttackConfig) -> dict:
    d = asdict(a)
    d.pop("seed")  # per-run seeds are derived from the run seed
    d["clamp"] = list(a.clamp)
    return d


def train_dict(t: TrainConfig) -> dict:
    d = {f.name: getattr(t, f.name) for f in fields(t) if f.name not in ("augment", "adversarial", "seed")}
    d["augment"] = asdict(t.augment)
    d["adversarial"] = None if t.adversarial is None else {
        "weight": t.adversarial.weight, "attack": attack_dict(t.adversarial.attack)}
    return d


# --------------------------------------------------------------------- parsing


def _float_pair(value, name: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(name, "expected a [low, high] pair") from None
    return lo, hi


def _mapping(value, name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(name, "expected a mapping")
    return dict(value)


def _reject_unknown(d: dict, allowed, name: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}" if name else str(key), "unknown key")


def _coerce(kwargs: dict, cls) -> dict:
    # YAML 1.1 reads "1e-3" as a string; numeric fields accept numeric strings
    hints = get_type_hints(cls)
    out = dict(kwargs)
    for key, value in kwargs.items():
        hint = hints.get(key)
        if isinstance(value, str) and hint in (float, int, Optional[float], Optional[int]):
            try:
                out[key] = float(value) if hint in (float, Optional[float]) else int(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
    return out


def _build(name: str, cls, kwargs: dict):
    _reject_unknown(kwargs, [f.name for f in fields(cls)], name)
    try:
        kwargs = _coerce(kwargs, cls)
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{name}.{exc.field}", exc.message) from None
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def _require(d: dict, key: str, name: str):
    if key not in d or d[key] is None:
        raise ConfigError(f"{name}.{key}", "missing required field")
    return d[key]


def _attack(d, name: str) -> AttackConfig:
    d = _mapping(d, name)
    _require(d, "kind", name)
    if "clamp" in d:
        d["clamp"] = _float_pair(d["clamp"], f"{name}.clamp")
    if "epsilon" in d:
        d["epsilon"] = float(d["epsilon"])
    return _build(name, AttackConfig, d)


def _resolve_path(value, base: Path, name: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(name, f"path does not exist: {p}")
    return p


def _data(d, base: Path) -> DataSection:
    d = _mapping(d, "data")
    source = _require(d, "source", "data")
    if source not in SOURCES:
        raise ConfigError("data.source", f"must be one of {', '.join(SOURCES)}")
    if source == "synthetic":
        _reject_unknown(d, ("source",) + _SYNTHETIC_KEYS, "data")
        syn = {k: d[k] for k in _SYNTHETIC_KEYS if k in d}
        for key in ("num_classes", "samples_per_class", "ambient_dim"):
            _require(syn, key, "data")
        _build("data", SyntheticConfig, dict(syn))  # validates values
        return DataSection(source, synthetic=syn)
    _reject_unknown(d, ("source", "train_path", "test_path", "limit"), "data")
    train = _resolve_path(_require(d, "train_path", "data"), base, "data.train_path")
    test = _resolve_path(d["test_path"], base, "data.test_path") if d.get("test_path") else None
    limit = d.get("limit")
    if limit is not None and int(limit) < 1:
        raise ConfigError("data.limit", "must be positive")
    return DataSection(source, train_path=train, test_path=test, limit=None if limit is None else int(limit))


def _train(d) -> TrainConfig:
    d = _mapping(d, "train")
    _require(d, "loss", "train")
    _require(d, "epochs", "train")
    aug = _mapping(d.pop("augment", None), "train.augment")
    for key in ("scale_jitter", "clamp"):
        if key in aug:
            aug[key] = _float_pair(aug[key], f"train.augment.{key}")
    if d.get("loss") == "cross_entropy":
        aug.setdefault("jitter_strength", 0.5)  # weaker jitter for the supervised baseline
    d["augment"] = _build("train.augment", AugmentationConfig, aug)
    adv = d.pop("adversarial", None)
    if adv is not None:
        adv = _mapping(adv, "train.adversarial")
        _reject_unknown(adv, ("attack", "weight"), "train.adversarial")
        attack = _attack(_require(adv, "attack", "train.adversarial"), "train.adversarial.attack")
        if attack.kind != "contrastive_instance":
            raise ConfigError("train.adversarial.attack.kind", "training attacks must be contrastive_instance")
        d["adversarial"] = _build("train.adversarial", AdversarialConfig,
                                  {"attack": attack, "weight": float(adv.get("weight", 1.0))})
    if "seed" in d:
        raise ConfigError("train.seed", "seeds come from the top-level seed list")
    return _build("train", TrainConfig, d)


def _eval(d):
    d = _mapping(d, "eval")
    _reject_unknown(d, ("attacks", "corruptions", "corruption_clamp"), "eval")
    attacks = tuple(_attack(a, f"eval.attacks[{i}]") for i, a in enumerate(d.get("attacks") or []))
    for i, a in enumerate(attacks):
        if a.kind == "contrastive_instance":
            raise ConfigError(f"eval.attacks[{i}].kind", "contrastive_instance is a training attack")
    corruptions = tuple(_build(f"eval.corruptions[{i}]", CorruptionConfig, _mapping(c, f"eval.corruptions[{i}]"))
                        for i, c in enumerate(d.get("corruptions") or []))
    clamp = _float_pair(d.get("corruption_clamp", (0.0, 1.0)), "eval.corruption_clamp")
    return attacks, corruptions, clamp


def _seeds(value) -> tuple[int, ...]:
    if value is None:
        raise ConfigError("seeds", "missing required field")
    if isinstance(value, int):
        value = [value]
    try:
        seeds = tuple(int(s) for s in value)
    except (TypeError, ValueError):
        raise ConfigError("seeds", "expected a list of integers") from None
    if not seeds:
        raise ConfigError("seeds", "seed list must be nonempty")
    if len(set(seeds)) != len(seeds) or any(s < 0 for s in seeds):
        raise ConfigError("seeds", "seeds must be distinct non-negative integers")
    return seeds


def _sweep(d) -> dict:
    d = _mapping(d, "sweep")
    for axis, values in d.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{axis}", "each axis needs a nonempty list of values")
        if axis == "rho":
            for v in values:
                _float_pair(v, "sweep.rho")
    return d


def default_output_dir(name: str) -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, DEFAULT_OUTPUT_ROOT)) / name


def _coerce_int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected an integer, got {value!r}") from None


def build_config(raw: dict, base_dir: Union[str, Path] = ".") -> RunConfig:
    """Validate a raw config mapping; raises ConfigError naming the field."""
    raw = _mapping(raw, "")
    _reject_unknown(raw, _SECTIONS, "")
    base = Path(base_dir)
    name = str(raw.get("name") or "run")
    encoder = _mapping(raw.get("encoder"), "encoder")
    _reject_unknown(encoder, _ENCODER_KEYS, "encoder")
    if "hidden_widths" in encoder:
        encoder["hidden_widths"] = [int(w) for w in encoder["hidden_widths"]]
    encoder = {**{"architecture": "mlp", "hidden_widths": [64, 64], "embedding_dim": 8}, **encoder}
    probe_raw = _mapping(raw.get("probe"), "probe")
    probe = _build("probe", ProbeConfig, probe_raw)
    if probe.epochs < 1:
        raise ConfigError("probe.epochs", "must be >= 1")
    attacks, corruptions, clamp = _eval(raw.get("eval"))
    out = Path(raw["out"]) if raw.get("out") else default_output_dir(name)
    every = _coerce_int(raw.get("checkpoint_every", 0), "checkpoint_every")
    if every < 0:
        raise ConfigError("checkpoint_every", "must be >= 0 (0 keeps only the final checkpoint)")
    return RunConfig(name=name, seeds=_seeds(raw.get("seeds")), out=out, data=_data(raw.get("data"), base),
                     encoder=encoder, train=_train(raw.get("train")), probe=probe, attacks=attacks,
                     corruptions=corruptions, corruption_clamp=clamp, sweep=_sweep(raw.get("sweep")),
                     source=raw, checkpoint_every=every)


# ------------------------------------------------------------------- overrides


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(text, "override key is empty")
    try:
        return key, yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"unparseable value: {exc}") from None


def set_path(raw: dict, dotted: str, value: Any) -> dict:
    """Copy of ``raw`` with ``dotted`` (e.g. train.augment.noise_std) set."""
    out = json.loads(json.dumps(raw, default=str)) if raw else {}
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{part} is not a mapping")
        node = nxt
    node[parts[-1]] = value
    return out


def load_raw(path: Union[str, Path]) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("--config", f"no such file: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("--config", "top level must be a mapping")
    return raw


def load_config(path: Union[str, Path], overrides=(), seed: Optional[int] = None,
                out: Optional[Union[str, Path]] = None) -> RunConfig:
    raw = load_raw(path)
    for text in overrides:
        raw = set_path(raw, *parse_override(text))
    if seed is not None:
        raw["seeds"] = [seed]
    if out is not None:
        raw["out"] = str(out)
    raw.setdefault("name", Path(path).stem)
    return build_config(raw, Path(path).parent)
