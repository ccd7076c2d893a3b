"""Seeded training loops, linear probing and robustness evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, AttackError, CorruptionConfig, contrastive_instance_attack, corrupt, run_attack
from .data import AugmentationConfig, ContrastiveInputs, Dataset, augment_batch, contrastive_inputs
from .errors import ConfigError, ContractError, DegenerateInputError, TrainingAborted
from .geometry import RobustnessReport, accuracy, class_distance_stats, fn_detection_quality
from .losses import (ContrastiveBatch, FNCDiagnostics, ThresholdSchedule, adaptive_fnc_loss,
                     alignment_uniformity, cross_entropy_loss, info_nce_loss, same_instance_mask,
                     supcon_loss, threshold_at)
from .models import Encoder, LinearProbe, encode, features, probe_forward
from .tensor import Tensor

LOSSES = ("cross_entropy", "supcon", "info_nce", "adaptive_fnc")
SUPERVISED = ("cross_entropy", "supcon")
SIMPLIFIED_ADV_NOTE = ("simplified instance-wise adversarial contrastive training "
                       "(adversarial view as extra positive); not a faithful RoCL/ACL reimplementation")


@dataclass(frozen=True)
class AdversarialConfig:
    attack: AttackConfig
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError("adversarial.weight", "must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "info_nce"
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tau: float = 0.5
    rho_initial: float = 0.99
    rho_final: float = 0.7
    fnc_warmup_epochs: int = 0
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    adversarial: Optional[AdversarialConfig] = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError("loss", f"must be one of {', '.join(LOSSES)}")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum", "must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        if not self.tau > 0:
            raise ConfigError("tau", "must be positive")
        if not 0 <= self.fnc_warmup_epochs < self.epochs:
            raise ConfigError("fnc_warmup_epochs", "must lie in [0, epochs)")
        if self.adversarial is not None and self.loss not in ("info_nce", "adaptive_fnc"):
            raise ConfigError("adversarial", "adversarial training needs a self-supervised loss")
        self.schedule  # validates the rho endpoints

    @property
    def schedule(self) -> ThresholdSchedule:
        # spans the post-warm-up epochs; the last epoch runs at rho_final
        try:
            span = max(self.epochs - 1 - self.fnc_warmup_epochs, 1)
            return ThresholdSchedule(self.rho_initial, self.rho_final, span)
        except ContractError as exc:
            raise ConfigError("rho_initial/rho_final", str(exc)) from None

    def rho_at(self, epoch: int) -> float:
        """Threshold for an epoch; 1.0 (nothing masked) during the warm-up."""
        if epoch < self.fnc_warmup_epochs:
            return 1.0
        return threshold_at(self.schedule, epoch - self.fnc_warmup_epochs).rho


@dataclass
class RunMetrics:
    records: list[dict] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        T.zero_grad(self.params)

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v


StepHook = Callable[[int, int, ContrastiveBatch, Optional[FNCDiagnostics]], None]


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    chunks = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    return [c for c in chunks if c.size >= 2]


def adversarial_views(enc: Encoder, inputs: ContrastiveInputs, views: Tensor, cfg: TrainConfig,
                      epoch: int, step: int) -> np.ndarray:
    """Instance-wise attack on view 1, positive = view 2, negatives = other in-batch views."""
    n = inputs.size
    valid = ~same_instance_mask(n)[:n]
    attack = replace(cfg.adversarial.attack, seed=_derived_seed(cfg.seed, epoch, step, 17))
    return contrastive_instance_attack(enc, inputs.view1, inputs.view2, views.data, attack,
                                       cfg.tau, valid=valid)


class _EpochAudit:
    def __init__(self):
        self.tp = self.flagged = self.actual = 0
        self.empty_anchor_steps = 0

    def add(self, diag: FNCDiagnostics, truth: Optional[np.ndarray]) -> None:
        self.empty_anchor_steps += int(diag.any_empty)
        if truth is None:
            return
        self.tp += int(np.sum(diag.mask & truth))
        self.flagged += int(diag.mask.sum())
        self.actual += int(truth.sum())

    def summary(self) -> dict:
        return {
            "fn_precision": self.tp / self.flagged if self.flagged else None,
            "fn_recall": self.tp / self.actual if self.actual else None,
            "fn_flagged": self.flagged,
            "empty_anchor_steps": self.empty_anchor_steps,
        }


def _contrastive_term(batch: ContrastiveBatch, cfg: TrainConfig, rho: Optional[float]):
    if cfg.loss == "adaptive_fnc":
        return adaptive_fnc_loss(batch, cfg.tau, rho)
    return info_nce_loss(batch, cfg.tau), None


def _fit(encoder: Encoder, dataset: Dataset, cfg: TrainConfig, adversarial: bool,
         on_step: Optional[StepHook], on_epoch: Optional[Callable[[int, Encoder, dict], None]]):
    if cfg.loss in SUPERVISED and dataset.labels.size != len(dataset):
        raise ContractError(f"{cfg.loss} needs labels")
    enc = encoder.copy()
    params = enc.parameters
    head = None
    if cfg.loss == "cross_entropy":
        hrng = np.random.default_rng(_derived_seed(cfg.seed, 3))
        bound = 1.0 / math.sqrt(enc.config.embedding_dim)
        head = LinearProbe(
            Tensor(hrng.uniform(-bound, bound, (enc.config.embedding_dim, dataset.num_classes)), requires_grad=True),
            Tensor(np.zeros(dataset.num_classes), requires_grad=True))
        params = params + [head.weight, head.bias]
    opt = SGD(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(_derived_seed(cfg.seed, 1))
    metrics = RunMetrics()
    if adversarial:
        metrics.notes.append(SIMPLIFIED_ADV_NOTE)

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        rho = cfg.rho_at(epoch) if cfg.loss == "adaptive_fnc" else None
        audit = _EpochAudit()
        losses, adv_losses, align, unif = [], [], [], []
        for step, idx in enumerate(_batches(len(dataset), cfg.batch_size, rng)):
            inputs = contrastive_inputs(dataset, idx, cfg.augment, rng)
            with np.errstate(over="ignore", invalid="ignore"):
                raw = features(enc, np.concatenate([inputs.view1, inputs.view2]))
            if not np.all(np.isfinite(raw.data)):
                raise TrainingAborted(epoch, f"non-finite embeddings at step {step}")
            try:
                views = T.l2_normalize(raw)
            except DegenerateInputError as exc:
                raise TrainingAborted(epoch, f"collapsed embeddings at step {step}: {exc}") from None
            batch = ContrastiveBatch.from_stacked(views, inputs.labels)
            diag = None
            if cfg.loss == "cross_entropy":
                logits = probe_forward(head, views)
                loss = cross_entropy_loss(logits, np.concatenate([inputs.labels, inputs.labels]))
            elif cfg.loss == "supcon":
                loss = supcon_loss(batch, cfg.tau)
            else:
                loss, diag = _contrastive_term(batch, cfg, rho)
            if diag is not None:
                audit.add(diag, batch.same_class)
            if on_step is not None:
                on_step(epoch, step, batch, diag)

            total = loss
            if adversarial:
                try:
                    x_adv = adversarial_views(enc, inputs, views, cfg, epoch, step)
                except AttackError as exc:
                    raise AttackError(f"epoch {epoch} batch {step}: {exc}") from exc
                n = inputs.size
                adv_batch = ContrastiveBatch(
                    encode(enc, x_adv), T.take_rows(views, np.arange(n, 2 * n)), views,
                    ~same_instance_mask(n)[:n], inputs.labels, batch.candidate_labels)
                adv_loss, adv_diag = _contrastive_term(adv_batch, cfg, rho)
                if adv_diag is not None:
                    audit.add(adv_diag, adv_batch.same_class)
                adv_losses.append(adv_loss.item())
                total = T.add(loss, T.scale(adv_loss, cfg.adversarial.weight))

            value = total.item()
            if not math.isfinite(value):
                raise TrainingAborted(epoch, f"non-finite loss at step {step}")
            opt.zero_grad()
            T.backward(total)
            opt.step()
            losses.append(loss.item())
            if cfg.loss != "cross_entropy":
                au = alignment_uniformity(batch, cfg.tau)
                align.append(au.alignment)
                unif.append(au.uniformity)

        record = {"epoch": epoch, "loss": float(np.mean(losses)), "rho": rho}
        if adversarial:
            record["adv_loss"] = float(np.mean(adv_losses))
        record["alignment"] = float(np.mean(align)) if align else None
        record["uniformity"] = float(np.mean(unif)) if unif else None
        if cfg.loss == "adaptive_fnc":
            record.update(audit.summary())
        metrics.records.append(record)
        metrics.wall_clock.append(time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(epoch, enc, record)
    return enc, metrics


def train(encoder: Encoder, dataset: Dataset, cfg: TrainConfig, on_step: Optional[StepHook] = None,
          on_epoch=None) -> tuple[Encoder, RunMetrics]:
    """Train a copy of ``encoder`` with ``cfg.loss``; the argument is left untouched."""
    return _fit(encoder, dataset, cfg, adversarial=False, on_step=on_step, on_epoch=on_epoch)


def adversarial_train(encoder: Encoder, dataset: Dataset, cfg: TrainConfig, on_step: Optional[StepHook] = None,
                      on_epoch=None) -> tuple[Encoder, RunMetrics]:
    """Clean loss plus ``weight`` x the loss with an adversarial view as anchor.

    The adversarial view of each instance is attracted to its clean partner
    view and repelled from the other in-batch views; with ``adaptive_fnc``
    the same threshold masking applies to that denominator.
    """
    if cfg.adversarial is None:
        raise ContractError("adversarial_train needs an adversarial block")
    return _fit(encoder, dataset, cfg, adversarial=True, on_step=on_step, on_epoch=on_epoch)


# ------------------------------------------------------------------- probing


def embed(encoder: Encoder, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    frozen = encoder.frozen()
    return np.concatenate([encode(frozen, x[i : i + chunk]).data for i in range(0, len(x), chunk)])


def linear_probe_train(encoder: Encoder, dataset: Dataset, epochs: int = 200, lr: float = 0.5,
                       momentum: float = 0.9) -> LinearProbe:
    """Full-batch cross-entropy descent on frozen embeddings, from a zero probe."""
    if epochs < 1:
        raise ConfigError("probe.epochs", "must be >= 1")
    z = Tensor(embed(encoder, dataset.x))
    probe = LinearProbe.zeros(encoder.config.embedding_dim, dataset.num_classes)
    opt = SGD([probe.weight, probe.bias], lr, momentum)
    for epoch in range(epochs):
        loss = cross_entropy_loss(probe_forward(probe, z), dataset.labels)
        if not math.isfinite(loss.item()):
            raise TrainingAborted(epoch, "probe loss diverged")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
    return probe


def classifier_loss(encoder: Encoder, probe: LinearProbe, labels: np.ndarray):
    """Per-sample cross-entropy of probe(encode(x)); gradients reach x only."""
    frozen = encoder.frozen()
    fixed = LinearProbe(Tensor(probe.weight.data), Tensor(probe.bias.data))

    def loss_fn(xt: Tensor) -> Tensor:
        return cross_entropy_loss(probe_forward(fixed, encode(frozen, xt)), labels, reduction="none")

    return loss_fn


def predict(encoder: Encoder, probe: LinearProbe, x: np.ndarray) -> np.ndarray:
    return probe_forward(LinearProbe(Tensor(probe.weight.data), Tensor(probe.bias.data)),
                         Tensor(embed(encoder, x))).data


def attack_accuracy(encoder: Encoder, probe: LinearProbe, data: Dataset, cfg: AttackConfig,
                    chunk: int = 256) -> float:
    if cfg.kind == "contrastive_instance":
        raise ContractError("contrastive_instance is a training attack, not a classifier attack")
    adv = []
    for i in range(0, len(data), chunk):
        labels = data.labels[i : i + chunk]
        sub = replace(cfg, seed=_derived_seed(cfg.seed, i))
        adv.append(run_attack(classifier_loss(encoder, probe, labels), data.x[i : i + chunk], sub))
    return accuracy(predict(encoder, probe, np.concatenate(adv)), data.labels)


def evaluate(encoder: Encoder, probe: LinearProbe, test: Dataset, attacks: Sequence[AttackConfig] = (),
             corruptions: Sequence[CorruptionConfig] = (), *, tau: float = 0.5,
             augment: Optional[AugmentationConfig] = None, corruption_clamp=(0.0, 1.0),
             run_id: str = "run", seed: int = 0, config_hash: str = "", method: str = "",
             fn_trace: Optional[list] = None) -> RobustnessReport:
    """Clean accuracy, per-attack / per-corruption accuracy and P_Drop, and geometry."""
    clean = accuracy(predict(encoder, probe, test.x), test.labels)
    report = RobustnessReport(run_id, seed, config_hash, method, clean, fn_trace=list(fn_trace or []))
    for cfg in attacks:
        try:
            report.add_perturbed("attacks", cfg.key, attack_accuracy(encoder, probe, test, cfg), _attack_dict(cfg))
        except Exception as exc:  # recorded per key; the sweep continues
            report.errors[f"attack:{cfg.key}"] = f"{type(exc).__name__}: {exc}"
    for i, cc in enumerate(corruptions):
        try:
            xc = corrupt(test.x, cc, seed=_derived_seed(seed, 101, i), clamp=corruption_clamp)
            acc = accuracy(predict(encoder, probe, xc), test.labels)
            report.add_perturbed("corruptions", cc.key, acc, {"kind": cc.kind, "severity": cc.severity})
        except Exception as exc:
            report.errors[f"corruption:{cc.key}"] = f"{type(exc).__name__}: {exc}"

    z = embed(encoder, test.x)
    try:
        report.separation = class_distance_stats(z, test.labels).to_dict()
    except ContractError as exc:
        report.errors["separation"] = str(exc)
    if augment is not None and len(test) >= 2:
        rng = np.random.default_rng(_derived_seed(seed, 202))
        v1, v2 = augment_batch(test.x, augment, rng), augment_batch(test.x, augment, rng)
        views = np.concatenate([embed(encoder, v1), embed(encoder, v2)])
        au = alignment_uniformity(ContrastiveBatch.from_stacked(Tensor(views)), tau)
        report.alignment_uniformity = {"alignment": au.alignment, "uniformity": au.uniformity,
                                       "uniformity_log_mean": au.uniformity_log_mean}
    return report


def _attack_dict(cfg: AttackConfig) -> dict:
    lo, hi = cfg.clamp
    return {"kind": cfg.kind, "norm": cfg.norm, "epsilon": cfg.epsilon, "step_size": cfg.alpha,
            "iterations": cfg.iterations, "random_start": cfg.random_start,
            "clamp": [_finite_or_str(lo), _finite_or_str(hi)], "seed": cfg.seed}


def _finite_or_str(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
