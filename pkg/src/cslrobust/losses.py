"""Contrastive loss family on unit-norm embeddings.

A :class:`ContrastiveBatch` holds anchors, their augmentation positives, a
shared pool of candidate embeddings and a ``valid`` mask saying which
candidates are negatives for which anchor. SimCLR-style in-batch training
uses :meth:`ContrastiveBatch.from_views`, where each of the 2n views is an
anchor and its candidates are the other 2(n-1) views.

Similarities are ``exp(cos / tau)``. Cosines are bounded, so the
contrastive losses need no max-shift; cross-entropy does use one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, TextIO

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

UNIT_NORM_TOL = 1e-6


def _check_unit_rows(z: Tensor, name: str) -> None:
    norms = np.sqrt(np.sum(z.data * z.data, axis=1))
    if z.shape[0] and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
        raise ContractError(f"{name}: rows must be unit-norm within {UNIT_NORM_TOL}")


def same_instance_mask(n: int) -> np.ndarray:
    """[2n x 2n] flags for pairs of views of the same instance (incl. self)."""
    eye = np.eye(n, dtype=bool)
    return np.block([[eye, eye], [eye, eye]])


@dataclass
class ContrastiveBatch:
    anchors: Tensor
    positives: Optional[Tensor]
    candidates: Tensor
    valid: np.ndarray
    anchor_labels: Optional[np.ndarray] = None
    candidate_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n, d = self.anchors.shape
        if self.candidates.ndim != 2 or self.candidates.shape[1] != d:
            raise DimensionError(f"candidates {self.candidates.shape} do not match anchors {self.anchors.shape}")
        if self.positives is not None and self.positives.shape != self.anchors.shape:
            raise DimensionError(f"positives {self.positives.shape} do not match anchors {self.anchors.shape}")
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (n, self.candidates.shape[0]):
            raise DimensionError(f"valid mask {self.valid.shape} is not anchors x candidates")
        if (self.anchor_labels is None) != (self.candidate_labels is None):
            raise ContractError("give both anchor_labels and candidate_labels or neither")
        _check_unit_rows(self.anchors, "anchors")
        _check_unit_rows(self.candidates, "candidates")
        if self.positives is not None:
            _check_unit_rows(self.positives, "positives")

    @classmethod
    def from_views(cls, z1: Tensor, z2: Tensor, labels=None) -> "ContrastiveBatch":
        """Two views of n instances -> 2n anchors, each with 2(n-1) negatives."""
        if z1.shape != z2.shape:
            raise DimensionError(f"view shapes differ: {z1.shape} vs {z2.shape}")
        return cls.from_stacked(T.concat([z1, z2]), labels)

    @classmethod
    def from_stacked(cls, views: Tensor, labels=None) -> "ContrastiveBatch":
        """Like :meth:`from_views` for rows ordered [view1 of all n; view2 of all n]."""
        if views.shape[0] % 2:
            raise DimensionError("stacked views need an even row count")
        n = views.shape[0] // 2
        partner = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
        labs = None if labels is None else np.concatenate([labels, labels])
        return cls(views, T.take_rows(views, partner), views, ~same_instance_mask(n), labs, labs)

    @property
    def has_labels(self) -> bool:
        return self.anchor_labels is not None

    @property
    def same_class(self) -> Optional[np.ndarray]:
        """Ground-truth same-class flags over valid anchor/candidate pairs."""
        if not self.has_labels:
            return None
        same = np.asarray(self.anchor_labels)[:, None] == np.asarray(self.candidate_labels)[None, :]
        return same & self.valid

    def cosines(self) -> np.ndarray:
        return self.anchors.data @ self.candidates.data.T


class Similarity(NamedTuple):
    sim: Tensor
    cosine: Tensor


def pairwise_similarity(a: Tensor, b: Tensor, tau: float) -> Similarity:
    """exp(a_i . b_j / tau) together with the raw cosine matrix."""
    _check_tau(tau)
    _check_unit_rows(a, "A")
    _check_unit_rows(b, "B")
    cos = T.matmul(a, T.transpose(b))
    return Similarity(T.exp(T.scale(cos, 1.0 / tau)), cos)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")


def _reduce(per_anchor: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return T.mean(per_anchor)
    if reduction == "none":
        return per_anchor
    raise ContractError(f"unknown reduction {reduction!r}")


def _masked_nce(batch: ContrastiveBatch, tau: float, keep: np.ndarray) -> Tensor:
    """Per-anchor -log(s+ / (s+ + sum_{keep} s_j)); rows with nothing kept give 0."""
    cos_c = T.matmul(batch.anchors, T.transpose(batch.candidates))
    s_c = T.mul(T.exp(T.scale(cos_c, 1.0 / tau)), Tensor(keep.astype(np.float64)))
    pos_logit = T.scale(T.sum(T.mul(batch.anchors, batch.positives), axis=1), 1.0 / tau)
    denom = T.add(T.exp(pos_logit), T.sum(s_c, axis=1))
    per_anchor = T.sub(T.log(denom), pos_logit)
    empty = ~keep.any(axis=1)
    if empty.any():
        per_anchor = T.mul(per_anchor, Tensor((~empty).astype(np.float64)))
    return per_anchor


def info_nce_loss(batch: ContrastiveBatch, tau: float = 0.5, reduction: str = "mean") -> Tensor:
    _check_tau(tau)
    if batch.positives is None:
        raise ContractError("info_nce needs augmentation positives")
    if not batch.valid.any(axis=1).all():
        raise ContractError("every anchor needs at least one negative candidate")
    return _reduce(_masked_nce(batch, tau, batch.valid), reduction)


@dataclass
class FNCDiagnostics:
    mask: np.ndarray
    rho: float
    empty_anchors: np.ndarray

    @property
    def any_empty(self) -> bool:
        return bool(self.empty_anchors.any())


def adaptive_fnc_loss(batch: ContrastiveBatch, tau: float, rho: float,
                      reduction: str = "mean") -> tuple[Tensor, FNCDiagnostics]:
    """InfoNCE with suspected false negatives (cosine > rho) left out of the denominator.

    Only the augmentation view stays in the numerator; detected candidates
    are dropped, never attracted.
    """
    _check_tau(tau)
    if batch.positives is None:
        raise ContractError("adaptive FNC needs augmentation positives")
    if not batch.valid.any(axis=1).all():
        raise ContractError("every anchor needs at least one negative candidate")
    mask = false_negative_mask(batch.cosines(), rho) & batch.valid
    keep = batch.valid & ~mask
    loss = _reduce(_masked_nce(batch, tau, keep), reduction)
    return loss, FNCDiagnostics(mask, float(rho), ~keep.any(axis=1))


def supcon_loss(batch: ContrastiveBatch, tau: float = 0.5, reduction: str = "mean") -> Tensor:
    """Supervised contrastive loss, summation outside the log.

    Positives of an anchor are its augmentation view (when present) plus every
    valid candidate sharing its label; the denominator runs over all of them
    and the negatives. Anchors without any positive are dropped from the mean.
    """
    _check_tau(tau)
    if not batch.has_labels:
        raise ContractError("supcon needs labels")
    same = batch.same_class.astype(np.float64)
    n_pos = same.sum(axis=1) + (1.0 if batch.positives is not None else 0.0)
    usable = n_pos > 0
    if not usable.any():
        raise ContractError("no anchor has a positive")

    cand_logit = T.scale(T.matmul(batch.anchors, T.transpose(batch.candidates)), 1.0 / tau)
    valid = Tensor(batch.valid.astype(np.float64))
    denom = T.sum(T.mul(T.exp(cand_logit), valid), axis=1)
    pos_total = T.sum(T.mul(cand_logit, Tensor(same)), axis=1)
    if batch.positives is not None:
        aug_logit = T.scale(T.sum(T.mul(batch.anchors, batch.positives), axis=1), 1.0 / tau)
        denom = T.add(denom, T.exp(aug_logit))
        pos_total = T.add(pos_total, aug_logit)
    safe_count = np.where(usable, n_pos, 1.0)
    per_anchor = T.sub(T.log(denom), T.mul(pos_total, Tensor(1.0 / safe_count)))
    if reduction == "none":
        return T.mul(per_anchor, Tensor(usable.astype(np.float64)))
    if reduction != "mean":
        raise ContractError(f"unknown reduction {reduction!r}")
    return T.scale(T.sum(T.mul(per_anchor, Tensor(usable.astype(np.float64)))), 1.0 / usable.sum())


def cross_entropy_loss(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    per_sample = T.neg(T.sum(T.mul(T.log_softmax(logits), Tensor(onehot)), axis=1))
    return _reduce(per_sample, reduction)


# --------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class ThresholdSchedule:
    rho_initial: float = 0.99
    rho_final: float = 0.7
    total_epochs: int = 100
    shape: str = "linear"

    def __post_init__(self):
        for name in ("rho_initial", "rho_final"):
            v = getattr(self, name)
            if not -1.0 < v <= 1.0:
                raise ContractError(f"{name} must lie in (-1, 1], got {v}")
        if self.rho_initial < self.rho_final:
            raise ContractError("threshold must decay: rho_initial >= rho_final")
        if self.total_epochs < 1:
            raise ContractError("total_epochs must be positive")
        if self.shape != "linear":
            raise ContractError(f"unsupported schedule shape {self.shape!r}")

    @classmethod
    def fixed(cls, rho: float, total_epochs: int = 1) -> "ThresholdSchedule":
        return cls(rho, rho, total_epochs)


class Threshold(NamedTuple):
    rho: float
    clamped: bool


def threshold_at(schedule: ThresholdSchedule, epoch: int) -> Threshold:
    clamped = not 0 <= epoch <= schedule.total_epochs
    e = min(max(epoch, 0), schedule.total_epochs)
    if schedule.rho_initial == schedule.rho_final:
        return Threshold(schedule.rho_initial, clamped)
    frac = e / schedule.total_epochs
    return Threshold(schedule.rho_initial + (schedule.rho_final - schedule.rho_initial) * frac, clamped)


def false_negative_mask(cosines, rho: float) -> np.ndarray:
    """True where cosine > rho (suspected false negative).

    Cosines are clipped to [-1, 1] first so rounding cannot push a duplicate
    above a threshold of exactly 1.
    """
    c = np.asarray(cosines.data if isinstance(cosines, Tensor) else cosines, dtype=np.float64)
    if c.size and (c.min() < -1 - 1e-9 or c.max() > 1 + 1e-9):
        raise ContractError("cosines must lie in [-1, 1]")
    return np.clip(c, -1.0, 1.0) > rho


# ----------------------------------------------------------- decomposition


@dataclass(frozen=True)
class AlignmentUniformity:
    alignment: float
    uniformity: float
    uniformity_log_mean: float


def alignment_uniformity(batch: ContrastiveBatch, tau: float = 0.5) -> AlignmentUniformity:
    """Alignment -(1/tau) E[sim(x, x+)] and uniformity E[log sim(x-, x)].

    ``uniformity_log_mean`` is log E[sim(x-, x)], the log-outside variant.
    """
    _check_tau(tau)
    if batch.positives is None:
        raise ContractError("alignment needs augmentation positives")
    pos_cos = np.sum(batch.anchors.data * batch.positives.data, axis=1)
    alignment = -np.mean(np.exp(pos_cos / tau)) / tau
    neg_cos = batch.cosines()[batch.valid]
    if neg_cos.size == 0:
        return AlignmentUniformity(float(alignment), math.nan, math.nan)
    uniformity = np.mean(neg_cos / tau)
    log_mean = np.log(np.mean(np.exp(neg_cos / tau)))
    return AlignmentUniformity(float(alignment), float(uniformity), float(log_mean))


# ------------------------------------------------------------- mask dumps

MASK_DUMP_HEADER = ["epoch", "step", "anchor", "candidate", "cosine", "masked", "same_class"]


def write_mask_dump(fh: TextIO, epoch: int, step: int, batch: ContrastiveBatch, mask: np.ndarray,
                    header: bool = False) -> int:
    """Append one row per valid anchor/candidate pair; returns rows written."""
    w = csv.writer(fh)
    if header:
        w.writerow(MASK_DUMP_HEADER)
    cos = batch.cosines()
    same = batch.same_class
    rows = 0
    for i, j in zip(*np.nonzero(batch.valid)):
        truth = "" if same is None else int(same[i, j])
        w.writerow([epoch, step, int(i), int(j), repr(float(cos[i, j])), int(mask[i, j]), truth])
        rows += 1
    return rows
