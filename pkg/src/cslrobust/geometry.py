"""Representation-space diagnostics and robustness metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ContractError, DomainError
from .tensor import Tensor


class UndefinedMetricError(ValueError):
    pass


@dataclass
class ClassSeparation:
    label: int
    count: int
    avg_intra: float
    avg_inter: float
    degenerate: bool


@dataclass
class SeparationStats:
    avg_intra: float
    avg_inter: float
    ratio: float
    per_class: list[ClassSeparation] = field(default_factory=list)
    degenerate_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.ratio):
            d["ratio"] = "inf"
        return d


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    # difference-based (not Gram-based) so coincident points are exactly 0 apart
    return squareform(pdist(z))


def class_distance_stats(embeddings, labels) -> SeparationStats:
    """Mean within-class and cross-class Euclidean distance over all pairs."""
    z = _array(embeddings)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ContractError("embeddings must be [n x d] with one label per row")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError("need at least two classes")
    counts = {int(c): int(np.sum(labels == c)) for c in classes}
    if min(counts.values()) < 2:
        raise ContractError("every class needs at least two points")

    dist = pairwise_distances(z)
    same = labels[:, None] == labels[None, :]
    upper = np.triu(np.ones_like(same), k=1)
    intra = dist[same & upper]
    inter = dist[~same & upper]
    avg_intra = float(intra.mean())
    avg_inter = float(inter.mean())
    ratio = math.inf if avg_intra == 0 else avg_inter / avg_intra

    per_class, degenerate = [], []
    for c in classes:
        members = labels == c
        block = dist[np.ix_(members, members)]
        k = members.sum()
        ci = float(block.sum() / (k * (k - 1)))
        co = float(dist[np.ix_(members, ~members)].mean())
        flag = ci == 0.0
        if flag:
            degenerate.append(int(c))
        per_class.append(ClassSeparation(int(c), int(k), ci, co, flag))
    return SeparationStats(avg_intra, avg_inter, ratio, per_class, degenerate)


def write_embeddings_csv(path, embeddings, labels) -> None:
    """One row per sample: z0..z{d-1} then the integer label."""
    z = _array(embeddings)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ContractError("embeddings must be [n x d] with one label per row")
    header = ",".join([f"z{i}" for i in range(z.shape[1])] + ["label"])
    lines = [header] + [",".join([repr(float(v)) for v in row] + [str(int(y))]) for row, y in zip(z, labels)]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def relative_drop(clean_acc: float, perturbed_acc: float) -> float:
    """Accuracy lost under perturbation as a fraction of clean accuracy."""
    if not clean_acc > 0:
        raise UndefinedMetricError("relative drop is undefined for zero clean accuracy")
    return (clean_acc - perturbed_acc) / clean_acc


def sphere_surface_area(d: int) -> float:
    """2 pi^((d-1)/2) / Gamma((d-1)/2), evaluated as written.

    Note this is not the textbook unit-sphere area 2 pi^(d/2) / Gamma(d/2).
    """
    if d < 2:
        raise DomainError("dimension must be >= 2")
    h = (d - 1) / 2.0
    return math.exp(math.log(2.0) + h * math.log(math.pi) - math.lgamma(h))


def predicted_separation(d: int, num_classes: int, num_instances: int, s_min: float,
                         area: Optional[float] = None) -> tuple[float, float]:
    """Analytic separation ratios (supervised, contrastive).

    Returns ``(A_c / s_min, A_c * N / C)`` with ``A_c = A(d) / C``; pass
    ``area`` to override ``A(d)``.
    """
    if num_classes < 1 or num_instances < num_classes:
        raise DomainError("need C >= 1 and N >= C")
    if not s_min > 0:
        raise DomainError("s_min must be positive")
    a = sphere_surface_area(d) if area is None else float(area)
    a_c = a / num_classes
    return a_c / s_min, a_c * num_instances / num_classes


def fn_detection_quality(mask, ground_truth) -> tuple[Optional[float], Optional[float]]:
    """(precision, recall) of a suspected-false-negative mask; None when undefined."""
    m = np.asarray(mask, dtype=bool)
    g = np.asarray(ground_truth, dtype=bool)
    if m.shape != g.shape:
        raise ContractError(f"mask {m.shape} and ground truth {g.shape} differ")
    tp = int(np.sum(m & g))
    flagged, actual = int(m.sum()), int(g.sum())
    precision = tp / flagged if flagged else None
    recall = tp / actual if actual else None
    return precision, recall


def predictions(logits) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest index
    return np.argmax(_array(logits), axis=1)


def accuracy(logits_or_predictions, labels) -> float:
    a = _array(logits_or_predictions)
    labels = np.asarray(labels)
    preds = predictions(a) if a.ndim == 2 else a.astype(np.int64)
    if preds.shape != labels.shape:
        raise ContractError(f"predictions {preds.shape} and labels {labels.shape} differ")
    if labels.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float(np.mean(preds == labels))


@dataclass
class RobustnessReport:
    """Clean and perturbed accuracy of one encoder + probe, plus geometry."""

    run_id: str
    seed: int
    config_hash: str
    method: str
    clean_accuracy: float
    attacks: dict[str, dict] = field(default_factory=dict)
    corruptions: dict[str, dict] = field(default_factory=dict)
    separation: Optional[dict] = None
    alignment_uniformity: Optional[dict] = None
    fn_trace: list[dict] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add_perturbed(self, section: str, key: str, perturbed_acc: float, config: dict) -> None:
        entry = {
            "accuracy": perturbed_acc,
            "p_drop": relative_drop(self.clean_accuracy, perturbed_acc) if self.clean_accuracy > 0 else None,
            "config": config,
        }
        getattr(self, section)[key] = entry

    def to_dict(self) -> dict:
        return {
            "schema": "cslrobust.report/1",
            "run_id": self.run_id,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "method": self.method,
            "metrics": {
                "clean_accuracy": self.clean_accuracy,
                "attacks": self.attacks,
                "corruptions": self.corruptions,
                "separation": self.separation,
                "alignment_uniformity": self.alignment_uniformity,
                "fn_trace": self.fn_trace,
            },
            "errors": self.errors,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessReport":
        m = d["metrics"]
        return cls(d["run_id"], d["seed"], d["config_hash"], d["method"], m["clean_accuracy"],
                   m["attacks"], m["corruptions"], m["separation"], m["alignment_uniformity"],
                   m["fn_trace"], d.get("errors", {}), d.get("notes", []))
