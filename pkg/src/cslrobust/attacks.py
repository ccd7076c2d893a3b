"""Gradient attacks (FGSM, PGD), norm-ball projections and input corruptions.

Attacks take a ``loss_fn`` mapping an input Tensor to per-sample losses
(shape [n]) or a scalar. Gradients of the summed loss drive the steps; the
per-sample values drive PGD's best-iterate selection. Inputs are batches
whose first axis indexes samples, and norms are measured per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from . import tensor as T
from .losses import info_nce_loss, ContrastiveBatch
from .models import Encoder, encode
from .errors import ContractError
from .tensor import Tensor

KINDS = ("fgsm", "pgd", "contrastive_instance")
NORMS = ("linf", "l2", "l1")


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    norm: str = "linf"
    epsilon: float = 0.1
    step_size: Optional[float] = None
    iterations: int = 40
    random_start: bool = True
    clamp: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown attack kind {self.kind!r}")
        if self.norm not in NORMS:
            raise ContractError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ContractError("step_size must be positive")
        lo, hi = self.clamp
        if lo > hi:
            raise ContractError("clamp range is empty")
        object.__setattr__(self, "clamp", (float(lo), float(hi)))
        if self.kind == "fgsm":
            if self.norm != "linf":
                raise ContractError("fgsm takes a sign step, so its budget must be linf")
            object.__setattr__(self, "iterations", 1)  # one step by definition

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return self.epsilon if self.kind == "fgsm" else self.epsilon / 10.0

    @property
    def key(self) -> str:
        return f"{self.kind}-{self.norm}-eps{self.epsilon:g}-it{self.iterations}"


def _loss_and_grad(loss_fn: Callable[[Tensor], Tensor], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xt = Tensor(x, requires_grad=True)
    loss = loss_fn(xt)
    total = T.sum(loss) if loss.size > 1 else loss
    T.backward(total)
    g = xt.grad if xt.grad is not None else np.zeros_like(x)
    if not np.all(np.isfinite(g)):
        raise AttackError("non-finite input gradient")
    return _per_sample(loss.data, x.shape[0]), g


def _loss_only(loss_fn, x: np.ndarray) -> np.ndarray:
    return _per_sample(loss_fn(Tensor(x)).data, x.shape[0])


def _per_sample(values: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    return v if v.size == n else np.full(n, float(v.sum()))


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def _as_array(x) -> np.ndarray:
    return np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def fgsm(loss_fn, x, cfg: AttackConfig) -> np.ndarray:
    """x + eps * sign(grad), clamped. sign(0) = 0."""
    if cfg.kind != "fgsm":
        raise ContractError(f"fgsm called with kind {cfg.kind!r}")
    x0 = _as_array(x)
    _, g = _loss_and_grad(loss_fn, x0)
    lo, hi = cfg.clamp
    return np.clip(x0 + cfg.epsilon * np.sign(g), lo, hi)


# ------------------------------------------------------------------ projection


def _project_l1_rows(v: np.ndarray, eps: float) -> np.ndarray:
    """Sort-based Euclidean projection of each row onto the l1 ball."""
    out = v.copy()
    a = np.abs(v)
    outside = a.sum(axis=1) > eps
    if not outside.any():
        return out
    if eps == 0:
        out[outside] = 0.0
        return out
    rows = a[outside]
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, u.shape[1] + 1)
    cond = u - (css - eps) / j > 0
    cond[:, 0] = True  # holds exactly for eps > 0; may round away for tiny eps
    last = u.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(len(u)), last] - eps) / (last + 1)
    out[outside] = np.sign(v[outside]) * np.maximum(rows - theta[:, None], 0.0)
    return out


def project(delta, norm: str, epsilon: float):
    """Nearest point of the epsilon-ball. 1-D input is one vector; otherwise per sample."""
    if epsilon < 0:
        raise ContractError("epsilon must be >= 0")
    d = _as_array(delta)
    single = d.ndim == 1
    rows = d.reshape(1, -1) if single else _flat(d)
    if norm == "linf":
        out = np.clip(rows, -epsilon, epsilon)
    elif norm == "l2":
        nrm = np.sqrt(np.sum(rows * rows, axis=1, keepdims=True))
        factor = np.where(nrm > epsilon, epsilon / np.where(nrm > 0, nrm, 1.0), 1.0)
        out = rows * factor
    elif norm == "l1":
        out = _project_l1_rows(rows, epsilon)
    else:
        raise ContractError(f"unknown norm {norm!r}")
    out = out.reshape(d.shape)
    return Tensor(out) if isinstance(delta, Tensor) else out


def norm_of(delta: np.ndarray, norm: str) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    rows = delta.reshape(1, -1) if delta.ndim == 1 else _flat(delta)
    if norm == "linf":
        return np.max(np.abs(rows), axis=1)
    if norm == "l2":
        return np.sqrt(np.sum(rows * rows, axis=1))
    if norm == "l1":
        return np.sum(np.abs(rows), axis=1)
    raise ContractError(f"unknown norm {norm!r}")


def _random_in_ball(rng: np.random.Generator, shape, norm: str, eps: float) -> np.ndarray:
    n, dim = shape[0], int(np.prod(shape[1:]))
    if norm == "linf":
        r = rng.uniform(-eps, eps, size=(n, dim))
    elif norm == "l2":
        g = rng.normal(size=(n, dim))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        r = g * eps * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    else:
        # uniform in the l1 ball: normalized exponentials with a slack coordinate
        e = rng.exponential(size=(n, dim + 1))
        r = e[:, :dim] / e.sum(axis=1, keepdims=True) * eps
        r *= rng.choice([-1.0, 1.0], size=(n, dim))
    return project(r, norm, eps).reshape(shape)


def _ascent_direction(g: np.ndarray, norm: str) -> np.ndarray:
    rows = _flat(g)
    if norm == "linf":
        d = np.sign(rows)
    elif norm == "l2":
        nrm = np.sqrt(np.sum(rows * rows, axis=1, keepdims=True))
        d = np.where(nrm > 0, rows / np.where(nrm > 0, nrm, 1.0), 0.0)
    else:
        d = np.zeros_like(rows)
        k = np.argmax(np.abs(rows), axis=1)
        idx = np.arange(rows.shape[0])
        d[idx, k] = np.sign(rows[idx, k])
    return d.reshape(g.shape)


def pgd(loss_fn, x, cfg: AttackConfig) -> np.ndarray:
    """Projected gradient ascent returning, per sample, the highest-loss iterate.

    Only post-step iterates compete, so one step without random start is
    FGSM exactly.
    """
    if cfg.kind == "fgsm":
        raise ContractError("use fgsm() for kind 'fgsm'")
    x0 = _as_array(x)
    lo, hi = cfg.clamp
    rng = np.random.default_rng(cfg.seed)
    if cfg.random_start and cfg.epsilon > 0:
        x_adv = np.clip(x0 + _random_in_ball(rng, x0.shape, cfg.norm, cfg.epsilon), lo, hi)
    else:
        x_adv = x0.copy()
    alpha = cfg.alpha
    best = x_adv.copy()
    best_loss = np.full(x0.shape[0], -np.inf)
    for it in range(cfg.iterations):
        loss, g = _loss_and_grad(loss_fn, x_adv)
        if it > 0:
            better = loss > best_loss
            best[better], best_loss[better] = x_adv[better], loss[better]
        delta = project((x_adv - x0) + alpha * _ascent_direction(g, cfg.norm), cfg.norm, cfg.epsilon)
        x_adv = np.clip(x0 + delta, lo, hi)
    loss = _loss_only(loss_fn, x_adv)
    better = loss > best_loss
    best[better] = x_adv[better]
    return best


def run_attack(loss_fn, x, cfg: AttackConfig) -> np.ndarray:
    return fgsm(loss_fn, x, cfg) if cfg.kind == "fgsm" else pgd(loss_fn, x, cfg)


def contrastive_instance_attack(encoder: Encoder, x, x_pos_view, negatives, cfg: AttackConfig,
                                tau: float = 0.5, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Label-free PGD on the InfoNCE loss of encode(x) against its positive view.

    ``negatives`` are fixed unit-norm embeddings; ``valid`` optionally marks
    which of them count for each sample.
    """
    frozen = encoder.frozen()
    pos = Tensor(encode(frozen, _as_array(x_pos_view)).data)
    neg = Tensor(_as_array(negatives))
    x0 = _as_array(x)
    mask = np.ones((x0.shape[0], neg.shape[0]), dtype=bool) if valid is None else valid

    def loss_fn(xt: Tensor) -> Tensor:
        batch = ContrastiveBatch(encode(frozen, xt), pos, neg, mask)
        return info_nce_loss(batch, tau, reduction="none")

    if cfg.kind == "fgsm":
        return fgsm(loss_fn, x0, cfg)
    return pgd(loss_fn, x0, replace(cfg, kind="pgd") if cfg.kind == "contrastive_instance" else cfg)


# ------------------------------------------------------------------ corruptions

CORRUPTION_LEVELS = {
    "gaussian_noise": (0.04, 0.08, 0.12),
    "gaussian_blur": (0.5, 1.0, 1.5),
    "brightness": (0.05, 0.1, 0.2),
    "contrast": (0.85, 0.7, 0.5),
}


@dataclass(frozen=True)
class CorruptionConfig:
    kind: str
    severity: int = 1

    def __post_init__(self):
        if self.kind not in CORRUPTION_LEVELS:
            raise ContractError(f"unknown corruption {self.kind!r}")
        if self.severity not in (1, 2, 3):
            raise ContractError("severity must be 1, 2 or 3")

    @property
    def strength(self) -> float:
        return CORRUPTION_LEVELS[self.kind][self.severity - 1]

    @property
    def key(self) -> str:
        return f"{self.kind}-s{self.severity}"


def gaussian_kernel(std: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3 * std)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / std) ** 2)
    return k / k.sum()


def corrupt(x, cfg: CorruptionConfig, seed: int = 0,
            clamp: Sequence[float] = (0.0, 1.0)) -> np.ndarray:
    """Apply one corruption to a batch (first axis = samples) or a single image."""
    a = _as_array(x)
    lo, hi = clamp
    s = cfg.strength
    if cfg.kind == "gaussian_noise":
        out = a + np.random.default_rng(seed).normal(0.0, s, size=a.shape)
    elif cfg.kind == "gaussian_blur":
        if a.ndim not in (3, 4):
            raise ContractError("blur needs image input [c,h,w] or [n,c,h,w]")
        k = gaussian_kernel(s)
        out = convolve1d(convolve1d(a, k, axis=-1, mode="reflect"), k, axis=-2, mode="reflect")
    elif cfg.kind == "brightness":
        out = a + s
    else:
        axes = tuple(range(a.ndim)) if a.ndim == 3 or a.ndim == 1 else tuple(range(1, a.ndim))
        m = a.mean(axis=axes, keepdims=True)
        out = (a - m) * s + m
    return np.clip(out, lo, hi)
