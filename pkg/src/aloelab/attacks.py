"""Perturbation sets and the white-box attacks on detectors and classifier.

Three sign-PGD loops share one engine:
  * softmax-detector attack: descend cross-entropy-to-uniform on inliers,
    descend entropy on outliers (pushes both scores the wrong way);
  * Mahalanobis-detector attack: ascend the logistic detector's negative
    log likelihood of the correct side, with no input preprocessing;
  * classifier attack: plain PGD ascent on the label cross-entropy, which
    also serves as the inner maximizer of the robust training objectives.

Every returned perturbation satisfies the budget and keeps x+delta inside
the valid domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .scores import MahalanobisHead, NegLogSigmoid
from .seeding import child_seed

Array = np.ndarray


@dataclass(frozen=True)
class PerturbationSet:
    """The feasible set: norm-bounded delta with x+delta in the domain."""

    norm: str = "linf"           # "linf" or "l2"
    eps: float = 0.0
    box: bool = True             # True: [0,1]^d domain; False: unconstrained

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")

    def contains(self, delta: Array, x: Array) -> bool:
        delta = np.asarray(delta, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if self.norm == "linf":
            ok = np.abs(delta).max(initial=0.0) <= self.eps
        else:
            ok = np.linalg.norm(delta) <= self.eps
        if self.box:
            xp = x + delta
            ok = ok and xp.min(initial=1.0) >= 0.0 and xp.max(initial=0.0) <= 1.0
        return bool(ok)


def project(delta: Array, x: Array, pset: PerturbationSet) -> Array:
    """Project onto the feasible set: budget clamp (linf) or radial rescale
    (l2), then a per-coordinate clamp keeping x+delta in [0,1]^d. Idempotent."""
    delta = np.asarray(delta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    squeeze = delta.ndim == 1
    D = np.atleast_2d(delta).copy()
    X = np.atleast_2d(x)
    if D.shape != X.shape:
        raise ValueError(f"delta shape {delta.shape} does not match x shape {x.shape}")
    if pset.norm == "linf":
        D = np.clip(D, -pset.eps, pset.eps)
    else:
        for _ in range(4):  # rescale until the rounded norm is inside
            norms = np.linalg.norm(D, axis=1, keepdims=True)
            over = norms > pset.eps
            if not over.any():
                break
            D = np.where(over, D * (pset.eps / np.where(over, norms, 1.0)), D)
    if pset.box:
        D = np.clip(D, -X, 1.0 - X)
    return D[0] if squeeze else D


@dataclass(frozen=True)
class AttackConfig:
    """Budget eps, step count m, step size xi, and the start policy."""

    eps: float
    m: int = 10
    xi: float = 0.002
    init: str = "random_in_ball"
    seed: int = 0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.m < 0:
            raise ValueError(f"m must be nonnegative, got {self.m}")
        if self.m > 0 and self.xi <= 0:
            raise ValueError(f"xi must be positive when m > 0, got {self.xi}")
        if self.init not in ("random_in_ball", "zero"):
            raise ValueError(f"unknown init {self.init!r}")


def _init_deltas(X: Array, pset: PerturbationSet, cfg: AttackConfig,
                 seeds: list[int]) -> Array:
    n, d = X.shape
    if cfg.init == "zero":
        return np.zeros((n, d))
    D = np.stack([np.random.default_rng(s).uniform(-cfg.eps, cfg.eps, size=d)
                  for s in seeds])
    return project(D, X, pset)


def _pgd(model: nn.Model, X: Array, loss, direction: float, cfg: AttackConfig,
         seeds: list[int] | None) -> Array:
    """Shared sign-PGD loop; direction +1 ascends the loss, -1 descends."""
    X = np.asarray(X, dtype=np.float64)
    if seeds is None:
        seeds = [child_seed(cfg.seed, i) for i in range(X.shape[0])]
    pset = PerturbationSet("linf", cfg.eps, box=True)
    D = _init_deltas(X, pset, cfg, seeds)
    for _ in range(cfg.m):
        bb = nn.backward_batch(model, X + D, loss)
        D = project(D + direction * cfg.xi * np.sign(bb.input_grads), X, pset)
    return D


def attack_softmax_detector_batch(model: nn.Model, X: Array, is_in: bool,
                                  cfg: AttackConfig, seeds: list[int] | None = None) -> Array:
    """Batch of Algorithm-1 perturbations (one row per input)."""
    loss = nn.CeUniform() if is_in else nn.EntropyLoss()
    return _pgd(model, X, loss, direction=-1.0, cfg=cfg, seeds=seeds)


def attack_softmax_detector(model: nn.Model, x: Array, is_in: bool, cfg: AttackConfig) -> Array:
    """Attack on softmax-score detectors (MSP/ODIN/OE-style).

    Descends cross-entropy-to-uniform for in-distribution points and
    entropy for OOD points, projecting onto B(x, eps) after each step.
    """
    x = np.asarray(x, dtype=np.float64)
    return attack_softmax_detector_batch(model, x[None, :], is_in, cfg, seeds=[cfg.seed])[0]


def attack_mahalanobis_detector_batch(head: MahalanobisHead, model: nn.Model, X: Array,
                                      is_in: bool, cfg: AttackConfig,
                                      seeds: list[int] | None = None) -> Array:
    loss = NegLogSigmoid(head, is_in)  # raises if the ensemble is unfitted
    return _pgd(model, X, loss, direction=+1.0, cfg=cfg, seeds=seeds)


def attack_mahalanobis_detector(head: MahalanobisHead, model: nn.Model, x: Array,
                                is_in: bool, cfg: AttackConfig) -> Array:
    """Attack on the Mahalanobis detector: ascend -log p (inliers) or
    -log(1-p) (outliers) of the logistic ensemble, without preprocessing."""
    x = np.asarray(x, dtype=np.float64)
    return attack_mahalanobis_detector_batch(head, model, x[None, :], is_in, cfg,
                                             seeds=[cfg.seed])[0]


def attack_classifier_batch(model: nn.Model, X: Array, y: Array, cfg: AttackConfig,
                            seeds: list[int] | None = None) -> Array:
    return _pgd(model, X, nn.CeLabel(y), direction=+1.0, cfg=cfg, seeds=seeds)


def attack_classifier(model: nn.Model, x: Array, y: int, cfg: AttackConfig) -> Array:
    """Standard PGD on the classifier's label cross-entropy; doubles as the
    inner maximizer for the robust training objectives."""
    x = np.asarray(x, dtype=np.float64)
    return attack_classifier_batch(model, x[None, :], np.array([y]), cfg, seeds=[cfg.seed])[0]
