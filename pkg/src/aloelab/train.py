"""The five training objectives: standard, OE, ADV, AOE, ALOE.

All share one minibatch SGD-with-momentum loop. The adversarial variants
solve their inner maximization with sign-PGD against the parameters frozen
at batch start:

  standard  E[-log F(x)_y]
  oe        + lambda * E_oe[CE(F(x), uniform)]
  adv       the in-distribution term uses worst-case x+delta
  aoe       adversarial inliers + clean outlier exposure
  aloe      adversarial inliers + adversarial outliers

With eps=0 the adversarial variants collapse exactly onto their clean
counterparts, and with lambda=0 the outlier term drops out; both
identities hold bitwise because every stochastic stream is derived
independently of the objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attacks import AttackConfig, attack_classifier_batch, _pgd
from .data import LabeledSet
from .seeding import child_rng, child_seed

Array = np.ndarray

OBJECTIVES = ("standard", "oe", "adv", "aoe", "aloe")

# stream tags for derived seeds
_SHUF_IN, _SHUF_OE, _PGD_IN, _PGD_OE = 101, 102, 201, 202


@dataclass(frozen=True)
class PgdConfig:
    """Inner-maximizer settings: steps defaults to floor(eps/step)+1."""

    eps: float = 0.02
    step: float = 0.002
    steps: int | None = None
    random_start: bool = True

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.steps is not None and self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @property
    def num_steps(self) -> int:
        return self.steps if self.steps is not None else int(np.floor(self.eps / self.step)) + 1

    def attack_config(self, seed: int = 0) -> AttackConfig:
        return AttackConfig(eps=self.eps, m=self.num_steps, xi=self.step,
                            init="random_in_ball" if self.random_start else "zero",
                            seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "standard"
    lam: float = 0.5
    inner: PgdConfig = field(default_factory=PgdConfig)
    epochs: int = 10
    batch_in: int = 64
    batch_oe: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.epochs < 0 or self.batch_in < 1 or self.batch_oe < 1:
            raise ValueError("epochs must be >= 0 and batch sizes >= 1")

    @property
    def adversarial_in(self) -> bool:
        return self.objective in ("adv", "aoe", "aloe")

    @property
    def uses_oe(self) -> bool:
        return self.objective in ("oe", "aoe", "aloe")


@dataclass
class TrainReport:
    """Per-epoch mean losses (the quantities actually minimized, before the
    lambda weighting) and the trained model."""

    epoch_in_loss: list[float]
    epoch_oe_loss: list[float]   # empty for objectives without an outlier term
    wall_clock: float
    model: nn.Model


def inner_max_ce(model: nn.Model, x: Array, y: int, pgd: PgdConfig, seed: int = 0) -> Array:
    """Worst-case perturbation for -log F(x+delta)_y (delegates to classifier PGD)."""
    from .attacks import attack_classifier
    return attack_classifier(model, x, y, pgd.attack_config(seed))


def inner_max_uniform(model: nn.Model, x: Array, pgd: PgdConfig, seed: int = 0) -> Array:
    """Worst-case perturbation for CE(F(x+delta), uniform): sign-PGD ascent."""
    x = np.asarray(x, dtype=np.float64)
    return _inner_max_uniform_batch(model, x[None, :], pgd.attack_config(seed), [seed])[0]


def _inner_max_uniform_batch(model: nn.Model, X: Array, cfg: AttackConfig,
                             seeds: list[int]) -> Array:
    return _pgd(model, X, nn.CeUniform(), direction=+1.0, cfg=cfg, seeds=seeds)


def _batches(n: int, size: int, order: Array):
    for a in range(0, n, size):
        yield order[a:a + size]


def train(model: nn.Model, d_in: LabeledSet, d_oe: LabeledSet | None,
          cfg: TrainConfig, on_epoch=None) -> TrainReport:
    """Minibatch SGD with momentum on the configured objective.

    Deterministic given cfg.seed. The OE stream cycles with reshuffling at
    each epoch; inner-max perturbations are recomputed per batch with the
    parameters frozen at batch start. on_epoch(epoch, model), when given,
    fires after each completed epoch (for per-epoch checkpoints).
    """
    if len(d_in) == 0 or not np.all(d_in.labels >= 0):
        raise ValueError("d_in must be nonempty and class-labeled")
    if cfg.uses_oe and (d_oe is None or len(d_oe) == 0):
        raise ValueError(f"objective {cfg.objective!r} needs a nonempty outlier set")

    t0 = time.perf_counter()
    state = None
    n_in = len(d_in)
    epoch_in_loss: list[float] = []
    epoch_oe_loss: list[float] = []

    for epoch in range(cfg.epochs):
        order_in = child_rng(cfg.seed, _SHUF_IN, epoch).permutation(n_in)
        if cfg.uses_oe:
            order_oe = child_rng(cfg.seed, _SHUF_OE, epoch).permutation(len(d_oe))
            oe_pos = 0
        in_loss_sum, oe_loss_sum, oe_count = 0.0, 0.0, 0

        for batch_idx, idx in enumerate(_batches(n_in, cfg.batch_in, order_in)):
            X, y = d_in.points[idx], d_in.labels[idx]
            if cfg.adversarial_in:
                seeds = [child_seed(cfg.seed, _PGD_IN, epoch, int(i)) for i in idx]
                deltas = attack_classifier_batch(model, X, y, cfg.inner.attack_config(), seeds)
                X = X + deltas
            bb_in = nn.backward_batch(model, X, nn.CeLabel(y))
            in_loss_sum += bb_in.values.sum()
            grads_w = [g / len(idx) for g in bb_in.grad_weights]
            grads_b = [g / len(idx) for g in bb_in.grad_biases]

            if cfg.uses_oe:
                take = [(oe_pos + j) % len(d_oe) for j in range(cfg.batch_oe)]
                oe_pos = (oe_pos + cfg.batch_oe) % len(d_oe)
                oidx = order_oe[take]
                Xo = d_oe.points[oidx]
                if cfg.objective == "aloe":
                    seeds = [child_seed(cfg.seed, _PGD_OE, epoch, batch_idx, j)
                             for j in range(len(oidx))]
                    Xo = Xo + _inner_max_uniform_batch(model, Xo, cfg.inner.attack_config(), seeds)
                bb_oe = nn.backward_batch(model, Xo, nn.CeUniform())
                oe_loss_sum += bb_oe.values.sum()
                oe_count += len(oidx)
                for i in range(model.num_layers):
                    grads_w[i] = grads_w[i] + cfg.lam * bb_oe.grad_weights[i] / len(oidx)
                    grads_b[i] = grads_b[i] + cfg.lam * bb_oe.grad_biases[i] / len(oidx)

            model, state = nn.sgd_momentum_step(model, (grads_w, grads_b), cfg.lr,
                                                cfg.momentum, cfg.weight_decay, state)

        epoch_in_loss.append(float(in_loss_sum / n_in))
        if cfg.uses_oe:
            epoch_oe_loss.append(float(oe_loss_sum / oe_count))
        if on_epoch is not None:
            on_epoch(epoch, model)

    return TrainReport(epoch_in_loss, epoch_oe_loss, time.perf_counter() - t0, model)
