"""Confidence scores and threshold detectors: MSP, ODIN, Mahalanobis.

The Mahalanobis path models per-layer features as class-conditional
Gaussians with a shared (pooled within-class) covariance per layer, scores
a point by the negated squared distance to the closest class mean, and
combines layers through a logistic regression fitted on held-out
in-distribution vs. outlier points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .data import LabeledSet

Array = np.ndarray


@dataclass(frozen=True)
class OdinConfig:
    """Temperature T and input-perturbation magnitude eta (0 disables it)."""

    T: float = 1000.0
    eta: float = 0.0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"temperature must be positive, got {self.T}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")


@dataclass(frozen=True)
class MahalanobisHead:
    """Per-layer class means, shared covariances (with inverses), and the
    logistic ensemble (alphas, bias) once fitted."""

    means: tuple[Array, ...]     # layer -> (num_classes, d_layer)
    covs: tuple[Array, ...]      # layer -> (d_layer, d_layer), regularized
    inv_covs: tuple[Array, ...]
    eta: float = 0.0
    alphas: Array | None = None  # (num_layers,)
    bias: float | None = None
    degenerate: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.means)

    @property
    def is_fitted(self) -> bool:
        return self.alphas is not None and self.bias is not None


def msp_score(model: nn.Model, x: Array) -> float:
    """Maximum softmax probability at T=1."""
    return float(nn.softmax_t(nn.forward(model, x).logits).max())


def msp_scores(model: nn.Model, X: Array) -> Array:
    _, logits = nn.forward_batch(model, X)
    return nn.softmax_t(logits).max(axis=1)


def odin_scores(model: nn.Model, X: Array, cfg: OdinConfig) -> Array:
    """Calibrated confidence: one signed-gradient step on log S(x;T), then
    max softmax at temperature T, with the perturbed input clamped to [0,1]^d."""
    X = np.asarray(X, dtype=np.float64)
    if cfg.eta > 0.0:
        bb = nn.backward_batch(model, X, nn.LogMaxSoftmax(cfg.T))
        X = np.clip(X - cfg.eta * np.sign(-bb.input_grads), 0.0, 1.0)
    _, logits = nn.forward_batch(model, X)
    return nn.softmax_t(logits, cfg.T).max(axis=1)


def odin_score(model: nn.Model, x: Array, cfg: OdinConfig) -> float:
    return float(odin_scores(model, np.asarray(x, dtype=np.float64)[None, :], cfg)[0])


def fit_mahalanobis(model: nn.Model, train: LabeledSet, reg: float | None = None) -> MahalanobisHead:
    """Empirical class means and pooled within-class covariance per layer.

    Covariances get reg*I added before inversion; reg=None uses
    1e-6 * trace/dim per layer. Raises if a class is missing from `train`
    or a regularized covariance is not positive definite.
    """
    if reg is not None and reg < 0:
        raise ValueError(f"reg must be nonnegative, got {reg}")
    K = model.spec.num_classes
    labels = train.labels
    for c in range(K):
        if not np.any(labels == c):
            raise ValueError(f"class {c} absent from the fitting data")
    hidden, logits = nn.forward_batch(model, train.points)
    means, covs, inv_covs = [], [], []
    for feats in [*hidden, logits]:
        d = feats.shape[1]
        mu = np.stack([feats[labels == c].mean(axis=0) for c in range(K)])
        centered = feats - mu[labels]
        cov = centered.T @ centered / feats.shape[0]
        r = reg if reg is not None else 1e-6 * np.trace(cov) / d
        cov = cov + r * np.eye(d)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError(f"layer covariance ({d}x{d}) not positive definite "
                             "after regularization") from None
        inv = np.linalg.inv(cov)
        inv_covs.append((inv + inv.T) / 2.0)
        means.append(mu)
        covs.append(cov)
    return MahalanobisHead(tuple(means), tuple(covs), tuple(inv_covs))


def layer_score_from_features(head: MahalanobisHead, f: Array, layer: int) -> float:
    """max_c of the negated squared Mahalanobis distance, from a raw feature vector."""
    diffs = f[None, :] - head.means[layer]
    return float((-np.einsum("cd,de,ce->c", diffs, head.inv_covs[layer], diffs)).max())


def mahalanobis_layer_score(head: MahalanobisHead, model: nn.Model, x: Array, layer: int) -> float:
    if not 0 <= layer < head.num_layers:
        raise ValueError(f"layer {layer} out of range (head has {head.num_layers})")
    f = nn.forward(model, x).entries()[layer]
    return layer_score_from_features(head, f, layer)


def _layer_scores_and_seeds(head: MahalanobisHead, entries: list[Array], layer: int):
    """Batched M_layer values and their gradient w.r.t. the layer features."""
    feats = entries[layer]
    diffs = feats[:, None, :] - head.means[layer][None, :, :]          # (n, K, d)
    quad = np.einsum("nkd,de,nke->nk", diffs, head.inv_covs[layer], diffs)
    best = np.argmin(quad, axis=1)                                     # ties: lowest index
    n = feats.shape[0]
    scores = -quad[np.arange(n), best]
    dfeat = -2.0 * diffs[np.arange(n), best] @ head.inv_covs[layer]
    return scores, dfeat


class LayerScore:
    """Loss view of a single per-layer Mahalanobis score (for input gradients)."""

    def __init__(self, head: MahalanobisHead, layer: int):
        self.head = head
        self.layer = layer

    def value_and_grads(self, entries: list[Array]):
        scores, dfeat = _layer_scores_and_seeds(self.head, entries, self.layer)
        seeds: list[Array | None] = [None] * len(entries)
        seeds[self.layer] = dfeat
        return scores, seeds


class NegLogSigmoid:
    """Detector loss of the logistic layer ensemble, without preprocessing.

    p(x) = sigmoid(sum_l alpha_l * M_l(x) + b); the loss is -log p for
    in-distribution targets and -log(1-p) otherwise.
    """

    def __init__(self, head: MahalanobisHead, is_in: bool):
        if not head.is_fitted:
            raise ValueError("ensemble (alphas, bias) not fitted")
        self.head = head
        self.is_in = is_in

    def value_and_grads(self, entries: list[Array]):
        head = self.head
        n = entries[-1].shape[0]
        z = np.full(n, float(head.bias))
        layer_grads = []
        for layer in range(head.num_layers):
            scores, dfeat = _layer_scores_and_seeds(head, entries, layer)
            z += head.alphas[layer] * scores
            layer_grads.append(dfeat)
        if self.is_in:
            values = np.logaddexp(0.0, -z)   # -log sigmoid(z)
            dz = _sigmoid(z) - 1.0
        else:
            values = np.logaddexp(0.0, z)    # -log(1 - sigmoid(z))
            dz = _sigmoid(z)
        seeds = [head.alphas[layer] * dz[:, None] * layer_grads[layer]
                 for layer in range(head.num_layers)]
        return values, seeds


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _preprocessed_layer_scores(head: MahalanobisHead, model: nn.Model, X: Array,
                               eta: float) -> Array:
    """Matrix (n, num_layers) of M_l evaluated at x + eta*sign(grad M_l), per layer."""
    X = np.asarray(X, dtype=np.float64)
    cols = []
    for layer in range(head.num_layers):
        if eta > 0.0:
            bb = nn.backward_batch(model, X, LayerScore(head, layer))
            Xl = np.clip(X + eta * np.sign(bb.input_grads), 0.0, 1.0)
        else:
            Xl = X
        hidden, logits = nn.forward_batch(model, Xl)
        scores, _ = _layer_scores_and_seeds(head, [*hidden, logits], layer)
        cols.append(scores)
    return np.stack(cols, axis=1)


def fit_logistic_ensemble(head: MahalanobisHead, model: nn.Model, in_val: LabeledSet,
                          out_val: LabeledSet, preproc_eta: float = 0.0,
                          iters: int = 2000, lr: float = 0.1) -> MahalanobisHead:
    """Fit (alpha_l, b) by full-batch gradient descent on the mean logistic
    loss, labels 1 for in-distribution and 0 for outliers. Deterministic.

    When every feature row is identical there is nothing to fit: alphas
    stay zero, the bias encodes the class prior, and the head is flagged
    degenerate.
    """
    if len(in_val) == 0 or len(out_val) == 0:
        raise ValueError("both validation sets must be nonempty")
    phi_in = _preprocessed_layer_scores(head, model, in_val.points, preproc_eta)
    phi_out = _preprocessed_layer_scores(head, model, out_val.points, preproc_eta)
    phi = np.vstack([phi_in, phi_out])
    y = np.concatenate([np.ones(len(in_val)), np.zeros(len(out_val))])

    live = np.ptp(phi, axis=0) > 0.0
    if not live.any():
        prior = len(in_val) / (len(in_val) + len(out_val))
        b = float(np.log(prior / (1.0 - prior)))
        return replace(head, eta=preproc_eta, alphas=np.zeros(head.num_layers),
                       bias=b, degenerate=True)

    # Layer scores span many orders of magnitude, so run the descent in
    # per-column standardized coordinates and map the weights back; same
    # convex problem, same iteration count, usable step size.
    mu = phi.mean(axis=0)
    sd = np.where(live, phi.std(axis=0), 1.0)
    z = (phi - mu) / sd
    w = np.zeros(head.num_layers)
    b = 0.0
    n = phi.shape[0]
    for _ in range(iters):
        err = _sigmoid(z @ w + b) - y
        w = w - lr * (z.T @ err) / n
        b = b - lr * err.mean()
    w = np.where(live, w, 0.0)
    alphas = w / sd
    bias = float(b - (w * mu / sd).sum())
    return replace(head, eta=preproc_eta, alphas=alphas, bias=bias, degenerate=False)


def mahalanobis_scores(head: MahalanobisHead, model: nn.Model, X: Array) -> Array:
    """sigmoid(sum_l alpha_l * M_l(x_l~) + b) with per-layer preprocessing."""
    if not head.is_fitted:
        raise ValueError("ensemble (alphas, bias) not fitted")
    phi = _preprocessed_layer_scores(head, model, X, head.eta)
    return _sigmoid(phi @ head.alphas + head.bias)


def mahalanobis_score(head: MahalanobisHead, model: nn.Model, x: Array) -> float:
    return float(mahalanobis_scores(head, model, np.asarray(x, dtype=np.float64)[None, :])[0])


# ---------------------------------------------------------------------------
# Scorer objects: a uniform interface for the evaluation harness, which
# also routes each detector to its matching attack ("softmax" vs
# "mahalanobis").
# ---------------------------------------------------------------------------

class MspScorer:
    kind = "softmax"
    name = "msp"

    def batch(self, model: nn.Model, X: Array) -> Array:
        return msp_scores(model, X)

    def score(self, model: nn.Model, x: Array) -> float:
        return msp_score(model, x)


class OdinScorer:
    kind = "softmax"
    name = "odin"

    def __init__(self, cfg: OdinConfig):
        self.cfg = cfg

    def batch(self, model: nn.Model, X: Array) -> Array:
        return odin_scores(model, X, self.cfg)

    def score(self, model: nn.Model, x: Array) -> float:
        return odin_score(model, x, self.cfg)


class MahalanobisScorer:
    kind = "mahalanobis"
    name = "mahalanobis"

    def __init__(self, head: MahalanobisHead):
        self.head = head

    def batch(self, model: nn.Model, X: Array) -> Array:
        return mahalanobis_scores(self.head, model, X)

    def score(self, model: nn.Model, x: Array) -> float:
        return mahalanobis_score(self.head, model, x)


@dataclass(frozen=True)
class Detector:
    """A scoring rule plus threshold; 1 (keep as in-distribution) iff score > gamma."""

    scorer: object
    gamma: float


def detect(detector: Detector, model: nn.Model, x: Array) -> int:
    return 1 if detector.scorer.score(model, x) > detector.gamma else 0


# ---------------------------------------------------------------------------
# Head serialization: an `aloe-mahal v1` section appended to the model
# text format.
# ---------------------------------------------------------------------------

def head_to_lines(head: MahalanobisHead) -> list[str]:
    lines = ["aloe-mahal v1",
             f"eta {head.eta:.17g}",
             f"layers {head.num_layers}"]
    for layer in range(head.num_layers):
        K, d = head.means[layer].shape
        lines.append(f"layer {layer} classes {K} dim {d}")
        lines.append(f"means{layer} " + nn._fmt(head.means[layer]))
        lines.append(f"cov{layer} " + nn._fmt(head.covs[layer]))
        lines.append(f"invcov{layer} " + nn._fmt(head.inv_covs[layer]))
    if head.is_fitted:
        lines.append("alphas " + nn._fmt(head.alphas))
        lines.append(f"bias {head.bias:.17g}")
        lines.append(f"degenerate {int(head.degenerate)}")
    else:
        lines.append("alphas none")
    return lines


def head_from_lines(lines: list[str]) -> MahalanobisHead:
    if not lines or lines[0].strip() != "aloe-mahal v1":
        raise ValueError("missing 'aloe-mahal v1' header")
    eta = float(nn._field(lines, 1, "eta"))
    n_layers = int(nn._field(lines, 2, "layers"))
    means, covs, inv_covs = [], [], []
    idx = 3
    for layer in range(n_layers):
        hdr = lines[idx].split()
        if hdr[:2] != ["layer", str(layer)]:
            raise ValueError(f"head section: expected 'layer {layer}' on line {idx + 1}")
        K, d = int(hdr[3]), int(hdr[5])
        means.append(nn._parse_floats(nn._field(lines, idx + 1, f"means{layer}")).reshape(K, d))
        covs.append(nn._parse_floats(nn._field(lines, idx + 2, f"cov{layer}")).reshape(d, d))
        inv_covs.append(nn._parse_floats(nn._field(lines, idx + 3, f"invcov{layer}")).reshape(d, d))
        idx += 4
    alphas_raw = nn._field(lines, idx, "alphas").strip()
    if alphas_raw == "none":
        return MahalanobisHead(tuple(means), tuple(covs), tuple(inv_covs), eta=eta)
    alphas = nn._parse_floats(alphas_raw)
    bias = float(nn._field(lines, idx + 1, "bias"))
    degenerate = bool(int(nn._field(lines, idx + 2, "degenerate")))
    return MahalanobisHead(tuple(means), tuple(covs), tuple(inv_covs), eta=eta,
                           alphas=alphas, bias=bias, degenerate=degenerate)


def save_model_with_head(model: nn.Model, head: MahalanobisHead | None, path) -> None:
    lines = nn.model_to_lines(model)
    if head is not None:
        lines += head_to_lines(head)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_model_with_head(path) -> tuple[nn.Model, MahalanobisHead | None]:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    model, rest = nn.model_from_lines(lines)
    head = head_from_lines(rest) if rest else None
    return model, head
