"""Evaluation metrics (FPR@95TPR, detection error, AUROC) and the
clean-vs-attacked evaluation harness.

All empirical definitions use the detector's strict `score > gamma`
convention, sweep thresholds over the distinct observed scores plus
+-infinity, and count AUROC ties as one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import nn
from .attacks import (AttackConfig, attack_classifier_batch,
                      attack_mahalanobis_detector_batch,
                      attack_softmax_detector_batch)
from .data import LabeledSet
from .seeding import child_seed

Array = np.ndarray


@dataclass
class ScoredEval:
    """Detector scores on paired evaluation sets: Z=1 inliers, Z=0 outliers."""

    in_scores: Array
    out_scores: Array
    provenance: str = "clean"            # "clean" or "attacked"
    attack: AttackConfig | None = None

    def __post_init__(self):
        self.in_scores = np.asarray(self.in_scores, dtype=np.float64)
        self.out_scores = np.asarray(self.out_scores, dtype=np.float64)


def _candidates(ev: ScoredEval) -> Array:
    finite = np.unique(np.concatenate([ev.in_scores, ev.out_scores]))
    return np.concatenate([[-np.inf], finite, [np.inf]])


def _check_nonempty(ev: ScoredEval) -> None:
    if ev.in_scores.size == 0 or ev.out_scores.size == 0:
        raise ValueError("both score lists must be nonempty")


def fpr_at_tpr(ev: ScoredEval, tpr_target: float = 0.95) -> float:
    """FPR (outliers kept as in-distribution) at the largest threshold whose
    TPR (inliers kept) still reaches the target."""
    _check_nonempty(ev)
    cands = _candidates(ev)
    s_in = np.sort(ev.in_scores)
    s_out = np.sort(ev.out_scores)
    tpr = (len(s_in) - np.searchsorted(s_in, cands, side="right")) / len(s_in)
    feasible = np.nonzero(tpr >= tpr_target)[0]
    gamma = cands[feasible[-1]]  # candidates are sorted ascending
    return float((len(s_out) - np.searchsorted(s_out, gamma, side="right")) / len(s_out))


def detection_error(ev: ScoredEval) -> float:
    """Minimum over thresholds of (miss rate + false-alarm rate) / 2."""
    _check_nonempty(ev)
    cands = _candidates(ev)
    s_in = np.sort(ev.in_scores)
    s_out = np.sort(ev.out_scores)
    miss = np.searchsorted(s_in, cands, side="right") / len(s_in)        # in <= gamma
    fa = (len(s_out) - np.searchsorted(s_out, cands, side="right")) / len(s_out)  # out > gamma
    return float((miss + fa).min() / 2.0)


def auroc(ev: ScoredEval) -> float:
    """P(random inlier scores above random outlier), ties counting half.

    Computed by midranks; agrees exactly with the O(n^2) pairwise count.
    """
    _check_nonempty(ev)
    n_in, n_out = len(ev.in_scores), len(ev.out_scores)
    ranks = rankdata(np.concatenate([ev.in_scores, ev.out_scores]), method="average")
    return float((ranks[:n_in].sum() - n_in * (n_in + 1) / 2.0) / (n_in * n_out))


@dataclass
class Histogram:
    """Equal-width score histogram over the pooled range, per score set."""

    edges: Array       # (bins+1,)
    count_in: Array    # (bins,)
    count_out: Array

    @classmethod
    def of(cls, ev: ScoredEval, bins: int = 50) -> "Histogram":
        pooled = np.concatenate([ev.in_scores, ev.out_scores])
        lo, hi = pooled.min(), pooled.max()
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        cin, _ = np.histogram(ev.in_scores, bins=edges)
        cout, _ = np.histogram(ev.out_scores, bins=edges)
        return cls(edges, cin, cout)


@dataclass
class EvalReport:
    """Metric triple plus score histogram for one (method, attack) cell."""

    method: str
    attack: str                # "none" or the attack algorithm name
    eps: float
    m: int
    fpr95: float
    det_err: float
    auroc: float
    hist: Histogram


def _attacked_points(scorer, model: nn.Model, X: Array, is_in: bool,
                     cfg: AttackConfig) -> tuple[Array, str]:
    seeds = [child_seed(cfg.seed, int(is_in), i) for i in range(X.shape[0])]
    if scorer.kind == "mahalanobis":
        deltas = attack_mahalanobis_detector_batch(scorer.head, model, X, is_in, cfg, seeds)
        label = "alg2"
    else:
        deltas = attack_softmax_detector_batch(model, X, is_in, cfg, seeds)
        label = "alg1"
    return X + deltas, label


def evaluate(scorer, model: nn.Model, in_set: LabeledSet, out_set: LabeledSet,
             attack: AttackConfig | None = None, bins: int = 50,
             method: str | None = None) -> tuple[EvalReport, ScoredEval]:
    """Score both sets (attacking each point against this detector first if
    an attack is given) and compute the three metrics."""
    if len(in_set) == 0 or len(out_set) == 0:
        raise ValueError("both evaluation sets must be nonempty")
    X_in, X_out = in_set.points, out_set.points
    attack_name = "none"
    if attack is not None:
        X_in, attack_name = _attacked_points(scorer, model, X_in, True, attack)
        X_out, _ = _attacked_points(scorer, model, X_out, False, attack)
    ev = ScoredEval(scorer.batch(model, X_in), scorer.batch(model, X_out),
                    provenance="clean" if attack is None else "attacked",
                    attack=attack)
    report = EvalReport(
        method=method or scorer.name,
        attack=attack_name,
        eps=attack.eps if attack else 0.0,
        m=attack.m if attack else 0,
        fpr95=fpr_at_tpr(ev),
        det_err=detection_error(ev),
        auroc=auroc(ev),
        hist=Histogram.of(ev, bins),
    )
    return report, ev


def classifier_attack_fpr(scorer, model: nn.Model, in_set: LabeledSet,
                          cfg: AttackConfig) -> float:
    """1 - FPR@95TPR with classifier-PGD-attacked inliers standing in as the
    "OOD" set: the rate at which small adversarial examples against f(x)
    get rejected as out-of-distribution."""
    seeds = [child_seed(cfg.seed, 2, i) for i in range(len(in_set))]
    deltas = attack_classifier_batch(model, in_set.points, in_set.labels, cfg, seeds)
    ev = ScoredEval(scorer.batch(model, in_set.points),
                    scorer.batch(model, in_set.points + deltas),
                    provenance="attacked", attack=cfg)
    return 1.0 - fpr_at_tpr(ev)


def accuracy(model: nn.Model, ds: LabeledSet) -> float:
    """Clean classification accuracy (argmax logits, lowest index wins ties)."""
    _, logits = nn.forward_batch(model, ds.points)
    return float((logits.argmax(axis=1) == ds.labels).mean())


def robust_accuracy(model: nn.Model, ds: LabeledSet, cfg: AttackConfig) -> float:
    """Accuracy under classifier PGD within the budget."""
    seeds = [child_seed(cfg.seed, 3, i) for i in range(len(ds))]
    deltas = attack_classifier_batch(model, ds.points, ds.labels, cfg, seeds)
    _, logits = nn.forward_batch(model, ds.points + deltas)
    return float((logits.argmax(axis=1) == ds.labels).mean())


# ---------------------------------------------------------------------------
# CSV export. All floats use 17 significant digits so reruns are
# byte-identical and round-trips are exact.
# ---------------------------------------------------------------------------

def write_report_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w") as f:
        f.write("method,attack,eps,m,fpr95,det_err,auroc\n")
        for r in reports:
            f.write(f"{r.method},{r.attack},{r.eps:.17g},{r.m},"
                    f"{r.fpr95:.17g},{r.det_err:.17g},{r.auroc:.17g}\n")


def write_scores_csv(ev: ScoredEval, path) -> None:
    attacked = int(ev.provenance == "attacked")
    with open(path, "w") as f:
        f.write("score,z,attacked\n")
        for s in ev.in_scores:
            f.write(f"{s:.17g},1,{attacked}\n")
        for s in ev.out_scores:
            f.write(f"{s:.17g},0,{attacked}\n")


def read_scores_csv(path) -> ScoredEval:
    in_scores, out_scores, attacked = [], [], 0
    with open(path) as f:
        header = f.readline().strip()
        if header != "score,z,attacked":
            raise ValueError(f"{path}: not a scores CSV")
        for ln in f:
            if not ln.strip():
                continue
            s, z, a = ln.strip().split(",")
            (in_scores if int(z) == 1 else out_scores).append(float(s))
            attacked = int(a)
    return ScoredEval(np.array(in_scores), np.array(out_scores),
                      provenance="attacked" if attacked else "clean")


def write_hist_csv(hist: Histogram, path) -> None:
    with open(path, "w") as f:
        f.write("bin_lo,bin_hi,count_in,count_out\n")
        for i in range(len(hist.count_in)):
            f.write(f"{hist.edges[i]:.17g},{hist.edges[i + 1]:.17g},"
                    f"{hist.count_in[i]},{hist.count_out[i]}\n")
