"""Command-line front end: data -> train -> attack -> evaluate -> report.

Subcommands:
  train        generate data, train one model per objective, fit the
               Mahalanobis head, write checkpoints
  eval         load checkpoints, clean evaluation rows only
  attack-eval  load checkpoints, attacked rows for every attack-grid entry
               plus the adversarial-inlier study
  theory       disk-geometry bound verification CSVs
  all          everything above in one report

Outputs are CSVs; reruns with the same config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, nn, scores, theory
from .attacks import AttackConfig
from .config import METHOD_TABLE, ConfigError, RunConfig, load_config
from .data import generate, split
from .seeding import child_seed
from .train import train


class PipelineError(RuntimeError):
    pass


def _datasets(cfg: RunConfig) -> dict:
    specs = cfg.dataset_specs()
    out = {
        "train_in": generate(specs["train_in"]),
        "test_in": generate(specs["test_in"]),
        "train_oe": generate(specs["train_oe"]),
        "q_variants": [generate(s) for s in specs["q_variants"]],
    }
    n_val = specs["n_mahal_val"]
    frac_in = min(1.0, n_val / len(out["train_in"]))
    frac_oe = min(1.0, n_val / len(out["train_oe"]))
    out["mahal_val_in"] = split(out["train_in"], [frac_in], child_seed(cfg.seed, 30))[0]
    out["mahal_val_out"] = split(out["train_oe"], [frac_oe], child_seed(cfg.seed, 31))[0]
    return out


def _model_path(out_dir: Path, objective: str) -> Path:
    return out_dir / "models" / f"{objective}.model"


def train_models(cfg: RunConfig, out_dir: Path, save_epochs: bool = False,
                 log=print) -> dict:
    """Train every objective the configured methods need; returns
    {objective: model} plus the fitted Mahalanobis head per model that
    needs one. Checkpoints land under out_dir/models/."""
    ds = _datasets(cfg)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    models, heads = {}, {}
    for objective in cfg.objectives:
        tc = cfg.train_config(objective)
        model = nn.init_model(cfg.model_spec, child_seed(cfg.seed, 40))
        on_epoch = None
        if save_epochs:
            def on_epoch(epoch, m, _obj=objective):
                nn.save_model(m, out_dir / "models" / f"{_obj}.epoch{epoch:03d}.model")
        report = train(model, ds["train_in"], ds["train_oe"], tc, on_epoch=on_epoch)
        models[objective] = report.model
        log(f"trained {objective}: in-loss {report.epoch_in_loss[-1]:.4f} "
            f"({report.wall_clock:.1f}s)")
        head = None
        if any(METHOD_TABLE[m] == (objective, "mahalanobis") for m in cfg.methods):
            head = scores.fit_mahalanobis(report.model, ds["train_in"], cfg.mahal_reg)
            head = scores.fit_logistic_ensemble(head, report.model, ds["mahal_val_in"],
                                                ds["mahal_val_out"], cfg.mahal_eta)
            heads[objective] = head
        scores.save_model_with_head(report.model, head, _model_path(out_dir, objective))
    return {"models": models, "heads": heads, "datasets": ds}


def load_models(cfg: RunConfig, out_dir: Path) -> dict:
    models, heads = {}, {}
    for objective in cfg.objectives:
        path = _model_path(out_dir, objective)
        if not path.exists():
            raise PipelineError(f"missing checkpoint {path}; run the train command first")
        model, head = scores.load_model_with_head(path)
        models[objective] = model
        if head is not None:
            heads[objective] = head
    return {"models": models, "heads": heads, "datasets": _datasets(cfg)}


def _scorer_for(cfg: RunConfig, method: str, state: dict):
    objective, kind = METHOD_TABLE[method]
    model = state["models"][objective]
    if kind == "msp":
        return model, scores.MspScorer()
    if kind == "odin":
        return model, scores.OdinScorer(cfg.odin)
    head = state["heads"].get(objective)
    if head is None or not head.is_fitted:
        raise PipelineError(f"method {method!r} needs a fitted Mahalanobis head")
    return model, scores.MahalanobisScorer(head)


def _safe(name: str) -> str:
    return name.replace("+", "-")


def evaluate_grid(cfg: RunConfig, state: dict, out_dir: Path, clean: bool,
                  attacked: bool, log=print) -> list[metrics.EvalReport]:
    """One report row per method x (clean + attack grid), metrics averaged
    over the OOD test variants; per-variant score and histogram CSVs."""
    ds = state["datasets"]
    scores_dir = out_dir / "scores"
    hists_dir = out_dir / "hists"
    scores_dir.mkdir(parents=True, exist_ok=True)
    hists_dir.mkdir(parents=True, exist_ok=True)
    cells: list[AttackConfig | None] = []
    if clean:
        cells.append(None)
    if attacked:
        for i, a in enumerate(cfg.attack_grid):
            cells.append(AttackConfig(eps=a["eps"], m=a["m"], xi=a["xi"],
                                      seed=child_seed(cfg.seed, 50, i)))
    rows = []
    for method in cfg.methods:
        model, scorer = _scorer_for(cfg, method, state)
        for attack in cells:
            triples, attack_name = [], "none"
            for qi, q_set in enumerate(ds["q_variants"]):
                rep, ev = metrics.evaluate(scorer, model, ds["test_in"], q_set,
                                           attack, bins=cfg.hist_bins, method=method)
                triples.append((rep.fpr95, rep.det_err, rep.auroc))
                attack_name = rep.attack
                tag = f"{_safe(method)}__{rep.attack}-eps{rep.eps:g}__q{qi}"
                metrics.write_scores_csv(ev, scores_dir / f"{tag}.csv")
                metrics.write_hist_csv(rep.hist, hists_dir / f"{tag}.csv")
            fpr, det, auc = np.mean(np.asarray(triples), axis=0)
            rows.append(metrics.EvalReport(
                method=method, attack=attack_name,
                eps=attack.eps if attack else 0.0, m=attack.m if attack else 0,
                fpr95=float(fpr), det_err=float(det), auroc=float(auc), hist=None))
            log(f"{method:12s} {attack_name:5s} eps={rows[-1].eps:g} "
                f"fpr95={fpr:.3f} det={det:.3f} auroc={auc:.3f}")
    return rows


def adversarial_inlier_study(cfg: RunConfig, state: dict, out_dir: Path, log=print) -> None:
    """Table of 1-FPR@95TPR on classifier-attacked inliers per method."""
    ds = state["datasets"]
    lines = ["method,eps,m,one_minus_fpr95"]
    for method in cfg.methods:
        model, scorer = _scorer_for(cfg, method, state)
        for i, a in enumerate(cfg.attack_grid):
            cfg_a = AttackConfig(eps=a["eps"], m=a["m"], xi=a["xi"],
                                 seed=child_seed(cfg.seed, 51, i))
            v = metrics.classifier_attack_fpr(scorer, model, ds["test_in"], cfg_a)
            lines.append(f"{method},{a['eps']:.17g},{a['m']},{v:.17g}")
            log(f"adv-inlier {method:12s} eps={a['eps']:g}: 1-fpr95={v:.3f}")
    (out_dir / "adv_inlier.csv").write_text("\n".join(lines) + "\n")


def run_theory(cfg: RunConfig, out_dir: Path, log=print) -> None:
    t = cfg.theory
    grid = cfg.theory_grid()
    out_dir.mkdir(parents=True, exist_ok=True)
    worlds = [("symmetric", theory.paper_world(t["eps"]))]
    if t["asymmetric"]:
        worlds.append(("asymmetric", theory.asymmetric_world(t["eps"])))
    for name, world in worlds:
        rows = theory.theory_rows(world, grid, t["n"], child_seed(cfg.seed, 60))
        theory.write_theory_csv(rows, out_dir / f"theory_{name}.csv")
        worst = min(r["slack"] for r in rows)
        log(f"theory {name}: min slack over grid = {worst:.5f}")


def run(cfg: RunConfig, command: str, out_dir: Path, save_epochs: bool = False,
        log=print) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if command in ("train", "all"):
        state = train_models(cfg, out_dir, save_epochs, log)
    elif command in ("eval", "attack-eval"):
        state = load_models(cfg, out_dir)
    if command in ("eval", "attack-eval", "all"):
        rows = evaluate_grid(cfg, state, out_dir,
                             clean=command in ("eval", "all"),
                             attacked=command in ("attack-eval", "all"), log=log)
        metrics.write_report_csv(rows, out_dir / "report.csv")
    if command in ("attack-eval", "all"):
        adversarial_inlier_study(cfg, state, out_dir, log)
    if command in ("theory", "all"):
        run_theory(cfg, out_dir, log)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aloelab",
                                     description="robust OOD detection lab")
    parser.add_argument("command", choices=["train", "eval", "attack-eval", "theory", "all"])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--save-epochs", action="store_true",
                        help="write a checkpoint after every epoch")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    out_dir = Path(args.out) if args.out else Path("out")
    try:
        run(cfg, args.command, out_dir, save_epochs=args.save_epochs)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
