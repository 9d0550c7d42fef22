"""Run configuration: a strict JSON file with nested sections.

Unknown keys are errors (a typo in eps/m/xi would silently invalidate an
experiment). Every omitted key falls back to the default benchmark value,
so `{}` is a complete configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSpec
from .nn import ModelSpec
from .scores import OdinConfig
from .seeding import child_seed
from .train import OBJECTIVES, PgdConfig, TrainConfig

METHODS = ("msp", "odin", "mahalanobis", "oe", "oe+odin", "adv", "aoe", "aloe", "aloe+odin")

# method -> (training objective, score kind)
METHOD_TABLE = {
    "msp": ("standard", "msp"),
    "odin": ("standard", "odin"),
    "mahalanobis": ("standard", "mahalanobis"),
    "oe": ("oe", "msp"),
    "oe+odin": ("oe", "odin"),
    "adv": ("adv", "msp"),
    "aoe": ("aoe", "msp"),
    "aloe": ("aloe", "msp"),
    "aloe+odin": ("aloe", "odin"),
}


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "model": {"hidden_dims": [64, 64], "activation": "relu"},
    "data": {
        "blob_centers": [[0.35, 0.35], [0.35, 0.65], [0.65, 0.35], [0.65, 0.65]],
        "blob_std": 0.05,
        "oe_ring": {"center": [0.5, 0.5], "r_inner": 0.36, "r_outer": 0.44},
        "q_variants": [
            {"kind": "ring", "center": [0.5, 0.5], "r_inner": 0.46, "r_outer": 0.52},
            {"kind": "uniform_box", "lo": [0.02, 0.02], "hi": [0.12, 0.12]},
        ],
        "n_train_in": 1200,
        "n_train_oe": 1200,
        "n_test_in": 600,
        "n_test_out": 600,
        "n_mahal_val": 400,
    },
    "train": {
        "epochs": 30,
        "lambda": 0.5,
        "lr": 0.1,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "batch_in": 64,
        "batch_oe": 128,
        "inner_eps": 0.02,
        "inner_step": 0.002,
        "random_start": True,
    },
    "attacks": [{"eps": 0.02, "m": 10, "xi": 0.002}],
    "detectors": {
        "odin": {"T": 1000.0, "eta": 0.004},
        "mahalanobis": {"eta": 0.002, "reg": None},
    },
    "methods": list(METHODS),
    "metrics": {"hist_bins": 50},
    "theory": {
        "n": 100000,
        "grid_start": 0.0,
        "grid_stop": 4.0,
        "grid_step": 0.25,
        "eps": 0.1,
        "asymmetric": True,
    },
}


def _merge(defaults, given, path):
    """Merge `given` over `defaults`, rejecting keys defaults doesn't have."""
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(given).__name__}")
    out = {}
    for key, dval in defaults.items():
        if key in given:
            gval = given[key]
            if isinstance(dval, dict) and not isinstance(gval, dict):
                raise ConfigError(f"{path}{key}: expected an object")
            out[key] = _merge(dval, gval, f"{path}{key}.") if isinstance(dval, dict) else gval
        else:
            out[key] = dval
    for key in given:
        if key not in defaults:
            raise ConfigError(f"{path}{key}: unknown key")
    return out


@dataclass
class RunConfig:
    seed: int
    model_spec: ModelSpec
    raw: dict
    methods: list[str]
    attack_grid: list[dict]          # eps/m/xi dicts
    odin: OdinConfig
    mahal_eta: float
    mahal_reg: float | None
    hist_bins: int
    theory: dict

    @property
    def objectives(self) -> list[str]:
        seen = []
        for name in self.methods:
            obj = METHOD_TABLE[name][0]
            if obj not in seen:
                seen.append(obj)
        return seen

    def train_config(self, objective: str) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            objective=objective,
            lam=t["lambda"],
            inner=PgdConfig(eps=t["inner_eps"], step=t["inner_step"],
                            random_start=t["random_start"]),
            epochs=t["epochs"],
            batch_in=t["batch_in"],
            batch_oe=t["batch_oe"],
            lr=t["lr"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            seed=child_seed(self.seed, 10, OBJECTIVES.index(objective)),
        )

    def dataset_specs(self) -> dict:
        """Concrete DatasetSpecs with seeds derived from the master seed."""
        d = self.raw["data"]
        centers = tuple(tuple(c) for c in d["blob_centers"])
        std = tuple(d["blob_std"]) if isinstance(d["blob_std"], list) else d["blob_std"]
        K = self.model_spec.num_classes

        def blob(n, tag):
            return DatasetSpec(kind="gauss_blobs", n=n, seed=child_seed(self.seed, 20, tag),
                               label_classes=K, centers=centers, std=std)

        def ring_like(q, n, tag):
            base = {"n": n, "seed": child_seed(self.seed, 20, tag)}
            if q["kind"] == "ring":
                return DatasetSpec(kind="ring", center=tuple(q["center"]),
                                   r_inner=q["r_inner"], r_outer=q["r_outer"], **base)
            if q["kind"] == "uniform_box":
                return DatasetSpec(kind="uniform_box", lo=tuple(q["lo"]), hi=tuple(q["hi"]), **base)
            raise ConfigError(f"unknown OOD dataset kind {q['kind']!r}")

        oe = dict(d["oe_ring"], kind="ring")
        return {
            "train_in": blob(d["n_train_in"], 1),
            "test_in": blob(d["n_test_in"], 2),
            "train_oe": ring_like(oe, d["n_train_oe"], 3),
            "q_variants": [ring_like(q, d["n_test_out"], 4 + i)
                           for i, q in enumerate(d["q_variants"])],
            "n_mahal_val": d["n_mahal_val"],
        }

    def theory_grid(self) -> np.ndarray:
        t = self.theory
        return np.arange(t["grid_start"], t["grid_stop"] + 1e-12, t["grid_step"])


def build_config(given: dict, seed_override: int | None = None) -> RunConfig:
    raw = _merge(DEFAULTS, given, "")
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    for name in raw["methods"]:
        if name not in METHOD_TABLE:
            raise ConfigError(f"methods: unknown method {name!r}")
    for i, a in enumerate(raw["attacks"]):
        for key in a:
            if key not in ("eps", "m", "xi"):
                raise ConfigError(f"attacks[{i}].{key}: unknown key")
        if "eps" not in a:
            raise ConfigError(f"attacks[{i}]: missing eps")
        a.setdefault("m", 10)
        a.setdefault("xi", 0.002)
    K = len(raw["data"]["blob_centers"])
    dim = len(raw["data"]["blob_centers"][0])
    try:
        model_spec = ModelSpec(input_dim=dim, hidden_dims=tuple(raw["model"]["hidden_dims"]),
                               num_classes=K, activation=raw["model"]["activation"])
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    det = raw["detectors"]
    return RunConfig(
        seed=int(raw["seed"]),
        model_spec=model_spec,
        raw=raw,
        methods=list(raw["methods"]),
        attack_grid=list(raw["attacks"]),
        odin=OdinConfig(T=det["odin"]["T"], eta=det["odin"]["eta"]),
        mahal_eta=det["mahalanobis"]["eta"],
        mahal_reg=det["mahalanobis"]["reg"],
        hist_bins=int(raw["metrics"]["hist_bins"]),
        theory=raw["theory"],
    )


def load_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path) as f:
            given = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        return build_config(given, seed_override)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def default_config(seed: int = 0) -> RunConfig:
    return build_config({}, seed_override=seed)
