"""Seeded synthetic dataset generators and CSV I/O.

Training and evaluation data live in the valid input domain [0,1]^d;
samplers rejection-resample points that land outside instead of clamping,
so the boundary carries no extra mass. The `disk` kind is the exception:
it samples an unconstrained disk in R^2 for the generalization-bound
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

_MAX_REJECTS = 10_000

KINDS = ("gauss_blobs", "ring", "uniform_box", "disk")


@dataclass(frozen=True)
class DatasetSpec:
    """What to sample, how many points, and with which seed.

    label_classes=None produces unlabeled points (label -1); an integer K
    assigns labels round-robin (for gauss_blobs, by blob index mod K).
    """

    kind: str
    n: int
    seed: int
    label_classes: int | None = None
    # gauss_blobs; std is shared or per-blob
    centers: tuple | None = None
    std: float | tuple | None = None
    # ring / disk
    center: tuple | None = None
    r_inner: float | None = None
    r_outer: float | None = None
    radius: float | None = None
    # uniform_box
    lo: tuple | None = None
    hi: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.label_classes is not None and self.label_classes < 1:
            raise ValueError("label_classes must be a positive integer or None")
        if self.kind == "gauss_blobs":
            if not self.centers or self.std is None:
                raise ValueError("gauss_blobs needs centers and std")
            stds = self.std if isinstance(self.std, (tuple, list)) else (self.std,)
            if isinstance(self.std, (tuple, list)) and len(self.std) != len(self.centers):
                raise ValueError("per-blob stds must match the number of centers")
            if any(s <= 0 for s in stds):
                raise ValueError(f"blob std must be > 0, got {self.std}")
        elif self.kind == "ring":
            if self.center is None or self.r_inner is None or self.r_outer is None:
                raise ValueError("ring needs center, r_inner, r_outer")
            if not 0 <= self.r_inner < self.r_outer:
                raise ValueError(f"need 0 <= r_inner < r_outer, got {self.r_inner}, {self.r_outer}")
        elif self.kind == "uniform_box":
            if self.lo is None or self.hi is None:
                raise ValueError("uniform_box needs lo and hi")
            if len(self.lo) != len(self.hi) or any(l >= h for l, h in zip(self.lo, self.hi)):
                raise ValueError("box bounds must satisfy lo < hi per coordinate")
        elif self.kind == "disk":
            if self.center is None or self.radius is None:
                raise ValueError("disk needs center and radius")
            if self.radius <= 0:
                raise ValueError(f"disk radius must be > 0, got {self.radius}")

    @property
    def dim(self) -> int:
        if self.kind == "gauss_blobs":
            return len(self.centers[0])
        if self.kind == "uniform_box":
            return len(self.lo)
        return len(self.center)


@dataclass
class LabeledSet:
    """Points plus integer labels; -1 marks unlabeled outliers."""

    points: Array               # (n, d)
    labels: Array               # (n,)
    spec: DatasetSpec | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels must have the same length")

    def __len__(self) -> int:
        return self.points.shape[0]


def uniform_disk_sample(center, radius: float, rng: np.random.Generator) -> Array:
    """One point uniform over the disk: r = radius*sqrt(u1), theta = 2*pi*u2."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    r = radius * np.sqrt(rng.uniform())
    theta = 2.0 * np.pi * rng.uniform()
    return np.asarray(center, dtype=np.float64) + r * np.array([np.cos(theta), np.sin(theta)])


def uniform_disk(center, radius: float, n: int, rng: np.random.Generator) -> Array:
    """n points uniform over a disk, vectorized (no domain constraint)."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    r = radius * np.sqrt(rng.uniform(size=n))
    theta = 2.0 * np.pi * rng.uniform(size=n)
    return np.asarray(center, dtype=np.float64) + np.stack(
        [r * np.cos(theta), r * np.sin(theta)], axis=1)


def _sample_one(spec: DatasetSpec, idx: int, rng: np.random.Generator) -> Array:
    if spec.kind == "gauss_blobs":
        blob = idx % len(spec.centers)
        c = np.asarray(spec.centers[blob], dtype=np.float64)
        s = spec.std[blob] if isinstance(spec.std, (tuple, list)) else spec.std
        return c + s * rng.standard_normal(len(c))
    if spec.kind == "ring":
        u, v = rng.uniform(), rng.uniform()
        r = np.sqrt(spec.r_inner ** 2 + u * (spec.r_outer ** 2 - spec.r_inner ** 2))
        theta = 2.0 * np.pi * v
        return np.asarray(spec.center, dtype=np.float64) + r * np.array([np.cos(theta), np.sin(theta)])
    if spec.kind == "uniform_box":
        return rng.uniform(np.asarray(spec.lo, dtype=np.float64), np.asarray(spec.hi, dtype=np.float64))
    return uniform_disk_sample(spec.center, spec.radius, rng)


def generate(spec: DatasetSpec) -> LabeledSet:
    """Sample exactly spec.n points, deterministically in spec.seed.

    Every kind except `disk` is rejection-resampled into [0,1]^d.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    points = np.empty((spec.n, d))
    labels = np.full(spec.n, -1, dtype=np.int64)
    constrain = spec.kind != "disk"
    for j in range(spec.n):
        p = _sample_one(spec, j, rng)
        tries = 0
        while constrain and (np.any(p < 0.0) or np.any(p > 1.0)):
            tries += 1
            if tries > _MAX_REJECTS:
                raise ValueError(f"{spec.kind} sampler rejected {_MAX_REJECTS} consecutive "
                                 "draws; support barely intersects [0,1]^d")
            p = _sample_one(spec, j, rng)
        points[j] = p
        if spec.label_classes is not None:
            if spec.kind == "gauss_blobs":
                labels[j] = (j % len(spec.centers)) % spec.label_classes
            else:
                labels[j] = j % spec.label_classes
    return LabeledSet(points, labels, spec)


def split(ls: LabeledSet, fractions, seed: int) -> list[LabeledSet]:
    """Disjoint shuffled partition by fractions (sum <= 1)."""
    fractions = list(fractions)
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    n = len(ls)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = [0] + [int(round(c * n)) for c in np.cumsum(fractions)]
    parts = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        take = perm[a:b]
        parts.append(LabeledSet(ls.points[take], ls.labels[take], ls.spec))
    return parts


def save_csv(ls: LabeledSet, path, attacked: Array | None = None) -> None:
    """Header x0,...,x{d-1},label; 17-significant-digit decimals.

    With `attacked`, an extra 0/1 column marks adversarially perturbed rows.
    """
    d = ls.points.shape[1] if len(ls) else (ls.spec.dim if ls.spec else 0)
    cols = [f"x{i}" for i in range(d)] + ["label"]
    if attacked is not None:
        cols.append("attacked")
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for j in range(len(ls)):
            row = [f"{v:.17g}" for v in ls.points[j]] + [str(int(ls.labels[j]))]
            if attacked is not None:
                row.append(str(int(attacked[j])))
            f.write(",".join(row) + "\n")


def load_csv(path) -> LabeledSet:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [ln.strip().split(",") for ln in f if ln.strip()]
    if not header or header[-1] not in ("label", "attacked"):
        raise ValueError(f"{path}: not a dataset CSV")
    d = sum(1 for c in header if c.startswith("x"))
    points = np.array([[float(v) for v in r[:d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    labels = np.array([int(r[d]) for r in rows], dtype=np.int64)
    return LabeledSet(points, labels, None)
