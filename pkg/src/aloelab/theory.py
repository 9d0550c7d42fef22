"""Numerical check of the domain-adaptation view of outlier exposure.

The world is three uniform disks in R^2 (in-distribution P at the origin,
auxiliary U, and test-time Q), an L2 adversary of budget eps with no box
constraint, and the radius detector family G_r(x) = 1 iff ||x|| <= r
(output 1 means "in-distribution"). Robust losses have closed forms:

  y=1: the adversary escapes iff ||x|| + eps > r
  y=0: the adversary sneaks in iff ||x|| - eps <= r

Source risk pairs P with U, target risk pairs P with Q. The bound under
test: Rt(G) <= min_{G*} Rt(G*) + Rs(G) + d(Q,U)/2, where d is the pairwise
loss-difference divergence over the same detector grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import uniform_disk
from .seeding import child_rng

Array = np.ndarray


@dataclass(frozen=True)
class RadiusDetector:
    """Accepts as in-distribution every point within radius r of the origin."""

    r: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"radius must be nonnegative, got {self.r}")


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")

    @property
    def center_norm(self) -> float:
        return float(np.hypot(*self.center))


@dataclass(frozen=True)
class DiskWorld:
    p: Disk
    u: Disk
    q: Disk
    eps: float

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")


def paper_world(eps: float = 0.1) -> DiskWorld:
    """P at the origin, U at (0,3), Q at (3,0), unit radii."""
    return DiskWorld(Disk((0.0, 0.0), 1.0), Disk((0.0, 3.0), 1.0), Disk((3.0, 0.0), 1.0), eps)


def asymmetric_world(eps: float = 0.1) -> DiskWorld:
    """Q pulled inward to (2.2, 0): now closer to P than U is, so the
    detector grid can tell Q and U apart and the divergence is positive."""
    return DiskWorld(Disk((0.0, 0.0), 1.0), Disk((0.0, 3.0), 1.0), Disk((2.2, 0.0), 1.0), eps)


def robust_loss_radius(g: RadiusDetector, x: Array, y: int, eps: float) -> int:
    """max over ||delta||_2 <= eps of [G_r(x+delta) != y], in closed form."""
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    norm = float(np.linalg.norm(x))
    if y == 1:
        return int(norm + eps > g.r)
    return int(norm - eps <= g.r)


def _loss_in(norms: Array, r: float, eps: float) -> Array:
    return (norms + eps > r).astype(np.float64)


def _loss_out(norms: Array, r: float, eps: float) -> Array:
    return (norms - eps <= r).astype(np.float64)


@dataclass
class RiskEstimate:
    value: float
    n: int
    std_error: float


def _sample_norms(disk: Disk, n: int, rng) -> Array:
    return np.linalg.norm(uniform_disk(disk.center, disk.radius, n, rng), axis=1)


def estimate_risk(world: DiskWorld, g: RadiusDetector, domain: str, n: int,
                  seed: int) -> RiskEstimate:
    """Monte-Carlo robust risk: half the inlier miss rate plus half the
    outlier sneak rate. domain is "source" (P vs U) or "target" (P vs Q)."""
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out_disk = world.u if domain == "source" else world.q
    norms_p = _sample_norms(world.p, n, child_rng(seed, 1))
    norms_o = _sample_norms(out_disk, n, child_rng(seed, 2 if domain == "source" else 3))
    v1 = _loss_in(norms_p, g.r, world.eps).mean()
    v0 = _loss_out(norms_o, g.r, world.eps).mean()
    value = 0.5 * (v1 + v0)
    se = float(np.sqrt(0.25 * v1 * (1 - v1) / n + 0.25 * v0 * (1 - v0) / n))
    return RiskEstimate(float(value), n, se)


@dataclass
class DivergenceEstimate:
    value: float       # floored at 0
    std_error: float
    n: int


def divergence_dG(world: DiskWorld, r_grid, n: int, seed: int) -> DivergenceEstimate:
    """sup over ordered detector pairs of the outlier-loss difference gap
    between Q and U, on shared Monte-Carlo samples.

    With mean outlier losses a_r (on Q) and b_r (on U), the sup over pairs
    equals max_r(a_r - b_r) - min_r(a_r - b_r). The reported std error is
    the conservative bound sqrt(2/n): each of the two empirical means in a
    difference contributes at most 1/(4n) variance, and the max/min
    selection doubles the allowance.
    """
    r_grid = np.asarray(list(r_grid), dtype=np.float64)
    if r_grid.size == 0:
        raise ValueError("r_grid must be nonempty")
    norms_q = _sample_norms(world.q, n, child_rng(seed, 4))
    norms_u = _sample_norms(world.u, n, child_rng(seed, 5))
    diff = np.array([_loss_out(norms_q, r, world.eps).mean()
                     - _loss_out(norms_u, r, world.eps).mean() for r in r_grid])
    value = max(0.0, float(diff.max() - diff.min()))
    return DivergenceEstimate(value, float(np.sqrt(2.0 / n)), n)


@dataclass
class Theorem1Result:
    lhs: float          # Rt(G)
    rhs: float          # min_{G*} Rt(G*) + Rs(G) + d/2
    slack: float        # rhs - lhs
    sigma: float        # combined MC standard error of the slack
    best_r: float
    divergence: float


def _risk_from_norms(norms_p: Array, norms_out: Array, r: float, eps: float,
                     n: int) -> RiskEstimate:
    v1 = _loss_in(norms_p, r, eps).mean()
    v0 = _loss_out(norms_out, r, eps).mean()
    se = float(np.sqrt(0.25 * v1 * (1 - v1) / n + 0.25 * v0 * (1 - v0) / n))
    return RiskEstimate(float(0.5 * (v1 + v0)), n, se)


def theorem1_check(world: DiskWorld, g: RadiusDetector, r_grid, n: int,
                   seed: int) -> Theorem1Result:
    """Evaluate both sides of the bound for detector g over the grid.

    Uses the same derived sample streams as estimate_risk, shared across
    the whole grid.
    """
    r_grid = np.asarray(list(r_grid), dtype=np.float64)
    if r_grid.size == 0:
        raise ValueError("r_grid must be nonempty")
    norms_p = _sample_norms(world.p, n, child_rng(seed, 1))
    norms_u = _sample_norms(world.u, n, child_rng(seed, 2))
    norms_q = _sample_norms(world.q, n, child_rng(seed, 3))
    rt_g = _risk_from_norms(norms_p, norms_q, g.r, world.eps, n)
    rs_g = _risk_from_norms(norms_p, norms_u, g.r, world.eps, n)
    rt_grid = [_risk_from_norms(norms_p, norms_q, r, world.eps, n) for r in r_grid]
    best = int(np.argmin([e.value for e in rt_grid]))
    d = divergence_dG(world, r_grid, n, seed)
    rhs = rt_grid[best].value + rs_g.value + 0.5 * d.value
    sigma = float(np.sqrt(rt_g.std_error ** 2 + rs_g.std_error ** 2
                          + rt_grid[best].std_error ** 2 + (0.5 * d.std_error) ** 2))
    return Theorem1Result(lhs=rt_g.value, rhs=float(rhs), slack=float(rhs - rt_g.value),
                          sigma=sigma, best_r=float(r_grid[best]), divergence=d.value)


# ---------------------------------------------------------------------------
# Closed forms for the disk geometry, used as oracles and for the
# source-risk zero-loss window.
# ---------------------------------------------------------------------------

def circle_overlap_area(d: float, R: float, r: float) -> float:
    """Area of the intersection of circles of radii R and r at center distance d."""
    if d >= R + r:
        return 0.0
    if d <= abs(R - r):
        small = min(R, r)
        return np.pi * small * small
    a = np.arccos(np.clip((d * d + R * R - r * r) / (2 * d * R), -1.0, 1.0))
    b = np.arccos(np.clip((d * d + r * r - R * R) / (2 * d * r), -1.0, 1.0))
    tri = 0.5 * np.sqrt(max(0.0, (-d + r + R) * (d + r - R) * (d - r + R) * (d + r + R)))
    return float(R * R * a + r * r * b - tri)


def disk_norm_cdf(disk: Disk, t: float) -> float:
    """P(||x|| <= t) for x uniform on the disk."""
    if t <= 0:
        return 0.0
    c = disk.center_norm
    if c == 0.0:
        return min(1.0, (t / disk.radius) ** 2)
    return circle_overlap_area(c, t, disk.radius) / (np.pi * disk.radius ** 2)


def closed_form_risk(world: DiskWorld, g: RadiusDetector, domain: str) -> float:
    """Population robust risk via lens areas."""
    out_disk = world.u if domain == "source" else world.q
    miss = 1.0 - disk_norm_cdf(world.p, g.r - world.eps)     # ||x|| + eps > r
    sneak = disk_norm_cdf(out_disk, g.r + world.eps)         # ||x|| - eps <= r
    return 0.5 * (miss + sneak)


def zero_loss_window(world: DiskWorld) -> tuple[float, float]:
    """Radii [lo, hi) whose source risk vanishes on the closed supports:
    every P point stays robustly inside and every U point robustly outside."""
    lo = world.p.center_norm + world.p.radius + world.eps
    hi = world.u.center_norm - world.u.radius - world.eps
    return lo, hi


# ---------------------------------------------------------------------------
# CSV report
# ---------------------------------------------------------------------------

def theory_rows(world: DiskWorld, r_grid, n: int, seed: int) -> list[dict]:
    r_grid = np.asarray(list(r_grid), dtype=np.float64)
    norms_p = _sample_norms(world.p, n, child_rng(seed, 1))
    norms_u = _sample_norms(world.u, n, child_rng(seed, 2))
    norms_q = _sample_norms(world.q, n, child_rng(seed, 3))
    rt_grid = [_risk_from_norms(norms_p, norms_q, r, world.eps, n) for r in r_grid]
    best = int(np.argmin([e.value for e in rt_grid]))
    d = divergence_dG(world, r_grid, n, seed)
    rows = []
    for i, r in enumerate(r_grid):
        rs = _risk_from_norms(norms_p, norms_u, r, world.eps, n)
        rt = rt_grid[i]
        rhs = rt_grid[best].value + rs.value + 0.5 * d.value
        rows.append({"r": float(r), "Rs": rs.value, "Rs_sigma": rs.std_error,
                     "Rt": rt.value, "Rt_sigma": rt.std_error,
                     "lhs": rt.value, "rhs": float(rhs), "slack": float(rhs - rt.value)})
    return rows


def write_theory_csv(rows: list[dict], path) -> None:
    cols = ["r", "Rs", "Rs_sigma", "Rt", "Rt_sigma", "lhs", "rhs", "slack"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(f"{row[c]:.17g}" for c in cols) + "\n")
