"""Per-point training targets and reference losses.

Joint angles are encoded as a bin index plus a residual measured from the bin
center in units of the bin width, so residuals fall in [-0.5, 0.5).  The loss
functions are plain numpy evaluators meant for checking a training
implementation against, not for training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import PointCloud

NO_FINGER = 0
NO_BIN = 0xFFFF
JOINT_NAMES = ("m", "ms", "s1", "s2")
EDGE_TOL = 1e-12


@dataclass(frozen=True)
class BinSpec:
    lo: float
    hi: float
    n_bins: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty bin range [{self.lo}, {self.hi}]")
        if self.n_bins < 1:
            raise ValueError("n_bins must be at least 1")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins


def default_specs(inner_range=(0.0, 7 * math.pi / 9), spread_range=(0.0, math.pi)) -> dict[str, BinSpec]:
    """Main joint 12 bins over its range, spread 12 bins, supporting joints 8 bins."""
    return {"m": BinSpec(*inner_range, 12), "ms": BinSpec(*spread_range, 12),
            "s1": BinSpec(*inner_range, 8), "s2": BinSpec(*inner_range, 8)}


def encode_joint(theta: float, spec: BinSpec) -> tuple[int, float]:
    """(bin, residual) for an angle in [lo, hi).

    An angle at ``hi`` is accepted as the top of the last bin only when it is
    within a rounding error of it; anything else outside the range is an error.
    """
    phi = spec.width
    off = theta - spec.lo
    if not (0.0 <= off < spec.hi - spec.lo):
        if not math.isclose(theta, spec.hi, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"angle {theta} outside [{spec.lo}, {spec.hi})")
        off = math.nextafter(spec.hi - spec.lo, 0.0)
    b = min(int(math.floor(off / phi)), spec.n_bins - 1)
    res = (off - (b * phi + 0.5 * phi)) / phi
    # floor can land one bin high when off / phi rounds up to an integer
    if res < -0.5:
        b -= 1
        res = (off - (b * phi + 0.5 * phi)) / phi
    # an angle within rounding of an interior edge belongs to the bin above it, so
    # residuals stay clear of 0.5 even after rounding to float32
    if res > 0.5 - EDGE_TOL and b < spec.n_bins - 1:
        b += 1
        res = max((off - (b * phi + 0.5 * phi)) / phi, -0.5)
    return b, min(res, math.nextafter(0.5, 0.0))


def decode_joint(bin_index: int, res: float, spec: BinSpec) -> float:
    if not 0 <= bin_index < spec.n_bins:
        raise ValueError(f"bin {bin_index} outside [0, {spec.n_bins})")
    if not -0.5 <= res <= 0.5:
        raise ValueError(f"residual {res} outside [-0.5, 0.5]")
    phi = spec.width
    return spec.lo + bin_index * phi + 0.5 * phi + res * phi


@dataclass(frozen=True, eq=False)
class PointTargets:
    """Targets for every point of one cloud.

    Non-graspable points carry finger 0, NaN projections and residuals, and bin
    0xFFFF.  ``bins``/``res`` columns follow JOINT_NAMES.
    """

    graspable: np.ndarray  # (n,) uint8
    finger: np.ndarray  # (n,) uint8
    xy: np.ndarray  # (n, 2)
    bins: np.ndarray  # (n, 4) uint16
    res: np.ndarray  # (n, 4)

    def __len__(self) -> int:
        return len(self.graspable)

    @classmethod
    def empty(cls, n: int) -> "PointTargets":
        return cls(np.zeros(n, np.uint8), np.full(n, NO_FINGER, np.uint8), np.full((n, 2), np.nan),
                   np.full((n, 4), NO_BIN, np.uint16), np.full((n, 4), np.nan))


def label_points(cloud: PointCloud, annotations, radius: float = 0.005,
                 specs: dict[str, BinSpec] | None = None, max_angle_deg: float = 30.0) -> PointTargets:
    """Graspable / finger / projection / joint targets for each cloud point.

    A point is graspable when some annotation contact lies within ``radius`` and
    the point normal is within ``max_angle_deg`` of that contact's normal.  The
    nearest such contact wins; exact distance ties go to the earlier annotation,
    then the lower finger id.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    specs = specs or default_specs()
    n = len(cloud)
    out = PointTargets.empty(n)
    rows = []
    for a in annotations:
        q = a.joints
        for f, (c, g) in enumerate(zip(a.contacts, a.compact), start=1):
            s1, s2 = g.supporting_fingers
            angles = (q.finger(f), q.spread, q.finger(s1), q.finger(s2))
            enc = [encode_joint(th, specs[k]) for th, k in zip(angles, JOINT_NAMES)]
            rows.append((c.position, c.normal, f, g.x, g.y, enc))
    if not rows or n == 0:
        return out
    cpos = np.array([r[0] for r in rows])
    cnrm = np.array([r[1] for r in rows])
    cos_gate = math.cos(math.radians(max_angle_deg))
    tree = cKDTree(cpos)
    best_d = np.full(n, np.inf)
    best_j = np.full(n, -1)
    for i, cand in enumerate(tree.query_ball_point(cloud.points, radius)):
        if not cand:
            continue
        cand = np.sort(np.asarray(cand))
        ok = cnrm[cand] @ cloud.normals[i] >= cos_gate
        cand = cand[ok]
        if len(cand) == 0:
            continue
        d = np.linalg.norm(cpos[cand] - cloud.points[i], axis=1)
        k = int(np.argmin(d))  # first minimum: lowest contact row on ties
        if d[k] <= radius:
            best_d[i], best_j[i] = d[k], cand[k]
    for i in np.nonzero(best_j >= 0)[0]:
        _, _, f, x, y, enc = rows[best_j[i]]
        out.graspable[i] = 1
        out.finger[i] = f
        out.xy[i] = (x, y)
        out.bins[i] = [b for b, _ in enc]
        out.res[i] = [r for _, r in enc]
    return out


def label_points_bruteforce(cloud: PointCloud, annotations, radius: float = 0.005,
                            max_angle_deg: float = 30.0) -> np.ndarray:
    """Graspable mask by an all-pairs check; a slow reference for ``label_points``."""
    cpos = np.array([c.position for a in annotations for c in a.contacts]).reshape(-1, 3)
    cnrm = np.array([c.normal for a in annotations for c in a.contacts]).reshape(-1, 3)
    if len(cpos) == 0:
        return np.zeros(len(cloud), bool)
    d = np.linalg.norm(cloud.points[:, None, :] - cpos[None, :, :], axis=2)
    agree = cloud.normals @ cnrm.T >= math.cos(math.radians(max_angle_deg))
    return np.any((d <= radius) & agree, axis=1)


# -- losses ------------------------------------------------------------------------------

def cross_entropy(probs, target) -> float:
    """Mean negative log-likelihood of integer targets under row-stochastic ``probs``."""
    P = np.asarray(probs, dtype=float)
    t = np.asarray(target, dtype=int)
    if P.ndim != 2 or t.shape != (P.shape[0],):
        raise ValueError(f"shape mismatch: probs {P.shape}, target {t.shape}")
    if len(t) == 0:
        return 0.0
    if np.abs(P.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("class probabilities must sum to 1")
    p = P[np.arange(len(t)), t]
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p)))


def smooth_l1(err) -> np.ndarray:
    """Huber-style smooth L1 with its transition at |e| = 1."""
    a = np.abs(np.asarray(err, dtype=float))
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 5.0
    gamma: float = 5.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0


def joint_loss(bin_probs, res_pred, bin_target, res_target) -> float:
    """Bin cross-entropy plus mean smooth-L1 residual error."""
    res_pred = np.asarray(res_pred, dtype=float)
    res_target = np.asarray(res_target, dtype=float)
    if res_pred.shape != res_target.shape:
        raise ValueError(f"shape mismatch: residuals {res_pred.shape} vs {res_target.shape}")
    if res_pred.size == 0:
        return 0.0
    return cross_entropy(bin_probs, bin_target) + float(np.mean(smooth_l1(res_pred - res_target)))


def loss_suite(pred: dict, target: dict, weights: LossWeights = LossWeights()) -> dict[str, float]:
    """All component losses and the weighted total.

    Every array covers the same n points.  ``pred`` holds ``grasp_probs`` (n, 2),
    ``xy`` (n, 2) and ``{name}_probs`` (n, bins) / ``{name}_res`` (n,) for each
    joint in JOINT_NAMES.  ``target`` holds ``graspable`` (n,), the contact
    indicator ``contact`` (n,), ``xy`` (n, 2) and ``{name}_bin`` / ``{name}_res``.
    The projection loss is the mean Euclidean error and the joint losses the mean
    per-point loss, both over contact points only.
    """
    L = {"gp": cross_entropy(pred["grasp_probs"], target["graspable"])}
    delta = np.asarray(target["contact"]).astype(bool)
    xy_p = np.asarray(pred["xy"], dtype=float)
    xy_t = np.asarray(target["xy"], dtype=float)
    if xy_p.shape != xy_t.shape or xy_p.shape[:1] != delta.shape:
        raise ValueError(f"shape mismatch: xy {xy_p.shape} vs {xy_t.shape}, contact {delta.shape}")
    L["fp"] = float(np.mean(np.linalg.norm(xy_p[delta] - xy_t[delta], axis=1))) if delta.any() else 0.0

    def jl(name):
        probs = np.asarray(pred[f"{name}_probs"], dtype=float)
        if probs.shape[:1] != delta.shape:
            raise ValueError(f"shape mismatch: {name}_probs {probs.shape} vs contact {delta.shape}")
        if not delta.any():
            return 0.0
        return joint_loss(probs[delta], np.asarray(pred[f"{name}_res"])[delta],
                          np.asarray(target[f"{name}_bin"])[delta], np.asarray(target[f"{name}_res"])[delta])

    L["m"] = jl("m")
    L["ms"] = jl("ms")
    L["s"] = jl("s1") + jl("s2")
    w = weights
    L["total"] = (w.alpha * L["gp"] + w.beta * L["fp"]
                  + w.gamma * (w.gamma1 * L["m"] + w.gamma2 * L["ms"] + w.gamma3 * L["s"]))
    return {f"L_{k}": v for k, v in L.items()}
