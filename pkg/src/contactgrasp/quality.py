"""Wrench-space grasp quality (Ferrari-Canny epsilon metric).

Wrenches are 6-vectors ``[f, lambda * (p - o) x f]`` stacked as rows of an
(M, 6) array.  ``epsilon_quality`` is the radius of the largest origin-centered
ball inside their convex hull.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import seeding
from .geom import OrientedPoint
from .geom.transform import tangent_pair

log = logging.getLogger(__name__)

FORCE_CLOSURE_TOL = 1e-9
FALLBACK_DIRS = 100_000
LEVER_TOL = 1e-6


@dataclass(frozen=True)
class FrictionModel:
    mu: float = 0.5
    edges: int = 8
    torque_scale: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("friction coefficient must be non-negative")
        if self.edges < 3:
            raise ValueError("friction cone needs at least 3 edges")
        if not self.torque_scale > 0:
            raise ValueError("torque scale must be positive")


def contact_wrenches(contact: OrientedPoint, model: FrictionModel, origin, hint=None) -> np.ndarray:
    """Cone-edge wrenches of one frictional point contact, shape (m, 6).

    Forces are unit vectors on the boundary of the friction cone around -n (pushing
    into the surface); torques are taken about ``origin`` and scaled by the model's
    torque scale.  The first edge leans along the lever arm's tangential part, so
    the discretized cone turns with the contact under rotations about the origin.
    When the lever arm is along the normal, ``hint`` takes its place.
    """
    n = contact.normal
    arm = contact.position - np.asarray(origin, dtype=float)
    ref = arm
    if hint is not None and _tangential(arm, n) <= LEVER_TOL * max(1.0, float(np.linalg.norm(arm))):
        ref = hint
    t1, t2 = tangent_pair(n, ref, LEVER_TOL)
    ang = 2.0 * np.pi * np.arange(model.edges) / model.edges
    f = -n[None, :] + model.mu * (np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2)
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    tau = model.torque_scale * np.cross(np.broadcast_to(arm, f.shape), f)
    return np.hstack([f, tau])


def _tangential(v, n) -> float:
    return float(np.linalg.norm(v - np.dot(v, n) * n))


def grasp_wrenches(contacts, model: FrictionModel, origin) -> np.ndarray:
    if not contacts:
        return np.zeros((0, 6))
    # offsets from the contact centroid break ties for contacts whose normal passes
    # through the origin
    mid = np.mean([c.position for c in contacts], axis=0)
    return np.vstack([contact_wrenches(c, model, origin, c.position - mid) for c in contacts])


@dataclass(frozen=True)
class QualityResult:
    epsilon: float
    exact: bool


def epsilon_quality_detail(wrenches) -> QualityResult:
    """Exact epsilon by facet enumeration of the 6-D hull.

    Falls back to the sampling upper bound when Qhull fails on a full-rank set;
    ``exact`` reports which route produced the value.
    """
    W = np.asarray(wrenches, dtype=float).reshape(-1, 6)
    if len(W) < 7:
        return QualityResult(0.0, True)
    if np.linalg.matrix_rank(W[1:] - W[0], tol=1e-10 * max(1.0, np.abs(W).max())) < 6:
        return QualityResult(0.0, True)
    try:
        hull = ConvexHull(W)
    except QhullError:
        log.warning("6-D hull failed; using the sampling bound (%d directions)", FALLBACK_DIRS)
        return QualityResult(epsilon_sampling_oracle(W, FALLBACK_DIRS), False)
    # facets satisfy normal . x + offset <= 0 inside, with unit normals
    depth = -hull.equations[:, -1]
    eps = float(depth.min())
    return QualityResult(max(eps, 0.0), True)


def epsilon_quality(wrenches) -> float:
    return epsilon_quality_detail(wrenches).epsilon


def force_closure(wrenches) -> bool:
    return epsilon_quality(wrenches) > FORCE_CLOSURE_TOL


def epsilon_sampling_oracle(wrenches, n_dirs: int, seed: int = 0, batch: int = 65536) -> float:
    """Upper bound on epsilon: min over random unit directions u of max_i w_i . u,
    clamped at zero."""
    if n_dirs < 1:
        raise ValueError("n_dirs must be positive")
    W = np.asarray(wrenches, dtype=float).reshape(-1, 6)
    rng = seeding.stream(seed, seeding.ORACLE)
    best = np.inf
    left = n_dirs
    while left > 0:
        k = min(batch, left)
        U = rng.standard_normal((k, 6))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        best = min(best, float((U @ W.T).max(axis=1).min()))
        left -= k
    return max(best, 0.0)


def torque_normalization(mesh) -> tuple[np.ndarray, float]:
    """Torque origin (vertex centroid) and scale 1 / (max vertex distance from it)."""
    o = mesh.vertices.mean(axis=0)
    rmax = float(np.linalg.norm(mesh.vertices - o, axis=1).max())
    return o, 1.0 / rmax if rmax > 0 else 1.0
