from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .transform import RigidTransform

UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OrientedPoint:
    """A surface point with its outward unit normal."""

    position: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        n = np.array(self.normal, dtype=float).reshape(3)
        if not (np.isfinite(p).all() and np.isfinite(n).all()):
            raise ValueError("non-finite oriented point")
        norm = math.sqrt(n @ n)
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"normal must be unit length, got |n| = {norm:.9f}")
        p.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "normal", n)

    def transformed(self, T: RigidTransform) -> "OrientedPoint":
        return OrientedPoint(T.apply(self.position), T.apply_vectors(self.normal))

    def __repr__(self) -> str:
        return f"OrientedPoint(position={self.position.tolist()}, normal={self.normal.tolist()})"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with unit normals, stored as two (N, 3) arrays."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        P = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        N = np.ascontiguousarray(self.normals, dtype=float).reshape(-1, 3)
        if P.shape != N.shape:
            raise ValueError("points and normals differ in shape")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(N))):
            raise ValueError("point cloud contains non-finite values")
        P.setflags(write=False)
        N.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "normals", N)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i) -> OrientedPoint:
        return OrientedPoint(self.points[i], self.normals[i])

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], self.normals[idx])

    def transformed(self, T: RigidTransform) -> "PointCloud":
        return PointCloud(T.apply(self.points), T.apply_vectors(self.normals))

    @classmethod
    def from_oriented(cls, pts) -> "PointCloud":
        pts = list(pts)
        if not pts:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(np.array([p.position for p in pts]), np.array([p.normal for p in pts]))

    def as_list(self) -> list[OrientedPoint]:
        return [self[i] for i in range(len(self))]
