"""Rigid transforms in SE(3).

A :class:`RigidTransform` maps points from a child frame into its parent frame:
``p_parent = R @ p_child + t``.  Composition follows matrix order, so
``(A @ B).apply(p) == A.apply(B.apply(p))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def cross(a, b) -> np.ndarray:
    """3-vector cross product without np.cross's broadcasting overhead."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def tangent_pair(n, hint=None, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors (t1, t2) spanning the plane normal to unit ``n``, with t1 x t2 = n.

    t1 is ``hint`` projected into the plane when that projection is not
    negligible, which makes the pair turn with (n, hint) under rotations.
    Otherwise the world axis least aligned with n is projected instead.
    """
    n = unit(n)
    if hint is not None:
        h = np.asarray(hint, dtype=float)
        t = h - np.dot(h, n) * n
        nt = math.sqrt(float(np.dot(t, t)))
        if nt > tol * max(1.0, float(np.linalg.norm(h))):
            t1 = t / nt
            return t1, cross(n, t1)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    t1 = unit(cross(e, n))
    return t1, cross(n, t1)


def orthonormality_error(R: np.ndarray) -> tuple[float, float]:
    """Return (max |R^T R - I|, |det R - 1|)."""
    R = np.asarray(R, dtype=float)
    return float(np.abs(R.T @ R - np.eye(3)).max()), float(abs(np.linalg.det(R) - 1.0))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad shapes: rotation {R.shape}, translation {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite transform")
        ortho, det = orthonormality_error(R)
        if ortho > ORTHO_TOL or det > ORTHO_TOL:
            raise ValueError(f"rotation not in SO(3): |RtR-I|={ortho:.3g}, |det-1|={det:.3g}")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _trusted(cls, R: np.ndarray, t: np.ndarray) -> "RigidTransform":
        # products and inverses of valid transforms; skips re-validation
        obj = object.__new__(cls)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(obj, "rotation", R)
        object.__setattr__(obj, "translation", t)
        return obj

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {M.shape}")
        if np.abs(M[3] - [0.0, 0.0, 0.0, 1.0]).max() > 1e-12:
            raise ValueError("last row of a rigid transform must be [0, 0, 0, 1]")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_rotation(cls, R) -> "RigidTransform":
        return cls(R, np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T.copy()
        return RigidTransform._trusted(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return RigidTransform._trusted(self.rotation @ other.rotation,
                                      self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(np.abs(self.as_matrix() - other.as_matrix()).max() <= atol)

    def distance(self, other: "RigidTransform") -> float:
        """Max-abs elementwise difference of the 4x4 matrices."""
        return float(np.abs(self.as_matrix() - other.as_matrix()).max())

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world transform with +z toward ``target`` and +y roughly opposite ``up``.

    This is the usual pinhole convention (x right, y down, z forward).
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)
