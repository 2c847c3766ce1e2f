"""Parametric three-finger hand: kinematics, link geometry and the description file.

Frame conventions
-----------------
Palm frame: +z is the approach direction (out of the palm toward the object).
Finger root frame (``base_i`` composed with the spread rotation about the root z
axis): +x points toward the palm axis, +z along the palm approach axis.  The
inner link frame is the root rotated by ``inner_rest_angle + theta_inner`` about
root +y, so positive angles close the finger.  The outer link frame sits at the end of the inner link and is rotated by
``outer_rest_angle + coupling * theta_inner`` about its own y axis.

The fingertip circle lies in the finger's xz-plane, centered at
``fingertip_offset`` in the outer link frame.  The outer-joint frame used by
the contact representation is attached at the outer joint with

    x = unit vector from fingertip center to the outer joint
    z = finger-plane normal (outer link +y)
    y = z cross x

then rotated by ``roll_offset`` about its z axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geom import OrientedPoint, RigidTransform, TriangleMesh, load_mesh, rot_y, rot_z
from .geom import box as box_mesh
from .geom.mesh import convex_hull_mesh
from .geom.query import voxel_downsample

FINGERS = (1, 2, 3)
RANGE_TOL = 1e-12
LINK_SAMPLE_SPACING = 0.003
DEFAULT_HAND_FILE = Path(__file__).parent / "data" / "barrett_like.hand"


class HandFileError(ValueError):
    pass


@dataclass(frozen=True)
class JointConfig:
    """Spread joint plus the three inner joints, radians."""

    spread: float
    inner: tuple[float, float, float]

    @classmethod
    def from_array(cls, q) -> "JointConfig":
        q = [float(x) for x in q]
        if len(q) != 4:
            raise ValueError("joint vector has 4 entries: spread, theta1, theta2, theta3")
        return cls(q[0], (q[1], q[2], q[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.spread, *self.inner])

    def finger(self, i: int) -> float:
        return self.inner[i - 1]

    def with_finger(self, i: int, value: float) -> "JointConfig":
        inner = list(self.inner)
        inner[i - 1] = float(value)
        return JointConfig(self.spread, tuple(inner))


@dataclass(frozen=True)
class HandPose:
    transform: RigidTransform = field(default_factory=RigidTransform.identity)


@dataclass(frozen=True, eq=False)
class HandModel:
    base_transforms: tuple[RigidTransform, RigidTransform, RigidTransform]
    spread_signs: tuple[int, int, int]
    inner_length: float
    outer_length: float
    coupling: float
    outer_rest_angle: float
    inner_rest_angle: float
    fingertip_radius: float
    fingertip_offset: np.ndarray
    roll_offset: float
    spread_range: tuple[float, float]
    inner_range: tuple[float, float]
    nominal_contact_angle: float
    palm_mesh: TriangleMesh
    inner_mesh: TriangleMesh
    outer_mesh: TriangleMesh
    name: str = "hand"

    def __post_init__(self):
        w = np.array(self.fingertip_offset, dtype=float).reshape(3)
        w.setflags(write=False)
        object.__setattr__(self, "fingertip_offset", w)
        if not self.fingertip_radius > 0:
            raise HandFileError("fingertip_radius must be positive")
        if not np.linalg.norm(w) > 0:
            raise HandFileError("fingertip_offset must be nonzero")
        if abs(w[1]) > 1e-12:
            raise HandFileError("fingertip_offset must lie in the finger plane (y = 0)")
        if not 0 < self.coupling <= 1:
            raise HandFileError("coupling must be in (0, 1]")
        for name, (lo, hi) in (("spread_range", self.spread_range), ("inner_range", self.inner_range)):
            if not lo < hi:
                raise HandFileError(f"{name} is empty")
        if len(self.base_transforms) != 3 or len(self.spread_signs) != 3:
            raise HandFileError("three fingers required")

    # -- derived constants ----------------------------------------------------

    @cached_property
    def fingertip_vector_length(self) -> float:
        return float(np.linalg.norm(self.fingertip_offset))

    @property
    def standoff(self) -> float:
        return self.inner_length + self.outer_length

    @cached_property
    def outer_joint_local(self) -> np.ndarray:
        """Rotation from the outer link frame to the outer-joint frame."""
        a = -self.fingertip_offset / self.fingertip_vector_length
        c = np.array([0.0, 1.0, 0.0])
        b = np.cross(c, a)
        return np.column_stack([a, b, c]) @ rot_z(self.roll_offset)

    @cached_property
    def outer_joint_offset(self) -> RigidTransform:
        return RigidTransform.from_rotation(self.outer_joint_local)

    def joint_limits(self, finger_or_spread: int | str) -> tuple[float, float]:
        return self.spread_range if finger_or_spread == "spread" else self.inner_range

    def check_joints(self, q: JointConfig) -> None:
        lo, hi = self.spread_range
        if not (lo - RANGE_TOL <= q.spread <= hi + RANGE_TOL):
            raise ValueError(f"spread {q.spread} outside [{lo}, {hi}]")
        lo, hi = self.inner_range
        for i, th in enumerate(q.inner, start=1):
            if not (lo - RANGE_TOL <= th <= hi + RANGE_TOL):
                raise ValueError(f"theta{i} = {th} outside [{lo}, {hi}]")

    # -- kinematics -------------------------------------------------------------

    def finger_root(self, finger: int, spread: float) -> RigidTransform:
        _check_finger(finger)
        s = self.spread_signs[finger - 1]
        base = self.base_transforms[finger - 1]
        if s == 0:
            return base
        return base @ RigidTransform._trusted(rot_z(s * spread), np.zeros(3))

    def inner_link_frame(self, finger: int, spread: float, theta: float) -> RigidTransform:
        return self.finger_root(finger, spread) @ RigidTransform._trusted(
            rot_y(self.inner_rest_angle + theta), np.zeros(3))

    def outer_link_frame(self, finger: int, spread: float, theta: float) -> RigidTransform:
        # both joints turn about the same y axis, so their angles add
        a = self.inner_rest_angle + theta
        b = a + self.outer_rest_angle + self.coupling * theta
        root = self.finger_root(finger, spread)
        R = root.rotation
        t = root.translation + self.inner_length * (R @ np.array([math.sin(a), 0.0, math.cos(a)]))
        return RigidTransform._trusted(R @ rot_y(b), t)

    def outer_joint_to_base(self, theta_ms: float, theta_m: float, finger: int) -> RigidTransform:
        """Palm-base to outer-joint frame for the given main joints."""
        Q = self.outer_link_frame(finger, theta_ms, theta_m)
        return Q @ self.outer_joint_offset

    def nominal_contact_normal_local(self) -> np.ndarray:
        """Outward object normal at the nominal fingertip contact, outer link frame."""
        phi = self.nominal_contact_angle
        w_hat = self.fingertip_offset / self.fingertip_vector_length
        # contact direction from the fingertip center, rotated from the tip axis toward +x
        d = rot_y(phi) @ w_hat
        return -d

    @cached_property
    def link_samples(self) -> dict[str, np.ndarray]:
        """Dense surface samples of each link mesh in its own frame (collision checks)."""
        def samples(m):
            pts = [p.position for p in voxel_downsample(m, LINK_SAMPLE_SPACING)]
            return np.unique(np.vstack([m.vertices, *pts]), axis=0)

        return {name: samples(m) for name, m in (("palm", self.palm_mesh), ("inner", self.inner_mesh),
                                ("outer", self.outer_mesh))}


def _check_finger(finger: int) -> None:
    if finger not in FINGERS:
        raise ValueError(f"invalid finger id {finger!r}; expected one of {FINGERS}")


@dataclass(frozen=True)
class FingerFK:
    outer_joint: RigidTransform
    fingertip: RigidTransform
    fingertip_center: np.ndarray


def fingertip_frame_from_normal(center, normal) -> RigidTransform:
    # imported lazily: contact_repr depends on this module
    from .contact_repr import fingertip_rotation
    return RigidTransform(fingertip_rotation(normal), center)


def fk_fingertip(hand: HandModel, pose: HandPose | RigidTransform, q: JointConfig,
                 finger: int) -> FingerFK:
    """Outer-joint frame, fingertip frame and fingertip-circle center in world coordinates.

    The fingertip frame is the one the contact representation would build for a
    contact at the hand's nominal contact angle.
    """
    _check_finger(finger)
    hand.check_joints(q)
    P = pose.transform if isinstance(pose, HandPose) else pose
    th = q.finger(finger)
    Q = P @ hand.outer_link_frame(finger, q.spread, th)
    T_oj = Q @ hand.outer_joint_offset
    center = Q.apply(hand.fingertip_offset)
    n = Q.apply_vectors(hand.nominal_contact_normal_local())
    return FingerFK(T_oj, fingertip_frame_from_normal(center, n), center)


def outer_joint_to_base(hand: HandModel, theta_ms: float, theta_m: float, finger: int) -> RigidTransform:
    _check_finger(finger)
    return hand.outer_joint_to_base(theta_ms, theta_m, finger)


def link_frames(hand: HandModel, pose: HandPose | RigidTransform, q: JointConfig) -> list[tuple[str, RigidTransform]]:
    """World frames of every link: palm, then (inner, outer) for fingers 1..3."""
    P = pose.transform if isinstance(pose, HandPose) else pose
    out = [("palm", P)]
    for f in FINGERS:
        th = q.finger(f)
        out.append(("inner", P @ hand.inner_link_frame(f, q.spread, th)))
        out.append(("outer", P @ hand.outer_link_frame(f, q.spread, th)))
    return out


def hand_geometry_at(hand: HandModel, pose: HandPose | RigidTransform, q: JointConfig) -> list[TriangleMesh]:
    hand.check_joints(q)
    meshes = {"palm": hand.palm_mesh, "inner": hand.inner_mesh, "outer": hand.outer_mesh}
    return [meshes[name].transformed(T) for name, T in link_frames(hand, pose, q)]


def hand_sample_points(hand: HandModel, pose, q: JointConfig) -> np.ndarray:
    """Link surface samples in world coordinates (all links stacked)."""
    return np.concatenate([T.apply(hand.link_samples[name]) for name, T in link_frames(hand, pose, q)])


# -- description file -------------------------------------------------------------

def _floats(value: str, n: int | None, key: str) -> list[float]:
    try:
        vals = [float(x) for x in value.split()]
    except ValueError as exc:
        raise HandFileError(f"{key}: expected numbers, got {value!r}") from exc
    if n is not None and len(vals) != n:
        raise HandFileError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def parse_hand_text(text: str, base_dir: Path | None = None) -> HandModel:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HandFileError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v

    def get(key, n=1):
        if key not in kv:
            raise HandFileError(f"missing key {key!r}")
        vals = _floats(kv[key], n, key)
        return vals[0] if n == 1 else vals

    bases, signs = [], []
    for f in FINGERS:
        M = np.array(get(f"finger{f}.base", 16)).reshape(4, 4)
        try:
            bases.append(RigidTransform.from_matrix(M))
        except ValueError as exc:
            raise HandFileError(f"finger{f}.base: {exc}") from exc
        signs.append(int(get(f"finger{f}.spread_sign")))

    def mesh(key, fallback):
        if key in kv:
            path = Path(kv[key])
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return load_mesh(path)
        return fallback

    L1 = get("inner_length")
    L2 = get("outer_length")
    r = get("fingertip_radius")
    w = get("fingertip_offset", 3)
    default_palm, default_inner, default_outer = default_link_meshes(L1, L2, r, w)
    return HandModel(
        base_transforms=tuple(bases),
        spread_signs=tuple(signs),
        inner_length=L1,
        outer_length=L2,
        coupling=get("coupling"),
        outer_rest_angle=get("outer_rest_angle") if "outer_rest_angle" in kv else 0.0,
        inner_rest_angle=get("inner_rest_angle") if "inner_rest_angle" in kv else 0.0,
        fingertip_radius=r,
        fingertip_offset=np.array(w),
        roll_offset=get("roll_offset") if "roll_offset" in kv else 0.0,
        spread_range=tuple(get("spread_range", 2)),
        inner_range=tuple(get("inner_range", 2)),
        nominal_contact_angle=get("nominal_contact_angle") if "nominal_contact_angle" in kv else math.pi / 4,
        palm_mesh=mesh("palm.mesh", default_palm),
        inner_mesh=mesh("inner.mesh", default_inner),
        outer_mesh=mesh("outer.mesh", default_outer),
        name=kv.get("name", "hand"),
    )


def load_hand(path=None) -> HandModel:
    path = Path(path) if path is not None else DEFAULT_HAND_FILE
    try:
        text = path.read_text()
    except OSError as exc:
        raise HandFileError(f"cannot read hand file {path}: {exc}") from exc
    return parse_hand_text(text, base_dir=path.parent)


def default_link_meshes(inner_length, outer_length, radius, offset):
    """Box palm and inner links; the outer link is the convex hull of a shaft and the
    fingertip circle, extruded across the finger width."""
    palm = box_mesh((0.11, 0.12, 0.04), center=(0.0, 0.0, -0.02))
    inner = box_mesh((0.02, 0.025, inner_length), center=(0.0, 0.0, 0.5 * inner_length))
    cx, cz = float(offset[0]), float(offset[2])
    half_shaft = 0.65 * radius
    ang = np.linspace(0.0, 2 * np.pi, 48, endpoint=False)
    profile = [(cx + radius * np.sin(a), cz + radius * np.cos(a)) for a in ang]
    profile += [(-half_shaft, 0.0), (half_shaft, 0.0)]
    pts = [(x, y, z) for x, z in profile for y in (-0.01, 0.01)]
    outer = convex_hull_mesh(pts)
    return palm, inner, outer


def contact_on_circle(hand: HandModel, outer_link: RigidTransform, angle: float) -> OrientedPoint:
    """Point of the fingertip circle at ``angle`` from the tip axis (toward +x), with the
    outward object normal a touching surface would have there."""
    w = hand.fingertip_offset
    d = rot_y(angle) @ (w / np.linalg.norm(w))
    p = outer_link.apply(w + hand.fingertip_radius * d)
    return OrientedPoint(p, outer_link.apply_vectors(-d))
