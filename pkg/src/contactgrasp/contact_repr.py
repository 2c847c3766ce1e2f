"""Contact-anchored grasp representation.

A grasp of the three-finger hand is anchored at one finger's contact with the
object.  From the contact point and its outward normal we place the fingertip
circle center, attach a fingertip frame, swing the fixed-length fingertip vector
to the outer joint using the finger projections (x, y), and recover the palm pose
by undoing the finger's kinematic chain.  What remains of the grasp is the
6-vector (x, y, spread, anchor inner joint, two supporting inner joints).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geom import OrientedPoint, RigidTransform, rot_z
from .geom.transform import cross
from .hand import FINGERS, HandModel, HandPose, JointConfig

log = logging.getLogger(__name__)

DEGENERATE_V1 = 1.0 - 1e-8
PROJ_TOL = 1e-12
CONSISTENCY_TOL = 1e-6


class RepresentationError(ValueError):
    """The grasp cannot be expressed in the contact-anchored representation."""


@dataclass(frozen=True)
class CompactGrasp:
    finger: int
    x: float
    y: float
    theta_ms: float
    theta_m: float
    theta_s1: float
    theta_s2: float

    def __post_init__(self):
        if self.finger not in FINGERS:
            raise ValueError(f"invalid finger id {self.finger!r}")
        if self.x * self.x + self.y * self.y > 1.0 + PROJ_TOL:
            raise ValueError(f"finger projection outside the unit disk: x={self.x}, y={self.y}")

    @property
    def z(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.x * self.x - self.y * self.y))

    @property
    def supporting_fingers(self) -> tuple[int, int]:
        a, b = (f for f in FINGERS if f != self.finger)
        return a, b

    def joints(self) -> JointConfig:
        inner = [0.0, 0.0, 0.0]
        inner[self.finger - 1] = self.theta_m
        s1, s2 = self.supporting_fingers
        inner[s1 - 1] = self.theta_s1
        inner[s2 - 1] = self.theta_s2
        return JointConfig(self.theta_ms, tuple(inner))

    def check(self, hand: HandModel) -> None:
        hand.check_joints(self.joints())

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta_ms, self.theta_m, self.theta_s1, self.theta_s2])


@dataclass(frozen=True)
class FullGrasp:
    pose: HandPose
    joints: JointConfig


def fingertip_center(contact: OrientedPoint, r: float) -> np.ndarray:
    return contact.position + r * contact.normal


def fingertip_rotation(normal) -> np.ndarray:
    """Fingertip frame rotation whose z axis is the contact normal.

    The second column is e_x cross v = [0, -v3, v2] normalized and the first is the
    second crossed with v.  Near v = (+-1, 0, 0) that column vanishes and
    [-v2, v1, 0] is used instead.
    """
    n0, n1, n2 = (float(c) for c in normal)
    k = 1.0 / math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
    v0, v1, v2 = n0 * k, n1 * k, n2 * k
    if abs(v0) > DEGENERATE_V1:
        k = 1.0 / math.hypot(v0, v1)
        u0, u1, u2 = -v1 * k, v0 * k, 0.0
    else:
        k = 1.0 / math.hypot(v1, v2)
        u0, u1, u2 = 0.0, -v2 * k, v1 * k
    # u and v are orthonormal, so u cross v is a unit vector completing a right-handed frame
    w0, w1, w2 = u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0
    k = 1.0 / math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    return np.array([[w0 * k, u0, v0], [w1 * k, u1, v1], [w2 * k, u2, v2]])


def fingertip_frame(contact: OrientedPoint, r: float) -> RigidTransform:
    return RigidTransform._trusted(fingertip_rotation(contact.normal), fingertip_center(contact, r))


def outer_joint_rotation(x: float, y: float, z: float, fingertip_rot: np.ndarray, roll: float) -> np.ndarray:
    """Outer-joint frame for finger projection (x, y, z) in the fingertip frame.

    Columns are the world direction a = R_ft (x, y, z), c = a cross v_z and
    b = c cross a, then rolled by ``roll`` about c.  The cross product is taken in
    the fingertip frame, (x, y, z) cross e_z = (y, -x, 0), which stays accurate when
    a nearly coincides with the normal.
    """
    a = fingertip_rot @ np.array([x, y, z])
    a /= math.sqrt(a @ a)
    r = math.hypot(x, y)
    if r < 1e-12:
        # fingertip vector along the normal: the roll is undefined, take the frame's y axis
        c = fingertip_rot[:, 1] - (fingertip_rot[:, 1] @ a) * a
        c /= math.sqrt(c @ c)
    else:
        c = fingertip_rot @ np.array([y / r, -x / r, 0.0])
    R = np.array([a, cross(c, a), c]).T
    return R @ rot_z(roll) if roll else R


def outer_joint_frame(contact: OrientedPoint, x: float, y: float, hand: HandModel) -> RigidTransform:
    s = x * x + y * y
    if s > 1.0 + PROJ_TOL:
        raise ValueError(f"finger projection outside the unit disk: x={x}, y={y}")
    z = math.sqrt(max(0.0, 1.0 - s))
    R_ft = fingertip_rotation(contact.normal)
    t_ft = fingertip_center(contact, hand.fingertip_radius)
    t_oj = t_ft + hand.fingertip_vector_length * (R_ft @ np.array([x, y, z]))
    return RigidTransform._trusted(outer_joint_rotation(x, y, z, R_ft, hand.roll_offset), t_oj)


def decode(contact: OrientedPoint, g: CompactGrasp, hand: HandModel) -> FullGrasp:
    """Full grasp (palm pose + joints) from an anchor contact and a compact grasp."""
    joints = g.joints()
    hand.check_joints(joints)
    T_oj = outer_joint_frame(contact, g.x, g.y, hand)
    T = hand.outer_joint_to_base(g.theta_ms, g.theta_m, g.finger)
    return FullGrasp(HandPose(T_oj @ T.inverse()), joints)


def encode(full: FullGrasp, finger: int, hand: HandModel, normal=None) -> tuple[OrientedPoint, CompactGrasp]:
    """Compact representation of a full grasp, anchored at ``finger``.

    The hand pose fixes the fingertip circle but not where on it the object is
    touched.  ``normal`` is the object's outward normal at the touch point; it is
    projected onto the finger plane.  Without it the hand's nominal contact angle
    is used.

    Raises RepresentationError when the fingertip vector points below the
    fingertip frame's xy-plane or the grasp otherwise cannot be reproduced.
    """
    q = full.joints
    hand.check_joints(q)
    P = full.pose.transform
    theta = q.finger(finger)
    Q = P @ hand.outer_link_frame(finger, q.spread, theta)
    T_oj = Q @ hand.outer_joint_offset
    center = Q.apply(hand.fingertip_offset)
    plane_normal = Q.rotation[:, 1]
    if normal is None:
        n = Q.apply_vectors(hand.nominal_contact_normal_local())
    else:
        n = np.asarray(normal, dtype=float)
        n = n - np.dot(n, plane_normal) * plane_normal
        nn = math.sqrt(n @ n)
        if nn < 1e-9:
            raise RepresentationError("contact normal is perpendicular to the finger plane")
        n = n / nn
    contact = OrientedPoint(center - hand.fingertip_radius * n, n)
    a = (T_oj.translation - center) / hand.fingertip_vector_length
    R_ft = fingertip_rotation(n)
    x, y, z = (float(v) for v in R_ft.T @ a)
    if z < -PROJ_TOL:
        raise RepresentationError(f"fingertip vector below the fingertip frame (z = {z:.3g})")
    s1, s2 = (f for f in FINGERS if f != finger)
    g = CompactGrasp(finger, x, y, q.spread, theta, q.finger(s1), q.finger(s2))
    # the direction alone does not fix the outer-joint frame's roll about it, so
    # rebuild the frame the way decode will and compare
    z = max(z, 0.0)
    R = outer_joint_rotation(x, y, z, R_ft, hand.roll_offset)
    t = center + hand.fingertip_vector_length * (R_ft @ np.array([x, y, z]))
    err = max(float(np.abs(R - T_oj.rotation).max()), float(np.abs(t - T_oj.translation).max()))
    if err > CONSISTENCY_TOL:
        raise RepresentationError(f"contact on the back of the fingertip (frame mismatch {err:.3g})")
    return contact, g
