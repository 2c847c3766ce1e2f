import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrasp.contact_repr import (CompactGrasp, FullGrasp, RepresentationError, decode, encode,
                                       fingertip_frame, fingertip_rotation)
from contactgrasp.geom import OrientedPoint, RigidTransform
from contactgrasp.hand import HandPose, JointConfig, contact_on_circle, fk_fingertip, load_hand

from conftest import random_rotation

HAND = load_hand()
LO, HI = HAND.inner_range
SLO, SHI = HAND.spread_range

unit3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3)
# the representation is singular where the fingertip vector meets the normal (r = 0,
# roll undefined) and ill-conditioned at the rim (z = 0); stay clear of both bands
radius = st.one_of(st.just(0.0), st.floats(1e-6, 1 - 1e-9))
disk = st.tuples(radius, st.floats(0, 2 * math.pi))


def compact(finger, r, phi, ms, m, s1, s2):
    return CompactGrasp(finger, r * math.cos(phi), r * math.sin(phi), ms, m, s1, s2)


# -- fingertip frame ---------------------------------------------------------------------------

def test_fingertip_rotation_columns():
    v = np.array([0.2, -0.4, 0.8])
    v /= np.linalg.norm(v)
    R = fingertip_rotation(v)
    # second column e_x cross v, first column second cross v
    u = np.array([0.0, -v[2], v[1]]) / math.hypot(v[1], v[2])
    assert np.allclose(R[:, 2], v)
    assert np.allclose(R[:, 1], u)
    assert np.allclose(R[:, 0], np.cross(u, v))
    assert np.linalg.det(R) == pytest.approx(1.0)


@pytest.mark.parametrize("v", [[1, 0, 0], [-1, 0, 0], [1, 1e-9, 0], [1, 0, 1e-9], [0.9999999, 4e-4, 1e-5]])
def test_fingertip_rotation_near_x_axis(v):
    v = np.array(v, dtype=float)
    v /= np.linalg.norm(v)
    R = fingertip_rotation(v)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12
    assert np.allclose(R[:, 2], v)


@settings(max_examples=300, deadline=None)
@given(unit3)
def test_fingertip_frame_is_a_rotation(v):
    c = OrientedPoint([0.1, 0.2, 0.3], np.array(v) / np.linalg.norm(v))
    T = fingertip_frame(c, 0.012)
    assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() < 1e-12
    assert np.allclose(T.translation, c.position + 0.012 * c.normal)


# -- decode / encode -----------------------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.sampled_from([1, 2, 3]), unit3, st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3), disk,
       st.floats(SLO, SHI), st.floats(LO, HI), st.floats(LO, HI), st.floats(LO, HI))
def test_round_trip(finger, n, p, xy, ms, m, s1, s2):
    c = OrientedPoint(p, np.array(n) / np.linalg.norm(n))
    g = compact(finger, *xy, ms, m, s1, s2)
    full = decode(c, g, HAND)
    c2, g2 = encode(full, finger, HAND, normal=c.normal)
    assert abs(g2.x - g.x) <= 1e-9 and abs(g2.y - g.y) <= 1e-9
    assert np.array_equal(g2.as_array()[2:], g.as_array()[2:])
    assert np.allclose(c2.position, c.position, atol=1e-9)
    assert decode(c2, g2, HAND).pose.transform.distance(full.pose.transform) <= 1e-9


def test_decoded_hand_touches_the_contact():
    # oracle: forward kinematics of the decoded grasp puts the anchor fingertip circle
    # center at contact + r n, with the normal in the finger plane
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.standard_normal(3)
        c = OrientedPoint(rng.uniform(-1, 1, 3), n / np.linalg.norm(n))
        f = int(rng.integers(1, 4))
        g = compact(f, math.sqrt(rng.uniform()), rng.uniform(0, 2 * math.pi), rng.uniform(SLO, SHI),
                    *rng.uniform(LO, HI, 3))
        full = decode(c, g, HAND)
        fk = fk_fingertip(HAND, full.pose, full.joints, f)
        assert np.allclose(fk.fingertip_center, c.position + HAND.fingertip_radius * c.normal, atol=1e-12)
        Q = full.pose.transform @ HAND.outer_link_frame(f, full.joints.spread, full.joints.finger(f))
        assert abs(Q.rotation[:, 1] @ c.normal) < 1e-9
        # distance from the fingertip center to the outer joint is the fingertip vector length
        assert np.linalg.norm(fk.outer_joint.translation - fk.fingertip_center) == pytest.approx(
            HAND.fingertip_vector_length)


def test_every_anchor_describes_the_same_grasp():
    rng = np.random.default_rng(2)
    P = HandPose(RigidTransform(random_rotation(rng), [0.0, 0.1, 0.2]))
    q = JointConfig(0.6, (0.9, 1.0, 1.1))
    full = FullGrasp(P, q)
    for f in (1, 2, 3):
        c, g = encode(full, f, HAND)
        assert g.finger == f and g.theta_m == q.finger(f) and g.theta_ms == q.spread
        assert g.supporting_fingers == tuple(k for k in (1, 2, 3) if k != f)
        back = decode(c, g, HAND)
        assert back.pose.transform.distance(P.transform) < 1e-12
        assert back.joints == q


def test_nominal_contact_lies_on_the_circle():
    q = JointConfig(0.3, (0.8, 0.8, 0.8))
    full = FullGrasp(HandPose(), q)
    for f in (1, 2, 3):
        c, _ = encode(full, f, HAND)
        Q = HAND.outer_link_frame(f, q.spread, q.finger(f))
        ref = contact_on_circle(HAND, Q, HAND.nominal_contact_angle)
        assert np.allclose(c.position, ref.position) and np.allclose(c.normal, ref.normal)


def test_contact_behind_the_fingertip_is_rejected():
    q = JointConfig(0.3, (0.8, 0.8, 0.8))
    full = FullGrasp(HandPose(), q)
    fk = fk_fingertip(HAND, HandPose(), q, 1)
    toward_joint = fk.outer_joint.translation - fk.fingertip_center
    with pytest.raises(RepresentationError, match="below"):
        encode(full, 1, HAND, normal=-toward_joint / np.linalg.norm(toward_joint))
    Q = HAND.outer_link_frame(1, q.spread, q.finger(1))
    with pytest.raises(RepresentationError, match="perpendicular"):
        encode(full, 1, HAND, normal=Q.rotation[:, 1])


def test_compact_grasp_validation():
    with pytest.raises(ValueError):
        CompactGrasp(4, 0, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        CompactGrasp(1, 0.8, 0.8, 0, 0, 0, 0)
    g = CompactGrasp(2, 0.6, 0.0, 0.1, 0.2, 0.3, 0.4)
    assert g.z == pytest.approx(0.8)
    assert g.joints() == JointConfig(0.1, (0.3, 0.2, 0.4))
    with pytest.raises(ValueError):
        decode(OrientedPoint([0, 0, 0], [0, 0, 1]), CompactGrasp(1, 0, 0, 0, 5.0, 0, 0), HAND)
