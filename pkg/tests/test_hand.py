import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrasp.geom import RigidTransform
from contactgrasp.hand import (DEFAULT_HAND_FILE, HandFileError, HandPose, JointConfig, fk_fingertip,
                               hand_geometry_at, link_frames, load_hand, parse_hand_text)

from conftest import random_rotation

MINIMAL = """
inner_length = 0.07
outer_length = 0.05
coupling = 0.5
fingertip_radius = 0.01
fingertip_offset = 0 0 0.04
spread_range = 0 3.14
inner_range = 0 2.4
finger1.base = 1 0 0 0.1  0 1 0 0  0 0 1 0  0 0 0 1
finger1.spread_sign = 1
finger2.base = 1 0 0 0  0 1 0 0.1  0 0 1 0  0 0 0 1
finger2.spread_sign = -1
finger3.base = 1 0 0 -0.1  0 1 0 0  0 0 1 0  0 0 0 1
finger3.spread_sign = 0
"""


def test_default_hand_loads(hand):
    assert hand.name == "barrett_like"
    assert hand.fingertip_radius == 0.012
    assert hand.fingertip_vector_length == pytest.approx(0.046)
    assert hand.standoff == pytest.approx(0.128)
    assert hand.coupling == pytest.approx(1 / 3)
    assert DEFAULT_HAND_FILE.exists()
    for name in ("palm", "inner", "outer"):
        assert len(hand.link_samples[name]) > 50


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2.4))
def test_finger3_planar_chain(theta):
    # oracle: finger 3 is a planar two-link chain in the palm xz-plane
    hand = load_hand()
    a = hand.inner_rest_angle + theta
    b = a + hand.outer_rest_angle + hand.coupling * theta
    L1, w = hand.inner_length, hand.fingertip_offset[2]
    center = np.array([-0.042 + L1 * math.sin(a) + w * math.sin(b), 0.0, L1 * math.cos(a) + w * math.cos(b)])
    q = JointConfig(0.7, (0.0, 0.0, theta))  # spread does not move finger 3
    fk = fk_fingertip(hand, HandPose(), q, 3)
    assert np.allclose(fk.fingertip_center, center, atol=1e-12)
    assert np.allclose(fk.fingertip.translation, center, atol=1e-12)
    # the outer joint lies a fingertip vector away from the center
    oj = np.array([-0.042 + L1 * math.sin(a), 0.0, L1 * math.cos(a)])
    assert np.allclose(fk.outer_joint.translation, oj, atol=1e-12)
    assert np.allclose(fk.outer_joint.rotation[:, 0], (oj - center) / w, atol=1e-12)


def test_tripod_and_parallel_spreads(hand):
    for spread, expect in ((math.pi / 4, 0.0), (0.0, 0.03)):
        for f in (1, 2):
            root = hand.finger_root(f, spread)
            # closing plane normal is root +y; its offset from the palm axis
            n = root.rotation[:, 1]
            assert abs(n @ root.translation) == pytest.approx(expect, abs=1e-12)


def test_pose_moves_everything_rigidly(hand):
    rng = np.random.default_rng(0)
    P = RigidTransform(random_rotation(rng), [0.1, 0.2, 0.3])
    q = JointConfig(0.4, (0.3, 0.6, 0.9))
    for f in (1, 2, 3):
        a = fk_fingertip(hand, HandPose(), q, f)
        b = fk_fingertip(hand, HandPose(P), q, f)
        assert (P @ a.outer_joint).allclose(b.outer_joint, 1e-12)
        assert np.allclose(P.apply(a.fingertip_center), b.fingertip_center, atol=1e-12)


def test_outer_joint_to_base_matches_fk(hand):
    q = JointConfig(1.0, (0.2, 0.5, 1.1))
    for f in (1, 2, 3):
        T = hand.outer_joint_to_base(q.spread, q.finger(f), f)
        assert T.allclose(fk_fingertip(hand, HandPose(), q, f).outer_joint, 1e-15)


def test_link_frames_and_geometry(hand):
    q = JointConfig(0.0, (0.1, 0.1, 0.1))
    frames = link_frames(hand, HandPose(), q)
    assert [n for n, _ in frames] == ["palm", "inner", "outer", "inner", "outer", "inner", "outer"]
    meshes = hand_geometry_at(hand, HandPose(), q)
    assert len(meshes) == 7
    # the outer link hangs at the end of the inner link
    for k in (1, 3, 5):
        inner, outer = frames[k][1], frames[k + 1][1]
        assert np.allclose(outer.translation, inner.apply([0, 0, hand.inner_length]))


def test_joint_limits(hand):
    hand.check_joints(JointConfig(0.0, (0.0, 2.4, 1.0)))
    with pytest.raises(ValueError):
        hand.check_joints(JointConfig(-0.1, (0.0, 0.0, 0.0)))
    with pytest.raises(ValueError):
        hand.check_joints(JointConfig(0.0, (0.0, 3.0, 0.0)))
    with pytest.raises(ValueError):
        fk_fingertip(hand, HandPose(), JointConfig(0.0, (0.0, 0.0, 0.0)), 4)


def test_joint_config_helpers():
    q = JointConfig.from_array([0.1, 0.2, 0.3, 0.4])
    assert q.finger(2) == 0.3
    assert q.with_finger(2, 1.0).inner == (0.2, 1.0, 0.4)
    assert q.as_array().tolist() == [0.1, 0.2, 0.3, 0.4]
    with pytest.raises(ValueError):
        JointConfig.from_array([1, 2, 3])


def test_minimal_file_uses_defaults():
    h = parse_hand_text(MINIMAL)
    assert h.outer_rest_angle == 0.0 and h.inner_rest_angle == 0.0 and h.roll_offset == 0.0
    assert h.palm_mesh.is_watertight() and h.outer_mesh.is_watertight()
    # fingertip circle of radius r around the offset lies on the default outer link
    lo, hi = h.outer_mesh.bounds
    assert hi[2] == pytest.approx(0.05, abs=1e-9)


@pytest.mark.parametrize("edit, message", [
    (lambda t: t.replace("coupling = 0.5", ""), "coupling"),
    (lambda t: t.replace("coupling = 0.5", "coupling = 2"), "coupling"),
    (lambda t: t.replace("fingertip_radius = 0.01", "fingertip_radius = -1"), "radius"),
    (lambda t: t.replace("fingertip_offset = 0 0 0.04", "fingertip_offset = 0 0.01 0.04"), "plane"),
    (lambda t: t.replace("fingertip_offset = 0 0 0.04", "fingertip_offset = 0 0"), "3 values"),
    (lambda t: t.replace("0 1 0 0.1", "0 2 0 0.1"), "finger2.base"),
    (lambda t: t.replace("inner_range = 0 2.4", "inner_range = 1 0"), "inner_range"),
    (lambda t: t + "\nnonsense line\n", "key = value"),
    (lambda t: t.replace("0.07", "seven"), "numbers"),
])
def test_bad_hand_files(edit, message):
    with pytest.raises(HandFileError, match=message):
        parse_hand_text(edit(MINIMAL))


def test_unreadable_hand_file(tmp_path):
    with pytest.raises(HandFileError, match="cannot read"):
        load_hand(tmp_path / "missing.hand")
