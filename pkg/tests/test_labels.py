import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrasp.geom import PointCloud
from contactgrasp.labels import (NO_BIN, BinSpec, LossWeights, cross_entropy, decode_joint, default_specs,
                                 encode_joint, label_points, label_points_bruteforce, loss_suite, smooth_l1)

FIVE = BinSpec(0.0, 7 * math.pi / 9, 5)


def test_bin_spec_validation():
    with pytest.raises(ValueError):
        BinSpec(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        BinSpec(0.0, 1.0, 0)
    assert FIVE.width == pytest.approx(7 * math.pi / 45)
    specs = default_specs()
    assert specs["m"].n_bins == 12 and specs["s1"].n_bins == 8
    assert specs["m"].hi == pytest.approx(7 * math.pi / 9)


def test_encode_examples():
    assert encode_joint(FIVE.width / 2, FIVE) == (0, 0.0)
    b, res = encode_joint(1.0, FIVE)
    # by hand: 1.0 / (7 pi / 45) = 2.04627..., so bin 2 and 0.04627 - 0.5 from its center
    assert b == 2
    assert res == pytest.approx(45 / (7 * math.pi) - 2.5, abs=1e-12)
    assert res == pytest.approx(-0.4537, abs=1e-4)
    assert decode_joint(2, res, FIVE) == pytest.approx(1.0, abs=1e-12)
    assert decode_joint(0, 0.0, FIVE) == pytest.approx(FIVE.width / 2)


def test_bin_edges_and_range():
    for k in range(5):
        theta = k * FIVE.width
        b, res = encode_joint(theta, FIVE)
        # an edge belongs to the bin above it, even when k * width rounds low
        assert b == k and res == pytest.approx(-0.5, abs=1e-9)
        assert decode_joint(b, res, FIVE) == pytest.approx(theta, abs=1e-12)
    spread = default_specs()["ms"]
    for theta in (math.pi / 4, math.pi / 2, math.nextafter(math.pi / 4, 0.0)):
        b, res = encode_joint(theta, spread)
        assert b in (3, 6) and float(np.float32(res)) < 0.5
    b, res = encode_joint(FIVE.hi, FIVE)  # rounding-level spill at the top
    assert b == 4 and -0.5 <= res < 0.5
    for bad in (-1e-6, FIVE.hi + 1e-6, math.nan):
        with pytest.raises(ValueError):
            encode_joint(bad, FIVE)
    with pytest.raises(ValueError):
        decode_joint(5, 0.0, FIVE)
    with pytest.raises(ValueError):
        decode_joint(0, 0.6, FIVE)


@settings(max_examples=300, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-3, 4), st.integers(1, 40), st.floats(0, 1, exclude_max=True))
def test_round_trip(lo, span, n, u):
    spec = BinSpec(lo, lo + span, n)
    theta = min(lo + u * span, math.nextafter(spec.hi, -math.inf))
    if theta >= spec.hi:
        return
    b, res = encode_joint(theta, spec)
    assert 0 <= b < n and -0.5 <= res < 0.5
    assert abs(decode_joint(b, res, spec) - theta) <= 1e-12


# -- point labels -------------------------------------------------------------------------------

def _cloud_near(annotations, rng, n=2000, spread=0.004):
    P = np.array([c.position for a in annotations for c in a.contacts])
    N = np.array([c.normal for a in annotations for c in a.contacts])
    idx = rng.integers(0, len(P), n)
    pts = P[idx] + rng.uniform(-spread, spread, (n, 3))
    nrm = N[idx] + rng.normal(0, 0.5, (n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm)


def test_label_points_matches_bruteforce(sphere_grasps):
    rng = np.random.default_rng(0)
    cloud = _cloud_near(sphere_grasps, rng)
    t = label_points(cloud, sphere_grasps)
    ref = label_points_bruteforce(cloud, sphere_grasps)
    assert 0.05 < ref.mean() < 0.95
    assert np.array_equal(t.graspable.astype(bool), ref)


def test_labels_inherit_the_nearest_contact(sphere_grasps):
    rng = np.random.default_rng(1)
    cloud = _cloud_near(sphere_grasps, rng, n=500)
    specs = default_specs()
    t = label_points(cloud, sphere_grasps, specs=specs)
    rows = [(a, f, c) for a in sphere_grasps for f, c in enumerate(a.contacts, start=1)]
    P = np.array([c.position for _, _, c in rows])
    N = np.array([c.normal for _, _, c in rows])
    for i in range(len(cloud)):
        d = np.linalg.norm(P - cloud.points[i], axis=1)
        ok = (d <= 0.005) & (N @ cloud.normals[i] >= math.cos(math.radians(30)))
        if not ok.any():
            assert t.graspable[i] == 0 and t.finger[i] == 0
            assert np.isnan(t.xy[i]).all() and (t.bins[i] == NO_BIN).all() and np.isnan(t.res[i]).all()
            continue
        j = int(np.flatnonzero(ok)[np.argmin(d[ok])])
        a, f, _ = rows[j]
        g = a.compact_for(f)
        assert t.graspable[i] == 1 and t.finger[i] == f
        assert tuple(t.xy[i]) == (g.x, g.y)
        s1, s2 = g.supporting_fingers
        angles = (a.joints.finger(f), a.joints.spread, a.joints.finger(s1), a.joints.finger(s2))
        for k, (th, name) in enumerate(zip(angles, ("m", "ms", "s1", "s2"))):
            assert (t.bins[i, k], t.res[i, k]) == encode_joint(th, specs[name])


def test_point_at_a_contact_and_far_point(sphere_grasps):
    c = sphere_grasps[0].contacts[1]
    far = c.position + 10 * c.normal
    t = label_points(PointCloud([c.position, far], [c.normal, c.normal]), sphere_grasps)
    assert t.graspable.tolist() == [1, 0]
    assert t.finger[0] == 2
    with pytest.raises(ValueError):
        label_points(PointCloud([far], [c.normal]), sphere_grasps, radius=0.0)


def test_no_annotations_or_points():
    t = label_points(PointCloud(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1))), [])
    assert len(t) == 3 and not t.graspable.any()
    assert len(label_points(PointCloud(np.zeros((0, 3)), np.zeros((0, 3))), [])) == 0


# -- losses -----------------------------------------------------------------------------------

def test_loss_primitives():
    assert cross_entropy([[0.5, 0.5]] * 4, [0, 1, 1, 0]) == pytest.approx(math.log(2))
    assert cross_entropy([[1.0, 0.0]], [0]) == 0.0
    assert smooth_l1([0.5, -2.0]).tolist() == [0.125, 1.5]
    with pytest.raises(ValueError):
        cross_entropy([[0.5, 0.6]], [0])
    with pytest.raises(ValueError):
        cross_entropy([[0.5, 0.5]], [0, 1])


def _fixture(n=4, contact=(1, 1, 0, 1)):
    rng = np.random.default_rng(3)
    target = {"graspable": np.array([1, 0, 1, 1]), "contact": np.array(contact), "xy": rng.uniform(-1, 1, (n, 2))}
    pred = {"grasp_probs": np.full((n, 2), 0.5), "xy": target["xy"].copy()}
    for name, nb in (("m", 12), ("ms", 12), ("s1", 8), ("s2", 8)):
        target[f"{name}_bin"] = rng.integers(0, nb, n)
        target[f"{name}_res"] = rng.uniform(-0.5, 0.5, n)
        pred[f"{name}_probs"] = np.eye(nb)[target[f"{name}_bin"]]
        pred[f"{name}_res"] = target[f"{name}_res"].copy()
    return pred, target


def test_perfect_prediction_leaves_only_the_uniform_grasp_term():
    pred, target = _fixture()
    L = loss_suite(pred, target)
    assert L["L_gp"] == pytest.approx(math.log(2))
    assert L["L_fp"] == L["L_m"] == L["L_ms"] == L["L_s"] == 0.0
    assert L["L_total"] == pytest.approx(math.log(2))


def test_weighted_total_by_hand():
    pred, target = _fixture()
    # main-joint residual off by 0.5 on every contact point: 0.125 each
    pred["m_res"] = target["m_res"] + 0.5
    # one supporting joint off by 2 on every contact point: 1.5 each
    pred["s2_res"] = target["s2_res"] - 2.0
    # projection off by a 3-4-5 triangle on the first contact point only
    pred["xy"][0] += [0.3, 0.4]
    L = loss_suite(pred, target)
    assert L["L_m"] == pytest.approx(0.125)
    assert L["L_s"] == pytest.approx(1.5)
    assert L["L_fp"] == pytest.approx(0.5 / 3)
    assert L["L_total"] == pytest.approx(math.log(2) + 5 * (0.5 / 3) + 5 * (0.125 + 1.5))
    w = LossWeights(alpha=2.0, beta=1.0, gamma=1.0, gamma1=3.0, gamma2=0.0, gamma3=0.5)
    assert loss_suite(pred, target, w)["L_total"] == pytest.approx(2 * math.log(2) + 0.5 / 3 + 3 * 0.125 + 0.75)


def test_total_is_linear_in_each_component():
    pred, target = _fixture()
    pred["ms_res"] = target["ms_res"] + 0.2
    base = loss_suite(pred, target)
    pred["ms_res"] = target["ms_res"] + 0.4  # quadruples the smooth-L1 term
    more = loss_suite(pred, target)
    assert more["L_ms"] == pytest.approx(4 * base["L_ms"])
    assert more["L_total"] - base["L_total"] == pytest.approx(5 * 3 * base["L_ms"])


def test_non_contact_points_do_not_move_contact_losses():
    pred, target = _fixture()
    pred["xy"][2] += 100.0  # point 2 is not a contact
    pred["m_res"][2] += 100.0
    L = loss_suite(pred, target)
    assert L["L_fp"] == 0.0 and L["L_m"] == 0.0
    pred, target = _fixture(contact=(0, 0, 0, 0))
    assert loss_suite(pred, target)["L_fp"] == 0.0


def test_shape_mismatch_is_an_error():
    pred, target = _fixture()
    pred["xy"] = pred["xy"][:3]
    with pytest.raises(ValueError):
        loss_suite(pred, target)
    pred, target = _fixture()
    pred["m_probs"] = pred["m_probs"][:2]
    with pytest.raises(ValueError):
        loss_suite(pred, target)
