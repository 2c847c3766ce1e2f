import math

import numpy as np
import pytest

from contactgrasp.geom import RigidTransform, box, cylinder, icosphere, look_at
from contactgrasp.geom.mesh import convex_hull_mesh
from contactgrasp.geom.query import distances, mesh_distance
from contactgrasp.hand import HandPose
from contactgrasp.scene import (PLACEMENT_CLEARANCE, THREADS_ENV, Scene, SceneObject, VirtualCamera,
                                back_project, capture_scene, depth_to_cloud, estimate_normals, filter_grasps,
                                grasp_is_clear, place_objects, render_depth, retreat_poses, stable_rotations,
                                thread_count, to_camera_frame, to_world_frame)

from conftest import random_rotation
from oracles import BruteForceClearance, stable_face_count

SMALL = dict(fx=150.0, fy=150.0, cx=80.0, cy=60.0, width=160, height=120)


@pytest.mark.parametrize("mesh, count", [
    (box((0.06, 0.06, 0.06)), 6),
    (box((0.02, 0.06, 0.1)), 6),
    (icosphere(0.04, 3), 1280),
    (cylinder(0.03, 0.1, 32), 34),
])
def test_stable_rotation_counts(mesh, count):
    rots = stable_rotations(mesh)
    assert len(rots) == count == stable_face_count(mesh)
    com = mesh.volume_centroid()
    for R in rots[:40]:
        assert np.allclose(R.T @ R, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)
        V = mesh.vertices @ R.T
        # the resting face is flat on the bottom with the center of mass above it
        low = V[V[:, 2] <= V[:, 2].min() + 1e-9]
        assert len(low) >= 3
        c = R @ com
        assert low[:, 0].min() - 1e-9 <= c[0] <= low[:, 0].max() + 1e-9


def test_stable_faces_of_irregular_hulls():
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = convex_hull_mesh(rng.standard_normal((30, 3)) * [1.0, 0.3, 0.1])
        assert len(stable_rotations(m)) == stable_face_count(m)


def test_placement(cube, sphere, can):
    meshes = [sphere, cube, can]
    scene = place_objects(meshes, 3, seed=7, ids=["sphere", "cube", "can"])
    assert len(scene) == 3 and scene.violations() == []
    for o in scene.objects:
        assert o.world_mesh.vertices[:, 2].min() == pytest.approx(0.0, abs=1e-12)
        assert np.abs(o.pose.translation[:2]).max() < 0.15 + 0.1
    for i in range(3):
        for j in range(i + 1, 3):
            d = mesh_distance(scene.objects[i].world_mesh, scene.objects[j].world_mesh)
            assert d >= PLACEMENT_CLEARANCE
    again = place_objects(meshes, 3, seed=7, ids=["sphere", "cube", "can"])
    assert all(a.pose.distance(b.pose) == 0.0 for a, b in zip(scene.objects, again.objects))
    other = place_objects(meshes, 3, seed=8)
    assert other.objects[0].pose.distance(scene.objects[0].pose) > 0
    with pytest.raises(ValueError):
        place_objects(meshes, 0, seed=1)
    with pytest.raises(ValueError):
        place_objects([], 1, seed=1)


def test_crowded_table_skips_objects(cube):
    scene = place_objects([cube], 40, seed=1, half_extent=0.05)
    assert 1 <= len(scene) < 40 and scene.violations() == []


def test_scene_labels_and_violations(cube):
    s = Scene((SceneObject("cube", cube, RigidTransform.from_translation([0, 0, 0.03])),
               SceneObject("cube", cube, RigidTransform.from_translation([0.02, 0, 0.02]))))
    assert s.label(1) == "cube:1" and s.index_of("cube:1") == 1
    for bad in ("cube", "cube:7", "cube:x"):
        with pytest.raises(ValueError):
            s.index_of(bad)
    v = s.violations()
    assert any("into the table" in m for m in v) and any("interpenetrate" in m for m in v)


def test_thread_count(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert thread_count() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ValueError):
        thread_count()


# -- camera and rendering ---------------------------------------------------------------------

def test_camera_validation_and_random_pose():
    with pytest.raises(ValueError):
        VirtualCamera(0.0, 1.0, 0.0, 0.0, 4, 4)
    with pytest.raises(ValueError):
        VirtualCamera(1.0, 1.0, 5.0, 0.0, 4, 4)
    with pytest.raises(ValueError):
        VirtualCamera(1.0, 1.0, 0.0, 0.0, 0, 4)
    cam = VirtualCamera.random(3, target=(0.1, 0.0, 0.0))
    eye = cam.pose.translation
    assert np.linalg.norm(eye - [0.1, 0, 0]) == pytest.approx(0.7)
    assert np.allclose(cam.pose.rotation[:, 2], ([0.1, 0, 0] - eye) / 0.7)
    assert 0.7 * math.sin(math.radians(30)) - 1e-12 <= eye[2] <= 0.7 * math.sin(math.radians(75)) + 1e-12
    assert VirtualCamera.random(3).pose.distance(VirtualCamera.random(3).pose) == 0.0


def _top_down(height=1.0):
    return VirtualCamera(**SMALL, pose=look_at([0, 0, height], [0, 0, 0], up=(0, 1, 0)))


def test_depth_of_a_box_top_by_hand():
    s = 0.1
    scene = Scene((SceneObject("box", box((s, s, s)), RigidTransform.from_translation([0, 0, s / 2])),))
    cam = _top_down()
    depth = render_depth(scene, cam)
    # the top face is 0.9 m away; it spans |u - cx| < fx * 0.05 / 0.9 pixels
    half = SMALL["fx"] * (s / 2) / (1 - s)
    u = np.abs(np.arange(160) - 80.0)
    v = np.abs(np.arange(120) - 60.0)
    inside = (v[:, None] < half - 0.5) & (u[None, :] < half - 0.5)
    outside = (v[:, None] > half + 0.5) | (u[None, :] > half + 0.5)
    assert np.allclose(depth[inside], 0.9, atol=1e-12)
    assert (depth[outside] == 0).all()


def test_depth_of_a_sphere_by_hand():
    R = 0.05
    m = icosphere(R, 3)
    scene = Scene((SceneObject("ball", m, RigidTransform.from_translation([0.02, -0.01, 0.05])),))
    cam = VirtualCamera(**SMALL, pose=look_at([0.3, 0.2, 0.4], [0.02, -0.01, 0.05]))
    depth = render_depth(scene, cam)
    P, _ = back_project(depth, cam)
    r = np.linalg.norm(cam.pose.apply(P) - [0.02, -0.01, 0.05], axis=1)
    # every hit lies between the facet planes and the circumscribed sphere
    inner = float(np.abs(np.einsum("ij,ij->i", m.face_normals, m.triangle_vertices[:, 0])).min())
    assert len(r) > 500
    assert r.max() <= R + 1e-9 and r.min() >= inner - 1e-9
    # the silhouette matches the analytic disk up to faceting
    c = cam.pose.inverse().apply([0.02, -0.01, 0.05])
    d = cam.pixel_rays().reshape(-1, 3)
    miss = np.linalg.norm(np.cross(d, c), axis=1) / np.linalg.norm(d, axis=1)  # ray-center distance
    hit = (depth > 0).reshape(-1)
    assert (miss[hit] <= R + 1e-9).all() and (miss[miss < inner - 1e-9] <= R).all()
    assert hit[miss < inner - 1e-9].all()


def test_threads_do_not_change_the_image(cube, sphere, monkeypatch):
    scene = place_objects([cube, sphere], 2, seed=2)
    cam = VirtualCamera(**SMALL, pose=VirtualCamera.random(1).pose)
    assert np.array_equal(render_depth(scene, cam, threads=1), render_depth(scene, cam, threads=3))
    assert not render_depth(Scene(), cam).any()


def test_back_projection_lands_on_pixels_and_surfaces(cube, sphere):
    scene = place_objects([cube, sphere], 2, seed=2)
    cam = VirtualCamera(**SMALL, pose=VirtualCamera.random(1).pose)
    depth = render_depth(scene, cam)
    P, idx = back_project(depth, cam)
    assert len(P) == (depth > 0).sum() > 0
    uv = cam.project(P)
    assert np.allclose(uv[:, 0], idx % 160, atol=1e-9) and np.allclose(uv[:, 1], idx // 160, atol=1e-9)
    assert np.allclose(P[:, 2], depth.reshape(-1)[idx])
    world, _ = scene.combined
    assert distances(world, cam.pose.apply(P)).max() <= 1e-9
    with pytest.raises(ValueError):
        back_project(depth[:-1], cam)


def test_normals_of_a_plane_face_the_camera():
    rng = np.random.default_rng(0)
    xy = rng.uniform(-0.1, 0.1, (500, 2))
    n = np.array([0.2, -0.1, -1.0])
    n /= np.linalg.norm(n)
    # plane n . p = -0.5 in front of the camera
    P = np.column_stack([xy, (-0.5 - xy @ n[:2]) / n[2]])
    N = estimate_normals(P)
    assert np.allclose(N, n, atol=1e-9)
    assert estimate_normals(np.zeros((0, 3))).shape == (0, 3)


def test_cloud_subsampling(cube):
    scene = Scene((SceneObject("box", cube, RigidTransform.from_translation([0, 0, 0.03])),))
    cam = _top_down(0.5)
    depth = render_depth(scene, cam)
    full = depth_to_cloud(depth, cam)
    sub = depth_to_cloud(depth, cam, 100, seed=4)
    assert len(sub) == 100 and len(full) == (depth > 0).sum()
    assert np.array_equal(sub.points, depth_to_cloud(depth, cam, 100, seed=4).points)
    assert set(map(tuple, sub.points)) <= set(map(tuple, full.points))


# -- grasps in the scene -------------------------------------------------------------------------

def test_frame_transfer_round_trip(hand, cube_grasps):
    cam = VirtualCamera.random(5)
    back = to_world_frame(cam, to_camera_frame(cam, cube_grasps, hand), hand)
    for a, b in zip(cube_grasps, back):
        assert a.pose.transform.distance(b.pose.transform) <= 1e-12
        for c, d in zip(a.contacts, b.contacts):
            assert np.abs(c.position - d.position).max() <= 1e-12
            assert np.abs(c.normal - d.normal).max() <= 1e-12
        for g, h in zip(a.compact, b.compact):
            assert np.abs(g.as_array() - h.as_array()).max() <= 1e-9


def test_retreat_and_below():
    P = HandPose(RigidTransform(np.diag([1.0, -1.0, -1.0]), [0, 0, 0.2]))
    poses = retreat_poses(P)
    assert len(poses) == 6
    assert [p.transform.translation[2] for p in poses] == pytest.approx([0.2, 0.22, 0.24, 0.26, 0.28, 0.3])


def test_filter_agrees_with_a_dense_oracle(hand, sphere, cube, sphere_grasps, cube_grasps):
    scene = place_objects([sphere, cube], 2, seed=11, ids=["sphere", "cube"])
    anns = {"sphere": sphere_grasps, "cube": cube_grasps}
    decided = 0
    for i, o in enumerate(scene.objects):
        oracle = BruteForceClearance(scene, i)
        kept = filter_grasps(scene, i, anns[o.object_id], hand)
        assert all(a.object_id == scene.label(i) for a in kept)
        for a in anns[o.object_id]:
            w = a.transformed(o.pose, hand)
            ref = oracle(w, hand)
            if ref is not None:
                assert grasp_is_clear(scene, i, w, hand) == ref
                decided += 1
    assert decided >= 8


def test_grasp_from_below_is_dropped(hand, cube, cube_grasps):
    scene = Scene((SceneObject("cube", cube, RigidTransform.from_translation([0, 0, 0.5])),))
    a = cube_grasps[0]
    P = a.pose.transform
    # turn the grasp so the palm z axis points up, about the object center
    for R in (np.diag([1.0, -1.0, -1.0]), np.diag([-1.0, 1.0, -1.0]), np.eye(3)):
        T = RigidTransform.from_translation([0, 0, 0.5]) @ RigidTransform(R, np.zeros(3))
        w = a.transformed(T, hand)
        if w.pose.transform.rotation[2, 2] > 1e-9:
            assert not grasp_is_clear(scene, 0, w, hand)
    assert (RigidTransform(np.diag([1.0, -1.0, -1.0]), np.zeros(3)) @ P).rotation[2, 2] == -P.rotation[2, 2]


def test_capture_scene(hand, sphere, cube, sphere_grasps, cube_grasps):
    scene = place_objects([sphere, cube], 2, seed=11, ids=["sphere", "cube"])
    cam = VirtualCamera(**SMALL, pose=VirtualCamera.random(2).pose)
    anns = [sphere_grasps if o.object_id == "sphere" else cube_grasps for o in scene.objects]
    cap = capture_scene(scene, cam, anns, hand, n_points=2000, seed=1)
    assert len(cap.cloud) == min(2000, (cap.depth > 0).sum()) == len(cap.targets)
    assert np.array_equal(cap.cloud.points, cap.cloud.points.astype(np.float32).astype(float))
    for a in cap.annotations:
        w = a.transformed(cam.pose, hand)
        assert grasp_is_clear(scene, scene.index_of(a.object_id), w, hand)
    with pytest.raises(ValueError):
        capture_scene(scene, cam, anns[:1], hand)


def test_rotated_scene_object_keeps_its_grasps(hand, cube, cube_grasps):
    rng = np.random.default_rng(9)
    R = random_rotation(rng)
    scene = Scene((SceneObject("cube", cube, RigidTransform(R, [0, 0, 0.4])),))
    for a in filter_grasps(scene, 0, cube_grasps, hand):
        assert a.pose.transform.rotation[2, 2] <= 1e-9
