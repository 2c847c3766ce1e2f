"""Scenes of objects resting on a table, grasp filtering and virtual depth capture.

World frame: the table is the plane z = 0 and objects sit on top of it.  Camera
frames follow the pinhole convention (x right, y down, z forward), and pixel
(u, v) = (column, row) looks along ((u - cx) / fx, (v - cy) / fy, 1).
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from . import seeding
from .geom import PointCloud, RigidTransform, TriangleMesh, concatenate, look_at, mesh_distance, rot_z
from .geom.query import ray_cast_many
from .hand import HandModel, HandPose, hand_geometry_at
from .labels import PointTargets, default_specs, label_points
from .synth import GraspAnnotation

log = logging.getLogger(__name__)

TABLE_TOL = 1e-4
PLACEMENT_CLEARANCE = 0.005
PLACEMENT_ATTEMPTS = 100
TABLE_HALF_EXTENT = 0.15
GRASP_CLEARANCE = 0.002
RETREAT_LENGTH = 0.1
RETREAT_STEPS = 5
NORMAL_NEIGHBORS = 30
THREADS_ENV = "CONTACTGRASP_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    if not raw:
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass(frozen=True, eq=False)
class SceneObject:
    object_id: str
    mesh: TriangleMesh  # object frame
    pose: RigidTransform  # object -> world
    mesh_path: str = ""
    scale: float = 1.0

    @cached_property
    def world_mesh(self) -> TriangleMesh:
        return self.mesh.transformed(self.pose)


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[SceneObject, ...] = ()

    def __len__(self) -> int:
        return len(self.objects)

    @cached_property
    def combined(self) -> tuple[TriangleMesh, np.ndarray]:
        """All objects in one world-frame mesh, with the owning object of each triangle."""
        return concatenate([o.world_mesh for o in self.objects])

    def label(self, index: int) -> str:
        """Scene-unique name of an object: its id and position in the scene."""
        return f"{self.objects[index].object_id}:{index}"

    def index_of(self, label: str) -> int:
        _, sep, idx = label.rpartition(":")
        if not sep or not idx.isdigit() or int(idx) >= len(self.objects):
            raise ValueError(f"{label!r} does not name an object of this scene")
        return int(idx)

    def violations(self) -> list[str]:
        bad = []
        for i, o in enumerate(self.objects):
            zmin = float(o.world_mesh.vertices[:, 2].min())
            if zmin < -TABLE_TOL:
                bad.append(f"object {i} ({o.object_id}) is {-zmin:.3g} m into the table")
        for i in range(len(self.objects)):
            for j in range(i + 1, len(self.objects)):
                if mesh_distance(self.objects[i].world_mesh, self.objects[j].world_mesh, 1e-9) == 0.0:
                    bad.append(f"objects {i} and {j} interpenetrate")
        return bad


# -- placement ------------------------------------------------------------------------

def stable_rotations(mesh: TriangleMesh) -> list[np.ndarray]:
    """Rotations resting the mesh on each stable face of its convex hull.

    A hull face is stable when the projection of the center of mass along the
    face normal lands inside it.  Coplanar hull triangles are merged into one
    face; rotations are listed in order of first appearance in the hull.
    """
    hull = ConvexHull(mesh.vertices)
    com = mesh.volume_centroid()
    eq = hull.equations
    # facets sharing a plane have equations equal up to rounding
    keys = np.round(eq, 9)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    out = []
    for g in np.argsort(first):
        members = np.nonzero(inverse.ravel() == g)[0]
        n = eq[members[0], :3]
        q = com - (np.dot(n, com) + eq[members[0], 3]) * n
        if any(_in_triangle(q, mesh.vertices[hull.simplices[k]], n) for k in members):
            out.append(_rotation_to(n, np.array([0.0, 0.0, -1.0])))
    return out


def _in_triangle(q, tri, n, tol=1e-9) -> bool:
    # Qhull does not orient simplices consistently, so accept either winding
    s = [np.dot(np.cross(tri[(k + 1) % 3] - tri[k], q - tri[k]), n) for k in range(3)]
    slack = tol * max(1.0, float(np.abs(tri).max()))
    return min(s) >= -slack or max(s) <= slack


def _rotation_to(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector a to unit vector b."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # half turn about any axis perpendicular to a
        p = np.eye(3)[np.argmin(np.abs(a))]
        k = np.cross(a, p)
        k /= np.linalg.norm(k)
        return 2.0 * np.outer(k, k) - np.eye(3)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K * ((1 - c) / (s * s))


def place_objects(meshes, count: int, seed: int, ids=None, paths=None, scales=None,
                  half_extent: float = TABLE_HALF_EXTENT) -> Scene:
    """Drop ``count`` objects drawn from ``meshes`` onto the table.

    Each object picks a mesh, a stable face and a yaw at random, then tries up to
    PLACEMENT_ATTEMPTS table positions for one at least PLACEMENT_CLEARANCE from
    every object already placed; objects that never fit are skipped.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    meshes = list(meshes)
    if not meshes:
        raise ValueError("no meshes to place")
    ids = list(ids) if ids is not None else [f"object{i}" for i in range(len(meshes))]
    paths = list(paths) if paths is not None else [""] * len(meshes)
    scales = list(scales) if scales is not None else [1.0] * len(meshes)
    rests = {}
    placed: list[SceneObject] = []
    for k in range(count):
        rng = seeding.stream(seed, seeding.PLACEMENT, k)
        m = int(rng.integers(len(meshes)))
        if m not in rests:
            rests[m] = stable_rotations(meshes[m])
        R0 = rests[m][int(rng.integers(len(rests[m])))]
        R = rot_z(float(rng.uniform(0.0, 2 * math.pi))) @ R0
        rotated = meshes[m].transformed(RigidTransform(R, np.zeros(3)))
        lo, hi = rotated.bounds
        for _ in range(PLACEMENT_ATTEMPTS):
            xy = rng.uniform(-half_extent, half_extent, size=2)
            t = np.array([xy[0] - 0.5 * (lo[0] + hi[0]), xy[1] - 0.5 * (lo[1] + hi[1]), -lo[2]])
            cand = SceneObject(ids[m], meshes[m], RigidTransform(R, t), paths[m], scales[m])
            if all(mesh_distance(cand.world_mesh, o.world_mesh, PLACEMENT_CLEARANCE) == np.inf
                   for o in placed):
                placed.append(cand)
                break
    return Scene(tuple(placed))


# -- grasp filtering ----------------------------------------------------------------

def retreat_poses(pose: HandPose, length: float = RETREAT_LENGTH, steps: int = RETREAT_STEPS) -> list[HandPose]:
    """The grasp pose followed by ``steps`` poses backing off along -palm z."""
    P = pose.transform
    z = P.rotation[:, 2]
    return [pose] + [HandPose(RigidTransform.from_translation(-s * z) @ P)
                     for s in np.linspace(length / steps, length, steps)]


def approaches_from_below(pose: HandPose) -> bool:
    return float(pose.transform.rotation[2, 2]) > 1e-9


def grasp_is_clear(scene: Scene, index: int, a: GraspAnnotation, hand: HandModel,
                   clearance: float = GRASP_CLEARANCE) -> bool:
    """Collision and validity test for one world-frame grasp on object ``index``."""
    if approaches_from_below(a.pose):
        return False
    others = [o.world_mesh for i, o in enumerate(scene.objects) if i != index]
    boxes = [m.bounds for m in others]
    for pose in retreat_poses(a.pose):
        for link in hand_geometry_at(hand, pose, a.joints):
            llo, lhi = link.bounds
            if llo[2] < clearance:
                return False
            for m, (lo, hi) in zip(others, boxes):
                gap = np.maximum(np.maximum(lo - lhi, llo - hi), 0.0)
                if np.dot(gap, gap) >= clearance * clearance:
                    continue
                if mesh_distance(link, m, clearance) != np.inf:
                    return False
    return True


def filter_grasps(scene: Scene, index: int, annotations, hand: HandModel) -> list[GraspAnnotation]:
    """World-frame copies of the object-frame ``annotations`` that survive in the scene.

    A grasp is dropped when it approaches from below, or when the hand at the
    grasp pose or at any pose along the retreat path comes within
    GRASP_CLEARANCE of the table or of another object.  Kept grasps are renamed
    to the object's scene label.
    """
    obj = scene.objects[index]
    out, below = [], 0
    for a in annotations:
        w = replace(a.transformed(obj.pose, hand), object_id=scene.label(index))
        if approaches_from_below(w.pose):
            below += 1
        elif grasp_is_clear(scene, index, w, hand):
            out.append(w)
    log.info("%s: kept %d of %d grasps, %d dropped as approaching from below",
             scene.label(index), len(out), len(annotations), below)
    return out


# -- camera and rendering -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VirtualCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = field(default_factory=RigidTransform.identity)  # camera -> world

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must have at least one pixel")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def default(cls, pose: RigidTransform | None = None) -> "VirtualCamera":
        return cls(600.0, 600.0, 320.0, 240.0, 640, 480, pose or RigidTransform.identity())

    @classmethod
    def random(cls, seed: int, radius: float = 0.7, elevation_deg=(30.0, 75.0),
               target=(0.0, 0.0, 0.0)) -> "VirtualCamera":
        """Default intrinsics on a hemisphere around ``target`` at a seeded azimuth and elevation."""
        rng = seeding.stream(seed, seeding.CAMERA)
        az = rng.uniform(0.0, 2 * math.pi)
        el = math.radians(rng.uniform(*elevation_deg))
        t = np.asarray(target, dtype=float)
        eye = t + radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        return cls.default(look_at(eye, t))

    def with_pose(self, pose: RigidTransform) -> "VirtualCamera":
        return replace(self, pose=pose)

    def pixel_rays(self, rows=None) -> np.ndarray:
        """Unnormalized camera-frame ray directions (z = 1), shape (rows, width, 3)."""
        v = np.arange(self.height, dtype=float) if rows is None else np.asarray(rows, dtype=float)
        u = np.arange(self.width, dtype=float)
        uu, vv = np.meshgrid(u, v)
        return np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], axis=-1)

    def project(self, points) -> np.ndarray:
        """Pixel coordinates (u, v) of camera-frame points."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)


def render_depth(scene: Scene, cam: VirtualCamera, threads: int | None = None) -> np.ndarray:
    """(height, width) depth along camera z for the nearest hit per pixel, 0 for misses."""
    depth = np.zeros((cam.height, cam.width))
    if not scene.objects:
        return depth
    mesh, _ = scene.combined
    R, eye = cam.pose.rotation, cam.pose.translation

    def rows(block):
        d = cam.pixel_rays(block).reshape(-1, 3)
        scale = np.linalg.norm(d, axis=1)
        t, tri, _, _ = ray_cast_many(mesh, np.broadcast_to(eye, d.shape), (d / scale[:, None]) @ R.T)
        # distance along a unit ray over its length per unit of camera z
        z = np.where(tri >= 0, t / scale, 0.0)
        depth[block[0]:block[-1] + 1] = z.reshape(len(block), cam.width)

    n = threads or thread_count()
    blocks = np.array_split(np.arange(cam.height), max(1, min(cam.height, 4 * n)))
    if n == 1:
        for b in blocks:
            rows(b)
    else:
        with ThreadPoolExecutor(n) as pool:
            list(pool.map(rows, blocks))
    return depth


def back_project(depth, cam: VirtualCamera) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame points of all pixels with positive finite depth, and their flat indices."""
    d = np.asarray(depth, dtype=float)
    if d.shape != (cam.height, cam.width):
        raise ValueError(f"depth map shape {d.shape} does not match the camera ({cam.height}, {cam.width})")
    idx = np.flatnonzero(np.isfinite(d) & (d > 0))
    rays = cam.pixel_rays().reshape(-1, 3)[idx]
    return rays * d.reshape(-1)[idx, None], idx


def estimate_normals(points, k: int = NORMAL_NEIGHBORS, chunk: int = 20000) -> np.ndarray:
    """Unit normals from plane fits to the k nearest neighbours, facing the origin."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(P)
    out = np.zeros((n, 3))
    if n == 0:
        return out
    k = min(k, n)
    tree = cKDTree(P)
    for s in range(0, n, chunk):
        q = P[s:s + chunk]
        _, nb = tree.query(q, k=k)
        nb = nb.reshape(len(q), k)
        X = P[nb] - P[nb].mean(axis=1, keepdims=True)
        C = np.einsum("nki,nkj->nij", X, X)
        _, vecs = np.linalg.eigh(C)
        out[s:s + chunk] = vecs[:, :, 0]
    # the camera sits at the origin, so a normal facing it points against the point
    flip = np.einsum("ij,ij->i", out, P) > 0
    out[flip] *= -1.0
    return out


def depth_to_cloud(depth, cam: VirtualCamera, n_points: int | None = None, seed: int = 0) -> PointCloud:
    """Camera-frame cloud of the depth map, optionally down-sampled to ``n_points``.

    Normals are fitted on the full cloud before down-sampling; the kept points are
    a seeded random subset in pixel order.
    """
    P, _ = back_project(depth, cam)
    N = estimate_normals(P)
    if n_points is not None and n_points < len(P):
        if n_points < 0:
            raise ValueError("n_points must be non-negative")
        keep = np.sort(seeding.stream(seed, seeding.CLOUD).choice(len(P), size=n_points, replace=False))
        P, N = P[keep], N[keep]
    return PointCloud(P, N)


# -- frames and capture -------------------------------------------------------------

def to_camera_frame(cam: VirtualCamera, annotations, hand: HandModel) -> list[GraspAnnotation]:
    T = cam.pose.inverse()
    return [a.transformed(T, hand) for a in annotations]


def to_world_frame(cam: VirtualCamera, annotations, hand: HandModel) -> list[GraspAnnotation]:
    return [a.transformed(cam.pose, hand) for a in annotations]


@dataclass(frozen=True, eq=False)
class SceneCapture:
    scene: Scene
    camera: VirtualCamera
    depth: np.ndarray
    cloud: PointCloud  # camera frame
    annotations: tuple[GraspAnnotation, ...]  # camera frame
    targets: PointTargets


def quantized(cloud: PointCloud) -> PointCloud:
    """The cloud rounded to float32, the precision of the label file, so labels
    computed in memory match labels recomputed from the file."""
    return PointCloud(cloud.points.astype(np.float32).astype(float),
                      cloud.normals.astype(np.float32).astype(float))


def capture_scene(scene: Scene, cam: VirtualCamera, object_annotations, hand: HandModel,
                  n_points: int | None = None, seed: int = 0, radius: float = 0.005) -> SceneCapture:
    """Filter each object's grasps in the scene, move them to the camera frame, render
    the depth map and label the resulting cloud.

    ``object_annotations[i]`` holds the object-frame grasps of ``scene.objects[i]``.
    """
    if len(object_annotations) != len(scene.objects):
        raise ValueError("need one annotation list per scene object")
    world = []
    for i, anns in enumerate(object_annotations):
        world.extend(filter_grasps(scene, i, anns, hand))
    cam_anns = tuple(to_camera_frame(cam, world, hand))
    depth = render_depth(scene, cam)
    cloud = quantized(depth_to_cloud(depth, cam, n_points, seed))
    targets = label_points(cloud, cam_anns, radius=radius,
                           specs=default_specs(hand.inner_range, hand.spread_range))
    return SceneCapture(scene, cam, depth, cloud, cam_anns, targets)
