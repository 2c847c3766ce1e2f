"""End-to-end steps behind the command line: synthesis runs, scene captures and the
checks that re-validate their files."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .geom import RigidTransform, distances, load_mesh, look_at
from .hand import FINGERS, HandModel, load_hand
from .labels import NO_BIN, NO_FINGER, JOINT_NAMES, default_specs, label_points
from .quality import (FrictionModel, epsilon_quality_detail, epsilon_sampling_oracle, grasp_wrenches,
                      torque_normalization)
from .scene import SceneCapture, VirtualCamera, back_project, capture_scene, grasp_is_clear
from .synth import (DEFAULT_TAU, DEFAULT_VOXEL, ObjectProximity, SearchSpace, SynthesisStats,
                    annotation_violations, synthesize_object)

BACKPROJECT_TOL = 1e-4
QUALITY_TOL = 1e-9
DEFAULT_POINTS = 20000
DEFAULT_LABEL_RADIUS = 0.005
CAPTURE_SUFFIXES = {"manifest": ".capture", "depth": ".depth", "grasps": ".grasps", "labels": ".labels"}


def capture_paths(prefix) -> dict[str, Path]:
    return {k: Path(f"{prefix}{v}") for k, v in CAPTURE_SUFFIXES.items()}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _hand_ref(path) -> str:
    return "default" if path is None else str(Path(path).resolve())


def load_hand_ref(ref: str) -> HandModel:
    return load_hand(None if ref in ("", "default") else ref)


# -- grasp synthesis -----------------------------------------------------------------

@dataclass
class SynthesisRun:
    params: dict
    annotations: list
    stats: SynthesisStats = field(default_factory=SynthesisStats)


def sample_grasps(mesh_path, hand_path=None, *, object_id: str | None = None, scale: float = 1.0,
                  tau: float = DEFAULT_TAU, target: int = 100, seed: int = 0, voxel: float = DEFAULT_VOXEL,
                  mu: float = 0.5, edges: int = 8, space: SearchSpace | None = None) -> SynthesisRun:
    mesh = load_mesh(mesh_path, scale)
    hand = load_hand(hand_path)
    space = space or SearchSpace.default()
    friction = FrictionModel(mu=mu, edges=edges)
    origin, lam = torque_normalization(mesh)
    object_id = object_id or Path(mesh_path).stem
    stats = SynthesisStats()
    anns = synthesize_object(mesh, hand, space, friction, tau, target, voxel, seed, object_id, stats)
    params = {
        "object_id": object_id, "mesh": str(Path(mesh_path).resolve()), "scale": repr(float(scale)),
        "hand": _hand_ref(hand_path), "tau": repr(float(tau)), "mu": repr(float(mu)), "edges": str(edges),
        "torque_origin": " ".join(repr(float(v)) for v in origin), "torque_scale": repr(float(lam)),
        "voxel": repr(float(voxel)), "target": str(target), "seed": str(seed),
        "depths": " ".join(repr(v) for v in space.depths), "rolls": " ".join(repr(v) for v in space.rolls),
        "spreads": " ".join(repr(v) for v in space.spreads),
        "evaluated": str(stats.evaluated), "kept": str(len(anns)),
    }
    return SynthesisRun(params, anns, stats)


def validate_annotation_file(path) -> list[str]:
    """Every violated invariant of an object-frame annotation file written by sample-grasps."""
    params, anns = io.read_annotations(path)
    missing = [k for k in ("mesh", "scale", "tau", "mu", "edges") if k not in params]
    if missing:
        return [f"{path}: header lacks {', '.join(missing)}"]
    mesh = load_mesh(params["mesh"], float(params["scale"]))
    hand = load_hand_ref(params.get("hand", "default"))
    tau = float(params["tau"])
    origin, lam = torque_normalization(mesh)
    friction = FrictionModel(float(params["mu"]), int(params["edges"]), lam)
    prox = ObjectProximity(mesh, hand)
    bad = []
    for i, a in enumerate(anns, start=1):
        bad += [f"grasp {i}: {m}" for m in _grasp_violations(a, mesh, hand, tau, friction, origin, prox)]
    return bad


def _grasp_violations(a, mesh, hand, tau, friction, origin, prox) -> list[str]:
    bad = annotation_violations(a, mesh, hand, tau, prox)
    eps = epsilon_quality_detail(grasp_wrenches(list(a.contacts), friction, origin)).epsilon
    if abs(eps - a.quality) > QUALITY_TOL:
        bad.append(f"stored quality {a.quality:.9g} differs from recomputed {eps:.9g}")
    return bad


# -- quality evaluation ------------------------------------------------------------------

@dataclass(frozen=True)
class QualityRow:
    exact: float
    oracle: float
    scale: float  # largest wrench norm

    @property
    def gap(self) -> float:
        return self.oracle - self.exact


def quality_rows(wrench_sets, oracle_dirs: int, seed: int = 0) -> list[QualityRow]:
    rows = []
    for W in wrench_sets:
        W = np.asarray(W, dtype=float).reshape(-1, 6)
        exact = epsilon_quality_detail(W).epsilon
        oracle = epsilon_sampling_oracle(W, oracle_dirs, seed)
        rows.append(QualityRow(exact, oracle, float(np.linalg.norm(W, axis=1).max())))
    return rows


def annotation_wrench_sets(path) -> list[np.ndarray]:
    params, anns = io.read_annotations(path)
    missing = [k for k in ("mu", "edges", "torque_origin", "torque_scale") if k not in params]
    if missing:
        raise io.FormatError(f"{path}: header lacks {', '.join(missing)}")
    origin = np.array(_floats(params["torque_origin"]))
    friction = FrictionModel(float(params["mu"]), int(params["edges"]), float(params["torque_scale"]))
    return [grasp_wrenches(list(a.contacts), friction, origin) for a in anns]


def read_wrench_sets(path) -> list[np.ndarray]:
    """Wrench sets from text: six numbers per line, sets separated by blank lines."""
    sets, cur = [], []
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            if cur:
                sets.append(np.array(cur))
                cur = []
            continue
        try:
            vals = _floats(s)
        except ValueError:
            raise io.FormatError(f"{path}:{no}: bad number") from None
        if len(vals) != 6:
            raise io.FormatError(f"{path}:{no}: expected 6 numbers, found {len(vals)}")
        cur.append(vals)
    if cur:
        sets.append(np.array(cur))
    return sets


# -- scene capture ---------------------------------------------------------------------------

def parse_camera(spec: str) -> VirtualCamera:
    """``random:SEED``, ``identity``, ``look:ex,ey,ez,tx,ty,tz`` or a camera file.

    Camera files hold ``key = value`` lines for fx, fy, cx, cy, width, height and
    pose (16 numbers, row-major camera-to-world).
    """
    if spec.startswith("random:"):
        return VirtualCamera.random(int(spec[7:]))
    if spec == "identity":
        return VirtualCamera.default()
    if spec.startswith("look:"):
        v = _floats(spec[5:])
        if len(v) != 6:
            raise ValueError("look: needs eye and target, six numbers")
        return VirtualCamera.default(look_at(v[:3], v[3:]))
    if not Path(spec).is_file():
        raise ValueError(f"camera {spec!r} is neither random:SEED, identity, look:... nor a camera file")
    kv = {}
    for line in Path(spec).read_text().splitlines():
        s = line.split("#", 1)[0].strip()
        if s:
            k, sep, v = s.partition("=")
            if not sep:
                raise io.FormatError(f"{spec}: malformed line {line!r}")
            kv[k.strip()] = v.strip()
    return camera_from_params(kv)


def camera_params(cam: VirtualCamera) -> dict:
    return {"fx": repr(cam.fx), "fy": repr(cam.fy), "cx": repr(cam.cx), "cy": repr(cam.cy),
            "width": str(cam.width), "height": str(cam.height),
            "pose": " ".join(repr(float(v)) for v in cam.pose.as_matrix().ravel())}


def camera_from_params(kv: dict) -> VirtualCamera:
    try:
        pose = RigidTransform.from_matrix(np.array(_floats(kv["pose"])).reshape(4, 4))
        return VirtualCamera(float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
                             int(kv["width"]), int(kv["height"]), pose)
    except KeyError as exc:
        raise io.FormatError(f"camera description lacks {exc.args[0]}") from None


def render_capture(scene_path, camera: VirtualCamera, annotation_dir, out_prefix, hand_path=None,
                   n_points: int | None = DEFAULT_POINTS, seed: int = 0,
                   radius: float = DEFAULT_LABEL_RADIUS) -> tuple[SceneCapture, list[str]]:
    """Render one capture and write its four files; returns the capture and warnings."""
    _, scene = io.read_scene(scene_path)
    hand = load_hand(hand_path)
    per_object, warnings, tau, friction = [], [], None, None
    for o in scene.objects:
        f = Path(annotation_dir) / f"{o.object_id}.grasps"
        if not f.exists():
            warnings.append(f"no annotation file for {o.object_id} ({f})")
            per_object.append([])
            continue
        params, anns = io.read_annotations(f)
        per_object.append(anns)
        if "tau" in params:
            tau = float(params["tau"]) if tau is None else min(tau, float(params["tau"]))
        if "mu" in params:
            fm = (float(params["mu"]), int(params["edges"]))
            if friction is not None and friction != fm:
                warnings.append("annotation files disagree on the friction model")
            friction = fm
    cap = capture_scene(scene, camera, per_object, hand, n_points, seed, radius)
    paths = capture_paths(out_prefix)
    mu, edges = friction or (0.5, 8)
    params = {"scene": str(Path(scene_path).resolve()), "hand": _hand_ref(hand_path),
              "tau": repr(DEFAULT_TAU if tau is None else tau), "mu": repr(mu), "edges": str(edges),
              "radius": repr(float(radius)), "points": str(n_points if n_points is not None else -1),
              "seed": str(seed), **camera_params(camera),
              "depth": paths["depth"].name, "grasps": paths["grasps"].name, "labels": paths["labels"].name}
    io.write_depth(paths["depth"], cap.depth)
    io.write_annotations(paths["grasps"], cap.annotations,
                         {"frame": "camera", "scene": params["scene"], "hand": params["hand"]})
    io.write_labels(paths["labels"], cap.cloud, cap.targets)
    paths["manifest"].write_text("# contactgrasp capture v1\n"
                                 + "\n".join(f"{k} = {v}" for k, v in params.items()) + "\n")
    return cap, warnings


def read_capture_manifest(path) -> dict:
    kv = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        k, sep, v = s.partition("=")
        if not sep:
            raise io.FormatError(f"{path}:{no}: malformed line {line!r}")
        kv[k.strip()] = v.strip()
    return kv


def validate_capture(prefix) -> list[str]:
    """Every violated invariant of a capture written by ``render_capture``."""
    paths = capture_paths(prefix)
    kv = read_capture_manifest(paths["manifest"])
    base = paths["manifest"].parent
    for key in ("scene", "hand", "tau", "mu", "edges", "radius", "depth", "grasps", "labels"):
        if key not in kv:
            return [f"{paths['manifest']}: missing {key}"]
    cam = camera_from_params(kv)
    _, scene = io.read_scene(kv["scene"])
    hand = load_hand_ref(kv["hand"])
    depth = io.read_depth(base / kv["depth"])
    _, anns = io.read_annotations(base / kv["grasps"])
    cloud, targets = io.read_labels(base / kv["labels"])
    bad = []

    world = scene.combined[0] if scene.objects else None
    if depth.shape != (cam.height, cam.width):
        bad.append(f"depth: shape {depth.shape} does not match the camera")
    else:
        P, _ = back_project(depth, cam)
        if len(P):
            if not scene.objects:
                bad.append(f"depth: {len(P)} pixels hit an empty scene")
            else:
                d = distances(world, cam.pose.apply(P))
                n_off = int(np.sum(d > BACKPROJECT_TOL))
                if n_off:
                    bad.append(f"depth: {n_off} pixels back-project more than {BACKPROJECT_TOL} m "
                               f"from the scene (worst {d.max():.3g} m)")
    if len(cloud) and world is None:
        bad.append(f"labels: {len(cloud)} cloud points in an empty scene")
    elif len(cloud):
        d = distances(world, cam.pose.apply(cloud.points))
        if d.max() > BACKPROJECT_TOL:
            bad.append(f"labels: {int(np.sum(d > BACKPROJECT_TOL))} cloud points lie off the scene surfaces")

    to_cam = cam.pose.inverse()
    tau = float(kv["tau"])
    cache = {}
    for i, a in enumerate(anns, start=1):
        try:
            k = scene.index_of(a.object_id)
        except ValueError as exc:
            bad.append(f"grasp {i}: {exc}")
            continue
        if k not in cache:
            mesh = scene.objects[k].world_mesh.transformed(to_cam)
            origin, lam = torque_normalization(mesh)
            cache[k] = (mesh, FrictionModel(float(kv["mu"]), int(kv["edges"]), lam), origin,
                        ObjectProximity(mesh, hand))
        mesh, friction, origin, prox = cache[k]
        bad += [f"grasp {i}: {m}" for m in _grasp_violations(a, mesh, hand, tau, friction, origin, prox)]
        if not grasp_is_clear(scene, k, a.transformed(cam.pose, hand), hand):
            bad.append(f"grasp {i}: collides with the scene or approaches from below")

    bad += label_violations(cloud, targets, anns, hand, float(kv["radius"]))
    return bad


def label_violations(cloud, targets, anns, hand: HandModel, radius: float) -> list[str]:
    specs = default_specs(hand.inner_range, hand.spread_range)
    bad = []

    def report(field_name, mask, what):
        idx = np.nonzero(mask)[0]
        if len(idx):
            bad.append(f"labels: {field_name} {what} at {len(idx)} points (first: point {idx[0]})")

    g = targets.graspable.astype(int)
    report("graspable", (g != 0) & (g != 1), "not 0 or 1")
    on = g == 1
    off = ~on
    report("finger", on & ~np.isin(targets.finger, FINGERS), "not a finger id")
    report("finger", off & (targets.finger != NO_FINGER), "set on a non-graspable point")
    report("xy", on & ~(np.sum(np.nan_to_num(targets.xy, nan=9.0) ** 2, axis=1) <= 1.0 + 1e-6),
           "outside the unit disk")
    report("xy", off & ~np.all(np.isnan(targets.xy), axis=1), "set on a non-graspable point")
    for k, name in enumerate(JOINT_NAMES):
        b, r = targets.bins[:, k].astype(int), targets.res[:, k]
        report(f"{name}_bin", on & (b >= specs[name].n_bins), f"outside [0, {specs[name].n_bins})")
        report(f"{name}_bin", off & (b != NO_BIN), "set on a non-graspable point")
        report(f"{name}_res", on & ~((r >= -0.5) & (r < 0.5)), "outside [-0.5, 0.5)")
        report(f"{name}_res", off & ~np.isnan(r), "set on a non-graspable point")
    if bad:
        return bad
    ref = label_points(cloud, anns, radius=radius, specs=specs)
    if not np.array_equal(ref.graspable, targets.graspable):
        report("graspable", ref.graspable != targets.graspable, "disagrees with the annotations")
    elif not np.array_equal(ref.finger, targets.finger):
        report("finger", ref.finger != targets.finger, "disagrees with the annotations")
    else:
        on = ref.graspable == 1
        f32 = 1e-6
        report("xy", on & np.any(np.abs(ref.xy - targets.xy) > f32, axis=1), "disagrees with the annotations")
        for k, name in enumerate(JOINT_NAMES):
            report(f"{name}_bin", ref.bins[:, k] != targets.bins[:, k], "disagrees with the annotations")
            report(f"{name}_res", on & (np.abs(ref.res[:, k] - targets.res[:, k]) > f32),
                   "disagrees with the annotations")
    return bad
