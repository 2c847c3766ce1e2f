"""On-disk formats.

Annotation files (text, one grasp per line)
    Lines starting with ``#:`` carry ``key = value`` parameters; other ``#`` lines
    are comments.  Each record holds, space separated:

        object_id  pose(16, row-major 4x4)  spread theta1 theta2 theta3
        contacts(3 x [px py pz nx ny nz])  projections(3 x [x y])  anchor  epsilon  exact

    Floats are written with Python's shortest round-trip repr, so reading a file
    back reproduces every value bit for bit.

Depth maps (binary)
    b"CMGD", width and height as little-endian uint32, then width * height
    little-endian float32 meters in row-major order.

Label files (binary)
    b"CMGL", point count as little-endian uint32, then one packed record per point:
    position (3 x float32), normal (3 x float32), graspable (uint8), finger (uint8),
    x, y (float32), then (bin uint16, res float32) for m, ms, s1, s2.

Scene manifests (text)
    ``#:`` parameters as above, then one object per line:
    ``object_id mesh_path scale pose(16, row-major 4x4)``.

Object registries (text)
    One object per line: ``object_id mesh_path [scale]``; relative paths are
    resolved against the registry's directory.
"""
from __future__ import annotations

import shlex
from pathlib import Path

import numpy as np

from .contact_repr import CompactGrasp
from .geom import OrientedPoint, PointCloud, RigidTransform, load_mesh
from .hand import FINGERS, HandPose, JointConfig
from .labels import PointTargets
from .scene import Scene, SceneObject
from .synth import GraspAnnotation

DEPTH_MAGIC = b"CMGD"
LABEL_MAGIC = b"CMGL"
ANNOTATION_FIELDS = ("object_id pose[16] spread theta1 theta2 theta3 "
                     "contact1[6] contact2[6] contact3[6] x1 y1 x2 y2 x3 y3 anchor epsilon exact")
_RECORD_LEN = 1 + 16 + 4 + 18 + 6 + 3

LABEL_DTYPE = np.dtype([
    ("position", "<f4", (3,)), ("normal", "<f4", (3,)), ("graspable", "u1"), ("finger", "u1"),
    ("xy", "<f4", (2,)),
    ("m_bin", "<u2"), ("m_res", "<f4"), ("ms_bin", "<u2"), ("ms_res", "<f4"),
    ("s1_bin", "<u2"), ("s1_res", "<f4"), ("s2_bin", "<u2"), ("s2_res", "<f4"),
])


class FormatError(ValueError):
    """A file does not follow its documented format."""


def _num(x) -> str:
    return repr(float(x))


# -- parameters shared by the text formats ------------------------------------------

def format_params(params: dict) -> list[str]:
    return [f"#: {k} = {v}" for k, v in params.items()]


def parse_param_line(line: str, params: dict, path) -> None:
    key, sep, value = line[2:].partition("=")
    if not sep:
        raise FormatError(f"{path}: malformed parameter line {line!r}")
    params[key.strip()] = value.strip()


# -- annotations ------------------------------------------------------------------------

def annotation_record(a: GraspAnnotation) -> str:
    if any(c.isspace() for c in a.object_id) or not a.object_id:
        raise ValueError(f"object id {a.object_id!r} must be a non-empty word")
    vals = list(a.pose.transform.as_matrix().ravel()) + list(a.joints.as_array())
    for c in a.contacts:
        vals += list(c.position) + list(c.normal)
    for g in a.compact:
        vals += [g.x, g.y]
    return " ".join([a.object_id] + [_num(v) for v in vals]
                    + [str(a.anchor), _num(a.quality), str(int(a.exact_quality))])


def parse_annotation_record(line: str) -> GraspAnnotation:
    parts = line.split()
    if len(parts) != _RECORD_LEN:
        raise FormatError(f"expected {_RECORD_LEN} fields, found {len(parts)}")
    try:
        v = [float(x) for x in parts[1:-3]]
        anchor = int(parts[-3])
        quality = float(parts[-2])
        exact = parts[-1]
    except ValueError as exc:
        raise FormatError(f"bad number: {exc}") from None
    if exact not in ("0", "1"):
        raise FormatError(f"exact flag must be 0 or 1, got {exact!r}")
    try:
        pose = HandPose(RigidTransform.from_matrix(np.array(v[:16]).reshape(4, 4)))
        q = JointConfig.from_array(v[16:20])
        contacts = tuple(OrientedPoint(v[20 + 6 * k:23 + 6 * k], v[23 + 6 * k:26 + 6 * k]) for k in range(3))
        compact = []
        for f in FINGERS:
            x, y = v[38 + 2 * (f - 1)], v[39 + 2 * (f - 1)]
            s1, s2 = (s for s in FINGERS if s != f)
            compact.append(CompactGrasp(f, x, y, q.spread, q.finger(f), q.finger(s1), q.finger(s2)))
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return GraspAnnotation(parts[0], pose, q, contacts, tuple(compact), anchor, quality, exact == "1")


def write_annotations(path, annotations, params: dict | None = None) -> None:
    lines = ["# contactgrasp annotations v1", f"# fields: {ANNOTATION_FIELDS}"]
    lines += format_params(params or {})
    lines += [annotation_record(a) for a in annotations]
    Path(path).write_text("\n".join(lines) + "\n")


def read_annotations(path) -> tuple[dict, list[GraspAnnotation]]:
    params, out = {}, []
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#:"):
            parse_param_line(s, params, path)
        elif not s.startswith("#"):
            try:
                out.append(parse_annotation_record(s))
            except FormatError as exc:
                raise FormatError(f"{path}:{no}: {exc}") from None
    return params, out


# -- depth maps -------------------------------------------------------------------------

def write_depth(path, depth) -> None:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth map must be two-dimensional")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(np.array([w, h], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DEPTH_MAGIC:
        raise FormatError(f"{path}: not a depth file (bad magic)")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    w, h = (int(x) for x in np.frombuffer(raw, dtype="<u4", count=2, offset=4))
    if len(raw) != 12 + 4 * w * h:
        raise FormatError(f"{path}: expected {w}x{h} pixels, file holds {(len(raw) - 12) / 4:g}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(float)


# -- labels -----------------------------------------------------------------------------

def write_labels(path, cloud: PointCloud, targets: PointTargets) -> None:
    if len(cloud) != len(targets):
        raise ValueError("cloud and targets differ in length")
    rec = np.zeros(len(cloud), dtype=LABEL_DTYPE)
    rec["position"] = cloud.points
    rec["normal"] = cloud.normals
    rec["graspable"] = targets.graspable
    rec["finger"] = targets.finger
    rec["xy"] = targets.xy
    for k, name in enumerate(("m", "ms", "s1", "s2")):
        rec[f"{name}_bin"] = targets.bins[:, k]
        res = targets.res[:, k].astype("<f4")
        # float32 can round a residual just below 0.5 up to it
        res[res >= 0.5] = np.nextafter(np.float32(0.5), np.float32(0.0))
        rec[f"{name}_res"] = res
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(np.array([len(rec)], dtype="<u4").tobytes())
        fh.write(rec.tobytes())


def read_labels(path) -> tuple[PointCloud, PointTargets]:
    raw = Path(path).read_bytes()
    if raw[:4] != LABEL_MAGIC:
        raise FormatError(f"{path}: not a label file (bad magic)")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    n = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if len(raw) != 8 + n * LABEL_DTYPE.itemsize:
        raise FormatError(f"{path}: header says {n} points, file holds "
                          f"{(len(raw) - 8) / LABEL_DTYPE.itemsize:g}")
    rec = np.frombuffer(raw, dtype=LABEL_DTYPE, offset=8)
    cloud = PointCloud(rec["position"].astype(float), rec["normal"].astype(float))
    names = ("m", "ms", "s1", "s2")
    targets = PointTargets(rec["graspable"].copy(), rec["finger"].copy(), rec["xy"].astype(float),
                           np.stack([rec[f"{k}_bin"] for k in names], axis=1).astype(np.uint16),
                           np.stack([rec[f"{k}_res"] for k in names], axis=1).astype(float))
    return cloud, targets


# -- scenes and registries --------------------------------------------------------------

def read_registry(path) -> list[tuple[str, Path, float]]:
    path = Path(path)
    out = []
    for no, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = shlex.split(s)
        if len(parts) not in (2, 3):
            raise FormatError(f"{path}:{no}: expected 'object_id mesh_path [scale]'")
        try:
            scale = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise FormatError(f"{path}:{no}: bad scale {parts[2]!r}") from None
        if not scale > 0:
            raise FormatError(f"{path}:{no}: scale must be positive")
        mesh_path = Path(parts[1])
        if not mesh_path.is_absolute():
            mesh_path = (path.parent / mesh_path).resolve()
        out.append((parts[0], mesh_path, scale))
    if not out:
        raise FormatError(f"{path}: no objects listed")
    return out


def write_scene(path, scene: Scene, params: dict | None = None) -> None:
    lines = ["# contactgrasp scene v1", "# fields: object_id mesh_path scale pose[16]"]
    lines += format_params(params or {})
    for o in scene.objects:
        M = o.pose.as_matrix().ravel()
        lines.append(" ".join([o.object_id, shlex.quote(o.mesh_path), _num(o.scale)] + [_num(v) for v in M]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path) -> tuple[dict, Scene]:
    params, objs, cache = {}, [], {}
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#:"):
            parse_param_line(s, params, path)
            continue
        if s.startswith("#"):
            continue
        parts = shlex.split(s)
        if len(parts) != 19:
            raise FormatError(f"{path}:{no}: expected 19 fields, found {len(parts)}")
        try:
            scale = float(parts[2])
            T = RigidTransform.from_matrix(np.array([float(x) for x in parts[3:]]).reshape(4, 4))
        except ValueError as exc:
            raise FormatError(f"{path}:{no}: {exc}") from None
        key = (parts[1], scale)
        if key not in cache:
            cache[key] = load_mesh(parts[1], scale)
        objs.append(SceneObject(parts[0], cache[key], T, parts[1], scale))
    return params, Scene(tuple(objs))
