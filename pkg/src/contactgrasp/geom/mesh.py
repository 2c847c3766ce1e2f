"""Triangle meshes, primitive builders and OFF/OBJ readers."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .transform import RigidTransform


def _frozen(a, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


def area_weighted_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Vertex normals as the normalized sum of incident (unnormalized) face normals."""
    tv = vertices[triangles]
    fn = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    vn = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(vn, triangles[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    # isolated vertices get an arbitrary but valid unit normal
    vn = np.where(norm > 0, vn / np.where(norm > 0, norm, 1.0), [0.0, 0.0, 1.0])
    return vn


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """An immutable triangle mesh.  Spatial indices are built lazily and cached."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(V)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        if self.normals is None:
            N = area_weighted_normals(V, F)
        else:
            N = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if N.shape != V.shape:
                raise ValueError("normals must match vertices")
            norms = np.linalg.norm(N, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("vertex normals must be unit length")
        object.__setattr__(self, "vertices", _frozen(V, float))
        object.__setattr__(self, "triangles", _frozen(F, np.int64))
        object.__setattr__(self, "normals", _frozen(N, float))

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @cached_property
    def triangle_vertices(self) -> np.ndarray:
        return np.ascontiguousarray(self.vertices[self.triangles])

    @cached_property
    def face_normals(self) -> np.ndarray:
        tv = self.triangle_vertices
        fn = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        n = np.linalg.norm(fn, axis=1, keepdims=True)
        return fn / np.where(n > 0, n, 1.0)

    @cached_property
    def areas(self) -> np.ndarray:
        tv = self.triangle_vertices
        return 0.5 * np.linalg.norm(np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]), axis=1)

    @cached_property
    def valid(self) -> np.ndarray:
        return self.areas >= _kernels.DEGENERATE_AREA

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bvh(self):
        return _kernels.build_bvh(self.triangle_vertices)

    @cached_property
    def _welded(self) -> tuple[np.ndarray, np.ndarray]:
        # position-welded topology; duplicate vertices (e.g. hard-edged boxes) share an id
        _, inv = np.unique(self.vertices, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        return inv[self.triangles], inv

    @cached_property
    def pseudonormals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Angle-weighted vertex, edge and face pseudonormals for inside/outside tests.

        Returns (vertex pn per triangle corner (T,3,3), edge pn per triangle edge (T,3,3),
        face normals (T,3)).  Edge k of a triangle is opposite corner k.
        """
        tri_w, inv = self._welded
        tv = self.triangle_vertices
        fn = self.face_normals
        nv = int(inv.max()) + 1 if len(inv) else 0
        vpn = np.zeros((nv, 3))
        for k in range(3):
            e1 = tv[:, (k + 1) % 3] - tv[:, k]
            e2 = tv[:, (k + 2) % 3] - tv[:, k]
            cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vpn, tri_w[:, k], ang[:, None] * fn)
        edges = []
        for k in range(3):
            a = tri_w[:, (k + 1) % 3]
            b = tri_w[:, (k + 2) % 3]
            edges.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
        all_edges = np.concatenate(edges)
        uniq, einv = np.unique(all_edges, axis=0, return_inverse=True)
        einv = einv.reshape(-1)
        epn = np.zeros((len(uniq), 3))
        np.add.at(epn, einv, np.tile(fn, (3, 1)))
        T = len(self.triangles)
        edge_pn = epn[einv].reshape(3, T, 3).transpose(1, 0, 2)
        vert_pn = vpn[tri_w]
        return np.ascontiguousarray(vert_pn), np.ascontiguousarray(edge_pn), fn

    def transformed(self, T: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(T.apply(self.vertices), self.triangles, T.apply_vectors(self.normals))

    def scaled(self, s: float) -> "TriangleMesh":
        return TriangleMesh(self.vertices * s, self.triangles, self.normals)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def volume_centroid(self) -> np.ndarray:
        """Center of mass of the enclosed solid (divergence theorem); falls back to the
        vertex centroid for open or zero-volume meshes."""
        tv = self.triangle_vertices
        vol6 = np.einsum("ij,ij->i", tv[:, 0], np.cross(tv[:, 1], tv[:, 2]))
        total = vol6.sum()
        if abs(total) < 1e-18:
            return self.centroid()
        return (vol6[:, None] * tv.sum(axis=1)).sum(axis=0) / (4.0 * total)

    def is_watertight(self) -> bool:
        tri_w, _ = self._welded
        e = np.concatenate([tri_w[:, [0, 1]], tri_w[:, [1, 2]], tri_w[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def concatenate(meshes) -> tuple[TriangleMesh, np.ndarray]:
    """Merge meshes; returns the merged mesh and the source-mesh id of each triangle."""
    V, F, N, owner = [], [], [], []
    off = 0
    for i, m in enumerate(meshes):
        V.append(m.vertices)
        F.append(m.triangles + off)
        N.append(m.normals)
        owner.append(np.full(len(m.triangles), i, dtype=np.int64))
        off += len(m.vertices)
    if not V:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64)), np.zeros(0, np.int64)
    return TriangleMesh(np.concatenate(V), np.concatenate(F), np.concatenate(N)), np.concatenate(owner)


# -- primitive builders -------------------------------------------------------

def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with hard edges (4 vertices per face, face normals)."""
    h = 0.5 * np.asarray(extents, dtype=float)
    c = np.asarray(center, dtype=float)
    V, F, N = [], [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            n = np.zeros(3)
            n[axis] = sign
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v = np.cross(n, u)
            base = len(V)
            for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = n * h + a * u * h + b * v * h
                V.append(c + p)
                N.append(n)
            F.extend([[base, base + 1, base + 2], [base, base + 2, base + 3]])
    return TriangleMesh(np.array(V), np.array(F), np.array(N))


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    V = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        F2 = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            F2 += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = F2
    U = np.array(V)
    return TriangleMesh(U * radius + np.asarray(center, float), np.array(F), U)


def cylinder(radius: float = 1.0, height: float = 1.0, sections: int = 32,
             axis: int = 2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed cylinder with hard rim edges; side normals are radial."""
    ang = 2 * np.pi * np.arange(sections) / sections
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    h = 0.5 * height
    V, N, F = [], [], []
    # side
    for z in (-h, h):
        for c, s in ring:
            V.append([radius * c, radius * s, z])
            N.append([c, s, 0.0])
    for i in range(sections):
        j = (i + 1) % sections
        F += [[i, j, sections + j], [i, sections + j, sections + i]]
    # caps
    for z, sgn in ((-h, -1.0), (h, 1.0)):
        base = len(V)
        V.append([0.0, 0.0, z])
        N.append([0.0, 0.0, sgn])
        for c, s in ring:
            V.append([radius * c, radius * s, z])
            N.append([0.0, 0.0, sgn])
        for i in range(sections):
            a, b = base + 1 + i, base + 1 + (i + 1) % sections
            F.append([base, b, a] if sgn < 0 else [base, a, b])
    V = np.array(V)
    N = np.array(N)
    # cyclic axis permutation keeps the winding orientation
    perm = {0: [2, 0, 1], 1: [1, 2, 0], 2: [0, 1, 2]}[axis]
    V = V[:, perm]
    N = N[:, perm]
    return TriangleMesh(V + np.asarray(center, float), np.array(F), N)


def plane(size: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Square in the xy-plane facing +z."""
    h = 0.5 * size
    c = np.asarray(center, dtype=float)
    V = np.array([[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]], dtype=float) + c
    return TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]), np.tile([0.0, 0.0, 1.0], (4, 1)))


def convex_hull_mesh(points) -> TriangleMesh:
    """Closed, outward-wound triangle mesh of the convex hull of a point set."""
    from scipy.spatial import ConvexHull

    P = np.asarray(points, dtype=float)
    hull = ConvexHull(P)
    used = np.unique(hull.simplices)
    remap = -np.ones(len(P), dtype=np.int64)
    remap[used] = np.arange(len(used))
    V = P[used]
    F = remap[hull.simplices]
    c = V.mean(axis=0)
    tv = V[F]
    fn = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    flip = np.einsum("ij,ij->i", fn, tv[:, 0] - c) < 0
    F[flip] = F[flip][:, [0, 2, 1]]
    return TriangleMesh(V, F)


# -- file formats --------------------------------------------------------------

def _fan(poly):
    return [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]


def read_off(path) -> TriangleMesh:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line)
    if not tokens:
        raise ValueError(f"{path}: empty OFF file")
    head = tokens[0]
    rest = tokens[1:]
    if head.startswith("OFF"):
        tail = head[3:].split()
        if tail:
            rest = [" ".join(tail)] + rest
    else:
        raise ValueError(f"{path}: missing OFF header")
    nv, nf = (int(x) for x in rest[0].split()[:2])
    V = np.array([[float(x) for x in rest[1 + i].split()[:3]] for i in range(nv)]).reshape(-1, 3)
    F = []
    for i in range(nf):
        vals = [int(x) for x in rest[1 + nv + i].split()]
        k = vals[0]
        F += _fan(vals[1:1 + k])
    return TriangleMesh(V, np.array(F, dtype=np.int64).reshape(-1, 3))


def read_obj(path) -> TriangleMesh:
    V, F = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            V.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(V) + i)
            F += _fan(idx)
    return TriangleMesh(np.array(V, dtype=float).reshape(-1, 3), np.array(F, dtype=np.int64).reshape(-1, 3))


def load_mesh(path, scale: float = 1.0) -> TriangleMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".off":
        mesh = read_off(path)
    elif suffix == ".obj":
        mesh = read_obj(path)
    else:
        raise ValueError(f"unsupported mesh format: {path.suffix}")
    return mesh.scaled(scale) if scale != 1.0 else mesh


def write_off(mesh: TriangleMesh, path) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")
