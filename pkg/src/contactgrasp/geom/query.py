"""Distance, ray and sampling queries on triangle meshes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .mesh import TriangleMesh
from .points import OrientedPoint


@dataclass(frozen=True)
class RayHit:
    distance: float
    point: np.ndarray
    normal: np.ndarray
    triangle: int


def _interp_normals(mesh: TriangleMesh, tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    vn = mesh.normals[mesh.triangles[tri]]  # (n, 3, 3)
    n = np.einsum("ij,ijk->ik", bary, vn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    # opposing vertex normals can cancel; the face normal is the only sane answer there
    bad = norm[:, 0] < 1e-12
    n = np.where(bad[:, None], mesh.face_normals[tri], n / np.where(bad[:, None], 1.0, norm))
    return n


def ray_cast_many(mesh: TriangleMesh, origins, directions, tmin: float = _kernels.RAY_TMIN):
    """Nearest hits for a batch of rays.

    Returns (t, triangle, points, normals); misses have t = inf and triangle = -1.
    Normals are interpolated and flipped to face against the ray.
    """
    o = np.ascontiguousarray(np.asarray(origins, dtype=float).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, dtype=float).reshape(-1, 3))
    if mesh.is_empty:
        n = len(o)
        return np.full(n, np.inf), -np.ones(n, np.int64), np.zeros((n, 3)), np.zeros((n, 3))
    t, tri, u, v = _kernels.ray_first_hit(*mesh.bvh, mesh.triangle_vertices, mesh.valid, o, d, tmin)
    hit = tri >= 0
    pts = np.zeros_like(o)
    nrm = np.zeros_like(o)
    if hit.any():
        pts[hit] = o[hit] + t[hit, None] * d[hit]
        bary = np.stack([1.0 - u[hit] - v[hit], u[hit], v[hit]], axis=1)
        n = _interp_normals(mesh, tri[hit], bary)
        flip = np.einsum("ij,ij->i", n, d[hit]) > 0
        n[flip] *= -1.0
        nrm[hit] = n
    return t, tri, pts, nrm


def ray_cast(mesh: TriangleMesh, origin, direction) -> RayHit | None:
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    t, tri, p, n = ray_cast_many(mesh, origin, direction)
    if tri[0] < 0:
        return None
    return RayHit(float(t[0]), p[0], n[0], int(tri[0]))


def closest_points(mesh: TriangleMesh, points, cap: float = np.inf):
    """Exact closest surface points: returns (distance, point, triangle, barycentric).

    Points farther than ``cap`` from the surface get distance inf and triangle -1.
    """
    q = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    if mesh.is_empty:
        raise ValueError("closest-point query on an empty mesh")
    return _kernels.closest_points(*mesh.bvh, mesh.triangle_vertices, q, float(cap))


def min_distance(mesh: TriangleMesh, point) -> float:
    return float(closest_points(mesh, point)[0][0])


def distances(mesh: TriangleMesh, points) -> np.ndarray:
    return closest_points(mesh, points)[0]


def surface_normals_at(mesh: TriangleMesh, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest surface point and its interpolated normal; returns (dist, point, normal)."""
    d, q, tri, bary = closest_points(mesh, points)
    return d, q, _interp_normals(mesh, tri, bary)


def signed_distances(mesh: TriangleMesh, points, cap: float = np.inf) -> np.ndarray:
    """Distance to the surface, negative inside.  Requires a closed, consistently
    oriented mesh; the sign comes from the angle-weighted pseudonormal of the closest
    feature.  Points farther than ``cap`` from the surface (either side) get +inf."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    d, q, tri, bary = closest_points(mesh, p, cap)
    out = np.full(len(p), np.inf)
    hit = tri >= 0
    if not hit.any():
        return out
    p, d, q, tri, bary = p[hit], d[hit], q[hit], tri[hit], bary[hit]
    vpn, epn, fpn = mesh.pseudonormals
    zero = bary == 0.0
    nz = 3 - zero.sum(axis=1)
    pn = fpn[tri].copy()
    edge = nz == 2
    if edge.any():
        k = np.argmax(zero[edge], axis=1)
        pn[edge] = epn[tri[edge], k]
    vert = nz == 1
    if vert.any():
        k = np.argmax(~zero[vert], axis=1)
        pn[vert] = vpn[tri[vert], k]
    s = np.einsum("ij,ij->i", p - q, pn)
    out[hit] = np.where(s < 0, -d, d)
    return out


def mesh_distance(a: TriangleMesh, b: TriangleMesh, cap: float = np.inf) -> float:
    """Exact distance between two closed meshes, 0 when they cross or one holds the other.

    Returns inf when the meshes are at least ``cap`` apart.
    """
    if a.is_empty or b.is_empty:
        return np.inf
    ta, tb = a.triangle_vertices, b.triangle_vertices
    if not np.isfinite(cap):
        # any vertex pair bounds the answer from above
        cap = float(cKDTree(b.vertices).query(a.vertices)[0].min()) * (1 + 1e-9) + 1e-12
    alo, ahi = ta.min(axis=1), ta.max(axis=1)
    blo, bhi = tb.min(axis=1), tb.max(axis=1)
    # keep only triangle pairs whose boxes are closer than cap along every axis
    ka = np.nonzero(np.all((alo <= bhi.max(axis=0) + cap) & (ahi >= blo.min(axis=0) - cap), axis=1))[0]
    kb = np.nonzero(np.all((blo <= ahi.max(axis=0) + cap) & (bhi >= alo.min(axis=0) - cap), axis=1))[0]
    best = np.inf
    if len(ka) and len(kb):
        gap = np.maximum(np.maximum(alo[ka, None, :] - bhi[None, kb, :], blo[None, kb, :] - ahi[ka, None, :]), 0.0)
        ia, ib = np.nonzero(np.sum(gap * gap, axis=2) < cap * cap)
        if len(ia):
            best = float(np.sqrt(_kernels.pair_min_dist2(ta, tb, ka[ia], kb[ib])))
    if best == 0.0:
        return 0.0
    if signed_distances(b, a.vertices[:1])[0] < 0 or signed_distances(a, b.vertices[:1])[0] < 0:
        return 0.0
    return best if best < cap else np.inf


def voxel_origin(mesh: TriangleMesh, voxel: float) -> np.ndarray:
    # the bounding-box center sits at a voxel center, which keeps the faces of
    # symmetric shapes off voxel boundaries
    lo, hi = mesh.bounds
    center = 0.5 * (lo + hi)
    k = np.ceil(0.5 * (hi - lo) / voxel) + 1.0
    return center - 0.5 * voxel - k * voxel


def voxel_downsample(mesh: TriangleMesh, voxel: float) -> list[OrientedPoint]:
    """One surface sample per occupied voxel.

    The grid is aligned so the bounding-box center is a voxel center, and voxels
    are half-open.  Within each voxel the sample is the surface point nearest
    the voxel center, taken over every triangle piece clipped to that voxel; ties
    go to the lowest triangle index.  Output is sorted by voxel index.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if mesh.is_empty:
        return []
    origin = voxel_origin(mesh, voxel)
    keys, tris, pts, dists = _kernels.voxel_candidates(
        mesh.triangle_vertices, mesh.valid, origin, float(voxel))
    if len(keys) == 0:
        return []
    order = np.lexsort((tris, dists, keys[:, 2], keys[:, 1], keys[:, 0]))
    keys, tris, pts = keys[order], tris[order], pts[order]
    first = np.ones(len(keys), dtype=bool)
    first[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    sel_tri = tris[first]
    sel_pts = pts[first]
    # barycentric of the chosen point inside its triangle, for normal interpolation
    tv = mesh.triangle_vertices[sel_tri]
    bary = _barycentric(sel_pts, tv)
    normals = _interp_normals(mesh, sel_tri, bary)
    return [OrientedPoint(p, n) for p, n in zip(sel_pts, normals)]


def voxel_keys(points, origin, voxel) -> np.ndarray:
    return np.floor((np.asarray(points) - origin) / voxel).astype(np.int64)


def _barycentric(p: np.ndarray, tv: np.ndarray) -> np.ndarray:
    a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    den = np.where(den == 0, 1.0, den)
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.clip(np.stack([1.0 - v - w, v, w], axis=1), 0.0, 1.0)


def sample_surface_grid(mesh: TriangleMesh, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic dense surface samples with face normals.

    Each triangle is swept from the vertex opposite its shortest edge in levels
    parallel to that edge; levels are at most ``spacing`` apart along the long
    edges and each level is split into pieces at most ``spacing`` long.  Every
    vertex is a sample, and slivers get samples in proportion to their width
    rather than their length squared.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if mesh.is_empty:
        return np.zeros((0, 3)), np.zeros((0, 3))
    P, N = [], []
    fn = mesh.face_normals
    for t, tri in enumerate(mesh.triangle_vertices):
        opp = np.linalg.norm(tri[[2, 0, 1]] - tri[[1, 2, 0]], axis=1)  # edge opposite each vertex
        k = int(np.argmin(opp))
        a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
        k1 = max(1, math.ceil(max(np.linalg.norm(b - a), np.linalg.norm(c - a)) / spacing))
        for i in range(k1 + 1):
            s = i / k1
            k2 = math.ceil(s * opp[k] / spacing)
            w = np.arange(k2 + 1) / k2 if k2 > 0 else np.zeros(1)
            P.append(a + s * (b - a) + (s * w)[:, None] * (c - b))
            N.append(np.broadcast_to(fn[t], (len(w), 3)))
    P = np.concatenate(P)
    N = np.concatenate(N)
    # shared vertices and edges appear once per incident triangle; dedupe exact copies
    _, idx = np.unique(np.round(P, 12), axis=0, return_index=True)
    idx.sort()
    return P[idx], N[idx]
