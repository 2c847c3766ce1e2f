"""Compiled kernels for the triangle BVH: build, nearest ray hit, closest point.

Nodes are stored flat.  A node is a leaf when ``count > 0``; its triangles are
``order[start:start + count]``.  Interior nodes store child indices in
``left``/``right``.
"""
import numpy as np
from numba import njit

LEAF_SIZE = 4
DEGENERATE_AREA = 1e-14
RAY_TMIN = 1e-9


@njit(cache=True)
def build_bvh(tv):
    n = tv.shape[0]
    cent = np.empty((n, 3))
    tlo = np.empty((n, 3))
    thi = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            a, b, c = tv[i, 0, k], tv[i, 1, k], tv[i, 2, k]
            tlo[i, k] = min(a, min(b, c))
            thi[i, k] = max(a, max(b, c))
            cent[i, k] = (a + b + c) / 3.0
    order = np.arange(n)
    cap = max(1, 2 * n)
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    left = -np.ones(cap, np.int64)
    right = -np.ones(cap, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    stack = np.empty((cap, 3), np.int64)  # node, begin, end
    nnodes = 1
    sp = 0
    stack[sp, 0] = 0
    stack[sp, 1] = 0
    stack[sp, 2] = n
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        b = stack[sp, 1]
        e = stack[sp, 2]
        for k in range(3):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for j in range(b, e):
            t = order[j]
            for k in range(3):
                lo[node, k] = min(lo[node, k], tlo[t, k])
                hi[node, k] = max(hi[node, k], thi[t, k])
                clo[k] = min(clo[k], cent[t, k])
                chi[k] = max(chi[k], cent[t, k])
        m = e - b
        axis = 0
        ext = chi - clo
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        if m <= LEAF_SIZE or ext[axis] <= 0.0:
            start[node] = b
            count[node] = m
            continue
        keys = np.empty(m)
        for j in range(m):
            keys[j] = cent[order[b + j], axis]
        # stable argsort keeps the build independent of sort implementation details
        idx = np.argsort(keys, kind="mergesort")
        seg = order[b:e].copy()
        for j in range(m):
            order[b + j] = seg[idx[j]]
        mid = b + m // 2
        l_node = nnodes
        r_node = nnodes + 1
        nnodes += 2
        left[node] = l_node
        right[node] = r_node
        stack[sp, 0] = l_node
        stack[sp, 1] = b
        stack[sp, 2] = mid
        sp += 1
        stack[sp, 0] = r_node
        stack[sp, 1] = mid
        stack[sp, 2] = e
        sp += 1
    return lo[:nnodes].copy(), hi[:nnodes].copy(), left[:nnodes].copy(), right[:nnodes].copy(), \
        start[:nnodes].copy(), count[:nnodes].copy(), order


@njit(cache=True)
def _ray_box(o, inv, lo, hi, tmax):
    t0 = 0.0
    t1 = tmax
    for k in range(3):
        if inv[k] == np.inf or inv[k] == -np.inf:
            if o[k] < lo[k] or o[k] > hi[k]:
                return False
            continue
        ta = (lo[k] - o[k]) * inv[k]
        tb = (hi[k] - o[k]) * inv[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def _ray_tri(o, d, tv, t):
    # Moller-Trumbore; returns (t, u, v) with t = inf on miss.
    e1x = tv[t, 1, 0] - tv[t, 0, 0]
    e1y = tv[t, 1, 1] - tv[t, 0, 1]
    e1z = tv[t, 1, 2] - tv[t, 0, 2]
    e2x = tv[t, 2, 0] - tv[t, 0, 0]
    e2y = tv[t, 2, 1] - tv[t, 0, 1]
    e2z = tv[t, 2, 2] - tv[t, 0, 2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = o[0] - tv[t, 0, 0]
    sy = o[1] - tv[t, 0, 1]
    sz = o[2] - tv[t, 0, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    tt = (e2x * qx + e2y * qy + e2z * qz) * inv
    return tt, u, v


@njit(cache=True, nogil=True)
def ray_first_hit(lo, hi, left, right, start, count, order, tv, valid, origins, dirs, tmin):
    """Nearest hit per ray: returns (t, tri, u, v); tri = -1 on miss."""
    nr = origins.shape[0]
    out_t = np.full(nr, np.inf)
    out_tri = -np.ones(nr, np.int64)
    out_u = np.zeros(nr)
    out_v = np.zeros(nr)
    if lo.shape[0] == 0 or order.shape[0] == 0:
        return out_t, out_tri, out_u, out_v
    stack = np.empty(128, np.int64)
    inv = np.empty(3)
    for r in range(nr):
        o = origins[r]
        d = dirs[r]
        for k in range(3):
            inv[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
        best = np.inf
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(o, inv, lo[node], hi[node], best):
                continue
            if count[node] > 0:
                for j in range(start[node], start[node] + count[node]):
                    t = order[j]
                    if not valid[t]:
                        continue
                    tt, u, v = _ray_tri(o, d, tv, t)
                    if tt > tmin and tt < best:
                        best = tt
                        out_t[r] = tt
                        out_tri[r] = t
                        out_u[r] = u
                        out_v[r] = v
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
    return out_t, out_tri, out_u, out_v


@njit(cache=True)
def _closest_bary(px, py, pz, tv, t):
    """Barycentric weights of the point of triangle t nearest to p (Ericson,
    Real-Time Collision Detection 5.1.5), scalar arithmetic only."""
    ax, ay, az = tv[t, 0, 0], tv[t, 0, 1], tv[t, 0, 2]
    bx, by, bz = tv[t, 1, 0], tv[t, 1, 1], tv[t, 1, 2]
    cx, cy, cz = tv[t, 2, 0], tv[t, 2, 1], tv[t, 2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3) if d1 != d3 else 0.0
        return 1.0 - v, v, 0.0
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6) if d2 != d6 else 0.0
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / den if den != 0.0 else 0.0
        return 0.0, 1.0 - w, w
    den = va + vb + vc
    if den == 0.0:
        # zero-area triangle that slipped through: nearest vertex
        da = apx * apx + apy * apy + apz * apz
        db = bpx * bpx + bpy * bpy + bpz * bpz
        dc = cpx * cpx + cpy * cpy + cpz * cpz
        if da <= db and da <= dc:
            return 1.0, 0.0, 0.0
        if db <= dc:
            return 0.0, 1.0, 0.0
        return 0.0, 0.0, 1.0
    v = vb / den
    w = vc / den
    return 1.0 - v - w, v, w


@njit(cache=True)
def closest_on_triangle(p, a, b, c):
    """Closest point on triangle abc to p; returns (point, weights for a, b, c)."""
    tv = np.empty((1, 3, 3))
    tv[0, 0] = a
    tv[0, 1] = b
    tv[0, 2] = c
    ba, bb, bc = _closest_bary(p[0], p[1], p[2], tv, 0)
    return ba * a + bb * b + bc * c, ba, bb, bc


@njit(cache=True)
def _box_dist2(p, lo, hi):
    s = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            s += (lo[k] - p[k]) ** 2
        elif p[k] > hi[k]:
            s += (p[k] - hi[k]) ** 2
    return s


@njit(cache=True)
def closest_points(lo, hi, left, right, start, count, order, tv, points, cap=np.inf):
    """Nearest surface point per query: returns (dist, point, tri, bary).

    Queries with no surface point closer than ``cap`` get dist = inf and tri = -1.
    """
    n = points.shape[0]
    out_d = np.full(n, np.inf)
    out_p = np.zeros((n, 3))
    out_tri = -np.ones(n, np.int64)
    out_b = np.zeros((n, 3))
    if lo.shape[0] == 0 or order.shape[0] == 0:
        return out_d, out_p, out_tri, out_b
    stack = np.empty(128, np.int64)
    cap2 = cap * cap
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = cap2
        found = -1
        fa, fb, fc = 0.0, 0.0, 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(points[i], lo[node], hi[node]) > best:
                continue
            if count[node] > 0:
                for j in range(start[node], start[node] + count[node]):
                    t = order[j]
                    ba, bb, bc = _closest_bary(px, py, pz, tv, t)
                    qx = ba * tv[t, 0, 0] + bb * tv[t, 1, 0] + bc * tv[t, 2, 0]
                    qy = ba * tv[t, 0, 1] + bb * tv[t, 1, 1] + bc * tv[t, 2, 1]
                    qz = ba * tv[t, 0, 2] + bb * tv[t, 1, 2] + bc * tv[t, 2, 2]
                    d2 = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
                    # ties resolved toward the lowest triangle index for determinism
                    if d2 < best or (d2 == best and (found < 0 or t < found)):
                        best = d2
                        found = t
                        fa, fb, fc = ba, bb, bc
            else:
                l_node = left[node]
                r_node = right[node]
                dl = _box_dist2(points[i], lo[l_node], hi[l_node])
                dr = _box_dist2(points[i], lo[r_node], hi[r_node])
                # push the farther child first so the nearer one is visited first
                if dl < dr:
                    stack[sp] = r_node
                    sp += 1
                    stack[sp] = l_node
                    sp += 1
                else:
                    stack[sp] = l_node
                    sp += 1
                    stack[sp] = r_node
                    sp += 1
        if found >= 0:
            out_d[i] = np.sqrt(best)
            out_tri[i] = found
            out_b[i, 0] = fa
            out_b[i, 1] = fb
            out_b[i, 2] = fc
            for k in range(3):
                out_p[i, k] = fa * tv[found, 0, k] + fb * tv[found, 1, k] + fc * tv[found, 2, k]
    return out_d, out_p, out_tri, out_b


@njit(cache=True)
def clip_polygon_to_box(poly, npoly, lo, hi):
    """Sutherland-Hodgman clip of a convex polygon against the closed box [lo, hi]."""
    cur = poly.copy()
    n = npoly
    buf = np.empty((poly.shape[0], 3))
    for k in range(3):
        for side in range(2):
            if n == 0:
                return cur, 0
            m = 0
            for i in range(n):
                a = cur[i]
                b = cur[(i + 1) % n]
                if side == 0:
                    da = a[k] - lo[k]
                    db = b[k] - lo[k]
                else:
                    da = hi[k] - a[k]
                    db = hi[k] - b[k]
                if da >= 0.0:
                    buf[m] = a
                    m += 1
                if (da >= 0.0) != (db >= 0.0):
                    s = da / (da - db)
                    q = a + s * (b - a)
                    # pin the crossing exactly onto the clip plane
                    q[k] = lo[k] if side == 0 else hi[k]
                    buf[m] = q
                    m += 1
            cur, buf = buf.copy(), cur
            n = m
    return cur, n


@njit(cache=True)
def closest_on_polygon(p, poly, n):
    """Closest point to p on a planar convex polygon (fan-triangulated)."""
    if n == 1:
        return poly[0].copy()
    best = np.inf
    out = poly[0].copy()
    if n == 2:
        q, _, _, _ = closest_on_triangle(p, poly[0], poly[1], poly[1])
        return q
    for i in range(1, n - 1):
        q, _, _, _ = closest_on_triangle(p, poly[0], poly[i], poly[i + 1])
        d = np.dot(p - q, p - q)
        if d < best:
            best = d
            out = q
    return out


@njit(cache=True)
def voxel_candidates(tv, valid, origin, voxel):
    """For every (triangle, voxel) pair with a nonempty half-open overlap, return the
    voxel index, the triangle id, and the closest point of the clipped piece to the
    voxel center."""
    n = tv.shape[0]
    cap = 64
    keys = np.empty((cap, 3), np.int64)
    tris = np.empty(cap, np.int64)
    pts = np.empty((cap, 3))
    dists = np.empty(cap)
    m = 0
    poly = np.zeros((12, 3))
    lo = np.empty(3)
    hi = np.empty(3)
    center = np.empty(3)
    for t in range(n):
        if not valid[t]:
            continue
        i0 = np.empty(3, np.int64)
        i1 = np.empty(3, np.int64)
        for k in range(3):
            a = min(tv[t, 0, k], min(tv[t, 1, k], tv[t, 2, k]))
            b = max(tv[t, 0, k], max(tv[t, 1, k], tv[t, 2, k]))
            i0[k] = int(np.floor((a - origin[k]) / voxel))
            i1[k] = int(np.floor((b - origin[k]) / voxel))
        for ix in range(i0[0], i1[0] + 1):
            for iy in range(i0[1], i1[1] + 1):
                for iz in range(i0[2], i1[2] + 1):
                    lo[0] = origin[0] + ix * voxel
                    lo[1] = origin[1] + iy * voxel
                    lo[2] = origin[2] + iz * voxel
                    for k in range(3):
                        hi[k] = lo[k] + voxel
                        center[k] = lo[k] + 0.5 * voxel
                    poly[:3] = tv[t]
                    cp, npts = clip_polygon_to_box(poly, 3, lo, hi)
                    if npts == 0:
                        continue
                    # half-open voxels: the piece must reach below every upper face
                    inside = True
                    for k in range(3):
                        mn = np.inf
                        for j in range(npts):
                            mn = min(mn, cp[j, k])
                        if not mn < hi[k]:
                            inside = False
                    if not inside:
                        continue
                    q = closest_on_polygon(center, cp, npts)
                    if m == cap:
                        cap *= 2
                        keys2 = np.empty((cap, 3), np.int64)
                        keys2[:m] = keys[:m]
                        keys = keys2
                        tris2 = np.empty(cap, np.int64)
                        tris2[:m] = tris[:m]
                        tris = tris2
                        pts2 = np.empty((cap, 3))
                        pts2[:m] = pts[:m]
                        pts = pts2
                        d2 = np.empty(cap)
                        d2[:m] = dists[:m]
                        dists = d2
                    keys[m, 0] = ix
                    keys[m, 1] = iy
                    keys[m, 2] = iz
                    tris[m] = t
                    pts[m] = q
                    dists[m] = np.sqrt(np.dot(q - center, q - center))
                    m += 1
    return keys[:m], tris[:m], pts[:m], dists[:m]


@njit(cache=True)
def _clamp01(x):
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


@njit(cache=True)
def _seg_seg_dist2(p1, q1, p2, q2):
    # Ericson 5.1.9
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.dot(d1, d1)
    e = np.dot(d2, d2)
    f = np.dot(d2, r)
    if a <= 1e-30 and e <= 1e-30:
        s = 0.0
        t = 0.0
    elif a <= 1e-30:
        s = 0.0
        t = _clamp01(f / e)
    else:
        c = np.dot(d1, r)
        if e <= 1e-30:
            t = 0.0
            s = _clamp01(-c / a)
        else:
            b = np.dot(d1, d2)
            den = a * e - b * b
            s = _clamp01((b * f - c * e) / den) if den > 0.0 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((b - c) / a)
    w = p1 + s * d1 - p2 - t * d2
    return np.dot(w, w)


@njit(cache=True)
def _tri_tri_dist2(ta, i, tb, j):
    """Squared distance between triangle i of ta and triangle j of tb (0 if they cross)."""
    for k in range(3):
        p = ta[i, k]
        tt, _, _ = _ray_tri(p, ta[i, (k + 1) % 3] - p, tb, j)
        if 0.0 <= tt <= 1.0:
            return 0.0
        p = tb[j, k]
        tt, _, _ = _ray_tri(p, tb[j, (k + 1) % 3] - p, ta, i)
        if 0.0 <= tt <= 1.0:
            return 0.0
    best = np.inf
    for k in range(3):
        p = ta[i, k]
        ba, bb, bc = _closest_bary(p[0], p[1], p[2], tb, j)
        w = p - (ba * tb[j, 0] + bb * tb[j, 1] + bc * tb[j, 2])
        best = min(best, np.dot(w, w))
        p = tb[j, k]
        ba, bb, bc = _closest_bary(p[0], p[1], p[2], ta, i)
        w = p - (ba * ta[i, 0] + bb * ta[i, 1] + bc * ta[i, 2])
        best = min(best, np.dot(w, w))
        for m in range(3):
            best = min(best, _seg_seg_dist2(ta[i, k], ta[i, (k + 1) % 3], tb[j, m], tb[j, (m + 1) % 3]))
    return best


@njit(cache=True)
def pair_min_dist2(ta, tb, ia, ib):
    """Minimum squared distance over candidate triangle pairs; stops early at contact."""
    best = np.inf
    for k in range(ia.shape[0]):
        d = _tri_tri_dist2(ta, ia[k], tb, ib[k])
        if d < best:
            best = d
            if best == 0.0:
                break
    return best


@njit(cache=True)
def box_partition(points, R, t, lo, hi, margin):
    """Split points by distance to the box [lo, hi] of the frame (R, t).

    Returns the indices and local coordinates of points within ``margin`` of the
    box along every axis, and the smallest box distance among the others.
    """
    n = points.shape[0]
    near = np.empty(n, np.int64)
    local = np.empty((n, 3))
    m = 0
    best = np.inf
    for i in range(n):
        dx = points[i, 0] - t[0]
        dy = points[i, 1] - t[1]
        dz = points[i, 2] - t[2]
        g2 = 0.0
        inside = True
        for k in range(3):
            c = R[0, k] * dx + R[1, k] * dy + R[2, k] * dz
            local[m, k] = c
            g = 0.0
            if c < lo[k]:
                g = lo[k] - c
            elif c > hi[k]:
                g = c - hi[k]
            if g > margin:
                inside = False
            g2 += g * g
        if inside:
            near[m] = i
            m += 1
        elif g2 < best:
            best = g2
    return near[:m].copy(), local[:m].copy(), np.sqrt(best)
