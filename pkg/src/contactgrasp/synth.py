"""Single-object grasp synthesis.

Every voxel surface sample seeds a family of candidate hand poses (approach
against the sample normal, at several depths and rolls, for several spread
angles).  The fingers are then closed until they touch, touch points are
clustered into one contact per finger, and the grasp is kept when every finger
touches with its fingertip and the wrench-space quality clears the threshold.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import seeding
from .contact_repr import CompactGrasp, FullGrasp, RepresentationError, decode, encode
from .geom import _kernels
from .geom import OrientedPoint, RigidTransform, TriangleMesh, voxel_downsample
from .geom.query import closest_points, sample_surface_grid, signed_distances, surface_normals_at
from .geom.transform import cross, rot_z, tangent_pair
from .hand import FINGERS, LINK_SAMPLE_SPACING, HandModel, HandPose, JointConfig, link_frames
from .quality import FrictionModel, epsilon_quality_detail, grasp_wrenches, torque_normalization

log = logging.getLogger(__name__)

TOUCH_TOL = 5e-4
SWEEP_STEP = 0.02
BISECT_TOL = 1e-4
SURFACE_TOL = 1e-3
PENETRATION_TOL = 1e-3
DECODE_TOL = 1e-6
DEFAULT_VOXEL = 0.01
DEFAULT_TAU = 0.05
OBJECT_SAMPLE_SPACING = 0.002
DISTANCE_CAP = 0.01
# farthest any link surface point can be from its nearest link sample (voxel diagonal)
LINK_COVER = LINK_SAMPLE_SPACING * math.sqrt(3.0)


@dataclass(frozen=True)
class SearchSpace:
    """Candidate grid: approach depths (m), rolls about the approach axis and spreads (rad)."""

    depths: tuple[float, ...]
    rolls: tuple[float, ...]
    spreads: tuple[float, ...]

    def __post_init__(self):
        for name in ("depths", "rolls", "spreads"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"search space: {name} is empty")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"search space: {name} must be sorted")
            object.__setattr__(self, name, vals)
        if self.depths[0] < 0:
            raise ValueError("search space: depths must be non-negative")

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls(depths=tuple(np.linspace(0.0, 0.04, 4)),
                   rolls=tuple(2 * math.pi * k / 8 for k in range(8)),
                   spreads=(0.0, math.pi / 4, math.pi / 2))

    def check(self, hand: HandModel) -> None:
        lo, hi = hand.spread_range
        if self.spreads[0] < lo or self.spreads[-1] > hi:
            raise ValueError(f"search space: spreads must lie in [{lo}, {hi}]")

    def __len__(self) -> int:
        return len(self.depths) * len(self.rolls) * len(self.spreads)

    def __iter__(self):
        for d in self.depths:
            for r in self.rolls:
                for s in self.spreads:
                    yield d, r, s


@dataclass(frozen=True, eq=False)
class GraspAnnotation:
    """A kept grasp: hand pose and joints, one contact and compact code per finger."""

    object_id: str
    pose: HandPose
    joints: JointConfig
    contacts: tuple[OrientedPoint, OrientedPoint, OrientedPoint]
    compact: tuple[CompactGrasp, CompactGrasp, CompactGrasp]
    anchor: int
    quality: float
    exact_quality: bool = True

    def contact(self, finger: int) -> OrientedPoint:
        return self.contacts[finger - 1]

    def compact_for(self, finger: int) -> CompactGrasp:
        return self.compact[finger - 1]

    def transformed(self, T: RigidTransform, hand: HandModel) -> "GraspAnnotation":
        """The same grasp after moving the world by ``T``.

        Compact codes are re-encoded: the finger projections live in a fingertip
        frame built from world axes, so they are not invariant under rotation.
        """
        pose = HandPose(T @ self.pose.transform)
        contacts = tuple(c.transformed(T) for c in self.contacts)
        return replace(self, pose=pose, contacts=contacts,
                       compact=_encode_all(pose, self.joints, contacts, hand))


def candidate_pose(sample: OrientedPoint, depth: float, roll: float, standoff: float) -> HandPose:
    """Palm pose approaching ``sample`` against its normal.

    The palm origin sits ``standoff - depth`` out along the normal and the palm
    +z axis points at the surface.  The zero-roll palm x axis is the sample
    position's component across the normal (falling back to a world axis when
    the position is along the normal), then the palm is rolled about +z.
    """
    n = sample.normal
    z = -n
    t1, _ = tangent_pair(z, sample.position)
    x = t1
    y = cross(z, x)
    R = np.column_stack([x, y, z]) @ rot_z(roll)
    return HandPose(RigidTransform(R, sample.position + (standoff - depth) * n))


# -- finger closing ---------------------------------------------------------------------

class ObjectProximity:
    """Signed-distance queries between one object and the hand's links."""

    def __init__(self, mesh: TriangleMesh, hand: HandModel, spacing: float = OBJECT_SAMPLE_SPACING):
        self.mesh = mesh
        self.hand = hand
        self.samples, _ = sample_surface_grid(mesh, spacing)
        lo, hi = mesh.bounds
        self.center = 0.5 * (lo + hi)
        self.radius = float(np.linalg.norm(hi - lo)) / 2
        self._link_mesh = {"palm": hand.palm_mesh, "inner": hand.inner_mesh, "outer": hand.outer_mesh}
        self._link_box = {k: m.bounds for k, m in self._link_mesh.items()}

    def link_clearance(self, name: str, T: RigidTransform, with_points: bool = False):
        """Signed clearance between a posed link and the object.

        Both directions are checked: link samples against the object and object
        samples against the link.  Returns the minimum, and optionally the raw
        touch points (on the object surface) within TOUCH_TOL.
        """
        pts = T.apply(self.hand.link_samples[name])
        # samples beyond the cap cannot be inside: a link sweeps at most a few mm per
        # step, and a link crossing the surface always has samples near it
        d_link = np.minimum(signed_distances(self.mesh, pts, DISTANCE_CAP), DISTANCE_CAP)
        if not with_points and d_link.min() - LINK_COVER > TOUCH_TOL:
            # every link surface point is within LINK_COVER of a sample, so this is a
            # lower bound on the clearance and no touch is possible
            return float(d_link.min()) - LINK_COVER
        lo, hi = self._link_box[name]
        idx, local, far = _kernels.box_partition(self.samples, T.rotation, T.translation, lo, hi, TOUCH_TOL)
        # far samples are more than TOUCH_TOL from the link's box, hence from the link
        best = min(float(d_link.min()), far)
        d_obj = signed_distances(self._link_mesh[name], local) if len(idx) else np.zeros(0)
        if len(d_obj):
            best = min(best, float(d_obj.min()))
        if not with_points:
            return best
        touch = np.concatenate([pts[d_link <= TOUCH_TOL], self.samples[idx][d_obj <= TOUCH_TOL]])
        return best, touch

    def finger_clearance(self, hand_frame: RigidTransform, finger: int, spread: float, theta: float,
                         with_points: bool = False):
        inner = hand_frame @ self.hand.inner_link_frame(finger, spread, theta)
        outer = hand_frame @ self.hand.outer_link_frame(finger, spread, theta)
        if not with_points:
            return min(self.link_clearance("inner", inner), self.link_clearance("outer", outer))
        a, pa = self.link_clearance("inner", inner, True)
        b, pb = self.link_clearance("outer", outer, True)
        return min(a, b), np.concatenate([pa, pb])

    @cached_property
    def finger_reach(self) -> float:
        """Upper bound on how far any finger point moves per radian of inner joint."""
        h = self.hand
        r_in = float(np.linalg.norm(h.inner_mesh.vertices, axis=1).max())
        r_out = float(np.linalg.norm(h.outer_mesh.vertices, axis=1).max())
        return max(r_in, h.inner_length + (1.0 + h.coupling) * r_out)


@dataclass(frozen=True, eq=False)
class ClosingResult:
    """Closed joints and, per finger, the raw touch points projected onto the object
    surface as an (n, 3) array sorted by how close the raw point was to it."""

    joints: JointConfig
    touches: tuple[np.ndarray, ...]


def _close_one(prox: ObjectProximity, P: RigidTransform, finger: int, spread: float) -> float | None:
    lo, hi = prox.hand.inner_range
    n = int(math.ceil((hi - lo) / SWEEP_STEP - 1e-9))
    grid = [min(lo + k * SWEEP_STEP, hi) for k in range(n + 1)]
    k = 0
    while True:
        d = prox.finger_clearance(P, finger, spread, grid[k])
        if d <= TOUCH_TOL:
            break
        if k == len(grid) - 1:
            return None
        # a point at clearance s closes in at most (reach + 2 s) per radian, so grid
        # steps inside the safe angle cannot touch; skipping them changes nothing
        safe = (d - TOUCH_TOL) / (prox.finger_reach + 2.0 * d)
        k = min(k + max(1, math.ceil(safe / SWEEP_STEP)), len(grid) - 1)
    if k == 0:
        return grid[0]
    a, b = grid[k - 1], grid[k]
    while b - a > BISECT_TOL:
        m = 0.5 * (a + b)
        if prox.finger_clearance(P, finger, spread, m) <= TOUCH_TOL:
            b = m
        else:
            a = m
    return b


def close_fingers(hand: HandModel, pose: HandPose, spread: float, mesh: TriangleMesh,
                  proximity: ObjectProximity | None = None) -> ClosingResult | None:
    """Close each finger from fully open until it first touches ``mesh``.

    Returns None when a finger reaches its joint limit without touching or the
    palm already penetrates the object.
    """
    lo, hi = hand.spread_range
    if not lo <= spread <= hi:
        raise ValueError(f"spread {spread} outside [{lo}, {hi}]")
    prox = proximity if proximity is not None and proximity.mesh is mesh else ObjectProximity(mesh, hand)
    P = pose.transform
    # cheap reject: the whole hand is far from the object
    if np.linalg.norm(P.translation - prox.center) > prox.radius + hand.standoff + 0.1:
        return None
    if prox.link_clearance("palm", P) < -PENETRATION_TOL:
        return None
    thetas = []
    for f in FINGERS:
        th = _close_one(prox, P, f, spread)
        if th is None:
            return None
        thetas.append(th)
    joints = JointConfig(spread, tuple(thetas))
    touches = []
    for f, th in zip(FINGERS, thetas):
        _, pts = prox.finger_clearance(P, f, spread, th, with_points=True)
        d, q, _, _ = closest_points(mesh, pts)
        touches.append(q[np.argsort(d, kind="stable")])
    return ClosingResult(joints, tuple(touches))


# -- contact extraction ----------------------------------------------------------------------

def kmeans(points, k: int, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with farthest-point seeding.

    Seeding starts from the lexicographically smallest point and repeatedly adds
    the point farthest from the chosen seeds (first index on ties).  Empty
    clusters keep their previous center.  With fewer points than ``k`` each point
    is its own cluster.  Returns (centers, labels).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("kmeans needs a nonempty (n, d) array")
    if k < 1:
        raise ValueError("k must be positive")
    n = len(X)
    if n <= k:
        return X.copy(), np.arange(n)
    first = int(np.lexsort(X.T[::-1])[0])
    seeds = [first]
    dmin = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dmin))
        seeds.append(nxt)
        dmin = np.minimum(dmin, np.sum((X - X[nxt]) ** 2, axis=1))
    C = X[seeds].copy()
    labels = None
    for _ in range(max_iter):
        D = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
        new = np.argmin(D, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            m = labels == j
            if m.any():
                C[j] = X[m].mean(axis=0)
    return C, labels


def extract_contacts(raw_touches, mesh: TriangleMesh, k: int | None = None) -> list[OrientedPoint]:
    """Cluster raw touch points (one group per finger) into ``k`` surface contacts.

    ``k`` defaults to the number of fingers with at least one touch.  Each
    centroid is projected to the closest surface point and takes its normal.
    """
    groups = [np.asarray(g, dtype=float).reshape(-1, 3) for g in raw_touches]
    if not any(len(g) for g in groups):
        raise ValueError("no touch points")
    if k is None:
        k = sum(1 for g in groups if len(g))
    C, _ = kmeans(np.concatenate(groups), k)
    _, q, nrm = surface_normals_at(mesh, C)
    return [OrientedPoint(a, b) for a, b in zip(q, nrm)]


def per_finger_contacts(touches, mesh: TriangleMesh) -> list[OrientedPoint] | None:
    """k-means over all touches, clusters matched to fingers by majority vote.

    Returns one contact per finger, or None when the clusters do not map one to
    one onto the fingers.
    """
    groups = [np.asarray(g, dtype=float).reshape(-1, 3) for g in touches]
    pts = np.concatenate(groups)
    owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(groups)])
    k = len(touches)
    C, labels = kmeans(pts, k)
    if len(C) < k:
        return None
    finger_of = []
    for j in range(k):
        votes = np.bincount(owner[labels == j], minlength=k)
        finger_of.append(int(np.argmax(votes)) if votes.any() else -1)
    if sorted(finger_of) != list(range(k)):
        return None
    _, q, nrm = surface_normals_at(mesh, C)
    out = [None] * k
    for j, f in enumerate(finger_of):
        out[f] = OrientedPoint(q[j], nrm[j])
    return out


# -- synthesis -----------------------------------------------------------------------------

def _encode_all(pose: HandPose, joints: JointConfig, contacts, hand: HandModel):
    full = FullGrasp(pose, joints)
    out = []
    for f, c in zip(FINGERS, contacts):
        _, g = encode(full, f, hand, normal=c.normal)
        out.append(g)
    return tuple(out)


def penetration_depth(hand: HandModel, pose: HandPose, joints: JointConfig, prox: ObjectProximity) -> float:
    """Deepest interpenetration between hand links and the object (0 when clear)."""
    worst = math.inf
    for name, T in link_frames(hand, pose, joints):
        worst = min(worst, prox.link_clearance(name, T))
    return max(0.0, -worst)


def annotation_violations(a: GraspAnnotation, mesh: TriangleMesh, hand: HandModel, tau: float,
                          prox: ObjectProximity | None = None) -> list[str]:
    """Every broken annotation invariant, as readable messages (empty when valid)."""
    prox = prox if prox is not None and prox.mesh is mesh else ObjectProximity(mesh, hand)
    bad = []
    r = hand.fingertip_radius
    pos = np.array([c.position for c in a.contacts])
    nrm = np.array([c.normal for c in a.contacts])
    d, _, _ = surface_normals_at(mesh, pos)
    dc, _, _ = surface_normals_at(mesh, pos + r * nrm)
    for f in FINGERS:
        if d[f - 1] > SURFACE_TOL:
            bad.append(f"finger {f}: contact {d[f - 1]:.3g} m from the surface")
        if abs(dc[f - 1] - r) > SURFACE_TOL:
            bad.append(f"finger {f}: fingertip center {dc[f - 1]:.3g} m from the surface (r = {r})")
        g = a.compact[f - 1]
        if g.finger != f:
            bad.append(f"finger {f}: compact grasp anchored at finger {g.finger}")
            continue
        try:
            full = decode(a.contacts[f - 1], g, hand)
        except ValueError as exc:
            bad.append(f"finger {f}: decode failed ({exc})")
            continue
        err_p = full.pose.transform.distance(a.pose.transform)
        err_q = float(np.abs(full.joints.as_array() - a.joints.as_array()).max())
        if err_p > DECODE_TOL or err_q > DECODE_TOL:
            bad.append(f"finger {f}: decode mismatch (pose {err_p:.3g}, joints {err_q:.3g})")
    pen = penetration_depth(hand, a.pose, a.joints, prox)
    if pen > PENETRATION_TOL:
        bad.append(f"hand penetrates the object by {pen:.3g} m")
    if a.quality < tau:
        bad.append(f"quality {a.quality:.4g} below threshold {tau}")
    if a.anchor not in FINGERS:
        bad.append(f"invalid anchor finger {a.anchor}")
    return bad


@dataclass
class SynthesisStats:
    evaluated: int = 0
    closed: int = 0
    kept: int = 0
    rejected: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejected[reason] = self.rejected.get(reason, 0) + 1


class GraspSynthesizer:
    """Evaluates candidates for one object; holds the per-object precomputation."""

    def __init__(self, mesh: TriangleMesh, hand: HandModel, space: SearchSpace | None = None,
                 friction: FrictionModel | None = None, tau: float = DEFAULT_TAU,
                 object_id: str = "object"):
        self.mesh = mesh
        self.hand = hand
        self.space = space or SearchSpace.default()
        self.space.check(hand)
        origin, lam = torque_normalization(mesh)
        self.origin = origin
        self.friction = replace(friction or FrictionModel(), torque_scale=lam)
        self.tau = float(tau)
        self.object_id = object_id
        self.prox = ObjectProximity(mesh, hand)
        self.stats = SynthesisStats()

    def evaluate(self, sample: OrientedPoint, depth: float, roll: float, spread: float) -> GraspAnnotation | None:
        st = self.stats
        st.evaluated += 1
        hand = self.hand
        pose = candidate_pose(sample, depth, roll, hand.standoff)
        closing = close_fingers(hand, pose, spread, self.mesh, self.prox)
        if closing is None:
            st.reject("no closure")
            return None
        st.closed += 1
        found = per_finger_contacts(closing.touches, self.mesh)
        if found is None:
            st.reject("ambiguous contacts")
            return None
        try:
            compact = _encode_all(pose, closing.joints, found, hand)
        except (RepresentationError, ValueError):
            st.reject("not representable")
            return None
        # stored contacts sit on the fingertip circles so decode reproduces the grasp
        full = FullGrasp(pose, closing.joints)
        contacts = tuple(encode(full, f, hand, normal=c.normal)[0] for f, c in zip(FINGERS, found))
        q = epsilon_quality_detail(grasp_wrenches(list(contacts), self.friction, self.origin))
        if q.epsilon < self.tau:
            st.reject("low quality")
            return None
        ann = GraspAnnotation(self.object_id, pose, closing.joints, contacts, compact,
                              anchor=3, quality=q.epsilon, exact_quality=q.exact)
        problems = annotation_violations(ann, self.mesh, hand, self.tau, self.prox)
        if problems:
            st.reject("invariant: " + problems[0].split(":")[0].split(" ")[0])
            log.debug("rejected candidate: %s", "; ".join(problems))
            return None
        st.kept += 1
        return ann

    def samples(self, voxel: float, seed: int) -> list[OrientedPoint]:
        pts = voxel_downsample(self.mesh, voxel)
        order = seeding.stream(seed, seeding.SAMPLE_ORDER).permutation(len(pts))
        return [pts[i] for i in order]

    def run(self, target_count: int, voxel: float = DEFAULT_VOXEL, seed: int = 0) -> list[GraspAnnotation]:
        out: list[GraspAnnotation] = []
        if target_count <= 0:
            return out
        for sample in self.samples(voxel, seed):
            for depth, roll, spread in self.space:
                a = self.evaluate(sample, depth, roll, spread)
                if a is not None:
                    out.append(a)
                    if len(out) >= target_count:
                        return out
        return out


def synthesize_object(mesh: TriangleMesh, hand: HandModel, space: SearchSpace | None = None,
                      friction: FrictionModel | None = None, tau: float = DEFAULT_TAU,
                      target_count: int = 100, voxel: float = DEFAULT_VOXEL, seed: int = 0,
                      object_id: str = "object", stats: SynthesisStats | None = None) -> list[GraspAnnotation]:
    """Grasp annotations for one object, in deterministic search order.

    Samples are visited in a seeded random order; for each, the S1 x S2 x S3 grid
    is walked in order.  Stops at ``target_count`` kept grasps or when the search
    is exhausted.
    """
    if mesh.is_empty:
        raise ValueError("cannot synthesize grasps on an empty mesh")
    lo, hi = mesh.bounds
    if 0.5 * float(np.linalg.norm(hi - lo)) < hand.fingertip_radius:
        return []
    syn = GraspSynthesizer(mesh, hand, space, friction, tau, object_id)
    out = syn.run(target_count, voxel, seed)
    if stats is not None:
        stats.evaluated, stats.closed, stats.kept = syn.stats.evaluated, syn.stats.closed, syn.stats.kept
        stats.rejected = dict(syn.stats.rejected)
    return out
