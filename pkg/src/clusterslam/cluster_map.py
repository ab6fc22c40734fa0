"""The semantic map: fused map points partitioned into object clusters."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from . import semantic_fusion as sf
from .errors import ConfigError, EmptyCluster, OutOfBounds
from .geometry import ZMIN, CameraIntrinsics, Plane, Pose, project_camera

DESCRIPTOR_BYTES = 32
HAMMING_RADIUS = 50
MATCH_FRACTION = 0.8
TAU_MERGE = 0.15
INSTANCE_VOTES = 5
REPAIR_VOTES = 3

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclass(frozen=True)
class ClassInfo:
    """One row of the class table.

    ``kind`` is ``thing`` (instances are separated), ``stuff`` (one
    structure cluster per class) or ``void`` (never clustered).
    """

    id: int
    name: str
    kind: str = "thing"
    planar: bool = False
    min_inliers: int | None = None
    scale: str = "indoor"
    merge_radius: float | None = None


class ClassTable:
    def __init__(self, classes: list[ClassInfo]):
        ids = [c.id for c in classes]
        if sorted(ids) != list(range(len(classes))):
            raise ConfigError("class ids must be 0..C-1 without gaps")
        names = [c.name for c in classes]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate class names in class table")
        for c in classes:
            if c.kind not in ("thing", "stuff", "void"):
                raise ConfigError(f"class {c.name!r}: unknown kind {c.kind!r}")
            if c.scale not in ("indoor", "road"):
                raise ConfigError(f"class {c.name!r}: unknown scale {c.scale!r}")
            if c.planar and c.kind == "void":
                raise ConfigError(f"class {c.name!r}: void classes cannot carry a planar prior")
        self.classes = sorted(classes, key=lambda c: c.id)
        self._by_name = {c.name: c for c in self.classes}

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, cid: int) -> ClassInfo:
        return self.classes[cid]

    def __iter__(self):
        return iter(self.classes)

    def by_name(self, name: str) -> ClassInfo:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"unknown class {name!r}") from None

    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def without_planar_priors(self) -> ClassTable:
        from dataclasses import replace

        return ClassTable([replace(c, planar=False) for c in self.classes])


@dataclass
class Observation:
    keyframe: int
    pixel: np.ndarray
    weight: float = 1.0


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    dist: np.ndarray
    descriptor: np.ndarray
    c_star: int = 0
    instance: int = 0
    observations: list[Observation] = field(default_factory=list)
    instance_history: deque = field(default_factory=lambda: deque(maxlen=INSTANCE_VOTES))
    repair_candidate: int = 0
    repair_count: int = 0

    def top_classes(self, k: int = 3) -> list[tuple[int, float]]:
        order = np.argsort(-self.dist, kind="stable")[:k]
        return [(int(c), float(self.dist[c])) for c in order]


@dataclass
class Cluster:
    id: int
    cls: int
    instance: int
    planar: bool
    members: dict = field(default_factory=dict)  # insertion-ordered set of point ids
    plane: Plane | None = None
    inlier_count: int = 0
    inlier_rms: float = 0.0
    pruned: set = field(default_factory=set)
    fitted_size: int = 0
    needs_refit: bool = False

    def member_ids(self) -> list[int]:
        return list(self.members)

    def constrained_ids(self) -> list[int]:
        """Members that receive a planar constraint (pruned far points excluded)."""
        if self.plane is None:
            return []
        return [p for p in self.members if p not in self.pruned]

    def __len__(self) -> int:
        return len(self.members)


class SemanticMap:
    """Keyframes, map points and clusters.

    The cluster key of a point is ``(c*, l)`` for thing classes with a
    non-zero instance id and ``(c*, 0)`` for stuff classes; void classes and
    things without an instance are left unclustered. Instance ids absorbed by
    a merge are aliased to the surviving id.
    """

    def __init__(self, class_table: ClassTable):
        self.class_table = class_table
        self.keyframes: dict[int, Pose] = {}
        self.keyframe_times: dict[int, float] = {}
        self.points: dict[int, MapPoint] = {}
        self.clusters: dict[int, Cluster] = {}
        self.point_cluster: dict[int, int] = {}
        self._cluster_by_key: dict[tuple[int, int], int] = {}
        self.instance_alias: dict[int, int] = {}
        self.instance_classes: dict[int, int] = {}
        self.next_cluster_id = 1

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    def add_keyframe(self, kf_id: int, pose: Pose, timestamp: float | None = None) -> None:
        self.keyframes[kf_id] = pose
        self.keyframe_times[kf_id] = float(kf_id if timestamp is None else timestamp)

    def add_point(self, pid: int, position, descriptor=None) -> MapPoint:
        if descriptor is None:
            descriptor = np.zeros(DESCRIPTOR_BYTES, dtype=np.uint8)
        pt = MapPoint(
            id=pid,
            position=np.array(position, dtype=float).reshape(3),
            dist=sf.uniform(self.n_classes),
            descriptor=np.asarray(descriptor, dtype=np.uint8).reshape(DESCRIPTOR_BYTES),
        )
        self.points[pid] = pt
        return pt

    def add_observation(self, pid: int, kf_id: int, pixel, weight: float = 1.0) -> None:
        if kf_id not in self.keyframes:
            raise KeyError(f"keyframe {kf_id} not in map")
        self.points[pid].observations.append(Observation(kf_id, np.asarray(pixel, dtype=float), weight))

    def resolve_instance(self, l: int) -> int:
        while l in self.instance_alias:
            l = self.instance_alias[l]
        return l

    def cluster_of(self, pid: int) -> Cluster | None:
        cid = self.point_cluster.get(pid)
        return None if cid is None else self.clusters[cid]

    def cluster_key(self, pt: MapPoint) -> tuple[int, int] | None:
        info = self.class_table[pt.c_star]
        if info.kind == "void":
            return None
        if info.kind == "stuff":
            return (pt.c_star, 0)
        return (pt.c_star, pt.instance) if pt.instance != 0 else None

    def planar_clusters(self) -> list[Cluster]:
        return [c for c in self.clusters.values() if c.planar]

    def positions(self, ids) -> np.ndarray:
        return np.array([self.points[i].position for i in ids], dtype=float).reshape(-1, 3)

    def check_partition(self) -> None:
        """Raise AssertionError if the cluster partition invariant is broken."""
        seen: dict[int, int] = {}
        for cid, cl in self.clusters.items():
            for pid in cl.members:
                assert pid not in seen, f"point {pid} in clusters {seen[pid]} and {cid}"
                seen[pid] = cid
                assert self.point_cluster.get(pid) == cid
        for pid, pt in self.points.items():
            if pt.instance != 0:
                assert pid in seen, f"point {pid} with instance {pt.instance} is unclustered"
            assert pt.c_star == sf.argmax_class(pt.dist)

    def to_document(self) -> dict:
        """JSON-serializable export: TUM-convention keyframe poses, points and clusters."""
        kfs = []
        for kf_id in sorted(self.keyframes):
            twc = self.keyframes[kf_id].inverse()
            kfs.append(
                {
                    "id": kf_id,
                    "timestamp": self.keyframe_times[kf_id],
                    "t": [float(x) for x in twc.t],
                    "q_xyzw": [float(x) for x in twc.q],
                }
            )
        pts = []
        for pid in sorted(self.points):
            pt = self.points[pid]
            pts.append(
                {
                    "id": pid,
                    "position": [float(x) for x in pt.position],
                    "class": pt.c_star,
                    "instance": pt.instance,
                    "top3": [[c, p] for c, p in pt.top_classes(3)],
                    "cluster": self.point_cluster.get(pid),
                }
            )
        cls = []
        for cid in sorted(self.clusters):
            cl = self.clusters[cid]
            cls.append(
                {
                    "id": cid,
                    "class": cl.cls,
                    "class_name": self.class_table[cl.cls].name,
                    "instance": cl.instance,
                    "members": sorted(cl.members),
                    "pruned": sorted(cl.pruned),
                    "plane": None if cl.plane is None else [float(x) for x in cl.plane.pi],
                    "inliers": cl.inlier_count,
                }
            )
        return {"classes": self.class_table.names(), "keyframes": kfs, "points": pts, "clusters": cls}


def upsert_point_semantics(smap: SemanticMap, pid: int, pmap: sf.ProbabilityMap, imap: sf.InstanceMap, px) -> SemanticMap:
    """Fuse one segmentation observation into a point's class and instance.

    ``imap`` must already carry persistent (tracked) instance ids. The
    point's instance is the majority over its last few instance
    observations, ties going to the most recent one.
    """
    pt = smap.points[pid]
    likelihood = pmap.at(px)
    raw_instance = imap.at(px)
    try:
        pt.dist = sf.bayes_update(pt.dist, likelihood)
    except sf.DegenerateUpdate:
        pass
    pt.c_star = sf.argmax_class(pt.dist)
    pt.instance_history.append(smap.resolve_instance(raw_instance))
    if smap.class_table[pt.c_star].kind != "thing":
        pt.instance = 0
        return smap
    history = [smap.resolve_instance(l) for l in pt.instance_history]
    counts = Counter(history)
    top = max(counts.values())
    for l in reversed(history):
        if counts[l] == top:
            pt.instance = l
            break
    return smap


def _detach(smap: SemanticMap, pid: int) -> None:
    cid = smap.point_cluster.pop(pid, None)
    if cid is None:
        return
    cl = smap.clusters[cid]
    cl.members.pop(pid, None)
    cl.pruned.discard(pid)
    if not cl.members:
        del smap.clusters[cid]
        smap._cluster_by_key.pop((cl.cls, cl.instance), None)


def assign_to_cluster(smap: SemanticMap, pid: int) -> int | None:
    """Put a point into the cluster matching its current key, creating it if needed.

    Returns the cluster id, or None if the point does not belong to any cluster.
    """
    pt = smap.points[pid]
    key = smap.cluster_key(pt)
    current = smap.point_cluster.get(pid)
    if key is None:
        _detach(smap, pid)
        return None
    cid = smap._cluster_by_key.get(key)
    if current is not None and current == cid:
        return cid
    _detach(smap, pid)
    if cid is None:
        cid = smap.next_cluster_id
        smap.next_cluster_id += 1
        info = smap.class_table[key[0]]
        smap.clusters[cid] = Cluster(id=cid, cls=key[0], instance=key[1], planar=info.planar)
        smap._cluster_by_key[key] = cid
    smap.clusters[cid].members[pid] = None
    smap.point_cluster[pid] = cid
    return cid


def centroid(cluster: Cluster, smap: SemanticMap) -> np.ndarray:
    if not cluster.members:
        raise EmptyCluster(f"cluster {cluster.id} has no members")
    return smap.positions(cluster.members).mean(axis=0)


def bounding_radius(cluster: Cluster, smap: SemanticMap) -> float:
    X = smap.positions(cluster.members)
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1))) if len(X) else 0.0


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between rows of two uint8 descriptor arrays."""
    x = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return _POPCOUNT[x].sum(axis=-1)


def descriptor_match_fraction(a: Cluster, b: Cluster, smap: SemanticMap, radius: int = HAMMING_RADIUS) -> float:
    """Fraction of the smaller cluster's points with a descriptor match in the other cluster."""
    if not a.members or not b.members:
        raise EmptyCluster("descriptor matching needs two non-empty clusters")
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    da = np.array([smap.points[p].descriptor for p in small.members])
    db = np.array([smap.points[p].descriptor for p in large.members])
    nearest = hamming_matrix(da, db).min(axis=1)
    return float(np.count_nonzero(nearest <= radius)) / len(da)


def merge_threshold(a: Cluster, b: Cluster, smap: SemanticMap, default: float = TAU_MERGE, extent_factor: float = 0.25) -> float:
    """Centroid distance below which two clusters may merge.

    The per-class value (or ``default``) grows with the clusters' bounding
    radius so that large structures are not split by a fixed threshold.
    """
    info = smap.class_table[a.cls]
    base = info.merge_radius if info.merge_radius is not None else default
    return max(base, extent_factor * max(bounding_radius(a, smap), bounding_radius(b, smap)))


def try_merge_clusters(smap: SemanticMap, a: int, b: int, tau_merge: float | None = None) -> bool:
    """Merge clusters ``a`` and ``b`` if they are close and share descriptors.

    The older (smaller) cluster id survives; the absorbed instance id is
    aliased so later observations land in the surviving cluster.
    """
    if a == b or a not in smap.clusters or b not in smap.clusters:
        return False
    ca, cb = smap.clusters[a], smap.clusters[b]
    if ca.cls != cb.cls or not ca.members or not cb.members:
        return False
    tau = merge_threshold(ca, cb, smap) if tau_merge is None else tau_merge
    if np.linalg.norm(centroid(ca, smap) - centroid(cb, smap)) >= tau:
        return False
    if descriptor_match_fraction(ca, cb, smap) <= MATCH_FRACTION:
        return False

    keep, gone = (ca, cb) if ca.id < cb.id else (cb, ca)
    # instance ids are shared across classes, so an alias may already point
    # the other way; never close a cycle
    if gone.instance not in smap.instance_alias and smap.resolve_instance(keep.instance) != gone.instance:
        smap.instance_alias[gone.instance] = keep.instance
    for pid in list(gone.members):
        pt = smap.points[pid]
        if pt.instance != 0:
            pt.instance = keep.instance
        keep.members[pid] = None
        smap.point_cluster[pid] = keep.id
    keep.pruned |= gone.pruned
    if keep.plane is None and gone.plane is not None:
        keep.plane, keep.inlier_count, keep.inlier_rms = gone.plane, gone.inlier_count, gone.inlier_rms
    keep.needs_refit = True
    del smap.clusters[gone.id]
    smap._cluster_by_key.pop((gone.cls, gone.instance), None)
    return True


def merge_pass(smap: SemanticMap, tau_merge: float | None = None) -> int:
    """Try every same-class pair of thing clusters once; returns the number of merges."""
    merges = 0
    ids = sorted(smap.clusters)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if a in smap.clusters and b in smap.clusters and smap.clusters[a].instance and smap.clusters[b].instance:
                if try_merge_clusters(smap, a, b, tau_merge):
                    merges += 1
    return merges


def reproject_repair(smap: SemanticMap, kf_id: int, imap: sf.InstanceMap, K: CameraIntrinsics, instance_classes: dict[int, int] | None = None) -> int:
    """Vote cluster points into the tracked segment they project onto.

    A point landing on a different same-class segment records a vote; after
    REPAIR_VOTES consecutive votes for the same id it is moved to that
    instance. Landing on its own segment resets the streak; background,
    off-image and behind-camera projections leave it untouched.
    """
    classes = smap.instance_classes if instance_classes is None else instance_classes
    pose = smap.keyframes[kf_id]
    R, t = pose.R, pose.t
    H, W = imap.shape
    moved = 0
    for cl in list(smap.clusters.values()):
        if cl.instance == 0:
            continue
        ids = list(cl.members)
        Xc = smap.positions(ids) @ R.T + t
        for pid, xc in zip(ids, Xc):
            if xc[2] <= ZMIN:
                continue
            uv = project_camera(K, xc)
            try:
                seg = imap.at(uv)
            except OutOfBounds:
                continue
            if seg == 0:
                continue
            seg = smap.resolve_instance(seg)
            pt = smap.points[pid]
            if seg == pt.instance:
                pt.repair_candidate, pt.repair_count = 0, 0
                continue
            if classes.get(seg) != pt.c_star:
                continue
            if seg == pt.repair_candidate:
                pt.repair_count += 1
            else:
                pt.repair_candidate, pt.repair_count = seg, 1
            if pt.repair_count >= REPAIR_VOTES:
                pt.instance = seg
                pt.instance_history.clear()
                pt.instance_history.append(seg)
                pt.repair_candidate, pt.repair_count = 0, 0
                assign_to_cluster(smap, pid)
                moved += 1
    return moved
