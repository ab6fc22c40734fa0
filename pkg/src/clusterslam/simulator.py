"""Deterministic synthetic scenes with ground truth, noisy tracks and noisy panoptic maps.

Every random draw is derived from ``(seed, stream, frame)`` through
``numpy.random.SeedSequence``, so scenes, frames and initializations are pure
functions of their inputs and frames can be rendered in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidSpec
from .geometry import CameraIntrinsics, Plane, Pose, project_camera, quat_multiply, quat_normalize, so3_exp, so3_log
from .semantic_fusion import InstanceMap, ProbabilityMap

DESCRIPTOR_BYTES = 32
_STREAM_SCENE, _STREAM_FRAME, _STREAM_INIT, _STREAM_TRACK = 0, 1, 2, 3


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


@dataclass
class PlanarObject:
    cls: str
    center: tuple
    normal: tuple
    extent: tuple  # (width, height) in meters along the in-plane axes
    count: int
    yaw_deg: float = 0.0  # rotation of the in-plane axes about the normal

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(center, unit normal, in-plane axis u, in-plane axis v)."""
        c = np.asarray(self.center, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = ref - (ref @ n) * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        a = np.deg2rad(self.yaw_deg)
        u, v = np.cos(a) * u + np.sin(a) * v, -np.sin(a) * u + np.cos(a) * v
        return c, n, u, v

    def plane(self) -> Plane:
        c, n, _, _ = self.frame()
        return Plane(np.append(n, -n @ c))

    def corners(self) -> np.ndarray:
        c, _, u, v = self.frame()
        w, h = 0.5 * self.extent[0], 0.5 * self.extent[1]
        return np.array([c - w * u - h * v, c + w * u - h * v, c + w * u + h * v, c - w * u + h * v])


@dataclass
class ClutterSet:
    box_min: tuple
    box_max: tuple
    count: int
    cls: str | None = None


@dataclass
class Waypoint:
    center: tuple
    target: tuple


@dataclass
class NoiseSpec:
    pixel_sigma: float = 0.5
    label_error: float = 0.0
    churn: float = 0.0
    outlier_rate: float = 0.0
    outlier_offset: tuple = (0.05, 0.25)
    descriptor_flip: float = 0.02
    # frames a keypoint track survives before the front-end loses it and
    # re-detects the point under a new track id; 0 keeps one track per point
    track_length: int = 0


@dataclass
class SceneSpec:
    intrinsics: CameraIntrinsics
    planar_objects: list[PlanarObject]
    clutter: list[ClutterSet]
    waypoints: list[Waypoint]
    frames: int
    class_names: list[str]
    thing_classes: set = field(default_factory=set)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    fps: float = 10.0
    up: tuple = (0.0, 0.0, 1.0)
    void_class: str = "unlabeled"

    def validate(self) -> None:
        if self.frames < 1:
            raise InvalidSpec("frame count must be positive")
        if len(self.waypoints) < 1:
            raise InvalidSpec("need at least one waypoint")
        for obj in self.planar_objects:
            if obj.count < 0:
                raise InvalidSpec("negative point count")
            if obj.cls not in self.class_names:
                raise InvalidSpec(f"unknown class {obj.cls!r}")
        for cl in self.clutter:
            if cl.count < 0:
                raise InvalidSpec("negative point count")
            if cl.cls is not None and cl.cls not in self.class_names:
                raise InvalidSpec(f"unknown class {cl.cls!r}")
        n = self.noise
        for name in ("label_error", "churn", "outlier_rate", "descriptor_flip"):
            v = getattr(n, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"noise rate {name}={v} outside [0, 1]")
        if n.pixel_sigma < 0:
            raise InvalidSpec("pixel noise must be non-negative")
        if n.track_length < 0:
            raise InvalidSpec("track length must be non-negative")
        if self.void_class not in self.class_names:
            raise InvalidSpec(f"void class {self.void_class!r} missing from class list")

    @classmethod
    def from_dict(cls, d: dict, class_names: list[str] | None = None, thing_classes=None) -> SceneSpec:
        try:
            K = CameraIntrinsics(**d["intrinsics"])
            names = list(d.get("classes", class_names or []))
            things = set(d.get("thing_classes", thing_classes or []))
            spec = cls(
                intrinsics=K,
                planar_objects=[PlanarObject(**o) for o in d.get("planar_objects", [])],
                clutter=[ClutterSet(**c) for c in d.get("clutter", [])],
                waypoints=[Waypoint(**w) for w in d["trajectory"]["waypoints"]],
                frames=int(d["trajectory"]["frames"]),
                fps=float(d["trajectory"].get("fps", 10.0)),
                class_names=names,
                thing_classes=things,
                noise=NoiseSpec(**d.get("noise", {})),
                up=tuple(d.get("up", (0.0, 0.0, 1.0))),
                void_class=d.get("void_class", "unlabeled"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed scene spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def from_yaml(cls, path, class_names=None, thing_classes=None) -> SceneSpec:
        with open(path) as fh:
            d = yaml.safe_load(fh)
        return cls.from_dict(d.get("scene", d), class_names, thing_classes)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose of a camera at ``center`` looking at ``target`` (x right, y down)."""
    c = np.asarray(center, dtype=float)
    f = np.asarray(target, dtype=float) - c
    f /= np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=float))
    if np.linalg.norm(r) < 1e-9:
        raise InvalidSpec("view direction parallel to the up vector")
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    Rwc = np.stack([r, d, f], axis=1)
    Rcw = Rwc.T
    return Pose.from_rt(Rcw, -Rcw @ c)


def interpolate_trajectory(waypoints: list[Pose], frames: int) -> list[Pose]:
    """Constant-velocity interpolation: linear camera centers, geodesic rotations."""
    if len(waypoints) == 1 or frames == 1:
        return [waypoints[0]] * frames
    s = np.linspace(0.0, len(waypoints) - 1, frames)
    out = []
    for x in s:
        i = min(int(np.floor(x)), len(waypoints) - 2)
        a = x - i
        p0, p1 = waypoints[i], waypoints[i + 1]
        c = (1 - a) * p0.center() + a * p1.center()
        q0 = p0.inverse().q
        dq = quat_multiply(p1.inverse().q, q0 * np.array([-1, -1, -1, 1.0]))
        qwc = quat_normalize(quat_multiply(so3_exp(a * so3_log(dq)), q0))
        out.append(Pose(qwc, c).inverse())
    return out


@dataclass
class GroundTruthBundle:
    spec: SceneSpec
    seed: int
    poses: list[Pose]  # T_cw per frame
    timestamps: np.ndarray
    points: np.ndarray  # (N, 3)
    point_class: np.ndarray  # (N,) class id
    point_object: np.ndarray  # (N,) planar object index or -1
    point_instance: np.ndarray  # (N,) base raw instance id (0 for stuff / clutter)
    is_outlier: np.ndarray  # (N,) displaced off its object plane
    descriptors: np.ndarray  # (N, 32) uint8
    planes: list[Plane]
    object_class: list[int]
    object_instance: list[int]

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    @property
    def K(self) -> CameraIntrinsics:
        return self.spec.intrinsics


@dataclass
class RenderedFrame:
    index: int
    timestamp: float
    point_ids: np.ndarray
    pixels: np.ndarray  # (n, 2)
    descriptors: np.ndarray  # (n, 32)
    labels: np.ndarray  # (H, W) class ids
    instances: np.ndarray  # (H, W) raw instance ids
    alpha: float = 0.9
    track_ids: np.ndarray | None = None  # front-end track id per observation

    def probability_map(self, n_classes: int) -> ProbabilityMap:
        return ProbabilityMap.from_labels(self.labels, n_classes, self.alpha)

    def instance_map(self) -> InstanceMap:
        return InstanceMap(self.instances)


def generate_scene(spec: SceneSpec, seed: int) -> GroundTruthBundle:
    spec.validate()
    rng = _rng(seed, _STREAM_SCENE)
    cid = {n: i for i, n in enumerate(spec.class_names)}
    void = cid[spec.void_class]

    pts, pcls, pobj, pinst, pout = [], [], [], [], []
    planes, ocls, oinst = [], [], []
    next_inst = 1
    for k, obj in enumerate(spec.planar_objects):
        c, n, u, v = obj.frame()
        planes.append(obj.plane())
        ocls.append(cid[obj.cls])
        inst = 0
        if obj.cls in spec.thing_classes:
            inst = next_inst
            next_inst += 1
        oinst.append(inst)
        ab = rng.uniform(-0.5, 0.5, size=(obj.count, 2)) * np.asarray(obj.extent, dtype=float)
        X = c + ab[:, :1] * u + ab[:, 1:] * v
        out = np.zeros(obj.count, dtype=bool)
        n_out = rng.binomial(obj.count, spec.noise.outlier_rate) if obj.count else 0
        if n_out:
            idx = rng.choice(obj.count, size=n_out, replace=False)
            lo, hi = spec.noise.outlier_offset
            off = rng.uniform(lo, hi, size=n_out) * rng.choice([-1.0, 1.0], size=n_out)
            X[idx] += off[:, None] * n
            out[idx] = True
        pts.append(X)
        pcls.append(np.full(obj.count, cid[obj.cls]))
        pobj.append(np.full(obj.count, k))
        pinst.append(np.full(obj.count, inst))
        pout.append(out)
    for cl in spec.clutter:
        X = rng.uniform(cl.box_min, cl.box_max, size=(cl.count, 3))
        pts.append(X)
        pcls.append(np.full(cl.count, void if cl.cls is None else cid[cl.cls]))
        pobj.append(np.full(cl.count, -1))
        pinst.append(np.zeros(cl.count, dtype=int))
        pout.append(np.zeros(cl.count, dtype=bool))

    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    descriptors = rng.integers(0, 256, size=(len(points), DESCRIPTOR_BYTES), dtype=np.uint8)
    wp = [look_at(w.center, w.target, spec.up) for w in spec.waypoints]
    poses = interpolate_trajectory(wp, spec.frames)
    bundle = GroundTruthBundle(
        spec=spec,
        seed=seed,
        poses=poses,
        timestamps=np.arange(spec.frames) / spec.fps,
        points=points,
        point_class=np.concatenate(pcls).astype(int) if pcls else np.zeros(0, dtype=int),
        point_object=np.concatenate(pobj).astype(int) if pobj else np.zeros(0, dtype=int),
        point_instance=np.concatenate(pinst).astype(int) if pinst else np.zeros(0, dtype=int),
        is_outlier=np.concatenate(pout) if pout else np.zeros(0, dtype=bool),
        descriptors=descriptors,
        planes=planes,
        object_class=ocls,
        object_instance=oinst,
    )
    _check_coverage(bundle)
    return bundle


def visible_points(bundle: GroundTruthBundle, frame: int, min_depth: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Ids and exact pixels of the points visible in a frame."""
    pose = bundle.poses[frame]
    Xc = pose.transform(bundle.points)
    ok = Xc[:, 2] > min_depth
    uv = np.full((len(Xc), 2), -1.0)
    uv[ok] = project_camera(bundle.K, Xc[ok])
    ok &= bundle.K.in_image(uv)
    ids = np.flatnonzero(ok)
    return ids, uv[ids]


def _check_coverage(bundle: GroundTruthBundle) -> None:
    if len(bundle.points) == 0:
        return
    good = 0
    for f in range(bundle.n_frames):
        ids, _ = visible_points(bundle, f)
        if len(ids) >= 0.25 * len(bundle.points):
            good += 1
    if good < 0.9 * bundle.n_frames:
        raise InvalidSpec(f"scene content visible in only {good}/{bundle.n_frames} frames")


def _fill_convex(img: np.ndarray, poly: np.ndarray, value: int) -> None:
    """Paint a convex polygon (pixel coordinates) into ``img``."""
    H, W = img.shape
    x0, y0 = np.floor(poly.min(axis=0)).astype(int)
    x1, y1 = np.ceil(poly.max(axis=0)).astype(int)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, W - 1), min(y1, H - 1)
    if x1 < x0 or y1 < y0:
        return
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    px, py = xx + 0.5, yy + 0.5
    inside_pos = np.ones(px.shape, dtype=bool)
    inside_neg = np.ones(px.shape, dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    region = img[y0 : y1 + 1, x0 : x1 + 1]
    region[inside_pos | inside_neg] = value


def raw_instance_ids(bundle: GroundTruthBundle, frame: int, churn: float) -> list[int]:
    """Raw per-frame ids of each planar object (0 for stuff); churned ids are fresh."""
    rng = _rng(bundle.seed, _STREAM_FRAME, frame, 7)
    n_obj = len(bundle.object_instance)
    out = []
    for k, base in enumerate(bundle.object_instance):
        if base and rng.random() < churn:
            out.append(1 + n_obj + frame * n_obj + k)
        else:
            out.append(base)
    if max(out, default=0) > 65535:
        raise InvalidSpec("raw instance ids exceed the 16-bit range")
    return out


def render_frame(bundle: GroundTruthBundle, frame: int, noise: NoiseSpec | None = None, alpha: float = 0.9) -> RenderedFrame:
    """Noisy keypoint observations plus a panoptic label/instance image for one frame.

    Object extents are painted as projected polygons (far to near), then every
    observed keypoint pixel is stamped with its point's true class and
    instance. Label errors replace a pixel's class by a uniformly drawn wrong
    class; instance ids are left alone.
    """
    if not 0 <= frame < bundle.n_frames:
        raise IndexError(f"frame {frame} out of range")
    noise = bundle.spec.noise if noise is None else noise
    K = bundle.K
    rng = _rng(bundle.seed, _STREAM_FRAME, frame)
    ids, uv = visible_points(bundle, frame)
    pixels = uv + rng.normal(0.0, noise.pixel_sigma, size=uv.shape) if noise.pixel_sigma > 0 else uv.copy()
    inside = K.in_image(pixels)
    ids, pixels = ids[inside], pixels[inside]

    flips = rng.random((len(ids), DESCRIPTOR_BYTES * 8)) < noise.descriptor_flip
    desc = bundle.descriptors[ids] ^ np.packbits(flips, axis=1)

    H, W = K.height, K.width
    labels = np.zeros((H, W), dtype=np.int64)
    void = bundle.spec.class_names.index(bundle.spec.void_class)
    labels[:] = void
    instances = np.zeros((H, W), dtype=np.int64)
    raw = raw_instance_ids(bundle, frame, noise.churn)
    pose = bundle.poses[frame]
    order = []
    for k, obj in enumerate(bundle.spec.planar_objects):
        Xc = pose.transform(obj.corners())
        if np.all(Xc[:, 2] > 0.05):
            order.append((-float(Xc[:, 2].mean()), k, project_camera(K, Xc)))
    for _, k, poly in sorted(order, key=lambda o: (o[0], o[1])):
        _fill_convex(labels, poly, bundle.object_class[k])
        _fill_convex(instances, poly, raw[k])

    rows = np.floor(pixels[:, 1]).astype(int)
    cols = np.floor(pixels[:, 0]).astype(int)
    labels[rows, cols] = bundle.point_class[ids]
    obj = bundle.point_object[ids]
    inst = np.array([raw[o] if o >= 0 else 0 for o in obj], dtype=np.int64)
    instances[rows, cols] = inst

    if noise.label_error > 0:
        C = len(bundle.spec.class_names)
        wrong = rng.random((H, W)) < noise.label_error
        shift = rng.integers(1, C, size=(H, W))
        labels = np.where(wrong, (labels + shift) % C, labels)

    return RenderedFrame(
        index=frame,
        timestamp=float(bundle.timestamps[frame]),
        point_ids=ids,
        pixels=pixels,
        descriptors=desc,
        labels=labels,
        instances=instances,
        alpha=alpha,
        track_ids=track_ids(bundle, frame, ids, noise.track_length),
    )


def track_ids(bundle: GroundTruthBundle, frame: int, point_ids: np.ndarray, track_length: int) -> np.ndarray:
    """Track id of each observed point: ``point + N * segment``.

    Each point's track is cut every ``track_length`` frames, at a per-point
    random phase, so tracks of different points end at different frames.
    """
    point_ids = np.asarray(point_ids, dtype=np.int64)
    if track_length <= 0:
        return point_ids.copy()
    n = len(bundle.points)
    phase = _rng(bundle.seed, _STREAM_TRACK).integers(0, track_length, size=n)
    segment = (frame + phase[point_ids]) // track_length
    return point_ids + n * segment


def track_point(bundle: GroundTruthBundle, track_id) -> np.ndarray | int:
    """Ground-truth point index of a track id."""
    return np.asarray(track_id) % len(bundle.points) if np.ndim(track_id) else int(track_id) % len(bundle.points)


def initial_track_positions(bundle: GroundTruthBundle, tracks, point_noise: float, seed: int = 0) -> dict[int, np.ndarray]:
    """Independently perturbed initial position for every track, as a front-end would triangulate it."""
    out = {}
    for tid in sorted({int(t) for t in tracks}):
        X = bundle.points[tid % len(bundle.points)]
        if point_noise > 0:
            X = X + _rng(seed, _STREAM_INIT, bundle.seed, 1, tid).normal(0.0, point_noise, size=3)
        out[tid] = X.copy()
    return out


def _random_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def perturb_initialization(bundle: GroundTruthBundle, pose_noise=(0.0, 0.0), point_noise: float = 0.0, seed: int = 0, fix_first: bool = True):
    """Perturbed copies of the poses and points, used to initialize BA.

    Pose perturbations are bounded: the camera center moves by at most
    ``pose_noise[0]`` meters and the orientation by at most ``pose_noise[1]``
    degrees. Points get isotropic Gaussian noise with std ``point_noise``.
    The first two poses are left exact by default: they anchor the map frame
    and the scale, like a bootstrap from a known two-view baseline.
    """
    rng = _rng(seed, _STREAM_INIT, bundle.seed)
    trans_m, rot_deg = pose_noise
    n = bundle.n_frames
    dirs_t = _random_unit(rng, n)
    mags_t = rng.uniform(0.0, 1.0, n) * trans_m
    dirs_r = _random_unit(rng, n)
    mags_r = np.deg2rad(rng.uniform(0.0, 1.0, n) * rot_deg)
    poses = []
    for i, p in enumerate(bundle.poses):
        if (fix_first and i < 2) or (trans_m == 0 and rot_deg == 0):
            poses.append(p)
            continue
        twc = p.inverse()
        qwc = quat_multiply(so3_exp(dirs_r[i] * mags_r[i]), twc.q)
        poses.append(Pose(qwc, twc.t + dirs_t[i] * mags_t[i]).inverse())
    pts = bundle.points.copy()
    if point_noise > 0:
        pts = pts + rng.normal(0.0, point_noise, size=pts.shape)
    return poses, pts


# scene presets -------------------------------------------------------------

DEFAULT_CLASSES = ["unlabeled", "floor", "table", "keyboard", "book", "monitor", "chair", "road"]
DEFAULT_THINGS = {"table", "keyboard", "book", "monitor", "chair"}


def _desk_trajectory(frames: int) -> dict:
    return {
        "frames": frames,
        "fps": 10.0,
        "waypoints": [
            {"center": (-0.45, -1.7, 1.35), "target": (0.0, 0.0, 0.55)},
            {"center": (0.0, -1.8, 1.45), "target": (0.0, 0.0, 0.6)},
            {"center": (0.45, -1.7, 1.35), "target": (0.05, 0.0, 0.55)},
        ],
    }


def desk_scene(
    frames: int = 30,
    pixel_sigma: float = 0.5,
    label_error: float = 0.1,
    churn: float = 0.2,
    clutter_fraction: float = 0.3,
    outlier_rate: float = 0.0,
    track_length: int = 5,
) -> SceneSpec:
    """Floor plus a keyboard and a tilted book on a desk, with unlabeled clutter."""
    planar = [
        {"cls": "floor", "center": (0.0, 0.3, 0.0), "normal": (0, 0, 1), "extent": (3.0, 2.6), "count": 260},
        {"cls": "keyboard", "center": (-0.15, 0.0, 0.74), "normal": (0, 0, 1), "extent": (0.45, 0.16), "count": 110, "yaw_deg": 5.0},
        {"cls": "book", "center": (0.3, 0.1, 0.78), "normal": (0.0, -0.42, 0.91), "extent": (0.24, 0.18), "count": 80},
    ]
    n_planar = sum(o["count"] for o in planar)
    n_clutter = int(round(clutter_fraction * n_planar / (1.0 - clutter_fraction)))
    clutter = [
        {"box_min": (-0.7, -0.2, 0.75), "box_max": (0.7, 0.5, 1.2), "count": n_clutter // 2},
        {"box_min": (-1.2, 0.6, 0.0), "box_max": (1.2, 1.2, 1.4), "count": n_clutter - n_clutter // 2},
    ]
    return SceneSpec.from_dict(
        {
            "intrinsics": {"fx": 525.0, "fy": 525.0, "cx": 319.5, "cy": 239.5, "width": 640, "height": 480},
            "planar_objects": planar,
            "clutter": clutter,
            "trajectory": _desk_trajectory(frames),
            "noise": {"pixel_sigma": pixel_sigma, "label_error": label_error, "churn": churn, "outlier_rate": outlier_rate, "track_length": track_length},
        },
        DEFAULT_CLASSES,
        DEFAULT_THINGS,
    )


def parallel_planes_scene(frames: int = 30, pixel_sigma: float = 0.5, label_error: float = 0.1, churn: float = 0.2, track_length: int = 0) -> SceneSpec:
    """Floor, table top and a book lying on the table: three parallel planes.

    Tracks run unbroken by default so the small book plane is well constrained.
    """
    planar = [
        {"cls": "floor", "center": (0.0, 0.3, 0.0), "normal": (0, 0, 1), "extent": (3.0, 2.6), "count": 260},
        {"cls": "table", "center": (0.0, 0.05, 0.72), "normal": (0, 0, 1), "extent": (1.2, 0.7), "count": 180},
        {"cls": "book", "center": (0.3, -0.1, 0.755), "normal": (0, 0, 1), "extent": (0.24, 0.18), "count": 80, "yaw_deg": 20.0},
    ]
    clutter = [{"box_min": (-0.6, 0.0, 0.75), "box_max": (0.6, 0.4, 1.1), "count": 120}]
    return SceneSpec.from_dict(
        {
            "intrinsics": {"fx": 525.0, "fy": 525.0, "cx": 319.5, "cy": 239.5, "width": 640, "height": 480},
            "planar_objects": planar,
            "clutter": clutter,
            "trajectory": _desk_trajectory(frames),
            "noise": {"pixel_sigma": pixel_sigma, "label_error": label_error, "churn": churn, "track_length": track_length},
        },
        DEFAULT_CLASSES,
        DEFAULT_THINGS,
    )


def spec_to_dict(spec: SceneSpec) -> dict:
    K = spec.intrinsics
    return {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
        "classes": list(spec.class_names),
        "thing_classes": sorted(spec.thing_classes),
        "void_class": spec.void_class,
        "planar_objects": [
            {"cls": o.cls, "center": list(o.center), "normal": list(o.normal), "extent": list(o.extent), "count": o.count, "yaw_deg": o.yaw_deg}
            for o in spec.planar_objects
        ],
        "clutter": [{"box_min": list(c.box_min), "box_max": list(c.box_max), "count": c.count, "cls": c.cls} for c in spec.clutter],
        "trajectory": {
            "frames": spec.frames,
            "fps": spec.fps,
            "waypoints": [{"center": list(w.center), "target": list(w.target)} for w in spec.waypoints],
        },
        "noise": {
            "pixel_sigma": spec.noise.pixel_sigma,
            "label_error": spec.noise.label_error,
            "churn": spec.noise.churn,
            "outlier_rate": spec.noise.outlier_rate,
            "outlier_offset": list(spec.noise.outlier_offset),
            "descriptor_flip": spec.noise.descriptor_flip,
            "track_length": spec.noise.track_length,
        },
        "up": list(spec.up),
    }


def write_spec(spec: SceneSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump({"scene": spec_to_dict(spec)}, sort_keys=False))
