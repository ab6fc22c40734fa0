"""End-to-end keyframe loop, mode comparison and artifact export."""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from . import semantic_fusion as sf
from .cluster_map import SemanticMap, assign_to_cluster, merge_pass, reproject_repair, upsert_point_semantics
from .config import RunConfig
from .errors import ClusterSlamError, ConfigError, StageError
from .evaluation import Trajectory, ate_rmse, median_over_runs, normal_angle, normal_angle_stats, read_tum
from .geometry import CameraIntrinsics, Plane, Pose
from .planar_ba import BAProblem, LMResult, TraceRow, build_problem, run_planar_ba, write_back, write_trace_csv
from .plane_fitting import cluster_needs_fit, fit_cluster
from .simulator import (
    DEFAULT_CLASSES,
    DEFAULT_THINGS,
    GroundTruthBundle,
    SceneSpec,
    desk_scene,
    generate_scene,
    initial_track_positions,
    parallel_planes_scene,
    perturb_initialization,
    render_frame,
)

PRESETS = {"desk": desk_scene, "parallel_planes": parallel_planes_scene}
FIXED_ARTIFACTS = ("trajectory.txt", "map.json", "map.ply", "planes.json", "report.json")


@dataclass
class FrameData:
    """What the back-end consumes for one keyframe."""

    index: int
    timestamp: float
    point_ids: np.ndarray
    pixels: np.ndarray
    descriptors: list  # per observation, uint8 array or None
    pmap: sf.ProbabilityMap
    imap: sf.InstanceMap


# datasets --------------------------------------------------------------------


def scene_spec_from_input(source, base_dir=".") -> SceneSpec:
    """Scene from a preset name, a preset mapping with overrides, a YAML path or an inline spec."""
    if isinstance(source, str):
        if source in PRESETS:
            return PRESETS[source]()
        path = Path(source) if Path(source).is_absolute() else Path(base_dir) / source
        if not path.exists():
            raise ConfigError(f"synthetic input {source!r} is neither a preset nor a file")
        return SceneSpec.from_yaml(path, DEFAULT_CLASSES, DEFAULT_THINGS)
    if isinstance(source, dict):
        if "preset" in source:
            kw = {k: v for k, v in source.items() if k != "preset"}
            if source["preset"] not in PRESETS:
                raise ConfigError(f"unknown scene preset {source['preset']!r}")
            try:
                return PRESETS[source["preset"]](**kw)
            except TypeError as exc:
                raise ConfigError(f"scene preset options: {exc}") from None
        return SceneSpec.from_dict(source, DEFAULT_CLASSES, DEFAULT_THINGS)
    raise ConfigError("synthetic input must be a preset name, a path or a mapping")


class SyntheticDataset:
    """Simulator-backed input: perturbed initial estimates plus rendered observations."""

    def __init__(self, spec: SceneSpec, seed: int, class_names: list[str], init=None, alpha: float = 0.9):
        self.bundle: GroundTruthBundle = generate_scene(spec, seed)
        self.seed = seed
        self.alpha = alpha
        missing = [n for n in spec.class_names if n not in class_names]
        if missing:
            raise ConfigError(f"scene classes missing from the class table: {missing}")
        self._lut = np.array([class_names.index(n) for n in spec.class_names], dtype=np.int64)
        self.n_classes = len(class_names)
        pose_noise = (init.pose_m, init.pose_deg) if init is not None else (0.0, 0.0)
        point_noise = init.point_m if init is not None else 0.0
        self.initial_poses, _ = perturb_initialization(self.bundle, pose_noise, point_noise, seed=seed)
        self._point_noise = point_noise
        self._initial: dict[int, np.ndarray] = {}

    def initial_point(self, track_id: int) -> np.ndarray:
        if track_id not in self._initial:
            self._initial.update(initial_track_positions(self.bundle, [track_id], self._point_noise, self.seed))
        return self._initial[track_id]

    @property
    def K(self) -> CameraIntrinsics:
        return self.bundle.K

    @property
    def timestamps(self) -> np.ndarray:
        return self.bundle.timestamps

    def keyframes(self) -> list[int]:
        return list(range(self.bundle.n_frames))

    def frame(self, f: int) -> FrameData:
        r = render_frame(self.bundle, f, alpha=self.alpha)
        labels = self._lut[r.labels]
        return FrameData(
            index=f,
            timestamp=r.timestamp,
            point_ids=r.track_ids,
            pixels=r.pixels,
            descriptors=list(r.descriptors),
            pmap=sf.ProbabilityMap.from_labels(labels, self.n_classes, self.alpha),
            imap=r.instance_map(),
        )

    def ground_truth(self) -> Trajectory:
        return Trajectory.from_camera_poses(self.bundle.timestamps, self.bundle.poses)

    def object_of_point(self, pid: int) -> int:
        return int(self.bundle.point_object[pid % len(self.bundle.points)])

    def gt_planes(self) -> list[Plane]:
        return self.bundle.planes


class RecordedDataset:
    """A dataset directory (see ``formats`` for the layout)."""

    def __init__(self, root, class_names: list[str], keyframe_every: int = 5, alpha: float = 0.9):
        self.root = Path(root)
        if not (self.root / "dataset.yaml").exists():
            raise ConfigError(f"{self.root}: missing dataset.yaml")
        meta = formats.read_dataset_meta(self.root / "dataset.yaml")
        self.K = meta["intrinsics"]
        names = meta.get("classes", class_names)
        missing = [n for n in names if n not in class_names]
        if missing:
            raise ConfigError(f"dataset classes missing from the class table: {missing}")
        self._lut = np.array([class_names.index(n) for n in names], dtype=np.int64)
        self.n_classes = len(class_names)
        self.keyframe_every = int(meta.get("keyframe_every", keyframe_every))
        self.alpha = float(meta.get("label_confidence", alpha))
        init = read_tum(self.root / "initial_trajectory.txt")
        self.timestamps = init.timestamps
        self.initial_poses = [p.inverse() for p in init.poses]
        self.initial_points = formats.read_points_csv(self.root / "initial_points.csv")
        self._tracks = formats.read_tracks(self.root / "tracks.csv")
        self.seed = 0

    def initial_point(self, track_id: int) -> np.ndarray | None:
        return self.initial_points.get(track_id)

    def keyframes(self) -> list[int]:
        return list(range(0, len(self.timestamps), self.keyframe_every))

    def frame(self, f: int) -> FrameData:
        ids, px, desc = self._tracks.get(f, (np.zeros(0, dtype=np.int64), np.zeros((0, 2)), []))
        label_path, inst_path, prob_path = formats.seg_paths(self.root, f)
        labels = self._lut[formats.read_png16(label_path)]
        if prob_path.exists():
            raw = formats.read_probability_file(prob_path)
            probs = np.zeros(raw.shape[:2] + (self.n_classes,))
            probs[..., self._lut] = raw
            pmap = sf.ProbabilityMap(probs)
        else:
            pmap = sf.ProbabilityMap.from_labels(labels, self.n_classes, self.alpha)
        return FrameData(f, float(self.timestamps[f]), ids, px, desc, pmap, sf.InstanceMap(formats.read_png16(inst_path)))

    def ground_truth(self) -> Trajectory | None:
        path = self.root / "groundtruth.txt"
        return read_tum(path) if path.exists() else None

    def object_of_point(self, pid: int) -> int:
        return -1

    def gt_planes(self) -> list[Plane]:
        return []


def open_dataset(cfg: RunConfig, seed: int):
    names = cfg.class_table.names()
    alpha = cfg.pipeline.label_confidence
    if cfg.synthetic is not None:
        spec = scene_spec_from_input(cfg.synthetic, cfg.base_dir)
        return SyntheticDataset(spec, seed, names, cfg.init, alpha)
    return RecordedDataset(cfg.resolve(cfg.dataset), names, cfg.pipeline.keyframe_every, alpha)


def export_dataset(ds: SyntheticDataset, outdir, class_names: list[str]) -> list[Path]:
    """Write a simulated run in the recorded-dataset layout (every frame is a keyframe)."""
    out = Path(outdir)
    (out / "seg").mkdir(parents=True, exist_ok=True)
    formats.write_dataset_meta(out / "dataset.yaml", ds.K, class_names, 1, ds.alpha)
    (out / "initial_trajectory.txt").write_text("\n".join(formats.pose_lines(ds.timestamps, ds.initial_poses)) + "\n")
    (out / "groundtruth.txt").write_text("\n".join(formats.pose_lines(ds.timestamps, ds.bundle.poses)) + "\n")
    rows, frames = [], [ds.frame(f) for f in ds.keyframes()]
    ids = sorted({int(p) for fd in frames for p in fd.point_ids})
    formats.write_points_csv(out / "initial_points.csv", ids, [ds.initial_point(i) for i in ids])
    for fd in frames:
        f = fd.index
        label_path, inst_path, _ = formats.seg_paths(out, f)
        formats.write_png16(label_path, fd.pmap.labels())
        formats.write_png16(inst_path, fd.imap.ids)
        rows.extend((f, int(p), u, v, d) for p, (u, v), d in zip(fd.point_ids, fd.pixels, fd.descriptors))
    formats.write_tracks(out / "tracks.csv", rows)
    return sorted(p for p in out.rglob("*") if p.is_file())


# the keyframe loop -----------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    smap: SemanticMap
    trajectory: Trajectory
    ate: float | None
    trace: list[TraceRow]
    planes: list[dict]
    normal_angles: dict | None
    parallel_angles: list[float]
    timings_ms: dict[str, float]
    n_global_ba: int = 0


@dataclass
class RunReport:
    mode: str
    seeds: list[int]
    ate: dict[int, float | None]
    median_ate: float | None
    plane_inventory: list[dict]
    normal_angles: dict | None
    timings_ms: dict[str, float]
    config: dict
    results: list[SeedResult] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        """The deterministic part of the report (timings are kept out of it)."""
        return {
            "mode": self.mode,
            "seeds": list(self.seeds),
            "per_seed": [
                {"seed": r.seed, "ate_rmse_m": r.ate, "keyframes": len(r.trajectory), "planes": len(r.planes), "global_ba_runs": r.n_global_ba}
                for r in self.results
            ],
            "median_ate_m": self.median_ate,
            "plane_inventory": self.plane_inventory,
            "normal_angles_deg": self.normal_angles,
            "config": self.config,
        }


class _Stages:
    def __init__(self):
        self.ms: dict[str, float] = {}
        self.keyframe = None

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except ClusterSlamError as exc:
            raise StageError(name, self.keyframe, exc) from exc
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + 1000.0 * (time.perf_counter() - t0)


def _ba(smap, K, window, cfg: RunConfig, planar: bool, max_it: int, trace: list[TraceRow]) -> LMResult | None:
    prob: BAProblem = build_problem(smap, K, window, cfg.ba, use_planes=planar)
    if not len(prob.point_ids) or np.all(prob.fixed):
        return None
    res = run_planar_ba(prob, cfg.ba, max_it)
    offset = trace[-1].iteration if trace else 0
    trace.extend(TraceRow(offset + r.iteration, r.cost, r.reprojection, r.plane, r.lam, r.accepted) for r in res.trace)
    write_back(prob, smap)
    return res


def _refit_planes(smap: SemanticMap, cfg: RunConfig, seed: int) -> list[int]:
    accepted = []
    for cid in sorted(smap.clusters):
        cl = smap.clusters[cid]
        if cl.planar and len(cl) >= 3 and fit_cluster(cl, smap, cfg.ransac, seed=seed * 7919 + cid):
            accepted.append(cid)
    return accepted


def _plane_inventory(smap: SemanticMap, seed: int) -> list[dict]:
    out = []
    for cid in sorted(smap.clusters):
        cl = smap.clusters[cid]
        if cl.plane is None:
            continue
        out.append(
            {
                "seed": seed,
                "cluster": cid,
                "class": smap.class_table[cl.cls].name,
                "instance": cl.instance,
                "inlier_count": cl.inlier_count,
                "inlier_rms_m": cl.inlier_rms,
                "normal": [float(x) for x in cl.plane.normal],
                "pi": [float(x) for x in cl.plane.pi],
            }
        )
    return out


def _cluster_object(smap: SemanticMap, cid: int, ds) -> int:
    objs = [ds.object_of_point(p) for p in smap.clusters[cid].members]
    objs = [o for o in objs if o >= 0]
    if not objs:
        return -1
    vals, counts = np.unique(objs, return_counts=True)
    return int(vals[np.argmax(counts)])


def _parallel_pairs(smap: SemanticMap, ds) -> tuple[list[Plane], list[tuple[int, int]]]:
    """Estimated planes and the index pairs whose ground-truth objects are parallel.

    Without ground-truth objects every pair is returned.
    """
    cids = [c for c in sorted(smap.clusters) if smap.clusters[c].plane is not None]
    planes = [smap.clusters[c].plane for c in cids]
    gt = ds.gt_planes()
    if not gt:
        return planes, [(i, j) for i in range(len(cids)) for j in range(i + 1, len(cids))]
    objs = [_cluster_object(smap, c, ds) for c in cids]
    pairs = []
    for i in range(len(cids)):
        for j in range(i + 1, len(cids)):
            a, b = objs[i], objs[j]
            if a >= 0 and b >= 0 and a != b and abs(abs(gt[a].normal @ gt[b].normal) - 1.0) < 1e-9:
                pairs.append((i, j))
    return planes, pairs


def run_seed(cfg: RunConfig, seed: int, dataset=None) -> SeedResult:
    """Process one seed's keyframes: fuse, cluster, repair, merge, fit, optimize."""
    ds = open_dataset(cfg, seed) if dataset is None else dataset
    planar = cfg.mode == "planar_ba"
    opts = cfg.pipeline
    smap = SemanticMap(cfg.class_table)
    tracker = sf.InstanceTrackState()
    stages = _Stages()
    trace: list[TraceRow] = []
    K = ds.K
    n_global = 0
    kf_order: list[int] = []

    for f in ds.keyframes():
        stages.keyframe = f
        with stages.stage("ingest"):
            fd = ds.frame(f)
            smap.add_keyframe(f, ds.initial_poses[f], fd.timestamp)
            kf_order.append(f)
            for pid, px, desc in zip(fd.point_ids.tolist(), fd.pixels, fd.descriptors):
                if pid not in smap.points:
                    X0 = ds.initial_point(pid)
                    if X0 is None:
                        continue
                    smap.add_point(pid, X0, desc)
                smap.add_observation(pid, f, px)

        with stages.stage("track"):
            classes = sf.instance_classes(fd.imap, fd.pmap.labels())
            mapping = tracker.track(fd.imap, classes, frame=f)
            imap = fd.imap.relabel(mapping)
            for raw, pers in mapping.items():
                smap.instance_classes[pers] = classes[raw]

        with stages.stage("fusion"):
            for pid, px in zip(fd.point_ids.tolist(), fd.pixels):
                if pid in smap.points:
                    upsert_point_semantics(smap, pid, fd.pmap, imap, px)
                    assign_to_cluster(smap, pid)
            if opts.repair:
                reproject_repair(smap, f, imap, K)

        if opts.merge:
            with stages.stage("merge"):
                merge_pass(smap, opts.tau_merge)

        new_planes = []
        with stages.stage("plane_fit"):
            for cid in sorted(smap.clusters):
                cl = smap.clusters[cid]
                if cluster_needs_fit(cl, smap, cfg.ransac) and fit_cluster(cl, smap, cfg.ransac, seed=seed * 7919 + cid):
                    new_planes.append(cid)

        with stages.stage("window_ba"):
            _ba(smap, K, kf_order[-opts.window :], cfg, planar, cfg.ba.max_iterations, trace)

        if planar and new_planes:
            with stages.stage("global_ba"):
                if _ba(smap, K, "ALL", cfg, True, cfg.ba.global_max_iterations, trace) is not None:
                    n_global += 1
                _refit_planes(smap, cfg, seed)

    stages.keyframe = "final"
    if opts.final_global_ba:
        with stages.stage("global_ba"):
            _ba(smap, K, "ALL", cfg, planar, cfg.ba.global_max_iterations, trace)
    with stages.stage("plane_fit"):
        _refit_planes(smap, cfg, seed)

    with stages.stage("evaluate"):
        kfs = sorted(smap.keyframes)
        traj = Trajectory.from_camera_poses([smap.keyframe_times[k] for k in kfs], [smap.keyframes[k] for k in kfs])
        gt = ds.ground_truth()
        ate = ate_rmse(traj, gt) if gt is not None and len(traj) >= 3 else None
        planes, pairs = _parallel_pairs(smap, ds)
        angles = normal_angle_stats(planes, pairs) if pairs else None
        parallel = [normal_angle(planes[i], planes[j]) for i, j in pairs]

    return SeedResult(
        seed=seed,
        smap=smap,
        trajectory=traj,
        ate=ate,
        trace=trace,
        planes=_plane_inventory(smap, seed),
        normal_angles=angles,
        parallel_angles=parallel,
        timings_ms=stages.ms,
        n_global_ba=n_global,
    )


def run_pipeline(cfg: RunConfig) -> RunReport:
    cfg.validate()
    results = [run_seed(cfg, s) for s in cfg.seeds]
    ates = {r.seed: r.ate for r in results}
    valid = [a for a in ates.values() if a is not None]
    pooled = [a for r in results for a in r.parallel_angles]
    angles = None
    if pooled:
        angles = {"max": float(np.max(pooled)), "min": float(np.min(pooled)), "median": float(np.median(pooled)), "pairs": len(pooled)}
    timings: dict[str, float] = {}
    for r in results:
        for k, v in r.timings_ms.items():
            timings[k] = timings.get(k, 0.0) + v
    return RunReport(
        mode=cfg.mode,
        seeds=list(cfg.seeds),
        ate=ates,
        median_ate=median_over_runs(valid) if valid else None,
        plane_inventory=[p for r in results for p in r.planes],
        normal_angles=angles,
        timings_ms=timings,
        config=cfg.echo(),
        results=results,
    )


@dataclass
class Comparison:
    seeds: list[int]
    plain: RunReport
    planar: RunReport

    @property
    def percent_change(self) -> float | None:
        """Positive when planar BA lowers the median ATE: 100 * (plain - planar) / plain."""
        a, b = self.plain.median_ate, self.planar.median_ate
        if a is None or b is None or a == 0:
            return None
        return 100.0 * (a - b) / a

    def rows(self) -> list[dict]:
        out = []
        for s in self.seeds:
            a, b = self.plain.ate[s], self.planar.ate[s]
            pct = None if a in (None, 0) or b is None else 100.0 * (a - b) / a
            out.append({"seed": s, "plain_ba_m": a, "planar_ba_m": b, "change_pct": pct})
        return out

    def to_json_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "rows": self.rows(),
            "median_plain_ba_m": self.plain.median_ate,
            "median_planar_ba_m": self.planar.median_ate,
            "median_change_pct": self.percent_change,
            "sign_convention": "change_pct = 100 * (plain - planar) / plain; positive means planar BA is better",
        }

    def table(self) -> str:
        def mm(v):
            return "      n/a" if v is None else f"{1000 * v:9.3f}"

        lines = ["seed   plain_ba(mm)  planar_ba(mm)  change(%)"]
        for r in self.rows():
            pct = "n/a" if r["change_pct"] is None else f"{r['change_pct']:+.2f}"
            lines.append(f"{r['seed']:4d}   {mm(r['plain_ba_m'])}     {mm(r['planar_ba_m'])}      {pct}")
        pct = "n/a" if self.percent_change is None else f"{self.percent_change:+.2f}"
        lines.append(f"median {mm(self.plain.median_ate)}     {mm(self.planar.median_ate)}      {pct}")
        return "\n".join(lines)


def compare_modes(cfg: RunConfig) -> Comparison:
    plain = run_pipeline(cfg.with_mode("plain_ba"))
    planar = run_pipeline(cfg.with_mode("planar_ba"))
    return Comparison(list(cfg.seeds), plain, planar)


# artifacts -------------------------------------------------------------------


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def export_artifacts(report: RunReport, outdir) -> dict:
    """Write the run's files and a manifest with their SHA-256 checksums.

    Map, trajectory and planes describe the first seed of the run; the
    report and one BA trace per seed cover every seed.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    first = report.results[0]
    smap = first.smap
    kfs = sorted(smap.keyframes)
    (out / "trajectory.txt").write_text("\n".join(formats.pose_lines([smap.keyframe_times[k] for k in kfs], [smap.keyframes[k] for k in kfs])) + "\n")
    doc = smap.to_document()
    doc["seed"] = first.seed
    _dump_json(out / "map.json", doc)
    pids = sorted(smap.points)
    labels = [smap.point_cluster.get(p, -1) for p in pids]
    colors = [formats.cluster_color(None if c == -1 else c) for c in labels]
    formats.write_ply(out / "map.ply", smap.positions(pids), np.array(colors, dtype=np.uint8).reshape(-1, 3), labels)
    _dump_json(out / "planes.json", {"seed": first.seed, "planes": first.planes})
    _dump_json(out / "report.json", report.to_json_dict())
    names = list(FIXED_ARTIFACTS)
    for r in report.results:
        name = f"trace_seed{r.seed}.csv"
        write_trace_csv(out / name, r.trace)
        names.append(name)
    manifest = {
        "files": [{"name": n, "sha256": formats.sha256_file(out / n), "bytes": (out / n).stat().st_size} for n in names],
        "timings_ms": {k: round(v, 3) for k, v in sorted(report.timings_ms.items())},
    }
    _dump_json(out / "manifest.json", manifest)
    return manifest
