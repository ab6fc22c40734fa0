"""Run configuration: YAML loading, class tables and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cluster_map import ClassInfo, ClassTable
from .errors import ConfigError
from .plane_fitting import DEFAULT_MIN_INLIERS, RansacConfig
from .planar_ba import BAConfig

MODES = ("plain_ba", "planar_ba")

DEFAULT_CLASS_TABLE = [
    {"name": "unlabeled", "kind": "void"},
    {"name": "floor", "kind": "stuff", "planar": True},
    {"name": "table", "kind": "thing", "planar": True},
    {"name": "keyboard", "kind": "thing", "planar": True},
    {"name": "book", "kind": "thing", "planar": True},
    {"name": "monitor", "kind": "thing"},
    {"name": "chair", "kind": "thing"},
    {"name": "road", "kind": "stuff", "planar": True, "scale": "road"},
]


def class_table_from_list(rows: list[dict]) -> ClassTable:
    classes = []
    for i, row in enumerate(rows):
        row = dict(row)
        row.setdefault("id", i)
        try:
            classes.append(ClassInfo(**row))
        except TypeError as exc:
            raise ConfigError(f"class table row {i}: {exc}") from None
    return ClassTable(classes)


def load_class_table(source) -> ClassTable:
    """Class table from a YAML file path, an inline list, or None for the default desk table."""
    if source is None:
        return class_table_from_list(DEFAULT_CLASS_TABLE)
    if isinstance(source, (str, Path)):
        try:
            with open(source) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read class table: {exc}") from None
        rows = data.get("classes", data) if isinstance(data, dict) else data
        return class_table_from_list(rows)
    return class_table_from_list(list(source))


@dataclass
class PipelineOptions:
    window: int = 10
    keyframe_every: int = 5
    merge: bool = True
    repair: bool = True
    final_global_ba: bool = True
    label_confidence: float = 0.9
    tau_merge: float | None = None


@dataclass
class InitNoise:
    pose_m: float = 0.01
    pose_deg: float = 0.5
    point_m: float = 0.02


@dataclass
class RunConfig:
    mode: str = "planar_ba"
    synthetic: str | dict | None = None
    dataset: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    class_table: ClassTable = field(default_factory=lambda: load_class_table(None))
    ba: BAConfig = field(default_factory=BAConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)
    init: InitNoise = field(default_factory=InitNoise)
    output_dir: str | None = None
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.synthetic is None) == (self.dataset is None):
            raise ConfigError("exactly one input source (synthetic or dataset) is required")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.pipeline.window < 1 or self.pipeline.keyframe_every < 1:
            raise ConfigError("window and keyframe_every must be >= 1")

    def with_mode(self, mode: str) -> RunConfig:
        cfg = dataclasses.replace(self, mode=mode)
        cfg.validate()
        return cfg

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def echo(self) -> dict:
        """Deterministic, JSON-safe summary of the effective configuration."""
        return {
            "mode": self.mode,
            "synthetic": self.synthetic,
            "dataset": self.dataset,
            "seeds": list(self.seeds),
            "classes": [dataclasses.asdict(c) for c in self.class_table],
            "ba": dataclasses.asdict(self.ba),
            "ransac": dataclasses.asdict(self.ransac),
            "pipeline": dataclasses.asdict(self.pipeline),
            "init": dataclasses.asdict(self.init),
        }


def normalize_mode(mode: str) -> str:
    m = {"plain": "plain_ba", "planar": "planar_ba"}.get(mode, mode)
    if m not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    return m


def _build(cls, data: dict | None, section: str):
    data = data or {}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_dict(d: dict, base_dir: str = ".") -> RunConfig:
    d = dict(d or {})
    known = {"mode", "input", "seeds", "class_table", "planar_classes", "ba", "ransac", "pipeline", "init", "output"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    inp = d.get("input") or {}
    if not isinstance(inp, dict):
        raise ConfigError("input must be a mapping with 'synthetic' or 'dataset'")

    table_src = d.get("class_table")
    if isinstance(table_src, str):
        table_src = str(Path(base_dir) / table_src) if not Path(table_src).is_absolute() else table_src
    table = load_class_table(table_src)

    planar = d.get("planar_classes")
    if planar is not None:
        names = set(table.names())
        for name in planar:
            if name not in names:
                raise ConfigError(f"planar_classes names unknown class {name!r}")
        table = ClassTable([dataclasses.replace(c, planar=c.name in set(planar)) for c in table])

    ransac = dict(d.get("ransac") or {})
    if "min_inliers" in ransac:
        user = dict(ransac["min_inliers"] or {})
        for name in user:
            if name not in set(table.names()):
                raise ConfigError(f"ransac.min_inliers names unknown class {name!r}")
        ransac["min_inliers"] = {**DEFAULT_MIN_INLIERS, **user}

    seeds = d.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    cfg = RunConfig(
        mode=normalize_mode(d.get("mode", "planar_ba")),
        synthetic=inp.get("synthetic"),
        dataset=inp.get("dataset"),
        seeds=[int(s) for s in seeds],
        class_table=table,
        ba=_build(BAConfig, d.get("ba"), "ba"),
        ransac=_build(RansacConfig, ransac, "ransac"),
        pipeline=_build(PipelineOptions, d.get("pipeline"), "pipeline"),
        init=_build(InitNoise, d.get("init"), "init"),
        output_dir=d.get("output"),
        base_dir=base_dir,
        raw=d,
    )
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data, base_dir=str(Path(path).parent))
