"""Command-line entry point: ``clusterslam {run,compare,simulate,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config, normalize_mode
from .errors import ClusterSlamError, ConfigError, InvalidSpec
from .evaluation import MAX_DT, ate_rmse, read_tum

log = logging.getLogger("clusterslam")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(normalize_mode(args.mode))
    cfg.validate()
    return cfg


def _outdir(args, cfg, default: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir:
        return cfg.resolve(cfg.output_dir)
    return Path(default)


def cmd_run(args) -> int:
    from .pipeline import export_artifacts, run_pipeline

    cfg = _load(args)
    report = run_pipeline(cfg)
    out = _outdir(args, cfg, "out")
    manifest = export_artifacts(report, out)
    for s, a in report.ate.items():
        print(f"seed {s}: ATE {'n/a' if a is None else f'{1000 * a:.3f} mm'}")
    if report.median_ate is not None:
        print(f"median ATE ({cfg.mode}): {1000 * report.median_ate:.3f} mm")
    print(f"wrote {len(manifest['files'])} artifacts to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .pipeline import compare_modes

    cfg = _load(args)
    cmp = compare_modes(cfg)
    print(cmp.table())
    if args.out or cfg.output_dir:
        out = _outdir(args, cfg, "out")
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(json.dumps(cmp.to_json_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .pipeline import SyntheticDataset, export_dataset, scene_spec_from_input

    cfg = _load(args)
    if cfg.synthetic is None:
        raise ConfigError("simulate needs a synthetic input in the config")
    spec = scene_spec_from_input(cfg.synthetic, cfg.base_dir)
    out = _outdir(args, cfg, "dataset")
    for seed in cfg.seeds:
        ds = SyntheticDataset(spec, seed, cfg.class_table.names(), cfg.init, cfg.pipeline.label_confidence)
        target = out if len(cfg.seeds) == 1 else out / f"seed{seed}"
        files = export_dataset(ds, target, cfg.class_table.names())
        print(f"seed {seed}: wrote {len(files)} files to {target}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est, gt = read_tum(args.estimate), read_tum(args.groundtruth)
    ate = ate_rmse(est, gt, args.max_dt, args.align)
    print(f"ATE RMSE ({args.align}): {ate:.9f} m")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterslam", description="Semantic-cluster map and planar bundle adjustment back-end")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, modes=True):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        if modes:
            sp.add_argument("--mode", choices=["plain", "planar", "plain_ba", "planar_ba"])
        sp.add_argument("--out", help="output directory")

    common(sub.add_parser("run", help="run the pipeline and write artifacts"))
    common(sub.add_parser("compare", help="run plain and planar BA side by side"), modes=False)
    common(sub.add_parser("simulate", help="export a synthetic scene as a dataset directory"), modes=False)
    ev = sub.add_parser("eval", help="ATE between two TUM trajectory files")
    ev.add_argument("estimate")
    ev.add_argument("groundtruth")
    ev.add_argument("--align", choices=["sim3", "se3", "none"], default="sim3")
    ev.add_argument("--max-dt", type=float, default=MAX_DT)
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "simulate": cmd_simulate, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ClusterSlamError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
