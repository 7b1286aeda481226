"""Command-line entry points for both pipeline stages.

Verbs: sample-prompts, pseudo-label, train, evaluate, analyze-bias,
dump-features. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 backend error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np
import torch
import yaml

from . import __version__
from .backends import (
    AFFIRMATIVE,
    JUDGE,
    NEGATIVE,
    EndpointDescriptor,
    build_agent,
    build_segmenter,
)
from .data import DatasetLayout, DatasetManifest, ingest_dataset, make_fixture_corpus
from .debate import build_meta_prompt
from .errors import ConfigurationError, DataError, WscodError, exit_code_for
from .losses import LossWeights
from .metrics import (
    boundary_distance_histogram,
    format_metric_table,
    high_response_mask,
)
from .net import NetworkConfig, toy_config
from .prompts import sample_prompts, save_prompt_sets
from .scribbles import FG_SCRIBBLE, load_binary_mask, load_image, load_scribbles, to_gray
from .stage1 import SamplingParams, attach_pseudo_masks, run_stage1
from .training import (
    TrainConfig,
    evaluate,
    model_from_checkpoint,
    predict,
    train,
)

logger = logging.getLogger(__name__)


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config file {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {p} must hold a mapping")
    return data


def _filter_fields(cls, data: dict) -> dict:
    names = {f.name for f in dataclass_fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    return data


def build_train_config(cfg: dict, toy: bool, seed: int | None) -> TrainConfig:
    net_data = dict(cfg.get("network", {}))
    if "fusion_levels" in net_data:
        net_data["fusion_levels"] = tuple(net_data["fusion_levels"])
    network = (
        toy_config(**_filter_fields(NetworkConfig, net_data))
        if toy
        else NetworkConfig(**_filter_fields(NetworkConfig, net_data))
    )
    train_data = dict(cfg.get("train", {}))
    weights = LossWeights(**train_data.pop("weights", {}))
    if toy:
        train_data.setdefault("epochs", 5)
        train_data.setdefault("warmup_epochs", 1)
    if seed is not None:
        train_data["seed"] = seed
    train_data.pop("network", None)
    return TrainConfig(
        network=network,
        weights=weights,
        **_filter_fields(TrainConfig, train_data),
    )


def _manifest_from_args(args, cfg: dict) -> DatasetManifest:
    data_cfg = cfg.get("data", {})
    root = args.data_root or data_cfg.get("root")
    if not root:
        raise ConfigurationError("a dataset root is required (--data-root or config data.root)")
    layout = DatasetLayout.from_dict(data_cfg.get("layout", {}))
    return ingest_dataset(root, layout, split=data_cfg.get("split", "train"))


def _stage1_endpoints(cfg: dict):
    s1 = cfg.get("stage1", {})
    seg_cfg = s1.get("segmenter")
    if not seg_cfg:
        raise ConfigurationError("stage1.segmenter descriptor is required")
    segmenter = build_segmenter(EndpointDescriptor.from_dict(seg_cfg))
    agents_cfg = s1.get("agents", {})
    agents = {}
    for name, default_role in (
        ("affirmative", AFFIRMATIVE),
        ("negative", NEGATIVE),
        ("judge", JUDGE),
    ):
        agent_cfg = dict(agents_cfg.get(name, {"kind": "scripted"}))
        agent_cfg.setdefault("role", default_role)
        agents[name] = build_agent(EndpointDescriptor.from_dict(agent_cfg))
    return segmenter, agents, s1


def _sampling_params(args, cfg: dict) -> SamplingParams:
    data = dict(cfg.get("stage1", {}).get("sampling", {}))
    for name in ("tau", "d_min", "n_fg", "n_bg", "window_radius"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return SamplingParams.from_dict(data)


def cmd_sample_prompts(args, cfg: dict) -> int:
    manifest = _manifest_from_args(args, cfg)
    params = _sampling_params(args, cfg)
    prompt_sets = []
    for rec in manifest.records:
        if not rec.usable_for_training:
            logger.warning("skipping %s (flags: %s)", rec.image_id, rec.flags)
            continue
        image = to_gray(load_image(rec.image_path))
        scribbles = load_scribbles(rec.scribble_path)
        prompt_sets.append(
            sample_prompts(
                image,
                scribbles,
                tau=params.tau,
                d_min=params.d_min,
                n_fg=params.n_fg,
                n_bg=params.n_bg,
                window_radius=params.window_radius,
                image_id=rec.image_id,
            )
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_prompt_sets(out, prompt_sets)
    print(f"wrote {sum(len(ps.points) for ps in prompt_sets)} prompts "
          f"for {len(prompt_sets)} images to {out}")
    return 0


def cmd_pseudo_label(args, cfg: dict) -> int:
    manifest = _manifest_from_args(args, cfg)
    segmenter, agents, s1 = _stage1_endpoints(cfg)
    params = _sampling_params(args, cfg)
    meta = build_meta_prompt(max_rounds=int(s1.get("max_rounds", 2)))
    result = run_stage1(
        manifest,
        segmenter,
        agents["affirmative"],
        agents["negative"],
        agents["judge"],
        out_dir=args.out,
        sampling=params,
        meta=meta,
        seed=args.seed,
        parallelism=int(s1.get("parallelism", 1)),
    )
    print(f"stage 1 complete: {result.n_retained} pseudo masks retained "
          f"-> {result.manifest_path}")
    return 0


def cmd_train(args, cfg: dict) -> int:
    config = build_train_config(cfg, args.toy, args.seed)
    manifest = _manifest_from_args(args, cfg)
    if args.pseudo_dir:
        manifest = attach_pseudo_masks(manifest, args.pseudo_dir)
    result = train(
        config,
        manifest,
        out_dir=args.out,
        resume_from=args.resume,
        log_path=Path(args.out) / "train_log.jsonl",
    )
    print(f"training finished: final loss {result.final_loss:.4f}, "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_evaluate(args, cfg: dict) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    manifest = _manifest_from_args(args, cfg)
    results = {manifest.split: evaluate(model, manifest)}
    table = format_metric_table(results)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(table + "\n")
        with open(out / "metrics.csv", "w") as f:
            f.write("dataset,mae,s_measure,e_measure,weighted_f\n")
            for name, m in results.items():
                f.write(
                    f"{name},{m['mae']:.6f},{m['s_measure']:.6f},"
                    f"{m['e_measure']:.6f},{m['weighted_f']:.6f}\n"
                )
    return 0


def cmd_analyze_bias(args, cfg: dict) -> int:
    from .visualize import save_histogram_files

    manifest = _manifest_from_args(args, cfg)
    records = [r for r in manifest.records if r.usable_for_eval]
    if not records:
        raise DataError("no records with ground truth to analyze")

    gts = [load_binary_mask(r.gt_path) for r in records]
    counted: dict[str, list[np.ndarray]] = {"mask": [g.copy() for g in gts]}
    if all(r.scribble_path for r in records):
        counted["scribble"] = [
            load_scribbles(r.scribble_path).labels == FG_SCRIBBLE for r in records
        ]
    if args.checkpoint:
        model, _ = model_from_checkpoint(args.checkpoint)
        counted["scrib_prob"] = [
            high_response_mask(predict(model, load_image(r.image_path)), args.percentile)
            for r in records
        ]

    from .metrics import DistanceHistogram

    merged_counts = {}
    edges = None
    for source, maps in counted.items():
        hist = boundary_distance_histogram(maps, gts, n_bins=args.bins, source=source)
        merged_counts.update(hist.counts)
        edges = hist.bin_edges
    merged = DistanceHistogram(bin_edges=edges, counts=merged_counts)
    paths = save_histogram_files(merged, args.out, "bias_histogram", plot=args.plot)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


def cmd_dump_features(args, cfg: dict) -> int:
    from .visualize import dump_feature_grids

    model, _ = model_from_checkpoint(args.checkpoint)
    manifest = _manifest_from_args(args, cfg)
    n = args.max_images or len(manifest.records)
    written = []
    for rec in manifest.records[:n]:
        from .data import resize_image
        from .training import image_to_tensor

        image = resize_image(load_image(rec.image_path), model.config.image_size)
        written += dump_feature_grids(model, image_to_tensor(image), args.out, rec.image_id)
    print(f"wrote {len(written)} feature grids to {args.out}")
    return 0


def cmd_make_fixtures(args, cfg: dict) -> int:
    manifest = make_fixture_corpus(args.out, n_images=args.n_images, size=args.size,
                                   seed=args.seed or 0)
    print(f"fixture corpus with {len(manifest.records)} images at {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wscod",
        description="Scribble-supervised camouflaged object detection pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="global random seed")
        p.add_argument("--toy", action="store_true", help="use the toy-scale presets")
        p.add_argument("--data-root", help="dataset root directory")

    def sampling_flags(p):
        p.add_argument("--tau", type=float, help="normalized entropy threshold")
        p.add_argument("--d-min", dest="d_min", type=float, help="minimum prompt spacing (px)")
        p.add_argument("--n-fg", dest="n_fg", type=int, help="positive prompts per image")
        p.add_argument("--n-bg", dest="n_bg", type=int, help="negative prompts per image")
        p.add_argument("--window-radius", dest="window_radius", type=int,
                       help="local entropy window radius")

    p = sub.add_parser("sample-prompts", help="convert scribbles into point prompts")
    common(p)
    sampling_flags(p)
    p.add_argument("--out", required=True, help="output prompts JSONL path")
    p.set_defaults(func=cmd_sample_prompts)

    p = sub.add_parser("pseudo-label", help="run stage 1 (prompts + segmenter + debate)")
    common(p)
    sampling_flags(p)
    p.add_argument("--out", required=True, help="stage-1 output directory")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("train", help="train the segmentation network (stage 2)")
    common(p)
    p.add_argument("--out", required=True, help="training output directory")
    p.add_argument("--pseudo-dir", help="stage-1 output directory with pseudo masks")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint against ground truth")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="directory for the metric table files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-bias", help="boundary-distance histograms of annotations")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="include predicted scribble-probability pixels")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--percentile", type=float, default=90.0)
    p.add_argument("--plot", action="store_true", help="also write a bar-plot PNG")
    p.set_defaults(func=cmd_analyze_bias)

    p = sub.add_parser("dump-features", help="write fused feature-map grids")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-images", type=int, default=4)
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("make-fixtures", help="generate the synthetic fixture corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_make_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config_file(args.config)
        if args.seed is not None:
            torch.manual_seed(args.seed)
            np.random.seed(args.seed)
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        logger.error("missing file: %s", exc)
        return 3
    except WscodError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
