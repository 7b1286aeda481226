"""Stage 1: scribbles -> prompts -> candidate masks -> debated pseudo labels."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import AgentEndpoint, SegmenterEndpoint
from .data import DatasetManifest
from .debate import (
    Clock,
    DebateRecord,
    LogicalClock,
    MetaPrompt,
    RETAIN,
    build_meta_prompt,
    debate_candidates,
    filter_pseudo_labels,
    generate_candidates,
)
from .errors import EmptyAnnotationError, NoCandidateError
from .prompts import PointPromptSet, sample_prompts
from .scribbles import load_image, load_scribbles, save_binary_mask, to_gray

logger = logging.getLogger(__name__)

MANIFEST_NAME = "pseudo_manifest.json"
RECORDS_NAME = "debate_records.jsonl"
PROMPTS_NAME = "prompts.jsonl"


@dataclass(frozen=True)
class SamplingParams:
    tau: float = 0.5
    d_min: float = 10.0
    n_fg: int = 5
    n_bg: int = 5
    window_radius: int = 5

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingParams":
        return cls(**data)


@dataclass
class Stage1Result:
    out_dir: Path
    manifest: dict
    n_retained: int

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_NAME


def _load_manifest(path: Path) -> dict:
    if path.exists():
        return json.loads(path.read_text())
    return {"images": {}}


def _save_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(path)


def run_stage1(
    manifest: DatasetManifest,
    segmenter: SegmenterEndpoint,
    affirmative: AgentEndpoint,
    negative: AgentEndpoint,
    judge: AgentEndpoint,
    out_dir: str | Path,
    sampling: SamplingParams = SamplingParams(),
    meta: MetaPrompt | None = None,
    seed: int | None = None,
    parallelism: int = 1,
) -> Stage1Result:
    """Produce debate-filtered pseudo masks for every usable image.

    The run is resumable: images already marked done in the output
    manifest are skipped, so an interrupted run converges to the same
    final manifest when restarted. With a fixed seed the debates run
    sequentially on a logical clock, making the record stream
    byte-identical across runs.
    """
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    meta = meta or build_meta_prompt()
    state = _load_manifest(out / MANIFEST_NAME)
    deterministic = seed is not None
    clock: Clock = LogicalClock() if deterministic else Clock()
    if deterministic:
        parallelism = 1

    records_path = out / RECORDS_NAME
    with open(records_path, "a") as records_file, open(out / PROMPTS_NAME, "a") as prompts_file:

        def sink(record: DebateRecord) -> None:
            records_file.write(record.to_json() + "\n")
            records_file.flush()

        def write_prompts(ps: PointPromptSet) -> None:
            # Done images are skipped on resume, so per-image appends keep
            # the file duplicate-free across interrupted runs.
            for p in ps.points:
                rec_json = {
                    "image_id": ps.image_id,
                    "row": p.row,
                    "col": p.col,
                    "polarity": p.polarity,
                    "entropy": p.entropy,
                }
                prompts_file.write(json.dumps(rec_json, sort_keys=True) + "\n")
            prompts_file.flush()

        for rec in manifest.records:
            if rec.image_id in state["images"]:
                continue
            if not rec.usable_for_training:
                state["images"][rec.image_id] = {
                    "status": "skipped",
                    "reason": f"flags: {rec.flags}" if rec.flags else "no scribbles",
                    "mask": None,
                }
                _save_manifest(out / MANIFEST_NAME, state)
                continue

            image = load_image(rec.image_path)
            scribbles = load_scribbles(rec.scribble_path)
            try:
                prompts = sample_prompts(
                    to_gray(image),
                    scribbles,
                    tau=sampling.tau,
                    d_min=sampling.d_min,
                    n_fg=sampling.n_fg,
                    n_bg=sampling.n_bg,
                    window_radius=sampling.window_radius,
                    image_id=rec.image_id,
                )
            except EmptyAnnotationError as exc:
                logger.warning("stage1: %s skipped: %s", rec.image_id, exc)
                state["images"][rec.image_id] = {
                    "status": "skipped",
                    "reason": str(exc),
                    "mask": None,
                }
                _save_manifest(out / MANIFEST_NAME, state)
                continue
            write_prompts(prompts)

            try:
                candidates = generate_candidates(segmenter, image, prompts)
            except NoCandidateError as exc:
                logger.warning("stage1: %s has no candidates: %s", rec.image_id, exc)
                state["images"][rec.image_id] = {
                    "status": "done",
                    "mask": None,
                    "verdict": "DISCARD",
                    "n_candidates": 0,
                    "n_retained": 0,
                }
                _save_manifest(out / MANIFEST_NAME, state)
                continue

            debate_records = debate_candidates(
                image, candidates, affirmative, negative, judge, meta,
                prompts=prompts, image_id=rec.image_id, sink=sink,
                clock=clock, parallelism=parallelism,
            )
            accepted = filter_pseudo_labels(debate_records, candidates)

            entry: dict = {
                "status": "done",
                "n_candidates": len(candidates),
                "n_retained": len(accepted),
            }
            if accepted:
                union = np.zeros(accepted[0].mask.shape, dtype=bool)
                for cand in accepted:
                    union |= cand.mask
                mask_rel = f"masks/{rec.image_id}.png"
                save_binary_mask(out / mask_rel, union)
                entry["mask"] = mask_rel
                entry["verdict"] = RETAIN
            else:
                entry["mask"] = None
                entry["verdict"] = "DISCARD"
            state["images"][rec.image_id] = entry
            _save_manifest(out / MANIFEST_NAME, state)

    n_retained = sum(
        1 for entry in state["images"].values() if entry.get("verdict") == RETAIN
    )
    return Stage1Result(out_dir=out, manifest=state, n_retained=n_retained)


def attach_pseudo_masks(manifest: DatasetManifest, stage1_dir: str | Path) -> DatasetManifest:
    """Point manifest records at the pseudo masks stage 1 produced."""
    stage1_dir = Path(stage1_dir)
    state = _load_manifest(stage1_dir / MANIFEST_NAME)
    for rec in manifest.records:
        entry = state["images"].get(rec.image_id)
        if entry and entry.get("mask"):
            rec.pseudo_path = str(stage1_dir / entry["mask"])
    return manifest
