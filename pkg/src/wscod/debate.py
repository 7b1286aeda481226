"""Candidate-mask debates: protocol, transcripts, verdicts, persistence.

Each candidate mask gets its own debate: an affirmative and a negative
agent alternate for a fixed number of rounds (affirmative first, both
conditioned on the full prior transcript), then a judge reviews the
whole history and decides whether the mask is retained as a pseudo
label. Verdict parsing is fail-closed: if the judge's final
``VERDICT:`` line is missing or unparseable, the mask is discarded.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import binary_erosion

from .backends import (
    AFFIRMATIVE,
    JUDGE,
    NEGATIVE,
    AgentEndpoint,
    CandidateMask,
    SegmenterEndpoint,
)
from .errors import (
    ConfigurationError,
    DimensionError,
    NoCandidateError,
    TransportError,
)
from .prompts import PointPromptSet, POSITIVE

logger = logging.getLogger(__name__)

RETAIN = "RETAIN"
DISCARD = "DISCARD"
UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class Exemplar:
    """A few-shot demonstration: caption, object description, reasoning chain."""

    caption: str
    object_description: str
    reasoning: str


@dataclass(frozen=True)
class MetaPrompt:
    """Task framing, iteration limit, and few-shot exemplars for the agents."""

    task_description: str
    max_rounds: int
    exemplars: tuple[Exemplar, ...]

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if not self.exemplars:
            raise ConfigurationError("a meta prompt needs at least one exemplar")

    def render(self) -> str:
        lines = [
            self.task_description,
            f"The debate runs for at most {self.max_rounds} rounds; "
            "the judge must end with a final line 'VERDICT: RETAIN' or 'VERDICT: DISCARD'.",
            "",
        ]
        for i, ex in enumerate(self.exemplars, start=1):
            lines += [
                f"Demonstration {i}:",
                f"  Caption: {ex.caption}",
                f"  Masked object: {ex.object_description}",
                f"  Reasoning: {ex.reasoning}",
                "",
            ]
        return "\n".join(lines)


DEFAULT_TASK_TEXT = (
    "You are assessing whether a candidate mask correctly segments the "
    "camouflaged object in the image. Weigh how discriminable the masked "
    "region is from its surroundings and how clear its boundary is; argue "
    "for or against keeping the mask as a training label."
)

DEFAULT_EXEMPLARS = (
    Exemplar(
        caption="A sandy seabed with a barely visible flatfish near the center.",
        object_description="The mask outlines the flatfish body including both fins.",
        reasoning=(
            "The masked region's speckle pattern is subtly denser than the seabed, "
            "so it is discriminable; the boundary follows the fin fringe closely with "
            "no background spill, so boundary clarity is high. Keep the mask."
        ),
    ),
    Exemplar(
        caption="A mossy branch where a leaf-tailed gecko rests head-down.",
        object_description="The mask covers the gecko's torso but cuts off the tail.",
        reasoning=(
            "The torso is discriminable by its symmetric texture, but the missing "
            "tail makes the boundary incomplete on the lower edge; partial coverage "
            "of the object argues against keeping the mask."
        ),
    ),
    Exemplar(
        caption="Gravel riverbed with a stone-colored toad in the lower third.",
        object_description="The mask includes the toad and a similarly shaded stone.",
        reasoning=(
            "The toad itself is well covered, but the attached stone is not part of "
            "the object: the boundary strays across a static background region of "
            "identical color, so the mask conflates object and background. Discard."
        ),
    ),
)


def build_meta_prompt(
    exemplars: Sequence[Exemplar] = DEFAULT_EXEMPLARS,
    task_text: str = DEFAULT_TASK_TEXT,
    max_rounds: int = 2,
) -> MetaPrompt:
    """Assemble the meta prompt with exemplars in a fixed template order."""
    if not exemplars:
        raise ConfigurationError("build_meta_prompt needs at least one exemplar")
    return MetaPrompt(
        task_description=task_text,
        max_rounds=max_rounds,
        exemplars=tuple(exemplars),
    )


@dataclass(frozen=True)
class DebateTurn:
    role: str
    round: int
    argument: str

    def __post_init__(self):
        if self.round < 1:
            raise ConfigurationError("rounds are 1-based")
        if not self.argument:
            raise ConfigurationError("agent responses must be non-empty")


@dataclass(frozen=True)
class DebateRecord:
    """One candidate's full debate: transcript, verdict, rationale."""

    image_id: str
    mask_id: str
    transcript: tuple[DebateTurn, ...]
    verdict: str
    rationale: str
    started_at: str
    finished_at: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "image_id": self.image_id,
                "mask_id": self.mask_id,
                "transcript": [
                    {"role": t.role, "round": t.round, "text": t.argument}
                    for t in self.transcript
                ],
                "verdict": self.verdict,
                "rationale": self.rationale,
                "timestamps": {"started": self.started_at, "finished": self.finished_at},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "DebateRecord":
        data = json.loads(line)
        return cls(
            image_id=data["image_id"],
            mask_id=data["mask_id"],
            transcript=tuple(
                DebateTurn(t["role"], t["round"], t["text"]) for t in data["transcript"]
            ),
            verdict=data["verdict"],
            rationale=data["rationale"],
            started_at=data["timestamps"]["started"],
            finished_at=data["timestamps"]["finished"],
        )


class Clock:
    """Wall-clock timestamps for debate records."""

    def now(self) -> str:
        return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + f".{time.time() % 1:.6f}"[1:]


class LogicalClock(Clock):
    """Monotonic counter timestamps; keeps records byte-identical across runs."""

    def __init__(self):
        self._counter = itertools.count()

    def now(self) -> str:
        return f"tick-{next(self._counter):06d}"


@dataclass(frozen=True)
class DebateContext:
    """What the agents see: overlay image plus a textual mask summary."""

    image: np.ndarray
    mask: np.ndarray
    overlay: np.ndarray
    area_fraction: float
    bbox: tuple[int, int, int, int] = (0, -1, 0, -1)
    prompt_coverage: float = 1.0
    summary: str = ""


def render_debate_context(
    image: np.ndarray,
    mask: np.ndarray,
    prompts: PointPromptSet | None = None,
) -> DebateContext:
    """Deterministic overlay (mask boundary in red) plus a stats summary."""
    image = np.asarray(image, dtype=np.uint8)
    mask = np.asarray(mask, dtype=bool)
    if image.shape[:2] != mask.shape:
        raise DimensionError(f"image {image.shape[:2]} vs mask {mask.shape}")
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)

    boundary = mask & ~binary_erosion(mask, border_value=0)
    overlay = image.copy()
    overlay[boundary] = (255, 0, 0)

    area_fraction = float(mask.mean())
    if mask.any():
        rows, cols = np.nonzero(mask)
        bbox = (int(rows.min()), int(rows.max()), int(cols.min()), int(cols.max()))
    else:
        bbox = (0, -1, 0, -1)

    coverage = 1.0
    if prompts is not None:
        positives = prompts.of_polarity(POSITIVE)
        if positives:
            inside = sum(1 for p in positives if mask[p.row, p.col])
            coverage = inside / len(positives)

    summary = (
        f"mask area fraction {area_fraction:.4f}; bounding box rows {bbox[0]}-{bbox[1]} "
        f"cols {bbox[2]}-{bbox[3]}; positive prompt coverage {coverage:.2f}"
    )
    return DebateContext(
        image=image,
        mask=mask,
        overlay=overlay,
        area_fraction=area_fraction,
        bbox=bbox,
        prompt_coverage=coverage,
        summary=summary,
    )


def parse_verdict(text: str) -> str | None:
    """Extract RETAIN/DISCARD from the judge's final 'VERDICT:' line."""
    for line in reversed(text.strip().splitlines()):
        line = line.strip()
        if line.upper().startswith("VERDICT:"):
            word = line.split(":", 1)[1].strip().upper().rstrip(".!")
            if word in (RETAIN, DISCARD):
                return word
            return None
    return None


def generate_candidates(
    segmenter: SegmenterEndpoint,
    image: np.ndarray,
    prompts: PointPromptSet,
) -> list[CandidateMask]:
    """Query the segmenter and order candidates by descending confidence."""
    if prompts.n_positive < 1:
        raise ConfigurationError("prompt set must contain at least one positive point")
    try:
        candidates = segmenter.segment(image, prompts)
    except (TransportError, NoCandidateError):
        raise
    except Exception as exc:
        raise TransportError(f"segmenter backend failed: {exc}", retryable=True) from exc
    if not candidates:
        raise NoCandidateError(f"segmenter returned no masks for {prompts.image_id!r}")
    return sorted(candidates, key=lambda c: -c.confidence)


def _timed_respond(agent: AgentEndpoint, context, transcript, meta) -> str:
    timeout = getattr(agent, "timeout_seconds", None)
    if not timeout:
        return agent.respond(context, tuple(transcript), meta)
    with ThreadPoolExecutor(max_workers=1) as pool:
        future = pool.submit(agent.respond, context, tuple(transcript), meta)
        try:
            return future.result(timeout=timeout)
        except FutureTimeout:
            future.cancel()
            raise TimeoutError(f"{agent.role} agent exceeded {timeout}s")


def run_debate(
    image: np.ndarray,
    candidate: CandidateMask,
    affirmative: AgentEndpoint,
    negative: AgentEndpoint,
    judge: AgentEndpoint,
    meta: MetaPrompt,
    prompts: PointPromptSet | None = None,
    image_id: str = "",
    sink: Callable[[DebateRecord], None] | None = None,
    clock: Clock | None = None,
) -> DebateRecord:
    """Run the full debate for one candidate and persist the record.

    Round r appends an affirmative then a negative turn, each seeing the
    accumulated transcript; the judge then reviews the whole history.
    Agent timeouts abort the debate with an UNDECIDED verdict.
    """
    clock = clock or Clock()
    started = clock.now()
    context = render_debate_context(image, candidate.mask, prompts)
    transcript: list[DebateTurn] = []
    verdict = None
    rationale = ""
    try:
        for rnd in range(1, meta.max_rounds + 1):
            for agent in (affirmative, negative):
                text = _timed_respond(agent, context, transcript, meta)
                transcript.append(DebateTurn(role=agent.role, round=rnd, argument=text))
        judge_text = _timed_respond(judge, context, transcript, meta)
        transcript.append(DebateTurn(role=JUDGE, round=meta.max_rounds, argument=judge_text))
        verdict = parse_verdict(judge_text)
        if verdict is None:
            verdict = DISCARD
            rationale = "unparseable verdict"
        else:
            rationale = judge_text.strip().splitlines()[0]
    except TimeoutError as exc:
        logger.warning(
            "debate for %s/%s aborted: %s; candidate excluded from training",
            image_id, candidate.mask_id, exc,
        )
        verdict = UNDECIDED
        rationale = f"debate aborted: {exc}"

    record = DebateRecord(
        image_id=image_id or candidate.prompt_set_id,
        mask_id=candidate.mask_id,
        transcript=tuple(transcript),
        verdict=verdict,
        rationale=rationale,
        started_at=started,
        finished_at=clock.now(),
    )
    if sink is not None:
        sink(record)
    return record


def filter_pseudo_labels(
    records: Sequence[DebateRecord],
    candidates: Sequence[CandidateMask],
    manifest_path: str | Path | None = None,
) -> list[CandidateMask]:
    """Keep candidates whose debate ended in RETAIN, preserving order.

    Optionally writes an acceptance manifest mapping mask ids onto their
    verdicts.
    """
    by_id = {c.mask_id: c for c in candidates}
    accepted: list[CandidateMask] = []
    manifest: dict[str, dict] = {}
    for rec in records:
        manifest[rec.mask_id] = {
            "image_id": rec.image_id,
            "verdict": rec.verdict,
            "rationale": rec.rationale,
        }
        if rec.verdict == RETAIN:
            accepted.append(by_id[rec.mask_id])
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return accepted


def debate_candidates(
    image: np.ndarray,
    candidates: Sequence[CandidateMask],
    affirmative: AgentEndpoint,
    negative: AgentEndpoint,
    judge: AgentEndpoint,
    meta: MetaPrompt,
    prompts: PointPromptSet | None = None,
    image_id: str = "",
    sink: Callable[[DebateRecord], None] | None = None,
    clock: Clock | None = None,
    parallelism: int = 1,
) -> list[DebateRecord]:
    """Debate every candidate, honoring the endpoints' concurrency limits."""
    limit = min(
        parallelism,
        *(getattr(a, "max_concurrency", 1) for a in (affirmative, negative, judge)),
    )

    def one(candidate: CandidateMask) -> DebateRecord:
        return run_debate(
            image, candidate, affirmative, negative, judge, meta,
            prompts=prompts, image_id=image_id, sink=None, clock=clock,
        )

    if limit <= 1 or len(candidates) <= 1:
        records = [one(c) for c in candidates]
    else:
        with ThreadPoolExecutor(max_workers=limit) as pool:
            records = list(pool.map(one, candidates))
    # Persist in candidate order regardless of completion order.
    if sink is not None:
        for rec in records:
            sink(rec)
    return records
