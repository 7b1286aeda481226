"""Segmenter and agent backends behind narrow endpoint interfaces.

The real backends (a promptable segmentation model, a multimodal
language model) live behind ``SegmenterEndpoint`` and ``AgentEndpoint``
so the whole pipeline runs offline against the bundled scripted
implementations. Remote endpoints speak a small JSON-over-HTTP
protocol; scripted ones are deterministic functions of their inputs.

Endpoint descriptors (from the config file or CLI) look like::

    {kind: scripted|remote, role: ..., policy or script: ...,
     address: ..., timeout_seconds: ..., max_concurrency: ...}

Segmenter descriptors use ``kind: oracle`` (ground-truth lookup used by
the synthetic fixtures) or ``kind: remote``.
"""

from __future__ import annotations

import base64
import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigurationError, NoCandidateError, TransportError
from .prompts import PointPromptSet

if TYPE_CHECKING:
    from .debate import DebateContext, DebateTurn, MetaPrompt

ADDRESS_ENV = "WSCOD_BACKEND_ADDRESS"
TOKEN_ENV = "WSCOD_BACKEND_TOKEN"

AFFIRMATIVE = "AFFIRMATIVE"
NEGATIVE = "NEGATIVE"
JUDGE = "JUDGE"


@dataclass(frozen=True)
class CandidateMask:
    """A pseudo-mask candidate produced by the segmenter."""

    mask: np.ndarray
    confidence: float
    prompt_set_id: str
    mask_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfigurationError(f"confidence {self.confidence} outside [0, 1]")


@runtime_checkable
class SegmenterEndpoint(Protocol):
    max_concurrency: int

    def segment(self, image: np.ndarray, prompts: PointPromptSet) -> list[CandidateMask]: ...


@runtime_checkable
class AgentEndpoint(Protocol):
    role: str
    max_concurrency: int

    def respond(
        self,
        context: "DebateContext",
        transcript: Sequence["DebateTurn"],
        meta: "MetaPrompt",
    ) -> str: ...


class OracleSegmenter:
    """Returns the known ground-truth mask for each image id.

    Used by the synthetic fixture corpus so stage 1 runs without a real
    segmentation backend.
    """

    max_concurrency = 8

    def __init__(self, masks: dict[str, np.ndarray] | None = None, gt_dir: str | Path | None = None):
        if masks is None and gt_dir is None:
            raise ConfigurationError("OracleSegmenter needs masks or a gt_dir")
        self._masks = dict(masks) if masks else {}
        self._gt_dir = Path(gt_dir) if gt_dir else None

    def _lookup(self, image_id: str) -> np.ndarray:
        if image_id in self._masks:
            return self._masks[image_id]
        if self._gt_dir is not None:
            from .scribbles import load_binary_mask

            for ext in (".png", ".jpg", ".bmp"):
                path = self._gt_dir / f"{image_id}{ext}"
                if path.exists():
                    mask = load_binary_mask(path)
                    self._masks[image_id] = mask
                    return mask
        raise NoCandidateError(f"oracle segmenter has no mask for image {image_id!r}")

    def segment(self, image: np.ndarray, prompts: PointPromptSet) -> list[CandidateMask]:
        mask = self._lookup(prompts.image_id)
        return [
            CandidateMask(
                mask=mask,
                confidence=1.0,
                prompt_set_id=prompts.image_id,
                mask_id=f"{prompts.image_id}_m0",
            )
        ]


class ScriptedAgent:
    """Deterministic debater producing template arguments from mask stats."""

    max_concurrency = 8

    def __init__(self, role: str, responses: Sequence[str] | None = None):
        if role not in (AFFIRMATIVE, NEGATIVE):
            raise ConfigurationError(f"ScriptedAgent role must be a debater role, got {role!r}")
        self.role = role
        self._responses = list(responses) if responses else None

    def respond(self, context, transcript, meta) -> str:
        if self._responses:
            return self._responses[len(transcript) % len(self._responses)]
        stance = "supports" if self.role == AFFIRMATIVE else "challenges"
        prior = len(transcript)
        return (
            f"{self.role.capitalize()} {stance} the candidate mask: area fraction "
            f"{context.area_fraction:.4f}, bounding box {context.bbox}, "
            f"{context.prompt_coverage:.2f} positive-prompt coverage, "
            f"after reviewing {prior} prior turns."
        )


class ScriptedJudge:
    """Deterministic judge with a fixed or heuristic verdict policy.

    Policies: ``retain``, ``discard``, ``heuristic`` (retain iff the
    mask covers a plausible area fraction and most positive prompts),
    ``malformed`` (never emits a parseable verdict; test hook).
    """

    role = JUDGE
    max_concurrency = 8

    def __init__(self, policy: str = "heuristic"):
        if policy not in ("retain", "discard", "heuristic", "malformed"):
            raise ConfigurationError(f"unknown judge policy {policy!r}")
        self.policy = policy

    def respond(self, context, transcript, meta) -> str:
        reasoning = (
            f"Reviewed {len(transcript)} debate turns over a mask with area fraction "
            f"{context.area_fraction:.4f} and positive-prompt coverage "
            f"{context.prompt_coverage:.2f}."
        )
        if self.policy == "malformed":
            return reasoning + " The committee remains undecided on the outcome."
        if self.policy == "retain":
            verdict = "RETAIN"
        elif self.policy == "discard":
            verdict = "DISCARD"
        else:
            plausible = 0.001 <= context.area_fraction <= 0.9 and context.prompt_coverage >= 0.5
            verdict = "RETAIN" if plausible else "DISCARD"
        return f"{reasoning}\nVERDICT: {verdict}"


def _encode_array(arr: np.ndarray) -> str:
    payload = zlib.compress(np.ascontiguousarray(arr).tobytes())
    return base64.b64encode(payload).decode("ascii")


def _decode_mask(data: str, shape: tuple[int, int]) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(data))
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).astype(bool)


class RemoteSegmenter:
    """JSON-over-HTTP client for a remote promptable segmenter.

    POSTs ``{image_id, shape, dtype, image, points}`` to ``address`` and
    expects ``{masks: [{mask, confidence}]}`` with zlib+base64 payloads.
    """

    def __init__(
        self,
        address: str | None = None,
        timeout_seconds: float = 30.0,
        max_concurrency: int = 1,
    ):
        self.address = address or os.environ.get(ADDRESS_ENV)
        if not self.address:
            raise ConfigurationError(
                f"remote segmenter needs an address (or ${ADDRESS_ENV})"
            )
        self.timeout_seconds = timeout_seconds
        self.max_concurrency = max_concurrency

    def segment(self, image: np.ndarray, prompts: PointPromptSet) -> list[CandidateMask]:
        import requests

        image = np.asarray(image, dtype=np.uint8)
        body = {
            "image_id": prompts.image_id,
            "shape": list(image.shape),
            "image": _encode_array(image),
            "points": [
                {"row": p.row, "col": p.col, "polarity": p.polarity} for p in prompts.points
            ],
        }
        try:
            resp = requests.post(
                self.address, json=body, timeout=self.timeout_seconds, headers=_auth_headers()
            )
            resp.raise_for_status()
            payload = resp.json()
        except requests.RequestException as exc:
            raise TransportError(
                f"segmenter call to {self.address} failed: {exc}", retryable=True
            ) from exc
        shape = image.shape[:2]
        return [
            CandidateMask(
                mask=_decode_mask(m["mask"], shape),
                confidence=float(m["confidence"]),
                prompt_set_id=prompts.image_id,
                mask_id=f"{prompts.image_id}_m{i}",
            )
            for i, m in enumerate(payload.get("masks", []))
        ]


class RemoteAgent:
    """JSON-over-HTTP client for a remote multimodal agent."""

    def __init__(
        self,
        role: str,
        address: str | None = None,
        timeout_seconds: float = 60.0,
        max_concurrency: int = 1,
    ):
        self.role = role
        self.address = address or os.environ.get(ADDRESS_ENV)
        if not self.address:
            raise ConfigurationError(f"remote agent needs an address (or ${ADDRESS_ENV})")
        self.timeout_seconds = timeout_seconds
        self.max_concurrency = max_concurrency

    def respond(self, context, transcript, meta) -> str:
        import requests

        body = {
            "role": self.role,
            "meta_prompt": meta.render(),
            "summary": context.summary,
            "overlay": _encode_array(context.overlay),
            "overlay_shape": list(context.overlay.shape),
            "transcript": [
                {"role": t.role, "round": t.round, "text": t.argument} for t in transcript
            ],
        }
        try:
            resp = requests.post(
                self.address, json=body, timeout=self.timeout_seconds, headers=_auth_headers()
            )
            resp.raise_for_status()
            payload = resp.json()
        except requests.RequestException as exc:
            raise TransportError(
                f"agent call to {self.address} failed: {exc}", retryable=True
            ) from exc
        text = payload.get("text", "")
        if not text:
            raise TransportError("agent returned an empty response", retryable=False)
        return text


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(TOKEN_ENV)
    return {"Authorization": f"Bearer {token}"} if token else {}


@dataclass(frozen=True)
class EndpointDescriptor:
    """Declarative endpoint configuration as read from the config file."""

    kind: str
    role: str = ""
    policy: str = "heuristic"
    script: str = ""
    address: str = ""
    gt_dir: str = ""
    timeout_seconds: float = 60.0
    max_concurrency: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "EndpointDescriptor":
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigurationError(f"unknown endpoint descriptor fields {sorted(unknown)}")
        return cls(**data)


def _scripted_responses(descriptor: EndpointDescriptor) -> list[str] | None:
    if not descriptor.script:
        return None
    path = Path(descriptor.script)
    if not path.exists():
        raise ConfigurationError(f"scripted responses file not found: {path}")
    responses = json.loads(path.read_text())
    if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
        raise ConfigurationError(f"scripted responses file {path} must hold a JSON string list")
    return responses


def build_agent(descriptor: EndpointDescriptor) -> AgentEndpoint:
    if descriptor.kind == "scripted":
        if descriptor.role == JUDGE:
            agent = ScriptedJudge(policy=descriptor.policy)
        else:
            agent = ScriptedAgent(descriptor.role, responses=_scripted_responses(descriptor))
        agent.max_concurrency = descriptor.max_concurrency or agent.max_concurrency
        return agent
    if descriptor.kind == "remote":
        return RemoteAgent(
            role=descriptor.role,
            address=descriptor.address or None,
            timeout_seconds=descriptor.timeout_seconds,
            max_concurrency=descriptor.max_concurrency,
        )
    raise ConfigurationError(f"unknown agent kind {descriptor.kind!r}")


def build_segmenter(descriptor: EndpointDescriptor) -> SegmenterEndpoint:
    if descriptor.kind == "oracle":
        return OracleSegmenter(gt_dir=descriptor.gt_dir or None)
    if descriptor.kind == "remote":
        return RemoteSegmenter(
            address=descriptor.address or None,
            timeout_seconds=descriptor.timeout_seconds,
            max_concurrency=descriptor.max_concurrency,
        )
    raise ConfigurationError(f"unknown segmenter kind {descriptor.kind!r}")
