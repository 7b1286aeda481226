"""Debate protocol shape, verdicts, determinism, and backend plumbing."""

import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from conftest import DATA_DIR

from wscod.backends import (
    AFFIRMATIVE,
    JUDGE,
    NEGATIVE,
    CandidateMask,
    EndpointDescriptor,
    OracleSegmenter,
    RemoteAgent,
    RemoteSegmenter,
    ScriptedAgent,
    ScriptedJudge,
    build_agent,
    build_segmenter,
)
from wscod.debate import (
    DISCARD,
    RETAIN,
    UNDECIDED,
    DebateRecord,
    LogicalClock,
    build_meta_prompt,
    debate_candidates,
    filter_pseudo_labels,
    generate_candidates,
    parse_verdict,
    render_debate_context,
    run_debate,
)
from wscod.errors import ConfigurationError, NoCandidateError, TransportError
from wscod.prompts import NEGATIVE as NEG_POLARITY
from wscod.prompts import POSITIVE, PointPromptSet, PromptPoint


def prompt_set(points=((4, 4, POSITIVE),), image_id="img"):
    return PointPromptSet(
        points=tuple(PromptPoint(r, c, pol, 1.0) for r, c, pol in points),
        tau=0.5, d_min=1.0, n_points=len(points), image_id=image_id,
    )


def ellipse(size=16, center=(8, 8), radius=4):
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def candidate(mask=None, confidence=1.0, mask_id="m0"):
    if mask is None:
        mask = ellipse()
    return CandidateMask(mask=mask, confidence=confidence,
                         prompt_set_id="img", mask_id=mask_id)


def image_like(mask):
    return (mask * 180 + 40).astype(np.uint8)[..., None].repeat(3, axis=2)


class EchoAgent:
    """Reports how many prior turns it saw (instrumentation for the protocol)."""

    max_concurrency = 4

    def __init__(self, role):
        self.role = role

    def respond(self, context, transcript, meta):
        return f"{self.role} saw {len(transcript)} prior turns"


class SlowAgent:
    max_concurrency = 1
    timeout_seconds = 0.05

    def __init__(self, role):
        self.role = role

    def respond(self, context, transcript, meta):
        time.sleep(0.5)
        return "too late"


class TestMetaPrompt:
    def test_single_exemplar_renders_one_block(self):
        from wscod.debate import Exemplar

        meta = build_meta_prompt([Exemplar("cap", "obj", "because")], max_rounds=1)
        assert meta.render().count("Demonstration") == 1

    def test_rendering_is_deterministic(self):
        assert build_meta_prompt().render() == build_meta_prompt().render()

    def test_default_prompt_matches_golden_file(self):
        golden = (DATA_DIR / "meta_prompt_golden.txt").read_text()
        assert build_meta_prompt().render() == golden

    def test_empty_exemplars_rejected(self):
        with pytest.raises(ConfigurationError):
            build_meta_prompt([], max_rounds=1)


class TestRenderContext:
    def test_empty_mask_area_zero(self):
        mask = np.zeros((8, 8), dtype=bool)
        ctx = render_debate_context(image_like(mask), mask)
        assert ctx.area_fraction == 0.0
        assert "area fraction 0.0000" in ctx.summary

    def test_full_mask_area_one(self):
        mask = np.ones((8, 8), dtype=bool)
        ctx = render_debate_context(image_like(mask), mask)
        assert ctx.area_fraction == 1.0

    def test_overlay_is_byte_identical_across_runs(self):
        mask = ellipse()
        image = image_like(mask)
        a = render_debate_context(image, mask)
        b = render_debate_context(image, mask)
        assert hashlib.sha256(a.overlay.tobytes()).hexdigest() == hashlib.sha256(
            b.overlay.tobytes()
        ).hexdigest()
        assert a.summary == b.summary

    def test_overlay_matches_golden_hash(self):
        mask = ellipse()
        ctx = render_debate_context(image_like(mask), mask)
        digest = hashlib.sha256(ctx.overlay.tobytes()).hexdigest()
        assert digest == "7d413a83c493e769ee30c294842e186d292b5bdd8c3f08c1fe806d47301d48de"
        assert ctx.summary == (
            "mask area fraction 0.1914; bounding box rows 4-12 cols 4-12; "
            "positive prompt coverage 1.00"
        )

    def test_boundary_painted_red(self):
        mask = ellipse()
        ctx = render_debate_context(image_like(mask), mask)
        assert (ctx.overlay[8, 4] == (255, 0, 0)).all()  # leftmost disk pixel

    def test_prompt_coverage(self):
        mask = ellipse()
        prompts = prompt_set(points=((8, 8, POSITIVE), (0, 0, POSITIVE)))
        ctx = render_debate_context(image_like(mask), mask, prompts)
        assert ctx.prompt_coverage == 0.5


class TestVerdictParsing:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("blah\nVERDICT: RETAIN", RETAIN),
            ("blah\nVERDICT: DISCARD", DISCARD),
            ("verdict: retain", RETAIN),
            ("VERDICT:DISCARD.", DISCARD),
            ("VERDICT: MAYBE", None),
            ("no verdict line at all", None),
            ("", None),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_verdict(text) == expected


class TestGenerateCandidates:
    def test_oracle_passthrough(self):
        mask = ellipse()
        seg = OracleSegmenter(masks={"img": mask})
        out = generate_candidates(seg, image_like(mask), prompt_set())
        assert len(out) == 1
        assert out[0].confidence == 1.0
        assert (out[0].mask == mask).all()

    def test_sorted_by_confidence(self):
        class Stub:
            max_concurrency = 1

            def segment(self, image, prompts):
                return [
                    candidate(confidence=0.2, mask_id="a"),
                    candidate(confidence=0.9, mask_id="b"),
                    candidate(confidence=0.5, mask_id="c"),
                ]

        out = generate_candidates(Stub(), image_like(ellipse()), prompt_set())
        assert [c.confidence for c in out] == [0.9, 0.5, 0.2]

    def test_requires_positive_prompt(self):
        seg = OracleSegmenter(masks={"img": ellipse()})
        negative_only = prompt_set(points=((0, 0, NEG_POLARITY),))
        with pytest.raises(ConfigurationError):
            generate_candidates(seg, image_like(ellipse()), negative_only)

    def test_empty_response_is_no_candidate_error(self):
        class Empty:
            max_concurrency = 1

            def segment(self, image, prompts):
                return []

        with pytest.raises(NoCandidateError):
            generate_candidates(Empty(), image_like(ellipse()), prompt_set())

    def test_backend_crash_maps_to_transport_error(self):
        class Broken:
            max_concurrency = 1

            def segment(self, image, prompts):
                raise RuntimeError("socket reset")

        with pytest.raises(TransportError) as err:
            generate_candidates(Broken(), image_like(ellipse()), prompt_set())
        assert err.value.retryable


def scripted_trio(judge_policy="retain"):
    return ScriptedAgent(AFFIRMATIVE), ScriptedAgent(NEGATIVE), ScriptedJudge(judge_policy)


class TestRunDebate:
    def test_scripted_retain_judge(self):
        mask = ellipse()
        aff, neg, judge = scripted_trio("retain")
        meta = build_meta_prompt(max_rounds=2)
        record = run_debate(image_like(mask), candidate(mask), aff, neg, judge, meta,
                            image_id="img")
        assert record.verdict == RETAIN

    @pytest.mark.parametrize("rounds", [1, 2, 3])
    def test_transcript_shape(self, rounds):
        mask = ellipse()
        aff, neg, judge = scripted_trio()
        meta = build_meta_prompt(max_rounds=rounds)
        record = run_debate(image_like(mask), candidate(mask), aff, neg, judge, meta)
        assert len(record.transcript) == 2 * rounds + 1
        roles = [t.role for t in record.transcript]
        assert roles == [AFFIRMATIVE, NEGATIVE] * rounds + [JUDGE]
        rounds_seen = [t.round for t in record.transcript[:-1]]
        assert rounds_seen == [r for r in range(1, rounds + 1) for _ in (0, 1)]

    def test_each_turn_sees_all_prior_turns(self):
        mask = ellipse()
        meta = build_meta_prompt(max_rounds=3)
        record = run_debate(
            image_like(mask), candidate(mask),
            EchoAgent(AFFIRMATIVE), EchoAgent(NEGATIVE), ScriptedJudge("retain"), meta,
        )
        for k, turn in enumerate(record.transcript[:-1]):
            assert turn.argument.endswith(f"saw {k} prior turns")

    def test_malformed_judge_fails_closed(self):
        mask = ellipse()
        aff, neg, judge = scripted_trio("malformed")
        meta = build_meta_prompt(max_rounds=1)
        record = run_debate(image_like(mask), candidate(mask), aff, neg, judge, meta)
        assert record.verdict == DISCARD
        assert record.rationale == "unparseable verdict"

    def test_timeout_marks_undecided(self):
        mask = ellipse()
        meta = build_meta_prompt(max_rounds=1)
        record = run_debate(
            image_like(mask), candidate(mask),
            SlowAgent(AFFIRMATIVE), ScriptedAgent(NEGATIVE), ScriptedJudge("retain"),
            meta,
        )
        assert record.verdict == UNDECIDED
        assert "aborted" in record.rationale

    def test_record_persisted_before_return(self):
        mask = ellipse()
        seen = []
        aff, neg, judge = scripted_trio()
        meta = build_meta_prompt(max_rounds=1)
        record = run_debate(image_like(mask), candidate(mask), aff, neg, judge, meta,
                            sink=seen.append)
        assert seen == [record]

    def test_round_trip_serialization(self):
        mask = ellipse()
        aff, neg, judge = scripted_trio()
        meta = build_meta_prompt(max_rounds=2)
        record = run_debate(image_like(mask), candidate(mask), aff, neg, judge, meta,
                            image_id="img", clock=LogicalClock())
        assert DebateRecord.from_json(record.to_json()) == record

    def test_deterministic_records_with_logical_clock(self):
        mask = ellipse()
        meta = build_meta_prompt(max_rounds=2)

        def run():
            aff, neg, judge = scripted_trio()
            return run_debate(
                image_like(mask), candidate(mask), aff, neg, judge, meta,
                image_id="img", clock=LogicalClock(),
            ).to_json()

        assert run() == run()


class TestFilterPseudoLabels:
    def _records(self, verdicts):
        return [
            DebateRecord(
                image_id="img", mask_id=f"m{i}", transcript=(),
                verdict=v, rationale="", started_at="t0", finished_at="t1",
            )
            for i, v in enumerate(verdicts)
        ]

    def test_all_retain_is_identity(self):
        cands = [candidate(mask_id=f"m{i}") for i in range(3)]
        records = self._records([RETAIN] * 3)
        assert filter_pseudo_labels(records, cands) == cands

    def test_all_discard_is_empty(self):
        cands = [candidate(mask_id=f"m{i}") for i in range(3)]
        assert filter_pseudo_labels(self._records([DISCARD] * 3), cands) == []

    def test_mixed_verdicts_select_exact_subset(self, tmp_path):
        verdicts = [RETAIN, DISCARD, RETAIN, UNDECIDED, DISCARD,
                    RETAIN, RETAIN, DISCARD, UNDECIDED, RETAIN]
        cands = [candidate(mask_id=f"m{i}") for i in range(10)]
        manifest_path = tmp_path / "acceptance.json"
        accepted = filter_pseudo_labels(self._records(verdicts), cands, manifest_path)
        assert [c.mask_id for c in accepted] == [
            f"m{i}" for i, v in enumerate(verdicts) if v == RETAIN
        ]
        manifest = json.loads(manifest_path.read_text())
        assert manifest["m3"]["verdict"] == UNDECIDED
        assert len(manifest) == 10

    def test_verdict_totality_partition(self):
        verdicts = [RETAIN, DISCARD, UNDECIDED, RETAIN]
        records = self._records(verdicts)
        cands = [candidate(mask_id=f"m{i}") for i in range(4)]
        accepted = {c.mask_id for c in filter_pseudo_labels(records, cands)}
        rejected = {r.mask_id for r in records if r.verdict == DISCARD}
        undecided = {r.mask_id for r in records if r.verdict == UNDECIDED}
        assert accepted | rejected | undecided == {f"m{i}" for i in range(4)}
        assert not (accepted & rejected or accepted & undecided or rejected & undecided)


class TestDebateCandidates:
    def test_parallel_debates_produce_ordered_records(self):
        mask = ellipse()
        cands = [candidate(mask_id=f"m{i}", confidence=1 - i * 0.1) for i in range(4)]
        aff, neg, judge = scripted_trio()
        meta = build_meta_prompt(max_rounds=1)
        records = debate_candidates(
            image_like(mask), cands, aff, neg, judge, meta,
            image_id="img", parallelism=4,
        )
        assert [r.mask_id for r in records] == [c.mask_id for c in cands]


class _Handler(BaseHTTPRequestHandler):
    payload: dict = {}

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        self.rfile.read(length)
        body = json.dumps(self.payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _Handler
    server.shutdown()


class TestRemoteEndpoints:
    def test_remote_agent_round_trip(self, http_server):
        address, handler = http_server
        handler.payload = {"text": "looks camouflaged\nVERDICT: RETAIN"}
        agent = RemoteAgent(role=AFFIRMATIVE, address=address, timeout_seconds=5)
        mask = ellipse()
        ctx = render_debate_context(image_like(mask), mask)
        reply = agent.respond(ctx, (), build_meta_prompt(max_rounds=1))
        assert "RETAIN" in reply

    def test_remote_segmenter_round_trip(self, http_server):
        import base64
        import zlib

        address, handler = http_server
        mask = ellipse().astype(np.uint8)
        encoded = base64.b64encode(zlib.compress(mask.tobytes())).decode()
        handler.payload = {"masks": [{"mask": encoded, "confidence": 0.75}]}
        seg = RemoteSegmenter(address=address, timeout_seconds=5)
        out = seg.segment(image_like(ellipse()), prompt_set())
        assert len(out) == 1
        assert out[0].confidence == 0.75
        assert (out[0].mask == mask.astype(bool)).all()

    def test_unreachable_address_is_transport_error(self):
        seg = RemoteSegmenter(address="http://127.0.0.1:9", timeout_seconds=0.2)
        with pytest.raises(TransportError) as err:
            seg.segment(image_like(ellipse()), prompt_set())
        assert err.value.retryable

    def test_missing_address_is_config_error(self, monkeypatch):
        monkeypatch.delenv("WSCOD_BACKEND_ADDRESS", raising=False)
        with pytest.raises(ConfigurationError):
            RemoteSegmenter(address=None)


class TestDescriptors:
    def test_scripted_judge_descriptor(self):
        agent = build_agent(EndpointDescriptor.from_dict(
            {"kind": "scripted", "role": JUDGE, "policy": "discard"}
        ))
        assert isinstance(agent, ScriptedJudge)

    def test_scripted_responses_file(self, tmp_path):
        script = tmp_path / "lines.json"
        script.write_text(json.dumps(["first argument", "second argument"]))
        agent = build_agent(EndpointDescriptor.from_dict(
            {"kind": "scripted", "role": AFFIRMATIVE, "script": str(script)}
        ))
        assert agent.respond(None, (), None) == "first argument"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            build_segmenter(EndpointDescriptor.from_dict({"kind": "mystery"}))

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigurationError):
            EndpointDescriptor.from_dict({"kind": "scripted", "port": 1})

    def test_oracle_descriptor(self, tmp_path):
        from wscod.scribbles import save_binary_mask

        save_binary_mask(tmp_path / "img.png", ellipse())
        seg = build_segmenter(EndpointDescriptor.from_dict(
            {"kind": "oracle", "gt_dir": str(tmp_path)}
        ))
        out = seg.segment(image_like(ellipse()), prompt_set())
        assert (out[0].mask == ellipse()).all()
