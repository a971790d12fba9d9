import pytest

from sceneground_adapters.pointmaps import AdapterError
from sceneground_adapters.transcripts import canonical_request_hash, record_transcript

from sceneground.agents import (
    RecordingClient,
    SubprocessExecutor,
    TranscriptClient,
    request_hash,
    run_session,
    write_trace,
)
from sceneground.config import EngineConfig, SessionLimits

from conftest import PlannerScript

CONFIG = EngineConfig(limits=SessionLimits(retry_backoff_s=0.0))


def run_once(scene, client, out_path):
    result = run_session("what is here?", scene, client, SubprocessExecutor(timeout_s=5), CONFIG)
    write_trace(result.trace, out_path)
    return result


def test_hashing_matches_engine_contract():
    msgs = [{"role": "user", "text": "hi", "image_refs": ["frames/0.png"]}]
    assert canonical_request_hash("sys", msgs) == request_hash("sys", msgs)


def test_three_turn_session_replays_identically(scene, tmp_path):
    log_path = tmp_path / "session.log.jsonl"
    live = RecordingClient(PlannerScript(), log_path)
    live_result = run_once(scene, live, tmp_path / "live.jsonl")

    stub_path = record_transcript(log_path, tmp_path / "stub.jsonl")
    assert len(stub_path.read_text().splitlines()) == 3  # one line per exchange

    replay_result = run_once(scene, TranscriptClient(stub_path), tmp_path / "replay.jsonl")
    assert replay_result.answer == live_result.answer
    assert (tmp_path / "replay.jsonl").read_bytes() == (tmp_path / "live.jsonl").read_bytes()


def test_re_recording_is_byte_identical(scene, tmp_path):
    log_path = tmp_path / "session.log.jsonl"
    run_once(scene, RecordingClient(PlannerScript(), log_path), tmp_path / "t.jsonl")
    a = record_transcript(log_path, tmp_path / "a.jsonl").read_bytes()
    b = record_transcript(log_path, tmp_path / "b.jsonl").read_bytes()
    assert a == b


def test_empty_log_yields_empty_stub_and_replay_miss(scene, tmp_path):
    empty_log = tmp_path / "empty.log.jsonl"
    empty_log.write_text("")
    stub = record_transcript(empty_log, tmp_path / "stub.jsonl")
    assert stub.read_text() == ""
    from sceneground.agents import SessionError

    with pytest.raises(SessionError):
        run_once(scene, TranscriptClient(stub), tmp_path / "t.jsonl")


def test_conflicting_responses_rejected(tmp_path):
    msgs = [{"role": "user", "text": "q", "image_refs": []}]
    entries = [
        {"system": "s", "messages": msgs, "response": "a"},
        {"system": "s", "messages": msgs, "response": "b"},
    ]
    with pytest.raises(AdapterError, match="conflicting"):
        record_transcript(entries, tmp_path / "stub.jsonl")


def test_duplicate_consistent_entries_deduped(tmp_path):
    msgs = [{"role": "user", "text": "q", "image_refs": []}]
    entries = [
        {"system": "s", "messages": msgs, "response": "a"},
        {"system": "s", "messages": msgs, "response": "a"},
    ]
    stub = record_transcript(entries, tmp_path / "stub.jsonl")
    assert len(stub.read_text().splitlines()) == 1


def test_malformed_log_line_reported(tmp_path):
    log = tmp_path / "bad.log.jsonl"
    log.write_text('{"system": "s", "messages": [], "response": "x"}\n{oops\n')
    with pytest.raises(AdapterError, match="line 2"):
        record_transcript(log, tmp_path / "stub.jsonl")
