#!/usr/bin/env python3
"""End-to-end demo without any live model: build a scene, run a scripted
planner/coder session while recording it, convert the log into a transcript
stub, and replay the stub to show determinism.

    python scripts/demo_session.py --workdir /tmp/demo
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

from sceneground.agents import (
    RecordingClient,
    SubprocessExecutor,
    TranscriptClient,
    request_hash,
    run_session,
    write_trace,
)
from sceneground.bundle import load_bundle
from sceneground.config import EngineConfig, SessionLimits


class ScriptedPlanner:
    def complete(self, system, messages):
        ctx = json.loads(messages[0]["text"])
        if ctx.get("summarize"):
            return "out of budget"
        step = ctx["step"]
        if step == 1:
            return json.dumps({"kind": "ground", "payload": {"labels": ["chair", "table"]}})
        if step == 2:
            return json.dumps({"kind": "retrieve", "payload": {"instance_id": 0, "k": 2}})
        if step == 3:
            return json.dumps(
                {"kind": "code", "payload": {"query": "chair-table distance", "name": "dist"}}
            )
        return json.dumps(
            {"kind": "answer", "payload": {"text": "the chair stands about 4 m from the table"}}
        )


class ScriptedCoder:
    def complete(self, system, messages):
        return json.dumps(
            {
                "code": (
                    "a = find_instances('chair')[0]\n"
                    "b = find_instances('table')[0]\n"
                    "print(box_distance(a['box'], b['box']))\n"
                ),
                "final": True,
            }
        )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", required=True)
    args = ap.parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    bundle_dir = work / "scene"
    subprocess.run(
        [sys.executable, str(Path(__file__).parent / "make_synth_bundle.py"),
         "--out", str(bundle_dir), "--objects", "chair,table"],
        check=True,
    )
    bundle = load_bundle(bundle_dir)
    config = EngineConfig(limits=SessionLimits(retry_backoff_s=0.0))

    log_path = work / "session.log.jsonl"
    clients = {
        "planner": RecordingClient(ScriptedPlanner(), log_path),
        "coder": RecordingClient(ScriptedCoder(), log_path),
    }
    result = run_session(
        "how far apart are the chair and the table?",
        bundle, clients, SubprocessExecutor(timeout_s=15), config,
    )
    print("live answer:  ", result.answer)
    print("measurement:  ", result.memory.measurements["dist"].value)

    stub_path = work / "transcript.jsonl"
    seen = {}
    with open(stub_path, "w", encoding="utf-8") as fh:
        for line in log_path.read_text(encoding="utf-8").splitlines():
            entry = json.loads(line)
            digest = request_hash(entry["system"], entry["messages"])
            if digest not in seen:
                seen[digest] = True
                fh.write(json.dumps({"hash": digest, "response": entry["response"]}) + "\n")

    replayed = run_session(
        "how far apart are the chair and the table?",
        bundle, TranscriptClient(stub_path), SubprocessExecutor(timeout_s=15), config,
    )
    write_trace(replayed.trace, work / "trace.jsonl")
    print("replay answer:", replayed.answer)
    print("identical:    ", replayed.answer == result.answer)
    print(f"trace written to {work / 'trace.jsonl'}")


if __name__ == "__main__":
    main()
