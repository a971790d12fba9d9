"""Planning-agent session loop over a shared scene memory.

The planner is any chat model behind the ModelClient contract; it receives the
query plus a serialized view of the scene memory each step and must reply with
a JSON action envelope {"kind": ..., "payload": ...}. Dispatched actions write
their results back into the memory, and the session ends when the planner
answers or the step budget runs out. With transcript-stubbed clients and the
subprocess executor the whole loop is bit-for-bit reproducible.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import sys
import tempfile
import time
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .bundle import SceneBundle
from .config import EngineConfig, SessionLimits
from .lifting import Instance
from .maskproc import Segmenter
from .pipeline import ground_labels
from .viewmem import (
    ViewCache,
    VisualMemory,
    build_memory,
    rank_frames_by_mask_area,
    region_from_direction,
    region_key,
)

ACTION_KINDS = ("plan", "ground", "retrieve", "browse", "code", "answer")

PLANNER_SYSTEM = (
    "You are the planning agent for a 3D scene reasoning session. Each turn "
    "you receive the user query and the current scene memory. Reply with a "
    "single JSON object {\"kind\": K, \"payload\": P} where K is one of "
    "plan, ground, retrieve, browse, code, answer. ground: payload {\"labels\": "
    "[...]} or {\"prompt\": text, \"mode\": \"clear\"|\"vague\"}. retrieve: "
    "payload {\"instance_id\": id} or {\"anchor\": [x,y,z], \"direction\": "
    "[dx,dy,dz]}. code: payload {\"query\": text, \"name\": text}. answer: "
    "payload {\"text\": final answer}."
)

BROWSE_SYSTEM = (
    "You see sampled views of an indoor scene. List the distinct object "
    "categories you can identify, as a comma-separated list of short labels."
)

CODER_SYSTEM = (
    "You are the coding agent. You receive a computation request and the "
    "scene memory (also available to your program as MEMORY with helpers "
    "find_instances, count_instances, box_distance, box_size, direction_from). "
    "Reply with JSON {\"code\": python_source, \"final\": true|false} to run a "
    "program, or {\"done\": true} to accept the last result."
)

REPROMPT_TEXT = (
    "Reply with exactly one JSON object of the form {\"kind\": ..., "
    "\"payload\": ...}; no prose."
)

CODE_PREAMBLE = '''\
import json
import math
import sys


def _load_bindings():
    if len(sys.argv) > 1:
        with open(sys.argv[1], "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {}


MEMORY = _load_bindings()
INSTANCES = MEMORY.get("instances", [])
EGO = MEMORY.get("ego")


def find_instances(label):
    return [inst for inst in INSTANCES if inst["label"] == label]


def count_instances(label):
    return len(find_instances(label))


def box_center(box):
    return list(box["center"])


def box_size(box):
    return list(box["size"])


def point_distance(p, q):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(p, q)))


def box_distance(box_a, box_b):
    return point_distance(box_a["center"], box_b["center"])


def direction_from(position, facing, target):
    """Classify target as front/behind/left/right of an observer."""
    norm = math.hypot(facing[0], facing[1])
    if norm == 0:
        raise ValueError("facing direction needs a horizontal component")
    ex, ey = facing[0] / norm, facing[1] / norm
    dx, dy = target[0] - position[0], target[1] - position[1]
    front = dx * ex + dy * ey
    lat = -dx * ey + dy * ex
    if abs(front) >= abs(lat):
        return "front" if front >= 0 else "behind"
    return "left" if lat >= 0 else "right"
'''


class ClientError(Exception):
    """Transport or stub-miss failure from a model client."""


class SessionError(Exception):
    """Session aborted; carries the partial trace and memory."""

    def __init__(self, message: str, trace=None, store=None):
        super().__init__(message)
        self.trace = trace or []
        self.store = store


class ModelClient(Protocol):
    def complete(self, system: str, messages: list[dict]) -> str:
        ...


def _normalize_messages(messages: Sequence[dict]) -> list[dict]:
    return [
        {
            "role": str(m.get("role", "user")),
            "text": str(m.get("text", "")),
            "image_refs": [str(r) for r in m.get("image_refs", [])],
        }
        for m in messages
    ]


def request_hash(system: str, messages: Sequence[dict]) -> str:
    """Stable digest of a chat request; the key of transcript stub lines."""
    canonical = json.dumps(
        {"system": system, "messages": _normalize_messages(messages)},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TranscriptClient:
    """Replays canned responses from a JSONL stub of {"hash", "response"}."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.responses: dict[str, str] = {}
        if self.path.is_file():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.responses[obj["hash"]] = obj["response"]

    def complete(self, system: str, messages: list[dict]) -> str:
        digest = request_hash(system, messages)
        if digest not in self.responses:
            raise ClientError(f"transcript has no response for request {digest[:12]}")
        return self.responses[digest]


class RecordingClient:
    """Wraps a client and appends {"system", "messages", "response"} JSONL."""

    def __init__(self, inner: ModelClient, log_path: Path):
        self.inner = inner
        self.log_path = Path(log_path)

    def complete(self, system: str, messages: list[dict]) -> str:
        response = self.inner.complete(system, messages)
        entry = {
            "system": system,
            "messages": _normalize_messages(messages),
            "response": response,
        }
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
        return response


class HttpChatClient:
    """Minimal OpenAI-style chat endpoint transport.

    Auth token comes from the named environment variable; never from config
    files. Image refs are passed through as plain text paths.
    """

    def __init__(self, base_url: str, model: str, token: Optional[str] = None, timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token = token
        self.timeout_s = timeout_s

    def complete(self, system: str, messages: list[dict]) -> str:
        chat = [{"role": "system", "content": system}]
        for m in _normalize_messages(messages):
            content = m["text"]
            if m["image_refs"]:
                content += "\n[images: " + ", ".join(m["image_refs"]) + "]"
            chat.append({"role": m["role"], "content": content})
        body = json.dumps({"model": self.model, "messages": chat}).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/chat/completions",
            data=body,
            headers={
                "Content-Type": "application/json",
                **({"Authorization": f"Bearer {self.token}"} if self.token else {}),
            },
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            return payload["choices"][0]["message"]["content"]
        except Exception as exc:  # transport errors become retryable ClientError
            raise ClientError(str(exc)) from exc


@dataclass
class ExecutionResult:
    stdout: str
    exit_status: int
    stderr: str = ""
    timed_out: bool = False


class ProgramExecutor(Protocol):
    def run(self, source: str, bindings: dict) -> ExecutionResult:
        ...


class SubprocessExecutor:
    """Runs generated programs in a scratch directory with a wall-clock cap.

    The program text is written to disk with the helper preamble prepended and
    invoked as `python -I program.py bindings.json`; stdout is the result
    channel. Isolation is workspace-only cwd plus isolated interpreter mode;
    the contract forbids network use, which the preamble does not expose.
    """

    def __init__(self, timeout_s: float = 20.0, preamble: str = CODE_PREAMBLE):
        self.timeout_s = timeout_s
        self.preamble = preamble
        self.invocations = 0

    def run(self, source: str, bindings: dict) -> ExecutionResult:
        self.invocations += 1
        workdir = Path(tempfile.mkdtemp(prefix="sceneground-exec-"))
        try:
            program = workdir / "program.py"
            program.write_text(self.preamble + "\n\n" + source, encoding="utf-8")
            bindings_path = workdir / "bindings.json"
            bindings_path.write_text(
                json.dumps(bindings, sort_keys=True), encoding="utf-8"
            )
            try:
                proc = subprocess.run(
                    [sys.executable, "-I", str(program), str(bindings_path)],
                    cwd=workdir,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout_s,
                )
                return ExecutionResult(
                    stdout=proc.stdout, exit_status=proc.returncode, stderr=proc.stderr
                )
            except subprocess.TimeoutExpired:
                return ExecutionResult(
                    stdout="",
                    exit_status=-1,
                    stderr=f"timed out after {self.timeout_s}s",
                    timed_out=True,
                )
        finally:
            shutil.rmtree(workdir, ignore_errors=True)


@dataclass
class Note:
    step: int
    agent: str
    text: str


@dataclass
class Measurement:
    value: object
    step: int
    source: str
    ok: bool = True


@dataclass
class Ego:
    position: np.ndarray
    facing: np.ndarray


@dataclass
class SceneMemoryStore:
    instances: list[Instance] = field(default_factory=list)
    view_caches: dict[str, ViewCache] = field(default_factory=dict)
    measurements: dict[str, Measurement] = field(default_factory=dict)
    notes: list[Note] = field(default_factory=list)
    ego: Optional[Ego] = None


@dataclass
class AgentAction:
    step: int
    kind: str
    payload: dict
    result: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "kind": self.kind,
            "payload": self.payload,
            "result": self.result,
        }


@dataclass
class SessionResult:
    answer: str
    memory: SceneMemoryStore
    trace: list[AgentAction]
    flags: list[str] = field(default_factory=list)


def _box_to_json(box) -> Optional[dict]:
    if box is None:
        return None
    return {
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
    }


def serialize_memory_view(store: SceneMemoryStore) -> str:
    """Deterministic JSON rendering of the memory the agents reason over."""
    doc = {
        "instances": [
            {"id": inst.id, "label": inst.label, "box": _box_to_json(inst.box)}
            for inst in store.instances
        ],
        "measurements": {
            name: store.measurements[name].value
            for name in sorted(store.measurements)
        },
        "ego": (
            {
                "position": [float(v) for v in store.ego.position],
                "facing": [float(v) for v in store.ego.facing],
            }
            if store.ego is not None
            else None
        ),
    }
    return json.dumps(doc, sort_keys=True)


def dump_memory(store: SceneMemoryStore) -> str:
    """Full memory dump (view + caches + notes) as deterministic JSON."""
    doc = {
        "view": json.loads(serialize_memory_view(store)),
        "view_caches": {
            key: store.view_caches[key].to_manifest()
            for key in sorted(store.view_caches)
        },
        "notes": [
            {"step": n.step, "agent": n.agent, "text": n.text} for n in store.notes
        ],
        "num_instance_points": [len(i.points) for i in store.instances],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def _call_with_retries(
    client: ModelClient, system: str, messages: list[dict], limits: SessionLimits
) -> str:
    last: Optional[Exception] = None
    for attempt in range(limits.client_retries + 1):
        try:
            return client.complete(system, messages)
        except ClientError as exc:
            last = exc
            if attempt < limits.client_retries and limits.retry_backoff_s > 0:
                time.sleep(limits.retry_backoff_s * (2**attempt))
    raise ClientError(f"client failed after {limits.client_retries + 1} attempts: {last}")


def _parse_json_reply(reply: str) -> dict:
    text = reply.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
        text = text.strip()
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("reply is not a JSON object")
    return obj


def _parse_labels_reply(reply: str) -> list[str]:
    text = reply.strip()
    labels: list[str] = []
    try:
        parsed = json.loads(text)
        if isinstance(parsed, list):
            labels = [str(x) for x in parsed]
    except json.JSONDecodeError:
        for chunk in text.replace(";", ",").replace("\n", ",").split(","):
            chunk = chunk.strip().strip(".")
            if chunk:
                labels.append(chunk)
    seen = set()
    out = []
    for label in labels:
        norm = label.lower()
        if norm and norm not in seen:
            seen.add(norm)
            out.append(norm)
    return out


def browse_scene(
    bundle: SceneBundle,
    client: ModelClient,
    sample_size: int = 8,
    limits: SessionLimits = SessionLimits(),
) -> list[str]:
    """Show evenly sampled frames to the client and parse candidate labels."""
    n = len(bundle.frames)
    if n < 1:
        raise ValueError("browse needs at least one frame")
    count = min(sample_size, n)
    picks = sorted({int(round(i)) for i in np.linspace(0, n - 1, count)})
    refs = []
    for idx in picks:
        frame = bundle.frames[idx]
        ref = frame.rgb_path
        if bundle.root is not None:
            ref = ref.relative_to(bundle.root)
        refs.append(str(ref))
    messages = [
        {
            "role": "user",
            "text": json.dumps({"task": "list_labels", "frames": refs}, sort_keys=True),
            "image_refs": refs,
        }
    ]
    reply = _call_with_retries(client, BROWSE_SYSTEM, messages, limits)
    labels = _parse_labels_reply(reply)
    if labels:
        return labels
    messages = messages + [
        {"role": "assistant", "text": reply},
        {"role": "user", "text": "List object labels as a comma-separated line."},
    ]
    reply = _call_with_retries(client, BROWSE_SYSTEM, messages, limits)
    return _parse_labels_reply(reply)


def _parse_measurement(stdout: str):
    lines = [ln for ln in stdout.strip().splitlines() if ln.strip()]
    if not lines:
        return None
    last = lines[-1].strip()
    try:
        return json.loads(last)
    except json.JSONDecodeError:
        return last


def dispatch_coding(
    query: str,
    store: SceneMemoryStore,
    client: ModelClient,
    executor: ProgramExecutor,
    rounds: int,
    limits: SessionLimits = SessionLimits(),
) -> tuple[Measurement, list[tuple[str, ExecutionResult]]]:
    """Multi-round code loop: propose, execute, revise on feedback.

    Each round is one client turn and at most one executor invocation, so the
    executor never runs more than `rounds` times. The loop stops early when
    the client marks a successful program final or replies {"done": true}.
    """
    bindings = json.loads(serialize_memory_view(store))
    messages = [
        {
            "role": "user",
            "text": json.dumps({"query": query, "memory": bindings}, sort_keys=True),
        }
    ]
    history: list[tuple[str, ExecutionResult]] = []
    last_exec: Optional[ExecutionResult] = None
    done = False

    for round_no in range(1, rounds + 1):
        reply = _call_with_retries(client, CODER_SYSTEM, messages, limits)
        messages = messages + [{"role": "assistant", "text": reply}]
        try:
            obj = _parse_json_reply(reply)
        except (ValueError, json.JSONDecodeError):
            messages = messages + [
                {
                    "role": "user",
                    "text": json.dumps(
                        {"error": "reply not understood; send {\"code\": ...} or {\"done\": true}"}
                    ),
                }
            ]
            continue
        if obj.get("done"):
            done = last_exec is not None and last_exec.exit_status == 0
            break
        source = obj.get("code")
        if not isinstance(source, str):
            messages = messages + [
                {
                    "role": "user",
                    "text": json.dumps({"error": "missing 'code' field"}),
                }
            ]
            continue
        last_exec = executor.run(source, bindings)
        history.append((source, last_exec))
        if obj.get("final") and last_exec.exit_status == 0:
            done = True
            break
        feedback = {
            "round": round_no,
            "stdout": last_exec.stdout,
            "exit_status": last_exec.exit_status,
            "stderr": last_exec.stderr[-2000:],
            "timed_out": last_exec.timed_out,
        }
        messages = messages + [
            {"role": "user", "text": json.dumps(feedback, sort_keys=True)}
        ]

    if last_exec is None:
        return (
            Measurement(value={"error": "no program executed"}, step=0, source="code", ok=False),
            history,
        )
    value = _parse_measurement(last_exec.stdout)
    ok = done and last_exec.exit_status == 0
    if last_exec.exit_status != 0:
        value = {"error": last_exec.stderr.strip() or "nonzero exit", "stdout": last_exec.stdout}
    return Measurement(value=value, step=0, source="code", ok=ok), history


class Session:
    """One query over one immutable bundle; memory writes happen in trace order."""

    def __init__(
        self,
        bundle: SceneBundle,
        clients: Union[ModelClient, dict[str, ModelClient]],
        executor: ProgramExecutor,
        config: EngineConfig,
        segmenter: Optional[Segmenter] = None,
        ego: Optional[Ego] = None,
    ):
        self.bundle = bundle
        self.clients = clients if isinstance(clients, dict) else {"default": clients}
        self.executor = executor
        self.config = config
        self.segmenter = segmenter
        self.store = SceneMemoryStore(ego=ego)
        self.trace: list[AgentAction] = []
        self._memory: Optional[VisualMemory] = None

    def client_for(self, role: str) -> ModelClient:
        if role in self.clients:
            return self.clients[role]
        if "default" in self.clients:
            return self.clients["default"]
        raise SessionError(f"no client configured for role {role!r}", self.trace, self.store)

    @property
    def memory(self) -> VisualMemory:
        if self._memory is None:
            self._memory = build_memory(self.bundle, self.config.retrieval.voxel)
        return self._memory

    def _note(self, step: int, agent: str, text: str) -> None:
        self.store.notes.append(Note(step=step, agent=agent, text=text))

    def dispatch_grounding(self, payload: dict, step: int) -> dict:
        mode = payload.get("mode", "clear")
        labels = payload.get("labels")
        if not labels:
            prompt = payload.get("prompt", "")
            if mode == "vague":
                labels = browse_scene(
                    self.bundle,
                    self.client_for("browse"),
                    self.config.limits.browse_sample,
                    self.config.limits,
                )
                self._note(step, "grounding", f"browse proposed labels: {labels}")
            else:
                labels = [prompt] if prompt else []
        if not labels:
            self._note(step, "grounding", "no labels to ground")
            return {"instances_added": 0, "instance_ids": [], "labels": []}

        result = ground_labels(self.bundle, labels, self.config, self.segmenter)
        for text in result.notes:
            self._note(step, "grounding", text)
        offset = len(self.store.instances)
        added_ids = []
        for inst in result.instances:
            inst.id = inst.id + offset
            added_ids.append(inst.id)
            self.store.instances.append(inst)
        if not added_ids:
            self._note(step, "grounding", f"no instances found for {labels}")
        return {
            "instances_added": len(added_ids),
            "instance_ids": added_ids,
            "labels": list(labels),
            "boxes": {
                str(i): _box_to_json(self.store.instances[i].box) for i in added_ids
            },
        }

    def dispatch_retrieval(self, payload: dict, step: int) -> dict:
        k = int(payload.get("k", self.config.retrieval.k))
        if self.config.retrieval.strategy == "2d":
            labels = payload.get("labels") or [
                inst.label for inst in self.store.instances
            ]
            cache = rank_frames_by_mask_area(self.bundle.masks, labels, k)
        elif "instance_id" in payload:
            wanted = int(payload["instance_id"])
            inst = next((i for i in self.store.instances if i.id == wanted), None)
            if inst is None:
                self._note(step, "retrieval", f"unknown instance id {wanted}")
                return {"error": f"unknown instance id {wanted}", "frames": []}
            cache = self.memory.cache_instance_views(inst, k)
        else:
            anchor = payload.get("anchor")
            direction = payload.get("direction")
            if anchor is None or direction is None:
                if self.store.ego is None:
                    self._note(step, "retrieval", "no anchor/direction and no ego pose")
                    return {"error": "retrieval needs instance_id or anchor+direction", "frames": []}
                anchor = self.store.ego.position
                direction = self.store.ego.facing
            region = region_from_direction(
                np.asarray(anchor, dtype=float), np.asarray(direction, dtype=float)
            )
            cache = self.memory.retrieve(region, k, key=region_key(region))
        self.store.view_caches[cache.key] = cache
        frames = []
        for frame_index, coverage in cache.ranked:
            ref = self.memory.rgb_path_for(frame_index)
            if ref is not None and self.bundle.root is not None:
                ref = ref.relative_to(self.bundle.root)
            frames.append(
                {"index": frame_index, "coverage": coverage, "rgb": str(ref) if ref else None}
            )
        return {"key": cache.key, "frames": frames}

    def dispatch_browse(self, step: int) -> dict:
        labels = browse_scene(
            self.bundle,
            self.client_for("browse"),
            self.config.limits.browse_sample,
            self.config.limits,
        )
        self._note(step, "browse", f"candidate labels: {labels}")
        return {"labels": labels}

    def dispatch_code(self, payload: dict, step: int) -> dict:
        query = str(payload.get("query", ""))
        name = str(payload.get("name") or f"measurement_{step}")
        measurement, history = dispatch_coding(
            query,
            self.store,
            self.client_for("coder"),
            self.executor,
            self.config.limits.coding_rounds,
            self.config.limits,
        )
        measurement.step = step
        self.store.measurements[name] = measurement
        for round_no, (source, result) in enumerate(history, start=1):
            self._note(
                step,
                "coding",
                f"round {round_no}: exit {result.exit_status}, "
                f"stdout {result.stdout.strip()[:200]!r}",
            )
        if not measurement.ok:
            self._note(step, "coding", f"measurement {name!r} not confirmed")
        return {"name": name, "value": measurement.value, "ok": measurement.ok, "rounds": len(history)}

    def _planner_request(self, query: str, step: int, last_result: Optional[dict]) -> list[dict]:
        context = {
            "query": query,
            "step": step,
            "memory": json.loads(serialize_memory_view(self.store)),
            "last_result": last_result,
        }
        return [{"role": "user", "text": json.dumps(context, sort_keys=True)}]

    def _plan(self, query: str, step: int, last_result: Optional[dict]) -> dict:
        messages = self._planner_request(query, step, last_result)
        try:
            reply = _call_with_retries(
                self.client_for("planner"), PLANNER_SYSTEM, messages, self.config.limits
            )
        except ClientError as exc:
            raise SessionError(str(exc), self.trace, self.store) from exc
        try:
            envelope = _parse_json_reply(reply)
            if envelope.get("kind") not in ACTION_KINDS:
                raise ValueError(f"unknown action kind {envelope.get('kind')!r}")
        except (ValueError, json.JSONDecodeError):
            messages = messages + [
                {"role": "assistant", "text": reply},
                {"role": "user", "text": REPROMPT_TEXT},
            ]
            try:
                reply = _call_with_retries(
                    self.client_for("planner"), PLANNER_SYSTEM, messages, self.config.limits
                )
                envelope = _parse_json_reply(reply)
            except (ClientError, ValueError, json.JSONDecodeError) as exc:
                raise SessionError(
                    f"planner reply not a valid action envelope: {exc}",
                    self.trace,
                    self.store,
                ) from exc
            if envelope.get("kind") not in ACTION_KINDS:
                raise SessionError(
                    f"planner chose unknown action {envelope.get('kind')!r}",
                    self.trace,
                    self.store,
                )
        payload = envelope.get("payload")
        return {"kind": envelope["kind"], "payload": payload if isinstance(payload, dict) else {}}

    def run(self, query: str) -> SessionResult:
        limits = self.config.limits
        last_result: Optional[dict] = None
        for step in range(1, limits.max_steps + 1):
            envelope = self._plan(query, step, last_result)
            kind, payload = envelope["kind"], envelope["payload"]
            if kind == "answer":
                action = AgentAction(step, "answer", payload, {"final": True})
                self.trace.append(action)
                return SessionResult(
                    answer=str(payload.get("text", "")),
                    memory=self.store,
                    trace=self.trace,
                    flags=[],
                )
            if kind == "plan":
                result = {}
                if payload.get("note"):
                    self._note(step, "planner", str(payload["note"]))
            elif kind == "ground":
                result = self.dispatch_grounding(payload, step)
            elif kind == "retrieve":
                result = self.dispatch_retrieval(payload, step)
            elif kind == "browse":
                result = self.dispatch_browse(step)
            elif kind == "code":
                result = self.dispatch_code(payload, step)
            else:  # unreachable: _plan validated the kind
                result = {"error": f"unsupported action {kind!r}"}
            action = AgentAction(step, kind, payload, result)
            self.trace.append(action)
            last_result = result

        # Budget exhausted: ask for a best-effort summary, fall back to a
        # fixed marker so replayed sessions stay deterministic.
        summary_messages = [
            {
                "role": "user",
                "text": json.dumps(
                    {
                        "summarize": True,
                        "query": query,
                        "memory": json.loads(serialize_memory_view(self.store)),
                    },
                    sort_keys=True,
                ),
            }
        ]
        try:
            answer = _call_with_retries(
                self.client_for("planner"), PLANNER_SYSTEM, summary_messages, limits
            )
        except ClientError:
            answer = "[budget-exhausted] step limit reached without a final answer"
        return SessionResult(
            answer=answer, memory=self.store, trace=self.trace, flags=["budget-exhausted"]
        )


def run_session(
    query: str,
    bundle: SceneBundle,
    clients: Union[ModelClient, dict[str, ModelClient]],
    executor: ProgramExecutor,
    config: Optional[EngineConfig] = None,
    segmenter: Optional[Segmenter] = None,
    ego: Optional[Ego] = None,
) -> SessionResult:
    """Run the plan/dispatch loop for one query and return answer + memory + trace."""
    session = Session(
        bundle=bundle,
        clients=clients,
        executor=executor,
        config=config or EngineConfig(),
        segmenter=segmenter,
        ego=ego,
    )
    return session.run(query)


def write_trace(trace: Sequence[AgentAction], path: Path) -> None:
    lines = [json.dumps(a.to_json(), sort_keys=True) for a in trace]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
