"""Convert recorded chat session logs into replayable transcript stubs.

A session log is JSONL of {"system", "messages", "response"} as written by
the engine's recording client. The stub is JSONL of {"hash", "response"}
keyed by the SHA-256 of the canonical request JSON {"system", "messages"}
with sorted keys, compact separators, and UTF-8 text, matching the engine's
transcript contract. Hashing is re-implemented here on purpose; a drift
between the two sides must fail replay loudly rather than silently.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Union

from .pointmaps import AdapterError


def canonical_request_hash(system: str, messages: list[dict]) -> str:
    normalized = [
        {
            "role": str(m.get("role", "user")),
            "text": str(m.get("text", "")),
            "image_refs": [str(r) for r in m.get("image_refs", [])],
        }
        for m in messages
    ]
    canonical = json.dumps(
        {"system": system, "messages": normalized},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _iter_entries(log: Union[Path, Iterable[dict]]):
    if isinstance(log, (str, Path)):
        for lineno, line in enumerate(
            Path(log).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{log}: line {lineno}: {exc}") from exc
    else:
        yield from log


def record_transcript(log: Union[Path, Iterable[dict]], out_path: Path) -> Path:
    """Write the stub; duplicate requests must agree on their response."""
    seen: dict[str, str] = {}
    ordered: list[str] = []
    for entry in _iter_entries(log):
        digest = canonical_request_hash(entry["system"], entry["messages"])
        response = entry["response"]
        if digest in seen:
            if seen[digest] != response:
                raise AdapterError(
                    f"conflicting responses for request {digest[:12]}: the log "
                    f"is not replayable"
                )
            continue
        seen[digest] = response
        ordered.append(digest)
    out_path = Path(out_path)
    lines = [
        json.dumps({"hash": d, "response": seen[d]}, ensure_ascii=False)
        for d in ordered
    ]
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return out_path
