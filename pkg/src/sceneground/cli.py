"""Command-line entry point.

Subcommands: ground | retrieve | eval | orchestrate | config.
Exit codes: 0 success, 2 usage, 3 data/format, 4 session/external.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agents import (
    ClientError,
    Ego,
    HttpChatClient,
    SessionError,
    SubprocessExecutor,
    TranscriptClient,
    browse_scene,
    dump_memory,
    run_session,
    write_trace,
)
from .bundle import BundleError, load_bundle, read_instances, write_instances
from .config import EngineConfig
from .maskproc import FileStubSegmenter
from .metrics import full_report, load_judged_jsonl
from .pipeline import ground_labels
from .viewmem import build_memory, region_from_direction, region_key

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_SESSION = 4


class UsageError(Exception):
    pass


def _parse_vec3(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"expected x,y,z triple, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise UsageError(f"bad vector {text!r}: {exc}") from exc


def _load_config(path: str | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    return EngineConfig.load(Path(path))


def _make_clients(args) -> dict:
    if getattr(args, "transcript", None):
        client = TranscriptClient(Path(args.transcript))
        return {"default": client}
    if getattr(args, "clients", None):
        doc = json.loads(Path(args.clients).read_text(encoding="utf-8"))
        if "base_url" in doc:
            doc = {"default": doc}
        clients = {}
        for role, spec in doc.items():
            token = os.environ.get(spec.get("token_env", ""), None)
            clients[role] = HttpChatClient(
                base_url=spec["base_url"], model=spec["model"], token=token
            )
        return clients
    raise UsageError("a model client is required: pass --transcript or --clients")


def cmd_config(args) -> int:
    cfg = EngineConfig()
    text = cfg.dump()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_ground(args) -> int:
    config = _load_config(args.config)
    if args.tau is not None:
        config = replace(config, association=replace(config.association, tau=args.tau))

    labels = [l for l in (args.labels.split(",") if args.labels else []) if l]
    if not labels and not args.browse:
        raise UsageError("pass --labels or --browse")

    bundle = load_bundle(Path(args.bundle))
    if args.browse and not labels:
        clients = _make_clients(args)
        client = clients.get("browse", clients.get("default"))
        labels = browse_scene(bundle, client, config.limits.browse_sample, config.limits)
        if not labels:
            print("browse produced no candidate labels", file=sys.stderr)
            return EXIT_SESSION

    segmenter = FileStubSegmenter(Path(args.segmenter_stub)) if args.segmenter_stub else None
    result = ground_labels(bundle, labels, config, segmenter)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_instances(result.instances, out_dir / "instances.json")
    with open(out_dir / "audit.jsonl", "w", encoding="utf-8") as fh:
        for decision in result.decisions:
            fh.write(json.dumps(decision.to_json(), sort_keys=True) + "\n")
    if result.notes:
        (out_dir / "notes.txt").write_text("\n".join(result.notes) + "\n", encoding="utf-8")
    print(
        f"grounded {len(result.instances)} instance(s) for labels {labels} "
        f"-> {out_dir / 'instances.json'}"
    )
    return EXIT_OK


def cmd_retrieve(args) -> int:
    config = _load_config(args.config)
    k = args.k if args.k is not None else config.retrieval.k
    bundle = load_bundle(Path(args.bundle))
    memory = build_memory(bundle, config.retrieval.voxel)

    if args.instance_id is not None:
        instances_path = Path(args.instances) if args.instances else Path(args.bundle) / "instances.json"
        if not instances_path.is_file():
            raise BundleError(f"{instances_path}: instances file missing")
        records = read_instances(instances_path)
        record = next((r for r in records if r.id == args.instance_id), None)
        if record is None:
            raise BundleError(f"{instances_path}: no instance with id {args.instance_id}")
        if record.box is None:
            raise BundleError(f"instance {args.instance_id} carries no box")
        from .viewmem import region_from_box

        region = region_from_box(record.box.enclosing_aabb())
        cache = memory.retrieve(region, k, key=f"instance:{record.id}")
    else:
        if args.anchor is None or args.direction is None:
            raise UsageError("pass --instance-id or both --anchor and --dir")
        anchor = _parse_vec3(args.anchor)
        direction = _parse_vec3(args.direction)
        if float(np.hypot(direction[0], direction[1])) == 0.0:
            raise UsageError("direction needs a horizontal component")
        region = region_from_direction(anchor, direction)
        cache = memory.retrieve(region, k, key=region_key(region))

    out_dir = Path(args.out)
    views_dir = out_dir / "views"
    views_dir.mkdir(parents=True, exist_ok=True)
    manifest = cache.to_manifest()
    for entry in manifest["frames"]:
        src = memory.rgb_path_for(entry["index"])
        if src is not None:
            dst = views_dir / src.name
            shutil.copyfile(src, dst)
            entry["rgb"] = str(dst.relative_to(out_dir))
    (out_dir / "cache.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    print(f"retrieved {len(manifest['frames'])} view(s) -> {out_dir / 'cache.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cases = load_judged_jsonl(Path(args.judged))
        report = full_report(cases)
    except ValueError as exc:
        raise BundleError(str(exc)) from exc
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_orchestrate(args) -> int:
    config = _load_config(args.config)
    if args.max_steps is not None:
        config = replace(config, limits=replace(config.limits, max_steps=args.max_steps))
    bundle = load_bundle(Path(args.bundle))
    clients = _make_clients(args)
    executor = SubprocessExecutor(timeout_s=config.limits.executor_timeout_s)
    segmenter = FileStubSegmenter(Path(args.segmenter_stub)) if args.segmenter_stub else None
    ego = None
    if args.ego_pos and args.ego_dir:
        ego = Ego(position=_parse_vec3(args.ego_pos), facing=_parse_vec3(args.ego_dir))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_session(
            args.query, bundle, clients, executor, config, segmenter=segmenter, ego=ego
        )
    except SessionError as exc:
        write_trace(exc.trace, out_dir / "trace.jsonl")
        if exc.store is not None:
            (out_dir / "memory.json").write_text(dump_memory(exc.store), encoding="utf-8")
        print(f"session failed: {exc}", file=sys.stderr)
        return EXIT_SESSION

    write_trace(result.trace, out_dir / "trace.jsonl")
    (out_dir / "memory.json").write_text(dump_memory(result.memory), encoding="utf-8")
    (out_dir / "result.json").write_text(
        json.dumps({"answer": result.answer, "flags": result.flags}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    print(result.answer)
    if result.flags:
        print(f"flags: {', '.join(result.flags)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneground",
        description="3D scene grounding, view retrieval, QA metrics, and agent sessions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="emit or write the full default config")
    p.add_argument("action", choices=["init"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("ground", help="ground labels into 3D instances")
    p.add_argument("bundle")
    p.add_argument("--labels", default="", help="comma-separated open-vocabulary labels")
    p.add_argument("--browse", action="store_true", help="propose labels with a model client")
    p.add_argument("--config", default=None)
    p.add_argument("--tau", type=float, default=None, help="override the merge threshold")
    p.add_argument("--segmenter-stub", default=None, help="canned re-prompting responses")
    p.add_argument("--transcript", default=None)
    p.add_argument("--clients", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("retrieve", help="rank views covering an instance or region")
    p.add_argument("bundle")
    p.add_argument("--instance-id", type=int, default=None)
    p.add_argument("--instances", default=None, help="instances.json from `ground`")
    p.add_argument("--anchor", default=None, help="x,y,z")
    p.add_argument("--dir", dest="direction", default=None, help="dx,dy,dz")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score judged QA records")
    p.add_argument("judged", help="JSONL of judged cases")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("orchestrate", help="run a planning session for a query")
    p.add_argument("bundle")
    p.add_argument("--query", required=True)
    p.add_argument("--transcript", default=None, help="replay stub JSONL")
    p.add_argument("--clients", default=None, help="live client config JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--ego-pos", default=None)
    p.add_argument("--ego-dir", default=None)
    p.add_argument("--segmenter-stub", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_orchestrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BundleError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SessionError, ClientError) as exc:
        print(f"session error: {exc}", file=sys.stderr)
        return EXIT_SESSION


if __name__ == "__main__":
    sys.exit(main())
