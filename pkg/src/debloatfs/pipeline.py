"""Profile, export and verify: the workflow around a converted filesystem.

Workloads are ``AccessTrace`` objects, ordered file-access events replayed
through the resolution engine.  On disk a trace is JSON lines::

    {"op": "read", "path": "/usr/bin/app", "expect": "sha256:..."}
    {"op": "write", "path": "/tmp/x", "data_b64": "aGk="}
"""

from __future__ import annotations

import base64
import json
import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from . import engine
from .errors import BadTrace, DebloatError, ExportBeforeConvert, IoError
from .imageio import ensure_digest
from .layers import AccessEvent, ContainerFs, Kind, Layer, Role, lock_for, normpath, sha256_digest

log = logging.getLogger(__name__)

OPS = ("read", "stat", "list", "write")


@dataclass(frozen=True)
class TraceEvent:
    op: str
    path: str
    payload: Optional[bytes] = field(default=None, repr=False)
    expect: Optional[str] = None

    def __post_init__(self):
        if self.op not in OPS:
            raise BadTrace(f"unknown op {self.op!r}")
        object.__setattr__(self, "path", normpath(self.path))
        if self.op == "write" and self.payload is None:
            raise BadTrace(f"write to {self.path} carries no data")

    def to_json(self) -> dict:
        doc = {"op": self.op, "path": self.path}
        if self.expect:
            doc["expect"] = self.expect
        if self.payload is not None:
            doc["data_b64"] = base64.b64encode(self.payload).decode()
        return doc

    @classmethod
    def from_json(cls, doc) -> "TraceEvent":
        if not isinstance(doc, dict) or "op" not in doc or "path" not in doc:
            raise BadTrace(f"trace event needs 'op' and 'path': {doc!r}")
        payload = None
        if "data_b64" in doc:
            try:
                payload = base64.b64decode(doc["data_b64"], validate=True)
            except ValueError as exc:
                raise BadTrace(f"bad data_b64 for {doc['path']}") from exc
        try:
            return cls(doc["op"], doc["path"], payload, doc.get("expect"))
        except ValueError as exc:
            raise BadTrace(str(exc)) from exc


@dataclass
class AccessTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    @classmethod
    def of(cls, *items) -> "AccessTrace":
        """Shorthand: ``AccessTrace.of(("read", "/a"), ("write", "/b", b"x"))``."""
        events = []
        for item in items:
            op, path, *rest = item
            events.append(TraceEvent(op, path, rest[0] if rest else None))
        return cls(events)

    @classmethod
    def reads(cls, *paths: str) -> "AccessTrace":
        return cls([TraceEvent("read", p) for p in paths])

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_json()) + "\n" for e in self.events)

    @classmethod
    def loads(cls, text: str) -> "AccessTrace":
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError as exc:
                raise BadTrace(f"line {lineno}: not JSON: {exc}") from exc
            events.append(TraceEvent.from_json(doc))
        return cls(events)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "AccessTrace":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise BadTrace(f"cannot read trace {path}: {exc}") from exc


@dataclass
class Failure:
    index: int
    path: str
    reason: str

    def to_json(self) -> dict:
        return {"index": self.index, "path": self.path, "reason": self.reason}


@dataclass
class ProfileRun:
    container_id: str
    record: list[AccessEvent]
    failures: list[Failure]

    @property
    def hits(self) -> int:
        return sum(1 for e in self.record if not e.miss)


@dataclass
class VerifyReport:
    passed: bool
    failures: list[Failure]

    def to_json(self) -> dict:
        return {"passed": self.passed, "failures": [f.to_json() for f in self.failures]}


def _replay(fs: ContainerFs, trace: AccessTrace) -> list[Failure]:
    failures = []
    for i, ev in enumerate(trace):
        try:
            if ev.op == "read":
                data = engine.read(fs, ev.path)
                if ev.expect and sha256_digest(data) != ev.expect:
                    failures.append(Failure(i, ev.path, "ContentMismatch"))
            elif ev.op == "stat":
                entry = engine.stat(fs, ev.path)
                if ev.expect and entry.content_digest != ev.expect:
                    failures.append(Failure(i, ev.path, "ContentMismatch"))
            elif ev.op == "list":
                engine.list_dir(fs, ev.path)
            else:
                engine.write(fs, ev.path, ev.payload)
        except DebloatError as exc:
            failures.append(Failure(i, ev.path, type(exc).__name__))
    return failures


def profile(target: Union[ContainerFs, Sequence[ContainerFs]],
            traces: Union[AccessTrace, Sequence[AccessTrace]]):
    """Replay workloads through converted filesystems.

    Used files migrate into debloating layers as a side effect.  Failed
    events are collected in the result instead of raising.  Accepts one
    filesystem and one trace, or a fleet with one trace per container
    (replayed in fleet order).
    """
    if isinstance(target, ContainerFs):
        return _profile_one(target, traces)
    fleet = list(target)
    traces = list(traces)
    if len(fleet) != len(traces):
        raise ValueError(f"{len(fleet)} containers but {len(traces)} traces")
    return [_profile_one(fs, t) for fs, t in zip(fleet, traces)]


def _profile_one(fs: ContainerFs, trace: AccessTrace) -> ProfileRun:
    with lock_for(fs):
        start = len(fs.access_record)
        failures = _replay(fs, trace)
        record = fs.access_record[start:]
    for f in failures:
        log.info("%s: event %d %s failed: %s", fs.container_id, f.index, f.path, f.reason)
    return ProfileRun(fs.container_id, record, failures)


def export(fs: ContainerFs) -> ContainerFs:
    """Drop the image layers, keeping only what profiling pulled up.

    Debloating layers are frozen in place into image layers, so containers
    that shared a debloating layer share the frozen result.  The write layer
    is discarded.
    """
    if not fs.converted:
        raise ExportBeforeConvert(f"{fs.container_id} has not been converted")
    roots = []
    for layer in fs.root_layers:
        with lock_for(layer):
            if layer.role is Role.DEBLOATING:
                layer.freeze()
                layer.blob = layer.digest = None
            ensure_digest(layer)
        roots.append(layer)
    return ContainerFs(fs.container_id, roots, Layer.write(), None, fs.base_depth)


def export_fleet(fleet: Iterable[ContainerFs]) -> list[ContainerFs]:
    return [export(fs) for fs in fleet]


def verify(fs: ContainerFs, trace: AccessTrace) -> VerifyReport:
    """Check that a debloated filesystem still serves ``trace``.

    Writes go to a throwaway write layer; the debloated layers are never touched.
    """
    if any(l.role is Role.DEBLOATING for l in fs.root_layers):
        raise ExportBeforeConvert(f"{fs.container_id} still has debloating layers; export it first")
    scratch = ContainerFs(fs.container_id, list(fs.root_layers), Layer.write(), None, fs.base_depth)
    failures = _replay(scratch, trace)
    return VerifyReport(not failures, failures)


def _write_tree(fs: ContainerFs, root: Path) -> None:
    merged = engine.flatten(fs)
    dir_modes = {}
    for path in sorted(merged):
        entry = merged[path]
        target = root / path.lstrip("/")
        blocked = next((p for p in _ancestors(path) if p in merged and merged[p].kind is not Kind.DIRECTORY), None)
        if blocked:
            log.warning("skipping %s: ancestor %s is not a directory", path, blocked)
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        if entry.kind is Kind.DIRECTORY:
            target.mkdir(exist_ok=True)
            dir_modes[target] = entry.mode_bits
        elif entry.kind is Kind.SYMLINK:
            os.symlink(entry.link_target, target)
        else:
            target.write_bytes(entry.content)
            os.chmod(target, entry.mode_bits & 0o7777)
    # deepest first so restrictive parents don't block their children
    for target in sorted(dir_modes, key=lambda p: len(p.parts), reverse=True):
        os.chmod(target, dir_modes[target] & 0o7777)


def _ancestors(path: str) -> list[str]:
    parts = path.strip("/").split("/")[:-1]
    return ["/" + "/".join(parts[:i]) for i in range(1, len(parts) + 1)]


def materialize(fs: ContainerFs, dir_path) -> None:
    """Write the merged view of ``fs`` to a host directory. Nothing migrates."""
    root = Path(dir_path)
    try:
        if root.exists() and any(root.iterdir()):
            raise IoError(f"{root} exists and is not empty")
        root.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{root.name}.", dir=root.parent))
        try:
            _write_tree(fs, tmp)
            os.chmod(tmp, 0o755)
            if root.exists():
                root.rmdir()
            os.replace(tmp, root)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
    except IoError:
        raise
    except OSError as exc:
        raise IoError(f"cannot materialize into {root}: {exc}") from exc


def record_command_trace(fs: ContainerFs, argv: Sequence[str], timeout: Optional[float] = None,
                         check: bool = False) -> AccessTrace:
    """Best-effort: run a host command against a materialized copy of ``fs`` and
    turn the files it read into a trace.

    ``{root}`` in ``argv`` is replaced by the tree's path; the command also
    runs with that directory as cwd.  Reads are detected through access
    times, so this finds nothing on ``noatime`` mounts and never sees
    metadata-only accesses.
    """
    with tempfile.TemporaryDirectory(prefix="debloatfs-run-") as tmp:
        root = Path(tmp) / "root"
        materialize(fs, root)
        files = {}
        for path, entry in engine.flatten(fs).items():
            host = root / path.lstrip("/")
            if entry.kind is Kind.REGULAR and host.is_file() and not host.is_symlink():
                # atime <= mtime makes relatime record the next read
                os.utime(host, ns=(0, 1_000_000_000))
                files[path] = host
        cmd = [a.replace("{root}", str(root)) for a in argv]
        proc = subprocess.run(cmd, cwd=root, timeout=timeout, env={**os.environ, "DEBLOATFS_ROOT": str(root)})
        if check and proc.returncode != 0:
            raise subprocess.CalledProcessError(proc.returncode, cmd)
        used = {p for p, host in files.items() if os.stat(host).st_atime_ns > 1_000_000_000}
        links = {p for p, e in engine.flatten(fs).items()
                 if e.kind is Kind.SYMLINK and engine.link_target_path(e) in used}
    return AccessTrace.reads(*sorted(used | links))
