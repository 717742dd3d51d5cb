"""In-memory model of layered container filesystems and their size accounting."""

from __future__ import annotations

import enum
import hashlib
import posixpath
import threading
import uuid
import weakref
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

MB = 1 << 20


class Kind(str, enum.Enum):
    REGULAR = "regular"
    DIRECTORY = "directory"
    SYMLINK = "symlink"


class Role(str, enum.Enum):
    IMAGE = "image"
    DEBLOATING = "debloating"
    WRITE = "write"


def normpath(path: str) -> str:
    """Normalize ``path`` to an absolute, ``/``-separated path without ``.``/``..``."""
    if not isinstance(path, str) or not path:
        raise ValueError(f"invalid path: {path!r}")
    norm = posixpath.normpath("/" + path.lstrip("/"))
    # posixpath keeps a leading '//' intact
    if norm.startswith("//"):
        norm = "/" + norm.lstrip("/")
    return norm


def is_normalized(path: str) -> bool:
    return isinstance(path, str) and path.startswith("/") and normpath(path) == path


def parent_dirs(path: str) -> list[str]:
    """Proper ancestors of ``path``, outermost first, excluding ``/``."""
    parts = path.strip("/").split("/")[:-1]
    out = []
    for i in range(1, len(parts) + 1):
        out.append("/" + "/".join(parts[:i]))
    return out


def sha256_digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class FileEntry:
    path: str
    kind: Kind
    size: int = 0
    content_digest: Optional[str] = None
    mode_bits: int = 0o644
    link_target: Optional[str] = None
    content: bytes = field(default=b"", repr=False, compare=False)

    def __post_init__(self):
        if not is_normalized(self.path):
            raise ValueError(f"path is not normalized: {self.path!r}")
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.path == "/" and kind is not Kind.DIRECTORY:
            raise ValueError("/ can only be a directory")
        if kind is Kind.REGULAR:
            if self.size != len(self.content):
                raise ValueError(f"{self.path}: size {self.size} != content length {len(self.content)}")
            if self.content_digest != sha256_digest(self.content):
                raise ValueError(f"{self.path}: content digest does not match content")
        elif kind is Kind.DIRECTORY:
            if self.size != 0 or self.content:
                raise ValueError(f"{self.path}: directories carry no content")
        else:
            if self.link_target is None or self.size != len(self.link_target.encode()):
                raise ValueError(f"{self.path}: symlink size must equal target length")

    @classmethod
    def regular(cls, path: str, data: bytes, mode_bits: int = 0o644) -> "FileEntry":
        data = bytes(data)
        return cls(normpath(path), Kind.REGULAR, len(data), sha256_digest(data), mode_bits, None, data)

    @classmethod
    def directory(cls, path: str, mode_bits: int = 0o755) -> "FileEntry":
        return cls(normpath(path), Kind.DIRECTORY, 0, None, mode_bits)

    @classmethod
    def symlink(cls, path: str, target: str, mode_bits: int = 0o777) -> "FileEntry":
        return cls(normpath(path), Kind.SYMLINK, len(target.encode()), None, mode_bits, target)


def new_layer_id(role: Role) -> str:
    return f"{Role(role).value[0]}-{uuid.uuid4().hex[:16]}"


@dataclass(eq=False)
class Layer:
    """A set of file entries.

    Debloating layers additionally own ``children``: image layers ordered
    top to bottom whose entries migrate up into the debloating layer when
    first accessed.
    """

    role: Role
    entries: dict[str, FileEntry] = field(default_factory=dict)
    children: list["Layer"] = field(default_factory=list)
    layer_id: str = ""
    digest: Optional[str] = None
    # exact blob bytes this layer was loaded from / last serialized to
    blob: Optional[bytes] = field(default=None, repr=False)

    def __post_init__(self):
        self.role = Role(self.role)
        if not self.layer_id:
            self.layer_id = new_layer_id(self.role)
        if self.children and self.role is not Role.DEBLOATING:
            raise ValueError(f"only debloating layers have children (role={self.role.value})")
        for child in self.children:
            if child.role is not Role.IMAGE:
                raise ValueError("children of a debloating layer must be image layers")
        if isinstance(self.entries, (list, tuple)):
            self.entries = {e.path: e for e in self.entries}

    @classmethod
    def image(cls, entries: Iterable[FileEntry] = (), **kw) -> "Layer":
        return cls(Role.IMAGE, {e.path: e for e in entries}, **kw)

    @classmethod
    def debloating(cls, children: Iterable["Layer"] = ()) -> "Layer":
        return cls(Role.DEBLOATING, {}, list(children))

    @classmethod
    def write(cls) -> "Layer":
        return cls(Role.WRITE)

    def __contains__(self, path: str) -> bool:
        return path in self.entries

    def get(self, path: str) -> Optional[FileEntry]:
        return self.entries.get(path)

    def put(self, entry: FileEntry) -> None:
        self.entries[entry.path] = entry
        self._touched()

    def pop(self, path: str) -> FileEntry:
        entry = self.entries.pop(path)
        self._touched()
        return entry

    def _touched(self):
        self.digest = None
        self.blob = None

    def freeze(self) -> None:
        """Turn a profiled debloating layer into an ordinary image layer."""
        self.role = Role.IMAGE
        self.children = []

    def walk(self) -> Iterator["Layer"]:
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(eq=False)
class AccessEvent:
    op: str
    path: str
    hit: Optional[str]  # layer id, or None for a miss
    probe_count: int
    # probes spent inside the serving debloating layer (1 = found in the layer itself)
    serving_probes: Optional[int] = None
    migrated_from: Optional[str] = None

    @property
    def miss(self) -> bool:
        return self.hit is None

    def to_dict(self) -> dict:
        d = {"op": self.op, "path": self.path, "hit": self.hit or "MISS",
             "probe_count": self.probe_count}
        if self.serving_probes is not None:
            d["serving_probes"] = self.serving_probes
        if self.migrated_from is not None:
            d["migrated_from"] = self.migrated_from
        return d


@dataclass(eq=False)
class ContainerFs:
    container_id: str
    root_layers: list[Layer]
    write_layer: Layer = field(default_factory=Layer.write)
    mode: Optional[str] = None  # conversion mode, None while still linear
    base_depth: int = 0
    access_record: list[AccessEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.write_layer.role is not Role.WRITE:
            raise ValueError("write_layer must have role=write")
        seen = set()
        for layer in self.reachable_layers():
            if id(layer) in seen:
                raise ValueError(f"layer {layer.layer_id} reachable twice in {self.container_id}")
            seen.add(id(layer))

    def reachable_layers(self) -> list[Layer]:
        out = [self.write_layer]
        for root in self.root_layers:
            out.extend(root.walk())
        return out

    @property
    def converted(self) -> bool:
        return self.mode is not None


_locks: "weakref.WeakKeyDictionary[object, threading.RLock]" = weakref.WeakKeyDictionary()
_locks_guard = threading.Lock()


def lock_for(obj) -> threading.RLock:
    """Per-object reentrant lock used to serialize mutations."""
    with _locks_guard:
        lock = _locks.get(obj)
        if lock is None:
            lock = _locks[obj] = threading.RLock()
        return lock


def layer_size(layer: Layer) -> int:
    return sum(e.size for e in layer.entries.values())


def regular_size(layer: Layer) -> int:
    return sum(e.size for e in layer.entries.values() if e.kind is Kind.REGULAR)


@dataclass
class SizeAccount:
    per_container: dict[str, int]
    total: int


def account_sizes(containers: Iterable[ContainerFs]) -> SizeAccount:
    """Per-container and fleet-wide bytes of regular files.

    A layer reachable from several containers counts once in ``total``.
    """
    per: dict[str, int] = {}
    counted: dict[str, int] = {}
    for fs in containers:
        n = 0
        for layer in fs.reachable_layers():
            size = regular_size(layer)
            n += size
            counted.setdefault(layer.layer_id, size)
        per[fs.container_id] = n
    return SizeAccount(per, sum(counted.values()))
