"""On-disk state between CLI steps.

A state directory holds every reachable layer of a converted fleet as a
content-addressed tar blob plus ``state.json`` describing the layer tree.
``state.json`` is replaced atomically, so an interrupted command leaves the
previous state intact.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock, Timeout

from .errors import CorruptBlob, MissingBlob, StateError
from .imageio import layer_blob, parse_layer, serialize_layer
from .layers import ContainerFs, Layer, Role, sha256_digest

STATE_FILE = "state.json"
VERSION = 1


@dataclass
class StateMeta:
    mode: str
    base_depth: int = 0
    original_sizes: dict[str, int] = field(default_factory=dict)
    original_total: int = 0
    image_names: dict[str, str] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)


def is_state_dir(path) -> bool:
    return (Path(path) / STATE_FILE).is_file()


@contextmanager
def locked(state_dir):
    """Hold the state directory's lock; fail fast if another command has it."""
    root = Path(state_dir)
    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StateError(f"{root} is in use by another command") from None
    try:
        yield root
    finally:
        lock.release()


def _blob_file(root: Path, digest: str) -> Path:
    return root / "blobs" / "sha256" / digest.split(":", 1)[1]


def save_state(state_dir, fleet: list[ContainerFs], meta: StateMeta) -> None:
    root = Path(state_dir)
    (root / "blobs" / "sha256").mkdir(parents=True, exist_ok=True)
    layers: dict[str, dict] = {}
    seen: dict[str, Layer] = {}
    for fs in fleet:
        for layer in fs.reachable_layers():
            prev = seen.get(layer.layer_id)
            if prev is not None:
                if prev is not layer:
                    raise StateError(f"two different layers share id {layer.layer_id}")
                continue
            seen[layer.layer_id] = layer
            blob = layer_blob(layer) if layer.role is Role.IMAGE else serialize_layer(layer.entries.values())
            digest = sha256_digest(blob)
            path = _blob_file(root, digest)
            if not path.exists():
                path.write_bytes(blob)
            layers[layer.layer_id] = {"role": layer.role.value, "blob": digest,
                                      "children": [c.layer_id for c in layer.children]}
    doc = {
        "version": VERSION,
        "mode": meta.mode,
        "base_depth": meta.base_depth,
        "original_sizes": meta.original_sizes,
        "original_total": meta.original_total,
        "layers": layers,
        "containers": [{"container_id": fs.container_id,
                        "image_name": meta.image_names.get(fs.container_id, fs.container_id),
                        "mode": fs.mode,
                        "base_depth": fs.base_depth,
                        "roots": [l.layer_id for l in fs.root_layers],
                        "write_layer": fs.write_layer.layer_id} for fs in fleet],
        "events": meta.events,
    }
    fd, tmp = tempfile.mkstemp(prefix=".state.", dir=root)
    with os.fdopen(fd, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    os.replace(tmp, root / STATE_FILE)
    live = {d["blob"] for d in layers.values()}
    for blob_path in (root / "blobs" / "sha256").iterdir():
        if "sha256:" + blob_path.name not in live:
            blob_path.unlink()


def load_state(state_dir) -> tuple[list[ContainerFs], StateMeta]:
    root = Path(state_dir)
    try:
        doc = json.loads((root / STATE_FILE).read_text())
    except FileNotFoundError:
        raise StateError(f"{root} holds no converted state; run convert first") from None
    except (OSError, ValueError) as exc:
        raise StateError(f"unreadable state in {root}: {exc}") from exc
    if doc.get("version") != VERSION:
        raise StateError(f"unsupported state version {doc.get('version')!r}")

    specs = doc["layers"]
    built: dict[str, Layer] = {}

    def build(layer_id: str) -> Layer:
        if layer_id in built:
            return built[layer_id]
        spec = specs[layer_id]
        digest = spec["blob"]
        try:
            blob = _blob_file(root, digest).read_bytes()
        except FileNotFoundError:
            raise MissingBlob(digest) from None
        if sha256_digest(blob) != digest:
            raise CorruptBlob(digest)
        role = Role(spec["role"])
        children = [build(c) for c in spec["children"]]
        layer = Layer(role, parse_layer(blob, digest), children, layer_id)
        if role is Role.IMAGE:
            layer.digest, layer.blob = digest, blob
        built[layer_id] = layer
        return layer

    fleet = []
    names = {}
    for c in doc["containers"]:
        fs = ContainerFs(c["container_id"], [build(i) for i in c["roots"]], build(c["write_layer"]),
                         c["mode"], c["base_depth"])
        fleet.append(fs)
        names[fs.container_id] = c["image_name"]
    meta = StateMeta(doc["mode"], doc["base_depth"], doc["original_sizes"], doc["original_total"],
                     names, doc.get("events", []))
    return fleet, meta
