"""Path resolution over layered filesystems with debloating layers.

``read`` walks the write layer and then the root layers top to bottom.  A
debloating root is opened through ``dopen``, which serves the path from the
debloating layer itself if present and otherwise moves the entry up from the
first child layer that has it.  Whatever ends up inside a debloating layer is
therefore exactly what has been used.
"""

from __future__ import annotations

import logging
import posixpath
from dataclasses import dataclass, field
from typing import Optional

from .errors import IsDirectory, NotADirectory, NotFound, SymlinkLoop
from .layers import (AccessEvent, ContainerFs, FileEntry, Kind, Layer, Role, lock_for,
                     normpath, parent_dirs)

log = logging.getLogger(__name__)

MAX_SYMLINK_HOPS = 40
IMPLICIT = "implicit"  # hit marker for directories that exist only through descendants


@dataclass
class FileHandle:
    layer_id: str
    path: str
    entry: FileEntry = field(repr=False)
    offset: int = 0
    probes: int = 1
    migrated_from: Optional[str] = None

    def read(self, count: int = -1) -> bytes:
        data = self.entry.content
        end = len(data) if count is None or count < 0 else min(len(data), self.offset + count)
        chunk = data[self.offset:end]
        self.offset = end
        return chunk


def _ensure_dirs(dst: Layer, paths, src: Optional[Layer] = None) -> None:
    for d in paths:
        if d in dst:
            continue
        parent = src.get(d) if src is not None else None
        if parent is None or parent.kind is not Kind.DIRECTORY:
            parent = next((c.get(d) for c in dst.children
                           if c.get(d) is not None and c.get(d).kind is Kind.DIRECTORY), None)
        dst.put(FileEntry.directory(d, parent.mode_bits if parent else 0o755))


def _move(src: Layer, dst: Layer, path: str) -> FileEntry:
    entry = src.get(path)
    _ensure_dirs(dst, parent_dirs(path), src)
    src.pop(path)
    dst.put(entry)
    return entry


def _dopen(layer: Layer, path: str) -> tuple[Optional[FileHandle], int]:
    with lock_for(layer):
        entry = layer.get(path)
        if entry is not None:
            return FileHandle(layer.layer_id, path, entry, probes=1), 1
        probes = 1
        for child in layer.children:
            probes += 1
            if path in child:
                entry = _move(child, layer, path)
                log.debug("moved %s from %s to %s", path, child.layer_id, layer.layer_id)
                return FileHandle(layer.layer_id, path, entry, probes=probes,
                                  migrated_from=child.layer_id), probes
        return None, probes


def dopen(layer: Layer, path: str) -> FileHandle:
    """Open ``path`` in debloating layer ``layer``, migrating it up on first use."""
    if layer.role is not Role.DEBLOATING:
        raise ValueError(f"dopen needs a debloating layer, got {layer.role.value}")
    path = normpath(path)
    handle, _ = _dopen(layer, path)
    if handle is None:
        raise NotFound(path)
    return handle


def _resolve(fs: ContainerFs, path: str, op: str) -> tuple[Optional[FileHandle], AccessEvent]:
    """Locate ``path`` with migration; always returns the event to record."""
    probes = 1
    entry = fs.write_layer.get(path)
    if entry is not None:
        return (FileHandle(fs.write_layer.layer_id, path, entry),
                AccessEvent(op, path, fs.write_layer.layer_id, probes))
    for layer in fs.root_layers:
        if layer.role is Role.DEBLOATING:
            handle, n = _dopen(layer, path)
            probes += n
            if handle is not None:
                return handle, AccessEvent(op, path, layer.layer_id, probes, n, handle.migrated_from)
        else:
            probes += 1
            entry = layer.get(path)
            if entry is not None:
                return FileHandle(layer.layer_id, path, entry), AccessEvent(op, path, layer.layer_id, probes)
    return None, AccessEvent(op, path, None, probes)


def resolution_order(fs: ContainerFs) -> list[Layer]:
    """Every reachable layer in lookup order: write layer, then each root followed by its children."""
    return fs.reachable_layers()


def peek(fs: ContainerFs, path: str) -> Optional[tuple[Layer, FileEntry]]:
    """Resolve ``path`` without migrating anything."""
    for layer in resolution_order(fs):
        entry = layer.get(path)
        if entry is not None:
            return layer, entry
    return None


def flatten(fs: ContainerFs) -> dict[str, FileEntry]:
    """The merged view of ``fs`` as a single path map (no migration)."""
    merged: dict[str, FileEntry] = {}
    for layer in reversed(resolution_order(fs)):
        merged.update(layer.entries)
    return merged


def _has_descendants(fs: ContainerFs, path: str) -> Optional[Layer]:
    prefix = "/" if path == "/" else path + "/"
    for layer in resolution_order(fs):
        if any(p.startswith(prefix) for p in layer.entries):
            return layer
    return None


def _keep_implicit_dir(fs: ContainerFs, path: str) -> Optional[Layer]:
    """Record a directory that exists only through its descendants as used.

    Without an explicit entry in the debloating layer it would vanish on
    export whenever none of its contents were used.
    """
    holder = _has_descendants(fs, path)
    if holder is None:
        return None
    for root in fs.root_layers:
        if root is holder or holder in root.children:
            if root.role is Role.DEBLOATING:
                with lock_for(root):
                    _ensure_dirs(root, parent_dirs(path) + [path])
            return root
    return holder


def link_target_path(link: FileEntry) -> str:
    target = link.link_target
    if not target.startswith("/"):
        target = posixpath.join(posixpath.dirname(link.path), target)
    return normpath(target)


def read(fs: ContainerFs, path: str, count: int = -1) -> bytes:
    """Read up to ``count`` bytes (all when negative) of ``path``.

    Symlinks are followed; the link and its target are both marked used.
    """
    path = normpath(path)
    with lock_for(fs):
        for _ in range(MAX_SYMLINK_HOPS + 1):
            handle, event = _resolve(fs, path, "read")
            if handle is None and path == "/":
                raise IsDirectory(path)
            if handle is None and _has_descendants(fs, path) is not None:
                event.hit = IMPLICIT
                fs.access_record.append(event)
                raise IsDirectory(path)
            fs.access_record.append(event)
            if handle is None:
                raise NotFound(path)
            kind = handle.entry.kind
            if kind is Kind.DIRECTORY:
                raise IsDirectory(path)
            if kind is Kind.SYMLINK:
                path = link_target_path(handle.entry)
                continue
            return handle.read(count)
        raise SymlinkLoop(path)


def stat(fs: ContainerFs, path: str) -> FileEntry:
    """Metadata of ``path`` (symlinks are not followed). Counts as a use."""
    path = normpath(path)
    with lock_for(fs):
        if path == "/":
            fs.access_record.append(AccessEvent("stat", path, IMPLICIT, 1))
            return FileEntry.directory("/")
        handle, event = _resolve(fs, path, "stat")
        if handle is None:
            if _keep_implicit_dir(fs, path) is not None:
                event.hit = IMPLICIT
                fs.access_record.append(event)
                return FileEntry.directory(path)
            fs.access_record.append(event)
            raise NotFound(path)
        fs.access_record.append(event)
        return handle.entry


def list_dir(fs: ContainerFs, path: str) -> set[str]:
    """Names directly under ``path`` across every reachable layer.

    The directory itself (and any symlink leading to it) counts as used;
    the listed children do not.
    """
    path = normpath(path)
    with lock_for(fs):
        for _ in range(MAX_SYMLINK_HOPS + 1):
            if path == "/":
                event = AccessEvent("list", path, IMPLICIT, 1)
                break
            found = peek(fs, path)
            if found is not None and found[1].kind is Kind.REGULAR:
                fs.access_record.append(AccessEvent("list", path, found[0].layer_id, len(resolution_order(fs))))
                raise NotADirectory(path)
            handle, event = _resolve(fs, path, "list")
            if handle is None:
                if _keep_implicit_dir(fs, path) is None:
                    fs.access_record.append(event)
                    raise NotFound(path)
                event.hit = IMPLICIT
                break
            if handle.entry.kind is Kind.SYMLINK:
                fs.access_record.append(event)
                path = link_target_path(handle.entry)
                continue
            if handle.entry.kind is not Kind.DIRECTORY:
                fs.access_record.append(event)
                raise NotADirectory(path)
            break
        else:
            raise SymlinkLoop(path)

        prefix = "/" if path == "/" else path + "/"
        names = set()
        for layer in resolution_order(fs):
            for p in layer.entries:
                if p.startswith(prefix):
                    names.add(p[len(prefix):].split("/", 1)[0])
        fs.access_record.append(event)
        return names


def write(fs: ContainerFs, path: str, data: bytes) -> None:
    """Replace ``path``'s content in the container's write layer (copy-on-write)."""
    path = normpath(path)
    with lock_for(fs):
        found = peek(fs, path)
        if (found is not None and found[1].kind is Kind.DIRECTORY) or \
                (found is None and _has_descendants(fs, path) is not None):
            raise IsDirectory(path)
        mode = found[1].mode_bits if found is not None and found[1].kind is Kind.REGULAR else 0o644
        fs.write_layer.put(FileEntry.regular(path, data, mode))
        fs.access_record.append(AccessEvent("write", path, fs.write_layer.layer_id, 1))
