"""On-disk image bundles: ``manifest.json`` plus content-addressed tar blobs.

Layout::

    <dir>/manifest.json          {"image_name", "layers": [bottom..top], "base_depth"}
    <dir>/blobs/sha256/<hex>     one uncompressed tar per layer

Layer tars are canonical (path-sorted, zero mtimes, uid/gid 0) so equal
entry sets always hash to the same digest.
"""

from __future__ import annotations

import io
import json
import logging
import os
import re
import shutil
import tarfile
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import BadManifest, CorruptBlob, IoError, MissingBlob
from .layers import ContainerFs, FileEntry, Kind, Layer, Role, normpath, sha256_digest

log = logging.getLogger(__name__)

_DIGEST_RE = re.compile(r"^sha256:[0-9a-f]{64}$")


@dataclass
class ImageManifest:
    image_name: str
    layer_digests: list[str]  # bottom -> top
    base_depth: int = 0

    def __post_init__(self):
        if not 0 <= self.base_depth <= len(self.layer_digests):
            raise BadManifest(f"base_depth {self.base_depth} out of range for "
                              f"{len(self.layer_digests)} layers")

    def to_json(self) -> dict:
        return {"image_name": self.image_name, "layers": list(self.layer_digests),
                "base_depth": self.base_depth}

    @classmethod
    def from_json(cls, doc) -> "ImageManifest":
        if not isinstance(doc, dict):
            raise BadManifest("manifest must be a JSON object")
        name = doc.get("image_name")
        layers = doc.get("layers")
        base_depth = doc.get("base_depth", 0)
        if not isinstance(name, str) or not name:
            raise BadManifest("image_name must be a non-empty string")
        if not isinstance(layers, list) or not all(isinstance(d, str) and _DIGEST_RE.match(d) for d in layers):
            raise BadManifest("layers must be a list of sha256:<hex> digests")
        if not isinstance(base_depth, int) or isinstance(base_depth, bool):
            raise BadManifest("base_depth must be an integer")
        return cls(name, layers, base_depth)


@dataclass
class ImageBundle:
    manifest: ImageManifest
    blobs: dict[str, bytes] = field(default_factory=dict, repr=False)


def _tarinfo(name: str, entry: FileEntry) -> tarfile.TarInfo:
    info = tarfile.TarInfo(name)
    info.mtime = 0
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    info.mode = entry.mode_bits & 0o7777
    if entry.kind is Kind.DIRECTORY:
        info.type = tarfile.DIRTYPE
    elif entry.kind is Kind.SYMLINK:
        info.type = tarfile.SYMTYPE
        info.linkname = entry.link_target
    else:
        info.type = tarfile.REGTYPE
        info.size = entry.size
    return info


def serialize_layer(entries) -> bytes:
    """Canonical tar of an entry collection."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for entry in sorted(entries, key=lambda e: e.path):
            name = entry.path.lstrip("/")
            info = _tarinfo(name, entry)
            if entry.kind is Kind.REGULAR:
                tar.addfile(info, io.BytesIO(entry.content))
            else:
                tar.addfile(info)
    return buf.getvalue()


def parse_layer(blob: bytes, digest: str = "?") -> list[FileEntry]:
    entries = []
    try:
        with tarfile.open(fileobj=io.BytesIO(blob), mode="r:") as tar:
            for info in tar:
                path = normpath(info.name)
                if path == "/":
                    continue
                mode = info.mode & 0o7777
                if info.isreg():
                    data = tar.extractfile(info).read()
                    entries.append(FileEntry.regular(path, data, mode))
                elif info.isdir():
                    entries.append(FileEntry.directory(path, mode))
                elif info.issym():
                    entries.append(FileEntry.symlink(path, info.linkname, mode))
                else:
                    raise CorruptBlob(digest, f"unsupported tar member type for {path}")
    except tarfile.TarError as exc:
        raise CorruptBlob(digest, f"unreadable tar: {exc}") from exc
    paths = [e.path for e in entries]
    if len(paths) != len(set(paths)):
        raise CorruptBlob(digest, "duplicate paths in layer")
    return entries


def layer_blob(layer: Layer) -> bytes:
    """Blob bytes for ``layer``; reuses the original bytes if it was never mutated."""
    if layer.blob is None:
        layer.blob = serialize_layer(layer.entries.values())
        layer.digest = sha256_digest(layer.blob)
    return layer.blob


def ensure_digest(layer: Layer) -> str:
    if layer.digest is None or layer.blob is None:
        layer_blob(layer)
    return layer.digest


def image_layer_id(digest: str) -> str:
    # unmodified image layers are identified by content so equal layers count once
    return "i-" + digest.split(":", 1)[1][:16]


def _blob_path(root: Path, digest: str) -> Path:
    return root / "blobs" / "sha256" / digest.split(":", 1)[1]


def read_manifest(dir_path) -> ImageManifest:
    root = Path(dir_path)
    try:
        doc = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise BadManifest(f"{root}: no manifest.json") from exc
    except (OSError, ValueError) as exc:
        raise BadManifest(f"{root}: unreadable manifest.json: {exc}") from exc
    return ImageManifest.from_json(doc)


def load_image(dir_path, container_id: Optional[str] = None) -> tuple[ImageBundle, ContainerFs]:
    """Load an image directory, verifying every blob digest."""
    root = Path(dir_path)
    manifest = read_manifest(root)
    bundle = ImageBundle(manifest)
    layers_bottom_up = []
    for digest in manifest.layer_digests:
        path = _blob_path(root, digest)
        try:
            blob = path.read_bytes()
        except FileNotFoundError as exc:
            raise MissingBlob(digest) from exc
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        if sha256_digest(blob) != digest:
            raise CorruptBlob(digest)
        bundle.blobs[digest] = blob
        layer = Layer.image(parse_layer(blob, digest), layer_id=image_layer_id(digest),
                            digest=digest, blob=blob)
        layers_bottom_up.append(layer)
    fs = ContainerFs(container_id or manifest.image_name, layers_bottom_up[::-1])
    fs.base_depth = manifest.base_depth
    log.debug("loaded %s: %d layers", manifest.image_name, len(layers_bottom_up))
    return bundle, fs


def _write_bundle(root: Path, manifest: ImageManifest, blobs: dict[str, bytes]) -> None:
    blob_dir = root / "blobs" / "sha256"
    blob_dir.mkdir(parents=True, exist_ok=True)
    for digest, blob in blobs.items():
        target = _blob_path(root, digest)
        if not target.exists():
            target.write_bytes(blob)
    (root / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


def store_image(fs: ContainerFs, dir_path, image_name: Optional[str] = None,
                base_depth: Optional[int] = None) -> ImageManifest:
    """Write ``fs``'s root layers as an image directory.

    The output is staged in a sibling temp directory and renamed into place,
    so a failure never leaves a partial image behind.
    """
    for layer in fs.root_layers:
        if layer.role is not Role.IMAGE:
            raise ValueError(f"cannot store {layer.role.value} layer {layer.layer_id}; export first")
    blobs = {}
    digests = []
    for layer in reversed(fs.root_layers):
        blob = layer_blob(layer)
        blobs[layer.digest] = blob
        digests.append(layer.digest)
    if base_depth is None:
        base_depth = fs.base_depth if fs.base_depth <= len(digests) else 0
    manifest = ImageManifest(image_name or fs.container_id, digests, base_depth)

    root = Path(dir_path)
    try:
        root.parent.mkdir(parents=True, exist_ok=True)
        if root.exists() and any(root.iterdir()):
            raise IoError(f"output directory {root} is not empty")
        tmp = Path(tempfile.mkdtemp(prefix=f".{root.name}.", dir=root.parent))
        try:
            _write_bundle(tmp, manifest, blobs)
            if root.exists():
                root.rmdir()
            os.replace(tmp, root)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
    except IoError:
        raise
    except OSError as exc:
        raise IoError(f"cannot write image to {root}: {exc}") from exc
    return manifest


def image_from_layers(name: str, layers_bottom_up, base_depth: int = 0) -> ContainerFs:
    """Build a linear ContainerFs from entry lists given bottom to top."""
    layers = [l if isinstance(l, Layer) else Layer.image(l) for l in layers_bottom_up]
    for layer in layers:
        layer.layer_id = image_layer_id(ensure_digest(layer))
    fs = ContainerFs(name, layers[::-1])
    fs.base_depth = base_depth
    return fs
