"""Turn a linear container filesystem into one of the three debloating shapes.

* no-sharing: one debloating layer over all image layers.
* fully-sharing: one debloating layer per image layer, shared fleet-wide by digest.
* semi-sharing: one debloating layer over the top ``n - b`` layers; the
  bottom ``b`` base-image layers stay in place untouched.

Conversion never mutates the caller's image layers: the layers that become
children are copies, so the originals keep their entries and digests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .errors import AlreadyConverted, InvalidBaseDepth
from .imageio import ensure_digest
from .layers import ContainerFs, Layer, Role


class Variant(str, enum.Enum):
    NO_SHARING = "no_sharing"
    FULLY_SHARING = "fully_sharing"
    SEMI_SHARING = "semi_sharing"

    @property
    def flag(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True)
class ConvertMode:
    variant: Variant
    base_depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.base_depth < 0:
            raise InvalidBaseDepth(f"base depth must be >= 0, got {self.base_depth}")
        if self.variant is not Variant.SEMI_SHARING and self.base_depth:
            raise InvalidBaseDepth("base depth only applies to semi-sharing")

    @classmethod
    def parse(cls, text: str, base_depth: int = 0) -> "ConvertMode":
        try:
            variant = Variant(text.strip().lower().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown mode {text!r}; expected one of "
                             f"{', '.join(v.flag for v in Variant)}") from None
        return cls(variant, base_depth if variant is Variant.SEMI_SHARING else 0)

    def unique_depth(self, n_layers: int) -> int:
        if self.variant is not Variant.SEMI_SHARING:
            return n_layers
        return n_layers - self.base_depth


Registry = dict  # digest (plus "#k" for repeats inside one image) -> debloating Layer


def _copy_image_layer(layer: Layer) -> Layer:
    return Layer(Role.IMAGE, dict(layer.entries), digest=layer.digest, blob=layer.blob)


def _check_linear(fs: ContainerFs) -> None:
    if fs.converted or any(l.role is not Role.IMAGE for l in fs.root_layers):
        raise AlreadyConverted(f"{fs.container_id} is already converted ({fs.mode or 'mixed roots'})")


def _converted(fs: ContainerFs, roots: list[Layer], variant: Variant, base_depth: int = 0) -> ContainerFs:
    return ContainerFs(fs.container_id, roots, fs.write_layer, variant.value, base_depth, fs.access_record)


def convert_no_sharing(fs: ContainerFs) -> ContainerFs:
    _check_linear(fs)
    debloat = Layer.debloating(_copy_image_layer(l) for l in fs.root_layers)
    return _converted(fs, [debloat], Variant.NO_SHARING)


def convert_semi_sharing(fs: ContainerFs, base_depth: int) -> ContainerFs:
    _check_linear(fs)
    n = len(fs.root_layers)
    if not 0 <= base_depth <= n - 1:
        raise InvalidBaseDepth(f"base depth {base_depth} needs at least {base_depth + 1} layers, "
                               f"image has {n}")
    unique, base = fs.root_layers[:n - base_depth], fs.root_layers[n - base_depth:]
    debloat = Layer.debloating(_copy_image_layer(l) for l in unique)
    return _converted(fs, [debloat, *base], Variant.SEMI_SHARING, base_depth)


def convert_fully_sharing(fleet: Iterable[ContainerFs], registry: Optional[Registry] = None) -> list[ContainerFs]:
    """Wrap every image layer in a debloating layer shared by all containers holding that layer.

    Wrappers are keyed by layer digest, so two containers loaded separately
    from the same image still share them.
    """
    fleet = list(fleet)
    for fs in fleet:
        _check_linear(fs)
    if registry is None:
        registry = {}
    out = []
    for fs in fleet:
        roots = []
        seen: dict[str, int] = {}
        for layer in fs.root_layers:
            digest = ensure_digest(layer)
            k = seen.get(digest, 0)
            seen[digest] = k + 1
            key = digest if k == 0 else f"{digest}#{k}"
            wrapper = registry.get(key)
            if wrapper is None:
                wrapper = registry[key] = Layer.debloating([_copy_image_layer(layer)])
            roots.append(wrapper)
        out.append(_converted(fs, roots, Variant.FULLY_SHARING))
    return out


def convert(fs_or_fleet: Union[ContainerFs, list[ContainerFs]], mode: ConvertMode):
    """Convert a single container or a fleet with ``mode``.

    Returns the same shape that was passed in.
    """
    single = isinstance(fs_or_fleet, ContainerFs)
    fleet = [fs_or_fleet] if single else list(fs_or_fleet)
    if mode.variant is Variant.FULLY_SHARING:
        result = convert_fully_sharing(fleet)
    elif mode.variant is Variant.SEMI_SHARING:
        result = [convert_semi_sharing(fs, mode.base_depth) for fs in fleet]
    else:
        result = [convert_no_sharing(fs) for fs in fleet]
    return result[0] if single else result
