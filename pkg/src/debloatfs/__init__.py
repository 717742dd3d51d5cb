"""Debloat layered container images by profiling which files they use."""

__version__ = "0.1.0"

from .advisor import ModeReport, analyze, select_mode
from .convert import (ConvertMode, Variant, convert, convert_fully_sharing, convert_no_sharing,
                      convert_semi_sharing)
from .engine import dopen, list_dir, read, stat, write
from .errors import *  # noqa: F401,F403
from .imageio import ImageBundle, ImageManifest, load_image, store_image
from .layers import (MB, AccessEvent, ContainerFs, FileEntry, Kind, Layer, Role, SizeAccount,
                     account_sizes, layer_size)
from .pipeline import (AccessTrace, TraceEvent, VerifyReport, export, export_fleet, materialize,
                       profile, verify)
