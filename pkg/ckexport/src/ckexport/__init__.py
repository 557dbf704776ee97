"""Checkpoint-to-fixture exporter for conv compression workflows."""

from .exporter import (
    ExportSpec,
    LayerNotFoundError,
    NotAConvError,
    UnsupportedConvError,
    export,
    load_checkpoint,
    resolve_conv,
)
from .tensorfile import TensorFileError, read_tensor, write_tensor
from .toy import ToyConvNet, save_toy_checkpoint

__version__ = "0.1.0"
