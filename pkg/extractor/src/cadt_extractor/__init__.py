"""Image-to-embedding extraction tool feeding the CADT tensor format."""

from .backbone import (
    DEFAULT_MODEL_ID,
    EMBED_DIM,
    GRID_SIDE,
    INPUT_SIZE,
    ExtractError,
    ExtractorConfig,
    embed_batch,
    load_backbone,
    preprocess,
)
from .extract import extract_category, extract_dataset, find_categories
from .tensor_file import TensorFileError, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MODEL_ID",
    "EMBED_DIM",
    "GRID_SIDE",
    "INPUT_SIZE",
    "ExtractError",
    "ExtractorConfig",
    "TensorFileError",
    "embed_batch",
    "extract_category",
    "extract_dataset",
    "find_categories",
    "load_backbone",
    "preprocess",
    "read_tensor",
    "write_tensor",
    "__version__",
]
