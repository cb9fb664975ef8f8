"""Feature extraction bridge: pretrained backbones in, GZFT feature files out."""

__version__ = "0.1.0"

from .extract import AdapterError, ExtractorSpec, extract

__all__ = ["AdapterError", "ExtractorSpec", "extract"]
