"""Wavelet-domain learned image codec: library and CLI."""

from .model import CodecModel, ModelConfig, paper_config, toy_config
from .pipeline import decode_image, encode_image
from .wavelet import WaveletKind

__version__ = "0.1.0"

__all__ = [
    "CodecModel",
    "ModelConfig",
    "WaveletKind",
    "decode_image",
    "encode_image",
    "paper_config",
    "toy_config",
    "__version__",
]
