"""HR-CNN: a heterogeneous residual CNN that decodes quantized JPEG DCT
coefficients (k-space) straight to pixels and suppresses blocking artifacts.

The modules build on each other in this order: ``tensor`` (convolution
primitives and their adjoints), ``kspace`` (the baseline JPEG luminance
codec), ``model`` (architecture, forward and backward), ``trainer``,
``metrics`` and ``cli``.
"""

from .kspace import GrayImage, KSpaceImage, decode_baseline, encode, quant_table_for_quality
from .model import ModelParams, forward, init_params, param_count

__version__ = "0.1.0"

__all__ = [
    "GrayImage",
    "KSpaceImage",
    "ModelParams",
    "decode_baseline",
    "encode",
    "forward",
    "init_params",
    "param_count",
    "quant_table_for_quality",
]
