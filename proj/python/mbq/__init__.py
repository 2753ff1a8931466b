"""Multi-bit quantization: quantizers, packed binary kernels and model tools."""

from ._mbq import *  # noqa: F401,F403
from ._mbq import FormatError, MultiBitCode, QuantizedMatrix

__all__ = [name for name in dir() if not name.startswith("_")]
