"""Desk-scale referring-segmentation language model.

A small multimodal pipeline: dual vision encoders fused by cross attention,
a tiny causal language model over interleaved feature/text sequences, seg
tokens decoded into masks, combined text+mask training on synthetic scenes,
and an attribute-probing evaluation harness.
"""

import os as _os

# keep numeric kernels single-threaded: runs must be bit-reproducible and
# the matrices are far too small for threading to pay off
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .config import RunConfig
from .model import Model
from .store import ParamStore, grad_check
from .tensor import Tensor
from .vocab import Vocab

__all__ = ["Model", "ParamStore", "RunConfig", "Tensor", "Vocab", "grad_check"]
__version__ = "0.1.0"
