"""CAGR layers and AGI-Net on a small numpy autodiff core.

Submodules: ``tensor`` / ``functional`` (tape autodiff), ``roll`` (kernel
rolling), ``cagr`` (the layer), ``network`` (ResUnet / AGI-Net), ``optim``,
``container`` (TNSR files), ``synthdata``, ``metrics``, ``train``,
``gradcheck`` and ``cli``.
"""

from .cagr import CagrConfig, cagr_forward, init_cagr_params
from .network import build_agi_net, build_model, build_resunet, count_flops, count_params, forward
from .tensor import NonFiniteError, ShapeError, Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "CagrConfig", "cagr_forward", "init_cagr_params",
    "build_agi_net", "build_model", "build_resunet", "count_flops", "count_params", "forward",
    "NonFiniteError", "ShapeError", "Tape", "Tensor", "backward",
]
