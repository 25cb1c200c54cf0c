"""flexcodec: neural image compression with inference-time latent editing.

One trained scale-hyperprior model covers arbitrary rate-distortion targets,
spatial (ROI) bit allocation, and multi-distortion trade-offs by optimizing
the latent codes and quantization steps per image at encode time.  Streams
decode with the single base decoder.
"""

from .editing import (
    EditConfig,
    EditResult,
    LatentState,
    amortized_baseline,
    edit,
    edit_multidistortion,
    edit_once,
    edit_roi,
    init_state,
)
from .models import CodecModel
from .objectives import EditTarget, Metrics, psnr
from .quantization import DELTA_Z_CANDIDATES, QuantSteps, SgaConfig
from .training import TrainConfig, finetune_encoder, train_amortized

__version__ = "0.1.0"

__all__ = [
    "CodecModel",
    "DELTA_Z_CANDIDATES",
    "EditConfig",
    "EditResult",
    "EditTarget",
    "LatentState",
    "Metrics",
    "QuantSteps",
    "SgaConfig",
    "TrainConfig",
    "amortized_baseline",
    "edit",
    "edit_multidistortion",
    "edit_once",
    "edit_roi",
    "finetune_encoder",
    "init_state",
    "psnr",
    "train_amortized",
    "__version__",
]
