from .model import (
    Activation,
    BlockParams,
    ModelConfig,
    ModelParams,
    ScanParams,
    StaleActivationError,
    backbone_backward,
    backbone_forward,
    block_backward,
    block_forward,
    init_params,
    preset,
)
from .scan import selective_scan, selective_scan_backward

__all__ = [
    "Activation", "BlockParams", "ModelConfig", "ModelParams", "ScanParams",
    "StaleActivationError", "backbone_backward", "backbone_forward", "block_backward",
    "block_forward", "init_params", "preset", "selective_scan", "selective_scan_backward",
]
