"""The spectral enhancement network and its differentiable signal chain."""

from .config import PAPER_CONFIG, TOY_CONFIG, ModelConfig
from .network import ForwardResult, Plant, forward, init_params, randomize_zero_params, spectral_net
from .ssm import selective_scan, selective_scan_reference

__all__ = [
    "PAPER_CONFIG", "TOY_CONFIG", "ForwardResult", "ModelConfig", "Plant", "forward", "init_params",
    "randomize_zero_params", "selective_scan", "selective_scan_reference", "spectral_net",
]
