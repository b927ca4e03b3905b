"""Probabilistic self-learning (PSL) denoising for low-dose CT."""
from .network import NetworkConfig, PSLNet, PredictorOutput, init_params, softplus
from .objective import LossConfig, denoise, posterior_combine, psl_loss
from .phases import Phase, decompose, pad_to_even, recompose

__all__ = [
    "LossConfig", "NetworkConfig", "PSLNet", "Phase", "PredictorOutput", "decompose", "denoise",
    "init_params", "pad_to_even", "posterior_combine", "psl_loss", "recompose", "softplus",
]
__version__ = "0.1.0"
