from .n2v import N2vConfig, UNet, UNetConfig, n2v_denoise, n2v_train
from .tv import TvConfig, tv_denoise

__all__ = ["N2vConfig", "TvConfig", "UNet", "UNetConfig", "n2v_denoise", "n2v_train", "tv_denoise"]
