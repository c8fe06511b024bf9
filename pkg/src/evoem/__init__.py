"""Evolutionary expectation maximization for discrete-latent generative
models, with zero-shot image denoising and inpainting pipelines."""

from .datasets import DataSet
from .errors import CheckpointError, ConfigError, EvoEmError, ParameterBlowupError
from .evolution import EaConfig
from .learning import EemConfig, FitResult, FreeEnergyTrace, eem_fit, init_params, init_state_sets
from .models.bsc import BscParams
from .models.noisyor import NoisyOrParams
from .models.sssc import SsscParams
from .variational import BinaryState, LatentStateSet, StateSetCollection, free_energy

__version__ = "0.1.0"

__all__ = [
    "BinaryState",
    "BscParams",
    "CheckpointError",
    "ConfigError",
    "DataSet",
    "EaConfig",
    "EemConfig",
    "EvoEmError",
    "FitResult",
    "FreeEnergyTrace",
    "LatentStateSet",
    "NoisyOrParams",
    "ParameterBlowupError",
    "SsscParams",
    "StateSetCollection",
    "eem_fit",
    "free_energy",
    "init_params",
    "init_state_sets",
]
