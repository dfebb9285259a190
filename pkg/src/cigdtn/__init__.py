"""Spectrogram denoising with a two-stream diffusion transformer.

The network, its gradients and the training loop all run on a small
reverse-mode tape over numpy arrays (:mod:`cigdtn.numerics`).
"""

from .attention import DiffusionConfig, SparsePattern, build_pattern, diffused_attention, tiled_attention
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .config import ConfigError, RunConfig
from .data import Pair, load_pairs, synth_dataset
from .dsp import AudioClip, ComplexSpectrogram, StftConfig, istft, mix_at_snr, resize_from_model, resize_to_model, stft
from .evaluation import EvalReport, denoise, evaluate, sdr
from .model import Denoiser, ModelConfig, init_params
from .numerics import GradTape, NonFiniteError, ShapeError, Tensor, backward, grad_check
from .training import LossBreakdown, TrainConfig, train
from .wavio import WavError, wav_read, wav_write

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "CheckpointError", "ComplexSpectrogram", "ConfigError", "Denoiser", "DiffusionConfig",
    "EvalReport", "GradTape", "LossBreakdown", "ModelConfig", "NonFiniteError", "Pair", "RunConfig",
    "ShapeError", "SparsePattern", "StftConfig", "Tensor", "TrainConfig", "WavError", "backward",
    "build_pattern", "checkpoint_load", "checkpoint_save", "denoise", "diffused_attention", "evaluate",
    "grad_check", "init_params", "istft", "load_pairs", "mix_at_snr", "resize_from_model",
    "resize_to_model", "sdr", "stft", "synth_dataset", "tiled_attention", "train", "wav_read", "wav_write",
]
