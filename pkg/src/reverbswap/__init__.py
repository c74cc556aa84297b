"""reverbswap: swap the musical reverb factor between two mixed vocal tracks.

Submodules:
    audio      WAV I/O, resampling, segmentation
    stft       fixed-configuration analysis/synthesis
    reverb     parametric FDN reverb engine and preset sampling
    databus    reverb-bus mixing and training-quad assembly
    model      dual-input disentangling U-Net and discriminator (torch)
    training   losses, optimization loop, checkpointing
    metrics    SI-SDR, STOI, SRMR and the evaluation protocols
    inference  segmented checkpoint-driven conversion
    signals    synthetic vocal-like test material
    cli        command-line entry points
"""

from .audio import CANONICAL_RATE, Waveform, load_wav, resample, save_wav, segment
from .databus import GAMMA_GRID, TrainingQuad, build_quad, mix_bus
from .metrics import si_sdr, srmr, stoi
from .reverb import ReverbPreset, impulse_response, render_wet, sample_preset
from .stft import MagnitudeSpectrogram, PhaseSpectrogram, StftConfig, istft, stft

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_RATE",
    "GAMMA_GRID",
    "MagnitudeSpectrogram",
    "PhaseSpectrogram",
    "ReverbPreset",
    "StftConfig",
    "TrainingQuad",
    "Waveform",
    "build_quad",
    "impulse_response",
    "istft",
    "load_wav",
    "mix_bus",
    "render_wet",
    "resample",
    "sample_preset",
    "save_wav",
    "segment",
    "si_sdr",
    "srmr",
    "stft",
    "stoi",
]
