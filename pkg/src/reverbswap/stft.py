"""Fixed-configuration STFT analysis/synthesis with magnitude/phase separation.

Analysis uses a 2048-sample Hamming window with 75% overlap (hop 512) and a
2048-point FFT. Frames are centered: the signal is reflect-padded by half a
window so the frame count is exactly ceil(len / hop), which makes the
canonical 327,680-sample clip come out at 640 frames.

The magnitude plane is cropped from 1025 to 1024 bins (Nyquist dropped) so
five stride-2 encoder stages divide the frequency axis evenly; the phase
plane keeps all 1025 bins for reconstruction. Synthesis restores the missing
Nyquist magnitude as zero and uses weighted overlap-add with squared-window
normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .audio import CANONICAL_RATE, Waveform


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 2048
    hop: int = 512
    fft_size: int = 2048
    window: str = "hamming"
    center_pad: bool = True

    def __post_init__(self):
        if self.hop != self.win_len // 4:
            raise ValueError(f"hop must be win_len/4 (75% overlap), got {self.hop} for win_len {self.win_len}")
        if self.fft_size < self.win_len:
            raise ValueError("fft_size must be >= win_len")

    @property
    def n_bins_full(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def n_bins_cropped(self) -> int:
        return self.fft_size // 2

    def frame_count(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.hop)

    def window_array(self) -> np.ndarray:
        return get_window(self.window, self.win_len, fftbins=True)


@dataclass
class MagnitudeSpectrogram:
    """Nonnegative STFT magnitudes, [channels, 1024, frames]."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"expected [channels, bins, frames], got shape {self.values.shape}")
        if (self.values < 0).any():
            raise ValueError("magnitude values must be nonnegative")

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


@dataclass
class PhaseSpectrogram:
    """STFT phases in radians, [channels, 1025, frames]."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"expected [channels, bins, frames], got shape {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


def _frame(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Slice padded signal [C, N] into centered frames [C, T, win_len]."""
    n = x.shape[1]
    n_frames = cfg.frame_count(n)
    pad_left = cfg.win_len // 2 if cfg.center_pad else 0
    pad_right = (n_frames - 1) * cfg.hop + cfg.win_len - pad_left - n
    mode = "reflect" if min(pad_left, pad_right) < n else "constant"
    xp = np.pad(x, ((0, 0), (pad_left, max(pad_right, 0))), mode=mode)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.win_len, axis=1)
    return frames[:, :: cfg.hop][:, :n_frames]


def stft(w: Waveform, cfg: StftConfig | None = None) -> tuple[MagnitudeSpectrogram, PhaseSpectrogram]:
    """Analyze a waveform into cropped magnitude and full-resolution phase."""
    cfg = cfg or StftConfig()
    if w.n_frames < 1:
        raise ValueError("cannot analyze an empty waveform")
    frames = _frame(w.samples, cfg) * cfg.window_array()
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=2).transpose(0, 2, 1)  # [C, bins, T]
    mag = np.abs(spec[:, : cfg.n_bins_cropped])
    phase = np.angle(spec)
    return MagnitudeSpectrogram(mag, cfg), PhaseSpectrogram(phase, cfg)


def istft(
    mag: MagnitudeSpectrogram,
    phase: PhaseSpectrogram,
    out_len: int,
    sample_rate: int = CANONICAL_RATE,
) -> Waveform:
    """Weighted overlap-add synthesis from magnitude plus (possibly foreign) phase.

    The magnitude may come from the network while the phase comes from the
    input signal; shapes must agree in channels and frames. A 1024-bin
    magnitude has its missing Nyquist row filled with zero before inversion.
    """
    cfg = mag.config
    m, p = mag.values, phase.values
    if m.shape[0] != p.shape[0] or m.shape[2] != p.shape[2]:
        raise ValueError(f"magnitude/phase shape mismatch: {m.shape} vs {p.shape}")
    if p.shape[1] != cfg.n_bins_full:
        raise ValueError(f"phase must have {cfg.n_bins_full} bins, got {p.shape[1]}")
    if m.shape[1] == cfg.n_bins_cropped:
        nyquist = np.zeros((m.shape[0], 1, m.shape[2]))
        m = np.concatenate([m, nyquist], axis=1)
    elif m.shape[1] != cfg.n_bins_full:
        raise ValueError(f"magnitude must have {cfg.n_bins_cropped} or {cfg.n_bins_full} bins, got {m.shape[1]}")

    spec = (m * np.exp(1j * p)).transpose(0, 2, 1)  # [C, T, bins]
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=2)[:, :, : cfg.win_len]
    win = cfg.window_array()
    frames = frames * win

    n_ch, n_frames = frames.shape[0], frames.shape[1]
    ola_len = (n_frames - 1) * cfg.hop + cfg.win_len
    acc = np.zeros((n_ch, ola_len))
    wsum = np.zeros(ola_len)
    w2 = win * win
    for t in range(n_frames):
        start = t * cfg.hop
        acc[:, start : start + cfg.win_len] += frames[:, t]
        wsum[start : start + cfg.win_len] += w2
    out = np.where(wsum > 1e-10, acc / np.maximum(wsum, 1e-10), 0.0)

    pad_left = cfg.win_len // 2 if cfg.center_pad else 0
    out = out[:, pad_left:]
    if out.shape[1] >= out_len:
        out = out[:, :out_len]
    else:
        out = np.pad(out, ((0, 0), (0, out_len - out.shape[1])))
    return Waveform(samples=out, sample_rate=sample_rate)
