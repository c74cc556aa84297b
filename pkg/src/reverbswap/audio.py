"""WAV loading/saving, resampling and segmentation.

All audio is carried as a Waveform: float samples shaped [channels, frames]
in nominal [-1, 1] range plus a sample rate. The toolkit's canonical format
is stereo 44.1 kHz; mono files are duplicated to stereo at ingestion.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 44100

# 16-bit full scale: int code -32768 maps to -1.0.
_INT16_SCALE = 2.0 ** 15


class AudioFormatError(ValueError):
    """Raised for WAV files the toolkit refuses to read or write."""


@dataclass
class Waveform:
    """Multi-channel PCM audio in float form.

    samples: [channels, frames] array, nominal range [-1, 1].
    sample_rate: Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D [channels, frames], got shape {self.samples.shape}")
        if self.samples.shape[0] not in (1, 2):
            raise ValueError(f"only mono/stereo supported, got {self.samples.shape[0]} channels")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains NaN or Inf samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


def load_wav(path) -> Waveform:
    """Load a PCM WAV file.

    Accepts 16/24/32-bit integer and 32-bit float encodings. Integer samples
    are mapped to floats by dividing by 2^(bits-1); 24-bit data arrives from
    scipy left-justified in int32, so the same 2^31 divisor applies.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 2.0 ** 15
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2.0 ** 31
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype}; "
            "expected 16/24/32-bit integer or 32-bit float PCM"
        )

    if data.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T  # wavfile returns [frames, channels]
    if samples.shape[0] > 2:
        raise AudioFormatError(f"{path}: {samples.shape[0]} channels; only mono/stereo supported")
    if not np.isfinite(samples).all():
        raise AudioFormatError(f"{path}: file contains non-finite samples")
    return Waveform(samples=samples, sample_rate=int(rate))


def save_wav(w: Waveform, path, bits: int = 16) -> None:
    """Write a Waveform as 16-bit PCM, clipping out-of-range samples.

    Values are clipped to [-1, 1 - 2^-15] before quantization so the positive
    rail maps to the max positive code instead of wrapping.
    """
    if bits != 16:
        raise AudioFormatError(f"only 16-bit output supported, got bits={bits}")
    if not np.isfinite(w.samples).all():
        raise ValueError("refusing to write non-finite samples")
    clipped = np.clip(w.samples, -1.0, 1.0 - 1.0 / _INT16_SCALE)
    codes = np.round(clipped * _INT16_SCALE).astype(np.int16)
    wavfile.write(str(path), w.sample_rate, codes.T.copy())


def wav_info(path) -> tuple[int, int, int]:
    """Read (n_frames, sample_rate, n_channels) from a WAV header without decoding audio."""
    path = Path(path)
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
        rate = channels = block_align = None
        while True:
            header = fh.read(8)
            if len(header) < 8:
                raise AudioFormatError(f"{path}: missing fmt or data chunk")
            cid, size = header[:4], struct.unpack("<I", header[4:])[0]
            if cid == b"fmt ":
                fmt = fh.read(size)
                channels, rate = struct.unpack("<HI", fmt[2:8])
                block_align = struct.unpack("<H", fmt[12:14])[0]
            elif cid == b"data":
                if rate is None:
                    raise AudioFormatError(f"{path}: data chunk precedes fmt chunk")
                return size // block_align, rate, channels
            else:
                fh.seek(size + (size & 1), 1)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling; output length = round(len * target/source)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    g = math.gcd(target_rate, w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    out_len = int(round(w.n_frames * target_rate / w.sample_rate))
    out = resample_poly(w.samples, up, down, axis=1)
    # resample_poly yields ceil(n*up/down) frames; trim/pad to the rounded length
    if out.shape[1] > out_len:
        out = out[:, :out_len]
    elif out.shape[1] < out_len:
        out = np.pad(out, ((0, 0), (0, out_len - out.shape[1])))
    return Waveform(samples=out, sample_rate=target_rate)


def segment(w: Waveform, seg_frames: int, hop_frames: int) -> list[Waveform]:
    """Slice into consecutive windows; a trailing remainder shorter than seg_frames is dropped."""
    if seg_frames <= 0 or hop_frames <= 0:
        raise ValueError("seg_frames and hop_frames must be positive")
    if w.n_frames < seg_frames:
        return []
    count = (w.n_frames - seg_frames) // hop_frames + 1
    return [
        Waveform(samples=w.samples[:, k * hop_frames : k * hop_frames + seg_frames].copy(),
                 sample_rate=w.sample_rate)
        for k in range(count)
    ]


def to_stereo(w: Waveform) -> Waveform:
    """Duplicate mono to stereo; stereo passes through unchanged."""
    if w.n_channels == 2:
        return w
    return Waveform(samples=np.vstack([w.samples, w.samples]), sample_rate=w.sample_rate)


def load_canonical(path, allow_resample: bool = False) -> Waveform:
    """Load as stereo 44.1 kHz, the model's working format.

    Off-rate files are rejected unless allow_resample is set, to avoid silent
    quality changes on ingestion.
    """
    w = load_wav(path)
    if w.sample_rate != CANONICAL_RATE:
        if not allow_resample:
            raise AudioFormatError(
                f"{path}: sample rate {w.sample_rate} != {CANONICAL_RATE}; "
                "pass allow_resample=True (or the CLI --resample flag) to convert"
            )
        w = resample(w, CANONICAL_RATE)
    return to_stereo(w)
