"""Checkpoint-driven audio-to-audio conversion.

Long inputs are processed in non-overlapping segments of the model's
configured length (7.43 s at canonical settings); the final partial segment
is zero-padded then trimmed, and the reference is cycled segment-wise to
match. Each segment is rebuilt from the network's output magnitude and the
input segment's phase.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .audio import Waveform
from .model import ReverbConversionNet
from .stft import MagnitudeSpectrogram, StftConfig, istft, stft


def _pad_to(w: Waveform, n: int) -> Waveform:
    if w.n_frames >= n:
        return Waveform(samples=w.samples[:, :n], sample_rate=w.sample_rate)
    pad = n - w.n_frames
    return Waveform(samples=np.pad(w.samples, ((0, 0), (0, pad))), sample_rate=w.sample_rate)


def convert_waveform(
    net: ReverbConversionNet,
    input_wave: Waveform,
    reference_wave: Waveform,
    stft_cfg: StftConfig | None = None,
    seg_frames: int | None = None,
) -> Waveform:
    """Apply the reference's reverb factor to the input; stereo in, stereo out.

    A dry reference turns this into de-reverberation.
    """
    cfg = stft_cfg or StftConfig()
    seg_frames = seg_frames or net.cfg.time_frames
    seg_len = seg_frames * cfg.hop
    if input_wave.sample_rate != reference_wave.sample_rate:
        raise ValueError("input and reference sample rates differ")

    n = input_wave.n_frames
    n_segments = max(1, math.ceil(n / seg_len))
    ref_segments = max(1, math.ceil(reference_wave.n_frames / seg_len))

    net.eval()
    pieces = []
    with torch.no_grad():
        for k in range(n_segments):
            seg_in = _pad_to(
                Waveform(input_wave.samples[:, k * seg_len : (k + 1) * seg_len],
                         input_wave.sample_rate),
                seg_len,
            )
            r = k % ref_segments
            seg_ref = _pad_to(
                Waveform(reference_wave.samples[:, r * seg_len : (r + 1) * seg_len],
                         reference_wave.sample_rate),
                seg_len,
            )
            mag_in, phase_in = stft(seg_in, cfg)
            mag_ref, _ = stft(seg_ref, cfg)
            t_in = torch.as_tensor(mag_in.values, dtype=torch.float32)[None]
            t_ref = torch.as_tensor(mag_ref.values, dtype=torch.float32)[None]
            out = net.swap_and_decode(net.encode(t_in), net.encode(t_ref))
            out_mag = MagnitudeSpectrogram(out[0].numpy().astype(np.float64), cfg)
            pieces.append(istft(out_mag, phase_in, seg_len, input_wave.sample_rate).samples)

    joined = np.concatenate(pieces, axis=1)[:, :n]
    return Waveform(samples=joined, sample_rate=input_wave.sample_rate)
