"""Synthetic vocal-like signals for tests, demos and desk-scale training.

Real dry vocals are user-supplied; these generators produce deterministic
stand-ins with the properties the pipeline cares about: harmonic content with
a moving pitch, formant-ish coloration, syllable-rate amplitude modulation,
and no energy near Nyquist (the STFT magnitude plane drops the Nyquist bin).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .audio import CANONICAL_RATE, Waveform


def synth_vocal(duration: float, seed: int = 0, sample_rate: int = CANONICAL_RATE) -> Waveform:
    """A pseudo-vocal phrase: harmonics on a wandering pitch, gated at syllable rate."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    # Pitch contour: slow random walk around 110-220 Hz
    f0_base = rng.uniform(110.0, 220.0)
    walk = np.cumsum(rng.standard_normal(max(n // 2048, 2)))
    walk = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, walk.size), walk)
    f0 = f0_base * 2.0 ** (0.15 * walk / max(np.abs(walk).max(), 1.0))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    voiced = np.zeros(n)
    for k in range(1, 13):
        if k * f0.max() > 0.40 * sample_rate:
            break
        voiced += (1.0 / k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # Two formant-ish resonators
    for fc, bw in ((rng.uniform(500, 900), 120.0), (rng.uniform(1400, 2400), 250.0)):
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2 * np.pi * fc / sample_rate
        voiced = lfilter([1 - r], [1, -2 * r * np.cos(theta), r * r], voiced)

    # Breathiness: lowpassed noise well below Nyquist
    noise = rng.standard_normal(n)
    noise = lfilter([0.25], [1, -0.75], noise)

    # Syllabic gating around 4 Hz with randomized on/off spans
    env = np.zeros(n)
    pos = 0
    while pos < n:
        on = int(rng.uniform(0.08, 0.22) * sample_rate)
        off = int(rng.uniform(0.04, 0.16) * sample_rate)
        env[pos : pos + on] = 1.0
        pos += on + off
    ramp = int(0.008 * sample_rate)
    if ramp > 1:
        env = np.convolve(env, np.hanning(ramp) / np.hanning(ramp).sum(), mode="same")

    x = env * (voiced + 0.05 * noise)
    x = x / max(np.abs(x).max(), 1e-12) * 0.5
    return Waveform(samples=np.vstack([x, x]), sample_rate=sample_rate)


def band_limited_noise(
    duration: float,
    seed: int = 0,
    low_hz: float = 40.0,
    high_hz: float = 16000.0,
    sample_rate: int = CANONICAL_RATE,
) -> Waveform:
    """Gaussian noise synthesized in the frequency domain with a hard band limit."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    out = np.empty((2, n))
    for c in range(2):
        spec = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
        spec[(freqs < low_hz) | (freqs > high_hz)] = 0.0
        x = np.fft.irfft(spec, n=n)
        out[c] = x / max(np.abs(x).max(), 1e-12) * 0.5
    return Waveform(samples=out, sample_rate=sample_rate)


def sine(duration: float, freq: float, sample_rate: int = CANONICAL_RATE, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    x = amp * np.sin(2 * np.pi * freq * t)
    return Waveform(samples=np.vstack([x, x]), sample_rate=sample_rate)
