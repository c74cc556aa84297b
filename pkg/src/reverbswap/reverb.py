"""Parametric feedback-delay-network reverb used to build the dataset.

Stands in for the commercial plugins from which the training/validation
presets would normally come. Signal flow for a 100%-wet render:

    input -> [pre-delay] -> early-reflection taps ----------+
                       \\-> [allpass diffusion] -> FDN loop -+-> [damping LP] -> wet L/R

The FDN loop couples 8 or 16 mutually prime delay lines through a Householder
(orthogonal, energy-preserving) feedback matrix. Per-line gains are chosen as
gain_i = 10^(-3 * delay_i / (rt60 * fs)), which places every loop pole at
radius 10^(-3 / (rt60 * fs)) exactly, so the tail decays 60 dB in rt60
seconds at all frequencies and Schroeder integration recovers the preset
value. The damping lowpass sits outside the loop as a tone control and
therefore does not skew the measured decay time.

Rendering is linear and time-invariant by construction: a preset is expanded
once into its impulse response and wet signals are produced by convolution.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .audio import CANONICAL_RATE, Waveform

# Allpass diffuser delays (samples at 44.1 kHz), mutually prime, 2.5-10.5 ms
_DIFFUSER_DELAYS = (113, 229, 347, 463)
_MAX_ALLPASS_GAIN = 0.65

_RT60_RANGE = (0.3, 6.0)
_PRE_DELAY_RANGE = (0.0, 120.0)
_DAMPING_RANGE = (2000.0, 12000.0)
_DELAY_SAMPLE_RANGE = (700, 4100)  # ~16-93 ms at 44.1 kHz, with prime-rounding headroom


@dataclass(frozen=True)
class ReverbPreset:
    """Full parameter set of one synthetic reverb."""

    preset_id: str
    rt60: float                    # seconds to -60 dB
    pre_delay: float               # ms before any wet output
    fdn_size: int                  # 8 or 16 delay lines
    delay_lengths: tuple[int, ...] # samples, pairwise distinct primes
    damping_cutoff: float          # Hz, one-pole tone filter on the wet path
    diffusion: float               # [0, 1] allpass coefficient scale
    stereo_width: float            # [0, 1] output decorrelation
    early_reflection_taps: tuple[tuple[float, float], ...]  # (delay ms, gain)

    def __post_init__(self):
        if not _RT60_RANGE[0] <= self.rt60 <= _RT60_RANGE[1]:
            raise ValueError(f"rt60 {self.rt60} outside {_RT60_RANGE}")
        if not _PRE_DELAY_RANGE[0] <= self.pre_delay <= _PRE_DELAY_RANGE[1]:
            raise ValueError(f"pre_delay {self.pre_delay} outside {_PRE_DELAY_RANGE}")
        if not _DAMPING_RANGE[0] <= self.damping_cutoff <= _DAMPING_RANGE[1]:
            raise ValueError(f"damping_cutoff {self.damping_cutoff} outside {_DAMPING_RANGE}")
        if self.fdn_size not in (8, 16):
            raise ValueError(f"fdn_size must be 8 or 16, got {self.fdn_size}")
        if len(self.delay_lengths) != self.fdn_size:
            raise ValueError("need exactly fdn_size delay lengths")
        if len(set(self.delay_lengths)) != self.fdn_size:
            raise ValueError("delay lengths must be pairwise distinct")
        if not all(_DELAY_SAMPLE_RANGE[0] <= d <= _DELAY_SAMPLE_RANGE[1] for d in self.delay_lengths):
            raise ValueError(f"delay lengths outside sample range {_DELAY_SAMPLE_RANGE}")
        for field_name in ("diffusion", "stereo_width"):
            v = getattr(self, field_name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{field_name} {v} outside [0, 1]")


@dataclass(frozen=True)
class PresetSpace:
    """Parameter ranges a preset is drawn from; train and validation spaces
    stay disjoint in rt60 band and FDN size so validation reverbs are unseen."""

    split_tag: str
    rt60: tuple[float, float]
    pre_delay: tuple[float, float]
    damping_cutoff: tuple[float, float]
    diffusion: tuple[float, float]
    stereo_width: tuple[float, float]
    fdn_sizes: tuple[int, ...]
    delay_ms: tuple[float, float] = (20.0, 88.0)
    n_early_taps: tuple[int, int] = (2, 6)


TRAIN_SPACE = PresetSpace(
    split_tag="train",
    rt60=(0.3, 2.8),
    pre_delay=(0.0, 60.0),
    damping_cutoff=(2500.0, 12000.0),
    diffusion=(0.2, 0.9),
    stereo_width=(0.2, 1.0),
    fdn_sizes=(16,),
)

VAL_SPACE = PresetSpace(
    split_tag="val",
    rt60=(3.0, 5.5),
    pre_delay=(0.0, 100.0),
    damping_cutoff=(2000.0, 9000.0),
    diffusion=(0.3, 0.9),
    stereo_width=(0.2, 1.0),
    fdn_sizes=(8,),
)


def spaces_disjoint(a: PresetSpace, b: PresetSpace) -> bool:
    """True if the spaces cannot produce the same preset (rt60 bands or FDN sizes disjoint)."""
    rt60_apart = a.rt60[1] < b.rt60[0] or b.rt60[1] < a.rt60[0]
    size_apart = not set(a.fdn_sizes) & set(b.fdn_sizes)
    return rt60_apart or size_apart


def _is_prime(k: int) -> bool:
    if k < 2:
        return False
    if k % 2 == 0:
        return k == 2
    f = 3
    while f * f <= k:
        if k % f == 0:
            return False
        f += 2
    return True


def _next_prime(k: int) -> int:
    k = max(k, 2)
    while not _is_prime(k):
        k += 1
    return k


def sample_preset(space: PresetSpace, seed: int, sample_rate: int = CANONICAL_RATE) -> ReverbPreset:
    """Draw one preset; a pure function of (space, seed)."""
    rng = np.random.default_rng([zlib.crc32(space.split_tag.encode()), seed])
    fdn_size = int(rng.choice(space.fdn_sizes))

    # Distinct primes are pairwise co-prime; collisions advance to the next prime.
    raw = rng.uniform(space.delay_ms[0], space.delay_ms[1], size=fdn_size)
    delays: list[int] = []
    for ms in np.sort(raw):
        cand = _next_prime(int(round(ms * sample_rate / 1000.0)))
        while cand in delays:
            cand = _next_prime(cand + 1)
        delays.append(cand)

    n_taps = int(rng.integers(space.n_early_taps[0], space.n_early_taps[1] + 1))
    taps = []
    for _ in range(n_taps):
        d_ms = float(rng.uniform(3.0, 40.0))
        gain = float(rng.uniform(0.1, 0.5) * np.exp(-d_ms / 40.0))
        taps.append((round(d_ms, 3), round(gain, 4)))
    taps.sort()

    return ReverbPreset(
        preset_id=f"{space.split_tag}-{seed:04d}",
        rt60=round(float(rng.uniform(*space.rt60)), 3),
        pre_delay=round(float(rng.uniform(*space.pre_delay)), 2),
        fdn_size=fdn_size,
        delay_lengths=tuple(delays),
        damping_cutoff=round(float(rng.uniform(*space.damping_cutoff)), 1),
        diffusion=round(float(rng.uniform(*space.diffusion)), 3),
        stereo_width=round(float(rng.uniform(*space.stereo_width)), 3),
        early_reflection_taps=tuple(taps),
    )


def householder_matrix(n: int) -> np.ndarray:
    """I - (2/n)J: symmetric, orthogonal, maximally mixing."""
    return np.eye(n) - 2.0 / n * np.ones((n, n))


def feedback_gains(p: ReverbPreset, sample_rate: int) -> np.ndarray:
    """Per-line gains giving a uniform -60 dB / rt60 decay."""
    per_sample = 10.0 ** (-3.0 / (p.rt60 * sample_rate))
    return per_sample ** np.asarray(p.delay_lengths, dtype=np.float64)


def _allpass(x: np.ndarray, delay: int, gain: float) -> np.ndarray:
    b = np.zeros(delay + 1)
    a = np.zeros(delay + 1)
    b[0], b[delay] = gain, 1.0
    a[0], a[delay] = 1.0, gain
    return lfilter(b, a, x)


def _raw_render(p: ReverbPreset, x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Engine core: mono input -> unnormalized stereo wet [2, len(x)]."""
    n = x.size
    out = np.zeros((2, n))

    pre = int(round(p.pre_delay * sample_rate / 1000.0))
    x_pre = np.zeros(n)
    if pre < n:
        x_pre[pre:] = x[: n - pre]

    # Early reflections, panned alternately by stereo_width
    for k, (d_ms, gain) in enumerate(p.early_reflection_taps):
        d = int(round(d_ms * sample_rate / 1000.0))
        if d >= n:
            continue
        side = 0.5 * p.stereo_width * (1.0 if k % 2 == 0 else -1.0)
        out[0, d:] += gain * (1.0 + side) * x_pre[: n - d]
        out[1, d:] += gain * (1.0 - side) * x_pre[: n - d]

    # FDN drive: diffused pre-delayed input
    drive = x_pre
    ap_gain = _MAX_ALLPASS_GAIN * p.diffusion
    for d in _DIFFUSER_DELAYS:
        drive = _allpass(drive, d, ap_gain)

    size = p.fdn_size
    delays = np.asarray(p.delay_lengths)
    gains = feedback_gains(p, sample_rate)
    mix = householder_matrix(size)
    b_in = np.full(size, 1.0 / np.sqrt(size))

    # Output taps: width rotates the right tap away from the left one;
    # at width 1 they are orthogonal (fully decorrelated).
    theta = p.stereo_width * np.pi / 4.0
    base = np.full(size, 1.0 / np.sqrt(size))
    alt = np.where(np.arange(size) % 2 == 0, 1.0, -1.0) / np.sqrt(size)
    c_left = np.cos(theta) * base + np.sin(theta) * alt
    c_right = np.cos(theta) * base - np.sin(theta) * alt

    # Block processing: with block <= min(delay), every read within a block
    # refers to samples written in earlier blocks, so blocks vectorize.
    max_delay = int(delays.max())
    block = int(delays.min())
    written = np.zeros((size, max_delay + n))
    for t0 in range(0, n, block):
        blk = min(block, n - t0)
        reads = np.empty((blk, size))
        for i in range(size):
            s = max_delay + t0 - delays[i]
            reads[:, i] = written[i, s : s + blk]
        out[0, t0 : t0 + blk] += reads @ c_left
        out[1, t0 : t0 + blk] += reads @ c_right
        back = (reads * gains) @ mix + np.outer(drive[t0 : t0 + blk], b_in)
        written[:, max_delay + t0 : max_delay + t0 + blk] = back.T

    # Damping: out-of-loop one-pole lowpass (tone only, decay untouched)
    a_c = np.exp(-2.0 * np.pi * p.damping_cutoff / sample_rate)
    return lfilter([1.0 - a_c], [1.0, -a_c], out, axis=1)


@lru_cache(maxsize=256)
def _norm_scale(p: ReverbPreset, sample_rate: int) -> float:
    """Scale that gives the preset's IR unit energy, measured over a
    fixed reference length so it is independent of the requested render length."""
    ref_len = int(np.ceil((p.rt60 + p.pre_delay / 1000.0 + 0.25) * sample_rate))
    ir = _raw_render(p, _unit_impulse(ref_len), sample_rate)
    energy = float(np.sum(ir * ir))
    return 1.0 / np.sqrt(energy) if energy > 0 else 1.0


def _unit_impulse(n: int) -> np.ndarray:
    x = np.zeros(n)
    x[0] = 1.0
    return x


@lru_cache(maxsize=16)
def _normalized_ir(p: ReverbPreset, n: int, sample_rate: int) -> np.ndarray:
    return _raw_render(p, _unit_impulse(n), sample_rate) * _norm_scale(p, sample_rate)


def impulse_response(p: ReverbPreset, length: int, sample_rate: int = CANONICAL_RATE) -> Waveform:
    """Stereo IR of the preset, long enough to observe the full decay."""
    if length < p.rt60 * sample_rate:
        raise ValueError(
            f"length {length} too short to capture rt60={p.rt60}s at {sample_rate} Hz "
            f"(need >= {int(np.ceil(p.rt60 * sample_rate))})"
        )
    return Waveform(samples=_normalized_ir(p, length, sample_rate).copy(), sample_rate=sample_rate)


def render_wet(dry: Waveform, p: ReverbPreset) -> Waveform:
    """100%-wet stereo render: convolution of the mid signal with the preset IR.

    Output has the dry signal's length (tail truncated) and contains no direct
    dry component.
    """
    if dry.sample_rate != CANONICAL_RATE:
        raise ValueError(f"render_wet expects {CANONICAL_RATE} Hz input, got {dry.sample_rate}")
    n = dry.n_frames
    mid = dry.samples.mean(axis=0)
    ir = _normalized_ir(p, n, dry.sample_rate)
    wet = np.stack([fftconvolve(mid, ir[c])[:n] for c in range(2)])
    return Waveform(samples=wet, sample_rate=dry.sample_rate)


def write_presets(presets: list[ReverbPreset], path) -> None:
    """One JSON record per line, every field explicit, byte-reproducible."""
    with open(path, "w") as fh:
        for p in presets:
            fh.write(json.dumps(asdict(p), sort_keys=True) + "\n")


def read_presets(path) -> list[ReverbPreset]:
    presets = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            rec["delay_lengths"] = tuple(rec["delay_lengths"])
            rec["early_reflection_taps"] = tuple((float(d), float(g)) for d, g in rec["early_reflection_taps"])
            presets.append(ReverbPreset(**rec))
    return presets


def schroeder_rt60(ir: Waveform) -> float:
    """Decay time from Schroeder backward integration: the time for the
    energy-decay curve to fall from -5 dB to -65 dB. Referencing -5 dB skips
    the onset (pre-delay, diffusion build-up), the usual room-acoustics
    convention."""
    energy = np.sum(ir.samples ** 2, axis=0)
    edc = np.cumsum(energy[::-1])[::-1]
    edc = edc / edc[0]
    db = 10.0 * np.log10(np.maximum(edc, 1e-300))
    start = np.nonzero(db <= -5.0)[0]
    stop = np.nonzero(db <= -65.0)[0]
    if stop.size == 0:
        raise ValueError("IR too short: EDC never falls 60 dB below the -5 dB point")
    return (stop[0] - start[0]) / ir.sample_rate
