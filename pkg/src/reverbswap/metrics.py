"""Objective metrics for the two evaluation tasks, implemented from scratch.

si_sdr     scale-invariant ratio of projected target energy to residual
           energy, averaged over channels, clamped to +/-100 dB.
stoi       short-time objective intelligibility: 10 kHz internal rate, silent
           frames removed, 15 one-third-octave bands from 150 Hz, normalized
           and clipped correlations over 384 ms segments.
srmr       non-intrusive speech-to-reverberation modulation energy ratio:
           23-channel gammatone front end, Hilbert envelopes, 8 modulation
           bands log-spaced 4-128 Hz, low-to-high modulation energy ratio.

Conversion scoring deliberately compares against the *reverberated* target
rather than a clean source; de-reverberation scoring compares input and
output against the dry source per bus-send ratio. PESQ is not implemented:
an external scorer can be hooked in and is fed 16 kHz downsampled files.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, gammatone, hilbert, lfilter, sosfilt
from scipy.signal.windows import hann

from .audio import Waveform, resample, save_wav

SI_SDR_CLAMP_DB = 100.0

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_CF0 = 150.0
_STOI_SEG = 30          # frames per 384 ms segment
_STOI_DYN_RANGE = 40.0  # silent-frame threshold below loudest frame
_STOI_CLIP = 1.0 + 10.0 ** (15.0 / 20.0)  # -15 dB SDR lower bound

_SRMR_FS = 16000
_SRMR_N_GAMMATONE = 23
_SRMR_CF_LO = 125.0
_SRMR_ENV_FS = 400
_SRMR_MOD_CF = tuple(4.0 * 2.0 ** (k * 5.0 / 7.0) for k in range(8))  # 4..128 Hz
_SRMR_LOW_BANDS = 4


@dataclass
class MetricResult:
    name: str      # si_sdr | stoi | srmr | pesq
    value: float
    clip_id: str


def _mid(w: Waveform) -> np.ndarray:
    return w.samples.mean(axis=0)


def si_sdr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant SDR in dB, per channel then averaged."""
    if est.n_frames != ref.n_frames or est.n_channels != ref.n_channels:
        raise ValueError(
            f"est/ref shape mismatch: {est.samples.shape} vs {ref.samples.shape}"
        )
    values = []
    for c in range(ref.n_channels):
        s, s_hat = ref.samples[c], est.samples[c]
        ref_energy = float(s @ s)
        if ref_energy == 0.0:
            raise ValueError("si_sdr reference channel is all-zero")
        alpha = float(s_hat @ s) / ref_energy
        target = alpha * s
        resid = s_hat - target
        num = float(target @ target)
        den = float(resid @ resid)
        if den == 0.0:
            values.append(SI_SDR_CLAMP_DB)
        elif num == 0.0:
            values.append(-SI_SDR_CLAMP_DB)
        else:
            values.append(np.clip(10.0 * np.log10(num / den), -SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
    return float(np.mean(values))


def _stoi_window() -> np.ndarray:
    # MATLAB-style hanning(N): no zero endpoints
    return hann(_STOI_FRAME + 2, sym=True)[1:-1]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames more than 40 dB below the loudest reference frame; the
    reference mask is applied to both signals, which are rebuilt by
    overlap-add of the kept windowed frames."""
    w = _stoi_window()
    starts = range(0, x.size - _STOI_FRAME + 1, _STOI_HOP)
    frames_x = np.stack([x[s : s + _STOI_FRAME] * w for s in starts])
    frames_y = np.stack([y[s : s + _STOI_FRAME] * w for s in starts])
    energies = 20.0 * np.log10(np.linalg.norm(frames_x, axis=1) + 1e-300)
    mask = energies > energies.max() - _STOI_DYN_RANGE
    if not mask.any():
        raise ValueError("stoi reference is entirely silent")
    kept_x, kept_y = frames_x[mask], frames_y[mask]
    out_len = (kept_x.shape[0] - 1) * _STOI_HOP + _STOI_FRAME
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for j in range(kept_x.shape[0]):
        xs[j * _STOI_HOP : j * _STOI_HOP + _STOI_FRAME] += kept_x[j]
        ys[j * _STOI_HOP : j * _STOI_HOP + _STOI_FRAME] += kept_y[j]
    return xs, ys


def _third_octave_bands(x: np.ndarray) -> np.ndarray:
    """[bands, frames] band magnitudes of a 10 kHz signal."""
    w = _stoi_window()
    starts = range(0, x.size - _STOI_FRAME + 1, _STOI_HOP)
    frames = np.stack([x[s : s + _STOI_FRAME] * w for s in starts])
    power = np.abs(np.fft.rfft(frames, n=_STOI_NFFT, axis=1)) ** 2  # [frames, bins]
    freqs = np.fft.rfftfreq(_STOI_NFFT, d=1.0 / _STOI_FS)
    centers = _STOI_CF0 * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    bands = np.zeros((_STOI_BANDS, frames.shape[0]))
    for j, cf in enumerate(centers):
        lo = np.argmin(np.abs(freqs - cf * 2.0 ** (-1.0 / 6.0)))
        hi = np.argmin(np.abs(freqs - cf * 2.0 ** (1.0 / 6.0)))
        bands[j] = np.sqrt(power[:, lo:hi].sum(axis=1))
    return bands


def stoi(est: Waveform, ref: Waveform) -> float:
    """Short-time objective intelligibility of `est` against clean `ref`."""
    if est.sample_rate != ref.sample_rate:
        raise ValueError("est/ref sample rates differ")
    x = _mid(resample(ref, _STOI_FS) if ref.sample_rate != _STOI_FS else ref)
    y = _mid(resample(est, _STOI_FS) if est.sample_rate != _STOI_FS else est)
    n = min(x.size, y.size)
    x, y = x[:n], y[:n]
    if n < _STOI_FRAME:
        raise ValueError("stoi input shorter than one analysis frame")
    x, y = _remove_silent_frames(x, y)

    bx = _third_octave_bands(x)
    by = _third_octave_bands(y)
    n_frames = bx.shape[1]
    if n_frames < _STOI_SEG:
        raise ValueError(
            f"stoi needs >= {_STOI_SEG} active frames (384 ms at 10 kHz), got {n_frames}"
        )

    # sliding 30-frame segments, step one frame
    segs_x = np.lib.stride_tricks.sliding_window_view(bx, _STOI_SEG, axis=1)
    segs_y = np.lib.stride_tricks.sliding_window_view(by, _STOI_SEG, axis=1)
    norm_x = np.linalg.norm(segs_x, axis=2, keepdims=True)
    norm_y = np.linalg.norm(segs_y, axis=2, keepdims=True)
    alpha = norm_x / np.maximum(norm_y, 1e-300)
    clipped = np.minimum(alpha * segs_y, _STOI_CLIP * segs_x)

    dx = segs_x - segs_x.mean(axis=2, keepdims=True)
    dy = clipped - clipped.mean(axis=2, keepdims=True)
    num = (dx * dy).sum(axis=2)
    den = np.linalg.norm(dx, axis=2) * np.linalg.norm(dy, axis=2)
    corr = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return float(corr.mean())


def _erb_scale(f: np.ndarray) -> np.ndarray:
    return 21.4 * np.log10(1.0 + 0.00437 * f)


def _erb_inverse(e: np.ndarray) -> np.ndarray:
    return (10.0 ** (e / 21.4) - 1.0) / 0.00437


def _gammatone_center_freqs() -> np.ndarray:
    lo, hi = _erb_scale(np.array([_SRMR_CF_LO, 0.4 * _SRMR_FS]))
    return _erb_inverse(np.linspace(lo, hi, _SRMR_N_GAMMATONE))


def _modulation_sos() -> list[np.ndarray]:
    # constant-Q (Q=2) second-order bandpass filters on the envelope rate
    q = 2.0
    shift = np.sqrt(1.0 + 1.0 / (4.0 * q * q))
    sections = []
    for cf in _SRMR_MOD_CF:
        lo = cf * (shift - 1.0 / (2.0 * q))
        hi = cf * (shift + 1.0 / (2.0 * q))
        sections.append(butter(2, [lo, hi], btype="bandpass", fs=_SRMR_ENV_FS, output="sos"))
    return sections


def srmr(x: Waveform) -> float:
    """Speech-to-reverberation modulation energy ratio (non-intrusive).

    Gain-invariant by construction; reverberation shifts envelope modulation
    energy out of the low (syllabic) bands, lowering the ratio.
    """
    if not np.any(x.samples):
        raise ValueError("srmr: zero-energy input")
    mono = _mid(x if x.sample_rate == _SRMR_FS else resample(x, _SRMR_FS))
    mono_w = Waveform(samples=mono[None], sample_rate=_SRMR_FS)

    low_e, high_e = 0.0, 0.0
    sections = _modulation_sos()
    for cf in _gammatone_center_freqs():
        b, a = gammatone(cf, "iir", fs=_SRMR_FS)
        band = lfilter(b, a, mono)
        env = np.abs(hilbert(band))
        env = _mid(resample(Waveform(env[None], _SRMR_FS), _SRMR_ENV_FS))
        for j, sos in enumerate(sections):
            e = float(np.sum(sosfilt(sos, env) ** 2))
            if j < _SRMR_LOW_BANDS:
                low_e += e
            else:
                high_e += e
    if high_e == 0.0:
        raise ValueError("srmr: no high-band modulation energy (degenerate input)")
    return float(low_e / high_e)


def run_external_pesq(ref: Waveform, deg: Waveform, command: str) -> float:
    """Invoke an external PESQ scorer on 16 kHz downsampled copies.

    The command receives (ref.wav, deg.wav) paths and must print one float.
    """
    with tempfile.TemporaryDirectory() as tmp:
        ref_path = Path(tmp) / "ref.wav"
        deg_path = Path(tmp) / "deg.wav"
        save_wav(resample(ref, 16000), ref_path)
        save_wav(resample(deg, 16000), deg_path)
        proc = subprocess.run(
            shlex.split(command) + [str(ref_path), str(deg_path)],
            capture_output=True,
            text=True,
        )
    if proc.returncode != 0:
        raise RuntimeError(f"external PESQ scorer failed: {proc.stderr.strip()}")
    for token in reversed(proc.stdout.split()):
        try:
            return float(token)
        except ValueError:
            continue
    raise RuntimeError(f"could not parse a float from PESQ output: {proc.stdout!r}")


def eval_conversion(
    items: list[tuple[str, Waveform, Waveform, Waveform]],
    pesq_command: str | None = None,
) -> list[dict]:
    """Score converted clips against their *reverberated* targets.

    items: (clip_id, model_output, input_mix, target). Emits per-condition
    mean rows with an `input` baseline first, mirroring the published table
    layout.
    """
    if not items:
        raise ValueError("no items to evaluate")
    rows = []
    for condition in ("input", "model"):
        stoi_vals, pesq_vals = [], []
        for clip_id, output, input_mix, target in items:
            signal = input_mix if condition == "input" else output
            stoi_vals.append(stoi(signal, target))
            if pesq_command:
                pesq_vals.append(run_external_pesq(target, signal, pesq_command))
        rows.append(
            {
                "condition": condition,
                "n_clips": len(items),
                "stoi_pct": round(100.0 * float(np.mean(stoi_vals)), 2),
                "pesq": round(float(np.mean(pesq_vals)), 3) if pesq_vals else None,
            }
        )
    return rows


def eval_dereverb(
    items: list[tuple[str, float, Waveform, Waveform, Waveform]],
    pesq_command: str | None = None,
) -> list[dict]:
    """Per-gamma de-reverberation curves for input and model output vs dry.

    items: (clip_id, gamma, input_mix, model_output, dry_source).
    """
    if not items:
        raise ValueError("no items to evaluate")
    gammas = sorted({g for _, g, _, _, _ in items})
    rows = []
    for gamma in gammas:
        subset = [it for it in items if it[1] == gamma]
        for condition in ("input", "output"):
            vals: dict[str, list[float]] = {"si_sdr": [], "stoi": [], "srmr": []}
            pesq_vals = []
            for clip_id, _, input_mix, output, dry in subset:
                signal = input_mix if condition == "input" else output
                vals["si_sdr"].append(si_sdr(signal, dry))
                vals["stoi"].append(stoi(signal, dry))
                vals["srmr"].append(srmr(signal))
                if pesq_command:
                    pesq_vals.append(run_external_pesq(dry, signal, pesq_command))
            rows.append(
                {
                    "gamma": gamma,
                    "condition": condition,
                    "n_clips": len(subset),
                    "si_sdr_db": round(float(np.mean(vals["si_sdr"])), 3),
                    "stoi_pct": round(100.0 * float(np.mean(vals["stoi"])), 2),
                    "srmr": round(float(np.mean(vals["srmr"])), 3),
                    "pesq": round(float(np.mean(pesq_vals)), 3) if pesq_vals else None,
                }
            )
    return rows


def format_report(rows: list[dict]) -> str:
    """Fixed-width text table; None renders as n/a (e.g. PESQ without a scorer)."""
    if not rows:
        return "(empty report)\n"
    columns = list(rows[0].keys())
    rendered = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in rendered)) for i, c in enumerate(columns)]
    lines = [
        "  ".join(c.ljust(widths[i]) for i, c in enumerate(columns)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(row[i].ljust(widths[i]) for i in range(len(columns))) for row in rendered]
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.3f}".rstrip("0").rstrip(".") if v == v else "nan"
    return str(v)


def write_report(rows: list[dict], text_path, jsonl_path) -> None:
    import json

    with open(text_path, "w") as fh:
        fh.write(format_report(rows))
    with open(jsonl_path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
