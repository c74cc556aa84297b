import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from reverbswap.audio import (
    AudioFormatError,
    Waveform,
    load_canonical,
    load_wav,
    resample,
    save_wav,
    segment,
    to_stereo,
    wav_info,
)


def sweep(duration=0.5, rate=44100):
    t = np.arange(int(duration * rate)) / rate
    x = 0.8 * np.sin(2 * np.pi * (200 * t + 1500 * t * t))
    return Waveform(samples=np.vstack([x, -x]), sample_rate=rate)


class TestWaveformInvariants:
    def test_rejects_three_channels(self):
        with pytest.raises(ValueError, match="channels"):
            Waveform(samples=np.zeros((3, 10)), sample_rate=44100)

    def test_rejects_nan(self):
        bad = np.zeros((2, 10))
        bad[0, 3] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            Waveform(samples=bad, sample_rate=44100)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError, match="sample_rate"):
            Waveform(samples=np.zeros((1, 4)), sample_rate=0)


class TestLoadWav:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_full_scale_16bit_mapping(self, tmp_path):
        codes = np.array([-32768, 0, 32767], dtype=np.int16)
        wavfile.write(tmp_path / "x.wav", 44100, codes)
        w = load_wav(tmp_path / "x.wav")
        assert w.samples[0, 0] == -1.0
        assert w.samples[0, 1] == 0.0
        assert w.samples[0, 2] == pytest.approx(1.0 - 2.0 ** -15)

    def test_rejects_8bit(self, tmp_path):
        wavfile.write(tmp_path / "x.wav", 44100, np.array([0, 255], dtype=np.uint8))
        with pytest.raises(AudioFormatError, match="unsupported"):
            load_wav(tmp_path / "x.wav")

    def test_rejects_float64(self, tmp_path):
        wavfile.write(tmp_path / "x.wav", 44100, np.zeros(16, dtype=np.float64))
        with pytest.raises(AudioFormatError, match="unsupported"):
            load_wav(tmp_path / "x.wav")

    def test_rejects_non_pcm(self, tmp_path):
        # minimal mu-law (format code 7) file
        payload = b"\x00" * 8
        fmt = struct.pack("<HHIIHH", 7, 1, 8000, 8000, 1, 8)
        body = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
        blob = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body
        (tmp_path / "mu.wav").write_bytes(blob)
        with pytest.raises(AudioFormatError):
            load_wav(tmp_path / "mu.wav")

    def test_float32_accepted(self, tmp_path):
        data = np.linspace(-0.5, 0.5, 32, dtype=np.float32)
        wavfile.write(tmp_path / "f.wav", 44100, data)
        w = load_wav(tmp_path / "f.wav")
        np.testing.assert_allclose(w.samples[0], data, atol=1e-7)

    def test_24bit_scaling(self, tmp_path):
        # hand-rolled 24-bit PCM: one frame at +full scale, one at half
        frames = [(1 << 23) - 1, 1 << 22]
        payload = b"".join(struct.pack("<i", v << 8)[1:] for v in frames)
        fmt = struct.pack("<HHIIHH", 1, 1, 44100, 44100 * 3, 3, 24)
        body = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
        blob = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body
        (tmp_path / "d.wav").write_bytes(blob)
        w = load_wav(tmp_path / "d.wav")
        assert w.samples[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert w.samples[0, 1] == pytest.approx(0.5, abs=1e-6)


class TestSaveWav:
    def test_round_trip_within_one_lsb(self, tmp_path):
        w = sweep()
        save_wav(w, tmp_path / "s.wav")
        back = load_wav(tmp_path / "s.wav")
        assert back.sample_rate == w.sample_rate
        assert back.n_channels == w.n_channels
        assert np.abs(back.samples - w.samples).max() <= 2.0 ** -15

    def test_zero_clip_writes_zero_codes(self, tmp_path):
        w = Waveform(samples=np.zeros((2, 1000)), sample_rate=44100)
        save_wav(w, tmp_path / "z.wav")
        _, data = wavfile.read(tmp_path / "z.wav")
        assert (data == 0).all()

    def test_overrange_clips_to_max_code(self, tmp_path):
        w = Waveform(samples=np.full((1, 4), 1.5), sample_rate=44100)
        save_wav(w, tmp_path / "c.wav")
        _, data = wavfile.read(tmp_path / "c.wav")
        assert (data == 32767).all()

    def test_data_chunk_byte_count(self, tmp_path):
        # 1 s stereo 16-bit: 44100 frames * 2 ch * 2 bytes
        w = Waveform(samples=np.zeros((2, 44100)), sample_rate=44100)
        save_wav(w, tmp_path / "b.wav")
        blob = (tmp_path / "b.wav").read_bytes()
        idx = blob.index(b"data")
        size = struct.unpack("<I", blob[idx + 4 : idx + 8])[0]
        assert size == 44100 * 2 * 2

    def test_only_16bit(self, tmp_path):
        with pytest.raises(AudioFormatError):
            save_wav(sweep(), tmp_path / "x.wav", bits=24)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_round_trip_property(self, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0 - 2.0 ** -15, size=(2, 64))
        w = Waveform(samples=x, sample_rate=44100)
        path = tmp_path_factory.mktemp("rt") / "p.wav"
        save_wav(w, path)
        back = load_wav(path)
        assert np.abs(back.samples - x).max() <= 2.0 ** -15


class TestWavInfo:
    def test_matches_written_file(self, tmp_path):
        w = sweep(0.25)
        save_wav(w, tmp_path / "i.wav")
        frames, rate, channels = wav_info(tmp_path / "i.wav")
        assert (frames, rate, channels) == (w.n_frames, 44100, 2)

    def test_rejects_non_riff(self, tmp_path):
        (tmp_path / "junk.wav").write_bytes(b"not a wav at all")
        with pytest.raises(AudioFormatError):
            wav_info(tmp_path / "junk.wav")


class TestResample:
    def test_identity_when_rates_match(self):
        w = sweep()
        assert resample(w, 44100) is w

    def test_length_arithmetic(self):
        w = Waveform(samples=np.zeros((1, 44100)), sample_rate=44100)
        assert resample(w, 16000).n_frames == 16000

    def test_rounded_length_on_awkward_input(self):
        w = Waveform(samples=np.zeros((1, 44101)), sample_rate=44100)
        assert resample(w, 16000).n_frames == round(44101 * 16000 / 44100)

    def test_sine_peak_preserved(self):
        rate = 44100
        t = np.arange(rate) / rate
        x = np.sin(2 * np.pi * 1000 * t)
        w = Waveform(samples=x[np.newaxis], sample_rate=rate)
        y = resample(w, 16000)
        spec = np.abs(np.fft.rfft(y.samples[0]))
        freqs = np.fft.rfftfreq(y.n_frames, d=1 / 16000)
        assert abs(freqs[spec.argmax()] - 1000.0) < 1.0

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            resample(sweep(), -1)


class TestSegment:
    def test_exact_fit_gives_one(self):
        w = Waveform(samples=np.zeros((2, 512)), sample_rate=44100)
        assert len(segment(w, 512, 512)) == 1

    def test_short_input_gives_zero(self):
        w = Waveform(samples=np.zeros((2, 511)), sample_rate=44100)
        assert segment(w, 512, 512) == []

    def test_tiling_reconstructs_prefix(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(2, 3 * 257))
        w = Waveform(samples=x, sample_rate=44100)
        parts = segment(w, 257, 257)
        assert len(parts) == 3
        joined = np.concatenate([p.samples for p in parts], axis=1)
        np.testing.assert_array_equal(joined, x)

    def test_count_formula_with_hop(self):
        w = Waveform(samples=np.zeros((1, 1000)), sample_rate=44100)
        assert len(segment(w, 300, 200)) == (1000 - 300) // 200 + 1

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            segment(sweep(), 0, 1)


class TestCanonicalIngestion:
    def test_mono_duplicated_to_stereo(self, tmp_path):
        x = np.linspace(-0.1, 0.1, 2000)
        wavfile.write(tmp_path / "m.wav", 44100, (x * 32767).astype(np.int16))
        w = load_canonical(tmp_path / "m.wav")
        assert w.n_channels == 2
        np.testing.assert_array_equal(w.samples[0], w.samples[1])

    def test_rejects_off_rate_without_flag(self, tmp_path):
        wavfile.write(tmp_path / "r.wav", 48000, np.zeros(128, dtype=np.int16))
        with pytest.raises(AudioFormatError, match="44100"):
            load_canonical(tmp_path / "r.wav")
        w = load_canonical(tmp_path / "r.wav", allow_resample=True)
        assert w.sample_rate == 44100

    def test_to_stereo_passthrough(self):
        w = sweep()
        assert to_stereo(w) is w
