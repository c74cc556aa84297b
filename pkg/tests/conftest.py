import numpy as np
import pytest
import torch

from reverbswap.audio import Waveform, save_wav
from reverbswap.reverb import TRAIN_SPACE, sample_preset
from reverbswap.signals import synth_vocal


@pytest.fixture(scope="session", autouse=True)
def _single_thread_torch():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocal_clip() -> Waveform:
    return synth_vocal(2.0, seed=7)


@pytest.fixture(scope="session")
def short_vocal() -> Waveform:
    return synth_vocal(0.6, seed=11)


@pytest.fixture(scope="session")
def train_preset():
    return sample_preset(TRAIN_SPACE, 3)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Four dry pseudo-vocal WAVs, each a bit over 160 STFT frames long."""
    root = tmp_path_factory.mktemp("corpus")
    clip_len = 160 * 512
    for i in range(4):
        w = synth_vocal(clip_len / 44100 + 0.05, seed=100 + i)
        save_wav(w, root / f"vocal{i}.wav")
    return root


def assert_close(a, b, tol, msg=""):
    err = np.max(np.abs(np.asarray(a) - np.asarray(b)))
    assert err <= tol, f"{msg} max abs error {err} > {tol}"
