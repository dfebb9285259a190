import numpy as np
import pytest

from cigdtn.data import Pair, load_pairs, synth_dataset
from cigdtn.dsp import AudioClip, StftConfig
from cigdtn.model import ModelConfig

# 62-point frames with hop 31 on 1023-sample clips give a native 32x32
# spectrogram, so the toy model sees it without any resize.
TOY_STFT = StftConfig(window_length=62, fft_size=62, hop=31)
TOY_LENGTH = 1023

# the frozen run configuration used by the CLI tests and the acceptance suite
TOY_CFG = """\
# toy model on a native 32x32 spectrogram
image_side=32
patch_size=8
hidden_dim=16
depth=2
heads=2
conditioning_dim=16
diffusion_steps=4
window_length=62
fft_size=62
hop=31
learning_rate=1e-2
batch_size=8
iterations={iterations}
seed=0
"""

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig.toy()


@pytest.fixture(scope="session")
def toy_stft():
    return TOY_STFT


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy4")
    synth_dataset(root, 4, seed=0, length=TOY_LENGTH)
    return root


@pytest.fixture(scope="session")
def toy_pairs(toy_dataset):
    pairs, skipped = load_pairs(toy_dataset)
    assert skipped == 0
    return pairs


def tone_pair(n=TOY_LENGTH, freq=440.0, noise=0.3, seed=0, name="tone"):
    rng = np.random.default_rng(seed)
    clean = 0.5 * np.sin(2 * np.pi * freq * np.arange(n) / 16000)
    return Pair(name, AudioClip(clean), AudioClip(clean + noise * rng.standard_normal(n)))
