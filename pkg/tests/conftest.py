import numpy as np
import pytest
import torch

from attnfp.config import EncoderConfig, FrontendConfig


@pytest.fixture
def fe():
    return FrontendConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder_cfg():
    # 2x6x8 after the front end, one stride-2 block -> 4x3x4 -> 48 -> d=4
    return EncoderConfig(n_mels=6, n_frames=8, base_channels=2, n_down_blocks=1, dim=4, head_hidden=3)


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)
    yield


def sine(freq, seconds, rate, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


# one line per acceptance criterion, shown at the end of every run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
