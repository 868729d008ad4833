import numpy as np
import pytest
import torch
from hypothesis import settings

from depthadapt.depthnet import ArchDescriptor, new_checkpoints

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

TINY = ArchDescriptor(encoder_level_channels=(4, 6, 8), decoder_output_scales=2, input_size=(16, 16))


@pytest.fixture
def tiny_arch():
    return TINY


@pytest.fixture
def tiny_pair():
    return new_checkpoints(TINY, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
