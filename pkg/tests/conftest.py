import sys

import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_gen_cfg():
    from fundus2ffa.networks import GeneratorConfig

    return GeneratorConfig(base_width=4, n_residual_blocks=1)


@pytest.fixture
def tiny_fx_cfg():
    from fundus2ffa.networks import FeatureExtractorConfig

    return FeatureExtractorConfig(widths=(4, 6, 8, 8, 8), seed=7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(verdicts, key=lambda k: int(k.split("-")[1])):
        terminalreporter.write_line(verdicts[key])
