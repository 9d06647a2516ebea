import numpy as np
import pytest
import torch

from silora.backbone import build_toy_backbone, load_toy_backbone
from silora.data import synth_generate

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def random_bundle():
    """Untrained toy backbone (random weights, calibrated latent scale)."""
    return build_toy_backbone(seed=0)


@pytest.fixture(scope="session")
def toy_bundle():
    """Shipped toy backbone with the pretrained autoencoder."""
    return load_toy_backbone()


@pytest.fixture(scope="session")
def small_dataset():
    return synth_generate(8, 64, seed=123)


@pytest.fixture
def images(small_dataset):
    return np.stack([s.image for s in small_dataset])


# acceptance criteria record their verdicts here; printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")
