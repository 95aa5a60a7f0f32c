import numpy as np
import pytest
from hypothesis import settings

from act_tensor.tensor import CpModel, MaskedTensor, reconstruct

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def planted(shape, rank, seed=0):
    """Noiseless rank-`rank` tensor and its factors."""
    rng = np.random.default_rng(seed)
    T, N, L = shape
    model = CpModel(rng.standard_normal((T, rank)), rng.standard_normal((N, rank)), rng.standard_normal((L, rank)))
    return reconstruct(model), model


def random_masked(shape, density, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(shape)
    mask = rng.random(shape) < density
    return MaskedTensor(values, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one verdict line each; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
