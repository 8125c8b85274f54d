import numpy as np
import pytest

from encdec_ad.lstm import EncDecModel
from encdec_ad.numerics import make_rng

ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    """``passed`` is True, False, or None for a criterion that could not run."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"{name}: {status} {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_model(m, c, L, seed, scale=0.5):
    """Initialized model with extra Gaussian jitter so gates leave their linear regime."""
    model = EncDecModel.initialize(m, c, L, seed)
    rng = make_rng([seed, 99])
    return model.with_parameters({k: v + rng.normal(0.0, scale, v.shape) for k, v in model.parameters().items()})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
