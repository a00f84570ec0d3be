import numpy as np
import pytest

from srsqueeze.data import PatchSampler, synthetic_images
from srsqueeze.models import ModelConfig
from srsqueeze.training import pretrain

TINY = ModelConfig(16, 2, 2)

_criteria: dict[int, list] = {}


@pytest.fixture(scope="session")
def toy_images():
    """12 synthetic 64x64 RGB images: first 10 for training, last 2 held out."""
    return synthetic_images(12, 64, seed=0)


@pytest.fixture(scope="session")
def train_images(toy_images):
    return toy_images[:10]


@pytest.fixture(scope="session")
def held_out(toy_images):
    return toy_images[10:]


@pytest.fixture(scope="session")
def pretrained_tiny(train_images):
    """(16, 2, 2) x2 model fitted for 300 steps; copy before mutating."""
    return pretrain(TINY, PatchSampler(train_images, patch=32, scale=2, seed=1), 300,
                    seed=0, batch=8, lr=5e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------------

@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not report.failed:
        return
    n = marker.args[0]
    entry = _criteria.setdefault(n, [item.function.__doc__ or item.name, True])
    if report.failed:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        doc, ok = _criteria[n]
        title = doc.strip().splitlines()[0]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
