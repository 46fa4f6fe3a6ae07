import numpy as np
import pytest
import torch

from s2swtv.core import RunConfig

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by the acceptance module
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def tiny_config() -> RunConfig:
    """A network small enough for sub-second training loops."""
    return RunConfig(depth=2, width=8, t1=20, tk=5, ensemble_size=4, trace_every=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
