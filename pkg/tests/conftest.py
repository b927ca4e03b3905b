import numpy as np
import pytest
import torch

from psldenoise.network import NetworkConfig, init_params


@pytest.fixture
def tiny_config():
    return NetworkConfig(extractor_layers=2, fuser_layers=2, channels_per_branch=4, seed=3)


@pytest.fixture
def tiny_net(tiny_config):
    return init_params(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stack(rng, h=8, w=8, batch=1, dtype=torch.float32):
    return torch.from_numpy(rng.uniform(0.0, 1.0, size=(batch, 4, h, w))).to(dtype)


_criteria: dict[int, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.failed:
        _criteria[number] = "FAIL"
    elif report.when == "call":
        _criteria.setdefault(number, "SKIP" if report.skipped else "PASS")
    elif report.skipped:
        _criteria.setdefault(number, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        terminalreporter.write_line(f"criterion {number:2d}: {_criteria[number]}")
