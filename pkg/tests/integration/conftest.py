"""
Pytest configuration for integration tests.
"""
import os

import pytest

from src.cli.main import dispatch

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
SMOKE_CONFIG = os.path.join(REPO_ROOT, "config", "smoke.yaml")


@pytest.fixture(scope="session")
def smoke_config():
    """Path of the smoke-test options file."""
    return SMOKE_CONFIG


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """Output directory of one smoke-sized F2AT training run."""
    out_dir = str(tmp_path_factory.mktemp("smoke_train"))
    assert dispatch(["train", "--config", SMOKE_CONFIG, "--seed", "11", "--out-dir", out_dir]) == 0
    return out_dir


@pytest.fixture(scope="session")
def smoke_checkpoint(smoke_run):
    """Checkpoint written by the smoke training run."""
    return os.path.join(smoke_run, "checkpoint.f2at")
