import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import Bench  # noqa: E402


@pytest.fixture
def bench(tmp_path):
    b = Bench(tmp_path / "node")
    yield b
    b.close()


@pytest.fixture
def ready_bench(tmp_path):
    """Bench with the four default stakeholders already committed."""
    b = Bench(tmp_path / "node")
    b.register_defaults()
    yield b
    b.close()
