import sys
from pathlib import Path

import pytest

# Make tests/helpers.py importable regardless of invocation directory.
sys.path.insert(0, str(Path(__file__).parent))

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture
def raw_sessions_path() -> Path:
    return DATA_DIR / "raw_sessions.jsonl"
