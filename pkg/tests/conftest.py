import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdata import make_corpus  # noqa: E402


@pytest.fixture(scope="session")
def tiny_corpus():
    """Ten synthetic raw samples at the native 94x93 resolution."""
    return make_corpus(10, seed=7)


@pytest.fixture(scope="session")
def small_gen_kwargs():
    """Reduced filter bank for fast mechanics tests."""
    return dict(filters=(8, 16, 32, 64, 128), input_size=64)
