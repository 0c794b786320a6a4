import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xae.labels import PartitionSpec  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def toy_spec():
    """Digits 0/1/2: S0={0,1}, S1={1,2}; segments {0}, {1}, {2}."""
    return PartitionSpec([0, 1, 2], [[0, 1], [1, 2]], [([0], 3), ([1], 2), ([2], 3)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
