import sys
from pathlib import Path

import numpy as np
import pytest

# make the sibling reference module importable from every test file
sys.path.insert(0, str(Path(__file__).parent))

from evit.backbone import VARIANTS, reduced_variant


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_spec():
    """Reduced two-class tiny spec shared by model-level tests."""
    return reduced_variant(VARIANTS["tiny"], num_classes=2)
