import os
import sys
from pathlib import Path

# Settings are read at import time, so the environment goes first
os.environ["RMTLAB_ENV"] = "testing"
os.environ.pop("RMTLAB_RECORD_TIMINGS", None)

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.model import EnsembleParams, make_rng, sample_er  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_er():
    """N=24 ER sample, dense enough that the outlier is well separated"""
    params = EnsembleParams(24, 0.3, seed=7)
    return sample_er(params, make_rng(7, 0))


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "runs"
    path.mkdir()
    return str(path)
