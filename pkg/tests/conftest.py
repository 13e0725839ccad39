import sys
from pathlib import Path

import numpy as np
import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR / "helpers"))

from recode.images import RasterImage

STUB_RUNNER = [sys.executable, str(TESTS_DIR / "helpers" / "stub_runner.py")]
FIXTURES_DIR = TESTS_DIR / "fixtures"


@pytest.fixture
def stub_runner_cmd():
    return list(STUB_RUNNER)


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR


def solid_image(width: int, height: int, rgb: tuple[int, int, int]) -> RasterImage:
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = rgb
    return RasterImage.from_array(arr)


@pytest.fixture
def make_solid():
    return solid_image
