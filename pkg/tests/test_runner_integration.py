"""Primary executor driving the production runner over its CLI contract."""

import importlib.util
import sys

import pytest

from recode.executor import ExecLimits, render
from recode.types import ProgramSource

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("recode_runner") is None,
    reason="recode-runner package not installed",
)

REAL_RUNNER = [sys.executable, "-m", "recode_runner"]


def test_red_fixture_through_real_runner():
    src = ProgramSource(
        text=(
            "import numpy as np\n"
            "image_cv2 = np.zeros((10, 10, 3), dtype=np.uint8)\n"
            "image_cv2[:, :] = (0, 0, 255)\n"
        )
    )
    rendering = render(src, ExecLimits(timeout_s=60), REAL_RUNNER)
    assert rendering.is_ok, rendering.message
    assert rendering.image.to_array()[0, 0].tolist() == [255, 0, 0]


def test_exit_codes_classified():
    missing_var = ProgramSource(text="import numpy as np\nx = 1\n")
    rendering = render(missing_var, ExecLimits(timeout_s=60), REAL_RUNNER)
    assert rendering.status == "exec_error"
    assert rendering.exit_class == "protocol"

    bad_import = ProgramSource(text="import os\n")
    rendering = render(bad_import, ExecLimits(timeout_s=60), REAL_RUNNER)
    assert rendering.status == "exec_error"
    assert rendering.exit_class == "import"


def test_timeout_through_real_runner():
    src = ProgramSource(text="while True:\n    pass\n")
    rendering = render(src, ExecLimits(timeout_s=1), REAL_RUNNER)
    assert rendering.status == "timeout"
    assert rendering.wall_time_ms >= 1000
