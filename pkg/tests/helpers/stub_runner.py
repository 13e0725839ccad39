"""Minimal runner-protocol double for the main test suite.

Implements the same command-line contract as the production runner
(`<cmd> <input_path> <output_path>`, exit codes 0/2/3/4) without the import
allowlist, so fixtures stay dependency-light. The production runner lives in
the separate recode-runner package.
"""

import sys
import traceback

import numpy as np
from PIL import Image


def main(argv):
    if len(argv) != 3:
        print("usage: stub_runner <input> <output>", file=sys.stderr)
        return 1
    input_path, output_path = argv[1], argv[2]
    with open(input_path, encoding="utf-8") as fh:
        text = fh.read()
    namespace = {"__name__": "__main__"}
    try:
        exec(compile(text, "<candidate>", "exec"), namespace)
    except BaseException:
        traceback.print_exc()
        return 2
    image = namespace.get("image_cv2")
    if not isinstance(image, np.ndarray) or image.dtype != np.uint8:
        print("image_cv2 missing or not a uint8 numpy array", file=sys.stderr)
        return 3
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        print(f"image_cv2 has invalid shape {image.shape}", file=sys.stderr)
        return 3
    # Programs emit BGR; the protocol stores RGB PNGs.
    Image.fromarray(image[:, :, ::-1]).save(output_path, format="PNG")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
