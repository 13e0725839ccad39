"""Isolated executor for model-generated plotting programs.

Invocation contract (stable; the orchestrator depends on it bit-exactly):

    recode-runner <input_path> <output_path>

The input file holds Python program text. The program must leave an 8-bit
BGR array named ``image_cv2`` in its namespace; the runner converts it to RGB
and writes a PNG to <output_path>. Exit codes:

    0  ok, <output_path> is a decodable PNG
    2  the program raised (traceback on stderr)
    3  image_cv2 missing or not an HxWx3 (or HxW grayscale) uint8 array
    4  the program imported a module outside the allowlist

On any nonzero exit the output file is never created. Rendering is headless
(Agg backend, matplotlib config confined to the output directory) and the
program namespace has no ``open``, so candidate code cannot touch the
filesystem or the network through Python-level imports. This is containment
for sloppy generated code, not a security boundary against adversarial code;
use OS-level isolation in hostile settings.
"""

from __future__ import annotations

import builtins
import os
import sys
import traceback
from pathlib import Path

# The libraries candidate programs are told they may use, by top-level package
# (submodule imports like matplotlib.ticker resolve through their parent).
ALLOWED_TOP_LEVEL = frozenset({"cv2", "numpy", "matplotlib", "math", "seaborn"})

EXIT_OK = 0
EXIT_EXEC_ERROR = 2
EXIT_BAD_OUTPUT = 3
EXIT_BAD_IMPORT = 4


class DisallowedImportError(ImportError):
    pass


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    # Only absolute imports issued from the program's own frames pass through
    # here; library internals keep the real import machinery.
    if level == 0:
        top = name.partition(".")[0]
        if top not in ALLOWED_TOP_LEVEL:
            raise DisallowedImportError(
                f"import of {name!r} is not allowed; programs may only use "
                + ", ".join(sorted(ALLOWED_TOP_LEVEL))
            )
    return builtins.__import__(name, globals, locals, fromlist, level)


def _blocked_open(*args, **kwargs):
    raise PermissionError("candidate programs have no file I/O")


def _program_namespace() -> dict:
    guarded = dict(vars(builtins))
    guarded["__import__"] = _guarded_import
    guarded["open"] = _blocked_open
    return {"__name__": "__main__", "__builtins__": guarded}


def run_program(input_path: str | Path, output_path: str | Path) -> int:
    input_path = Path(input_path)
    output_path = Path(output_path)

    # Headless rendering; matplotlib state stays inside the output directory.
    os.environ.setdefault("MPLBACKEND", "Agg")
    os.environ.setdefault("MPLCONFIGDIR", str(output_path.parent))

    try:
        text = input_path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read program: {exc}", file=sys.stderr)
        return EXIT_EXEC_ERROR

    namespace = _program_namespace()
    try:
        exec(compile(text, str(input_path), "exec"), namespace)
    except DisallowedImportError as exc:
        print(f"disallowed import: {exc}", file=sys.stderr)
        return EXIT_BAD_IMPORT
    except BaseException:
        traceback.print_exc()
        return EXIT_EXEC_ERROR

    import numpy as np

    image = namespace.get("image_cv2")
    if not isinstance(image, np.ndarray):
        print("output variable image_cv2 is missing or not a numpy array", file=sys.stderr)
        return EXIT_BAD_OUTPUT
    if image.dtype != np.uint8:
        print(f"image_cv2 must be uint8, got {image.dtype}", file=sys.stderr)
        return EXIT_BAD_OUTPUT
    if image.ndim == 2:
        # Grayscale output happens in practice; expand rather than waste the candidate.
        image = np.stack([image, image, image], axis=-1)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        print(f"image_cv2 must be HxWx3, got shape {image.shape}", file=sys.stderr)
        return EXIT_BAD_OUTPUT

    from PIL import Image

    rgb = np.ascontiguousarray(image[:, :, ::-1])  # BGR -> RGB
    Image.fromarray(rgb, mode="RGB").save(output_path, format="PNG")
    return EXIT_OK


def main(argv: list[str]) -> int:
    if len(argv) != 3:
        print("usage: recode-runner <input_path> <output_path>", file=sys.stderr)
        return 1
    return run_program(argv[1], argv[2])


def console_main() -> None:
    sys.exit(main(sys.argv))
