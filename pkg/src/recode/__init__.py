"""Chart derendering agent: reverse-engineer chart and diagram images into
executable plotting programs, select the most faithful reconstruction with a
critic, refine it iteratively, and answer questions with image plus code."""

from .images import RasterImage, content_hash, decode_image, encode_png, resize_bilinear, to_grayscale
from .types import (
    AgentConfig,
    Answer,
    Candidate,
    CriticScore,
    OcrResult,
    ProgramSource,
    Rendering,
    RoundRecord,
    Trajectory,
)

__all__ = [
    "AgentConfig",
    "Answer",
    "Candidate",
    "CriticScore",
    "OcrResult",
    "ProgramSource",
    "RasterImage",
    "Rendering",
    "RoundRecord",
    "Trajectory",
    "content_hash",
    "decode_image",
    "encode_png",
    "resize_bilinear",
    "to_grayscale",
]

__version__ = "0.1.0"
