"""Raster image primitives: decode, lossless PNG encode, resize, grayscale, hashing.

Everything downstream (critics, prompt parts, trajectory files) works on 8-bit
RGB rasters. Alpha is composited over white at decode time; all quantization
rounds half-up.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError

CHANNELS = 3

# BT.601 luma weights; applied as round_half_up(0.299 R + 0.587 G + 0.114 B).
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_ACCEPTED_FORMATS = {"PNG", "JPEG"}


@dataclass(frozen=True)
class RasterImage:
    """Immutable row-major RGB8 pixel grid."""

    width: int
    height: int
    data: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster dimensions must be >= 1, got {self.width}x{self.height}")
        expected = self.width * self.height * CHANNELS
        if len(self.data) != expected:
            raise ValueError(f"raster data holds {len(self.data)} bytes, expected {expected}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        a = np.ascontiguousarray(arr, dtype=np.uint8)
        if a.ndim != 3 or a.shape[2] != CHANNELS:
            raise ValueError(f"expected an HxWx3 array, got shape {a.shape}")
        h, w = a.shape[:2]
        return cls(width=w, height=h, data=a.tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, CHANNELS)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height


def round_half_up_u8(values: np.ndarray) -> np.ndarray:
    """Quantize floats to uint8, rounding .5 away from zero (values are non-negative here)."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def decode_image(data: bytes) -> RasterImage:
    """Decode a PNG or JPEG stream into an RGB8 raster.

    Alpha channels are composited over a white background so renderer
    transparency conventions cannot skew pixel metrics.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            fmt = im.format
            if fmt not in _ACCEPTED_FORMATS:
                raise DecodeError(f"unsupported image format {fmt!r}; expected PNG or JPEG")
            im.load()
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                rgba = im.convert("RGBA")
                background = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
                flattened = Image.alpha_composite(background, rgba).convert("RGB")
            else:
                flattened = im.convert("RGB")
            return RasterImage.from_array(np.asarray(flattened))
    except DecodeError:
        raise
    except UnidentifiedImageError as exc:
        raise DecodeError(f"unrecognized image stream: {exc}") from exc
    except (OSError, ValueError, SyntaxError) as exc:
        # PIL reports truncation and corrupt chunks as OSError/SyntaxError.
        raise DecodeError(f"malformed image stream: {exc}") from exc


def encode_png(img: RasterImage) -> bytes:
    """Encode losslessly; decode(encode_png(img)) is pixel-identical to img."""
    buf = io.BytesIO()
    Image.fromarray(img.to_array(), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _sample_coords(src_len: int, dst_len: int) -> np.ndarray:
    # Corner-aligned: endpoints map onto endpoints. A length-1 target samples
    # the source center so constant images stay constant.
    if dst_len == 1:
        return np.array([(src_len - 1) / 2.0])
    return np.arange(dst_len, dtype=np.float64) * (src_len - 1) / (dst_len - 1)


def resize_bilinear(img: RasterImage, width: int, height: int) -> RasterImage:
    """Corner-aligned bilinear resize with edge clamping and half-up quantization."""
    if width < 1 or height < 1:
        raise ValueError(f"target dimensions must be >= 1, got {width}x{height}")
    if (width, height) == (img.width, img.height):
        return img

    src = img.to_array().astype(np.float64)
    xs = np.clip(_sample_coords(img.width, width), 0, img.width - 1)
    ys = np.clip(_sample_coords(img.height, height), 0, img.height - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]

    top = src[np.ix_(y0, x0)] * (1.0 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1.0 - fx) + src[np.ix_(y1, x1)] * fx
    blended = top * (1.0 - fy) + bottom * fy
    return RasterImage.from_array(round_half_up_u8(blended))


def to_grayscale(img: RasterImage) -> RasterImage:
    """BT.601 luma, replicated across the three channels. Idempotent."""
    a = img.to_array().astype(np.float64)
    wr, wg, wb = LUMA_WEIGHTS
    luma = round_half_up_u8(a[..., 0] * wr + a[..., 1] * wg + a[..., 2] * wb)
    return RasterImage.from_array(np.repeat(luma[..., None], CHANNELS, axis=2))


def luma_plane(img: RasterImage) -> np.ndarray:
    """Quantized grayscale plane as float64, shape (H, W)."""
    return to_grayscale(img).to_array()[..., 0].astype(np.float64)


def content_hash(data: bytes) -> str:
    """SHA-256 of the bytes, lowercase hex. Stable across runs and platforms."""
    return hashlib.sha256(data).hexdigest()
