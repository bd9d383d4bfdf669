"""Image decoding and preprocessing.

Two normalization steps are applied before texture extraction:

1. Grayscale projection onto the principal component of the image's pixel
   colors, which keeps chroma contrast that plain luminance would wash out.
   The projection is min-max rescaled to [0, 1], so the result is invariant
   to global affine changes of the input colors.
2. Polarity normalization: text images come as dark-on-light or
   light-on-dark, and local pattern codes are not symmetric under intensity
   inversion.  Assuming foreground dominates the central band of the image
   (columns between 25% and 75% of the width), an image whose central band
   is darker than its global mean is inverted.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, UnsupportedFormatError

# ITU-R 601 luminance weights, used only when the color covariance is zero.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class RasterImage:
    """Decoded 8-bit RGB image; ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("pixels must be a (H, W, 3) uint8 array")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with values in [0, 1].

    ``polarity_flipped`` records whether :func:`normalize_polarity` inverted
    the intensities when this image was produced.
    """

    values: np.ndarray
    polarity_flipped: bool = field(default=False)

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.dtype != np.float64:
            raise ValueError("values must be a 2-D float64 array")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Decoding


def decode_image(data: bytes) -> RasterImage:
    """Decode a PNG or PNM (P5/P6) file into a :class:`RasterImage`.

    Grayscale sources are replicated across the three channels.  Raises
    :class:`DecodeError` for malformed input and
    :class:`UnsupportedFormatError` for recognizable but unsupported files.
    """
    if len(data) == 0:
        raise DecodeError("empty input: no image data")
    if data.startswith(_PNG_SIGNATURE):
        return _decode_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    head = data[: min(8, len(data))]
    raise UnsupportedFormatError(
        f"unsupported image format (leading bytes {head!r}); expected PNG or PNM P5/P6"
    )


def load_image(path: str | Path) -> RasterImage:
    """Read and decode an image file from disk."""
    return decode_image(Path(path).read_bytes())


def encode_pnm(img: RasterImage) -> bytes:
    """Serialize an image as a binary P6 PNM file (inverse of decode)."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _decode_png(data: bytes) -> RasterImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"malformed PNG: {exc}") from exc
    return RasterImage(pixels)


def _decode_pnm(data: bytes) -> RasterImage:
    magic = data[:2]
    pos = 2

    def skip_separators(pos: int) -> int:
        # whitespace and '#' comments may separate header tokens
        while pos < len(data):
            c = data[pos : pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        return pos

    def read_int(pos: int, what: str) -> tuple[int, int]:
        pos = skip_separators(pos)
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise DecodeError(f"malformed PNM: expected {what} at byte offset {start}")
        return int(data[start:pos]), pos

    width, pos = read_int(pos, "width")
    height, pos = read_int(pos, "height")
    maxval, pos = read_int(pos, "maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"malformed PNM: non-positive dimensions {width}x{height}")
    if maxval < 1:
        raise DecodeError(f"malformed PNM: maxval {maxval} < 1")
    if maxval > 255:
        raise UnsupportedFormatError(
            f"PNM maxval {maxval} not supported (8-bit samples only)"
        )
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError(
            f"malformed PNM: expected single whitespace after maxval at byte offset {pos}"
        )
    pos += 1

    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"truncated PNM: need {expected} pixel bytes from byte offset {pos}, "
            f"found {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        pixels = np.repeat(raw.reshape(height, width, 1), 3, axis=2)
    else:
        pixels = raw.reshape(height, width, 3)
    return RasterImage(np.ascontiguousarray(pixels))


# ---------------------------------------------------------------------------
# Preprocessing


def pca_gray(img: RasterImage) -> GrayImage:
    """Project each pixel onto the principal color axis and rescale to [0, 1].

    The covariance of the RGB values is accumulated from exact integer
    moments, normalized by its largest absolute entry (the overall scale is
    irrelevant after the min-max rescale), and decomposed with ``eigh``.  The
    leading eigenvector's sign is fixed so its dot product with (1, 1, 1) is
    non-negative; an exact zero falls back to making the first nonzero
    component positive.  A zero covariance (constant-color image) falls back
    to the luminance channel, and a constant luminance yields all 0.5.
    """
    pixels = img.pixels.reshape(-1, 3).astype(np.float64)
    n = pixels.shape[0]
    s = pixels.sum(axis=0)
    q = pixels.T @ pixels
    # n^2 * covariance; exact in float64 for images up to ~2^37 pixels
    m = n * q - np.outer(s, s)
    scale = np.abs(m).max()
    if scale == 0.0:
        values = pixels @ _LUMA_WEIGHTS
    else:
        _, vecs = np.linalg.eigh(m / scale)
        axis = vecs[:, -1]
        direction = axis.sum()
        if direction < 0.0:
            axis = -axis
        elif direction == 0.0:
            leading = axis[np.nonzero(axis)[0][0]]
            if leading < 0.0:
                axis = -axis
        # centered projection from integer moments: (n*p - s) . axis
        values = (n * pixels - s) @ axis
    return GrayImage(_rescale_unit(values).reshape(img.height, img.width))


def _rescale_unit(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def normalize_polarity(img: GrayImage) -> GrayImage:
    """Invert the image when its central band is darker than the global mean.

    The band covers columns [floor(0.25*W), floor(0.75*W)) over all rows.  On
    a tie (band mean equal to the global mean) the image is left unchanged.
    The returned flag records whether this call inverted the intensities.
    """
    w = img.width
    lo = int(0.25 * w)
    hi = int(0.75 * w)
    if hi <= lo:  # band empty for very narrow images: nothing to compare
        return GrayImage(img.values, polarity_flipped=False)
    band_mean = img.values[:, lo:hi].mean()
    global_mean = img.values.mean()
    if band_mean < global_mean:
        return GrayImage(1.0 - img.values, polarity_flipped=True)
    return GrayImage(img.values, polarity_flipped=False)


def preprocess(img: RasterImage) -> GrayImage:
    """Full preprocessing chain: principal-color grayscale, then polarity."""
    return normalize_polarity(pca_gray(img))
