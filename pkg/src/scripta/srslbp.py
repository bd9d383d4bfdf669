"""Radial-sampling local binary pattern features.

For each radius R a ring of 8 points is sampled around every interior pixel
(bilinear interpolation off the integer grid) and compared against the
center.  Instead of thresholding the center/neighbor differences at zero,
the threshold is chosen per image and per radius by running Otsu's method
over a 256-bin histogram of all differences for that radius; a neighbor sets
its bit only when the difference exceeds the upper edge of the selected bin.
Each radius is processed independently, so cost grows linearly with the
number of radii.

Per radius, the 8-bit codes are pooled into histograms over horizontal
zones, either one global zone or three half-height zones that overlap by a
quarter of the height.  Zone histograms are L1-normalized individually and
concatenated radius-major, zone-minor into the final feature vector.

Numeric layout choices (offset tables that negate exactly, symmetric
grouping of the interpolation sum, centered differences before weighting)
keep the codes exactly equivariant under 180-degree rotation and exactly
invariant under positive affine remaps of the gray values.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .imagecore import GrayImage

SAMPLES_PER_RING = 8
HIST_BINS = 256

DEFAULT_RADII = tuple(range(1, 13))
DEFAULT_ZONES = "three-halves"


@dataclass(frozen=True)
class RingSpec:
    """Sampling ring: 8 (dy, dx) offsets at angles k*45deg, k = 0..7.

    Offsets for k and k+4 are exact bitwise negations of each other, which
    is what makes the rotation equivariance of the codes exact rather than
    approximate.
    """

    radius: int
    offsets: np.ndarray

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.offsets.shape != (SAMPLES_PER_RING, 2):
            raise ValueError("offsets must have shape (8, 2)")


def make_ring(radius: int) -> RingSpec:
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    r = float(radius)
    d = r * math.sqrt(0.5)
    # (dy, dx) rows; image y axis points down, angles run counterclockwise
    half = [(0.0, r), (-d, d), (-r, 0.0), (-d, -d)]
    offsets = np.array(half + [(-dy, -dx) for dy, dx in half])
    return RingSpec(radius, offsets)


@dataclass(frozen=True)
class CodeMap:
    """8-bit pattern codes for the interior of one image at one radius.

    ``codes`` has shape (H - 2R, W - 2R); ``threshold`` is the difference
    cutoff that was applied (bit set iff difference > threshold).
    """

    codes: np.ndarray
    radius: int
    threshold: float

    def __post_init__(self):
        if self.codes.ndim != 2 or self.codes.dtype != np.uint8:
            raise ValueError("codes must be a 2-D uint8 array")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")


@dataclass(frozen=True)
class ZoneSpec:
    """Horizontal pooling layout: 'global' or 'three-halves'."""

    name: str

    def __post_init__(self):
        if self.name not in ("global", "three-halves"):
            raise ValueError(f"unknown zone layout {self.name!r}")

    @property
    def n_zones(self) -> int:
        return 1 if self.name == "global" else 3

    def row_blocks(self, height: int) -> list[tuple[int, int]]:
        """Half-open row ranges of each zone for a code map of ``height``."""
        if height < 0:
            raise ValueError("height must be non-negative")
        if self.name == "global":
            return [(0, height)]
        return [
            (0, height // 2),
            (height // 4, (3 * height) // 4),
            (height // 2, height),
        ]


@dataclass(frozen=True)
class FeatureVector:
    """Concatenated zone histograms plus the configuration they came from."""

    values: np.ndarray
    radii: tuple[int, ...]
    zones: str

    def __post_init__(self):
        if self.values.ndim != 1 or self.values.dtype != np.float64:
            raise ValueError("values must be a 1-D float64 array")
        expected = len(self.radii) * ZoneSpec(self.zones).n_zones * HIST_BINS
        if self.values.shape[0] != expected:
            raise ValueError(
                f"feature length {self.values.shape[0]} does not match "
                f"configuration ({expected} expected)"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# thresholding


def otsu_threshold(hist: Sequence[int] | np.ndarray) -> int:
    """Index of the 256-bin histogram bin maximizing between-class variance.

    All arithmetic is exact (Python integers), so the argmax never depends
    on floating-point rounding; ties resolve to the smallest index.  A
    histogram with a single occupied bin returns that bin.
    """
    h = np.asarray(hist)
    if h.ndim != 1 or h.shape[0] != HIST_BINS:
        raise ValueError(f"histogram must have {HIST_BINS} bins")
    counts = [int(c) for c in h]
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("histogram is empty")
    occupied = [i for i, c in enumerate(counts) if c > 0]
    if len(occupied) == 1:
        return occupied[0]

    s_total = sum(i * c for i, c in enumerate(counts))
    best_t = 0
    best_num = -1  # compare (S0*w1 - S1*w0)^2 / (w0*w1) as exact fractions
    best_den = 1
    w0 = 0
    s0 = 0
    for t in range(HIST_BINS):
        w0 += counts[t]
        s0 += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            num, den = 0, 1
        else:
            split = s0 * w1 - (s_total - s0) * w0
            num, den = split * split, w0 * w1
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t
    return best_t


# ---------------------------------------------------------------------------
# sampling and code maps


def sample_ring(img: GrayImage, y: int, x: int, radius: int) -> np.ndarray:
    """Bilinearly interpolated gray values of the 8 ring points around (y, x).

    The center must be at least ``radius`` pixels from every border.
    """
    v = img.values
    if not (radius <= y < img.height - radius and radius <= x < img.width - radius):
        raise ValueError(
            f"center ({y}, {x}) closer than {radius} px to the border of a "
            f"{img.height}x{img.width} image"
        )
    out = np.empty(SAMPLES_PER_RING)
    for k, (dy, dx) in enumerate(make_ring(radius).offsets):
        iy = math.floor(dy)
        ix = math.floor(dx)
        fy = dy - iy
        fx = dx - ix
        if fx == 0.0 and fy == 0.0:
            out[k] = v[y + iy, x + ix]
            continue
        p00 = v[y + iy, x + ix]
        p01 = v[y + iy, x + ix + 1]
        p10 = v[y + iy + 1, x + ix]
        p11 = v[y + iy + 1, x + ix + 1]
        w00 = (1.0 - fy) * (1.0 - fx)
        w01 = (1.0 - fy) * fx
        w10 = fy * (1.0 - fx)
        w11 = fy * fx
        out[k] = (w00 * p00 + w11 * p11) + (w01 * p01 + w10 * p10)
    return out


def srs_code_map(img: GrayImage, radius: int) -> CodeMap:
    """Compute the code map of one image at one radius.

    Differences are taken before the interpolation weights are applied
    (constant offsets in the gray values cancel exactly), binned into 256
    equal-width bins spanning their range, and thresholded at the upper edge
    of the Otsu bin.  Images too small to have an interior at this radius
    yield an empty map; a flat difference field yields all-zero codes.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    v = img.values
    m = radius
    hc = img.height - 2 * m
    wc = img.width - 2 * m
    if hc < 1 or wc < 1:
        empty = np.zeros((max(hc, 0), max(wc, 0)), dtype=np.uint8)
        return CodeMap(empty, radius, 0.0)
    center = v[m : m + hc, m : m + wc]

    deltas = np.empty((SAMPLES_PER_RING, hc, wc))
    for k, (dy, dx) in enumerate(make_ring(radius).offsets):
        iy = math.floor(dy)
        ix = math.floor(dx)
        fy = dy - iy
        fx = dx - ix
        if fx == 0.0 and fy == 0.0:
            deltas[k] = v[m + iy : m + iy + hc, m + ix : m + ix + wc] - center
            continue
        d00 = v[m + iy : m + iy + hc, m + ix : m + ix + wc] - center
        d01 = v[m + iy : m + iy + hc, m + ix + 1 : m + ix + 1 + wc] - center
        d10 = v[m + iy + 1 : m + iy + 1 + hc, m + ix : m + ix + wc] - center
        d11 = v[m + iy + 1 : m + iy + 1 + hc, m + ix + 1 : m + ix + 1 + wc] - center
        w00 = (1.0 - fy) * (1.0 - fx)
        w01 = (1.0 - fy) * fx
        w10 = fy * (1.0 - fx)
        w11 = fy * fx
        # symmetric grouping: the two groups swap wholesale under rotation
        deltas[k] = (w00 * d00 + w11 * d11) + (w01 * d01 + w10 * d10)

    dmin = deltas.min()
    dmax = deltas.max()
    if dmax == dmin:
        return CodeMap(np.zeros((hc, wc), dtype=np.uint8), radius, float(dmin))
    width = (dmax - dmin) / HIST_BINS
    idx = np.floor((deltas - dmin) / width).astype(np.int64)
    np.clip(idx, 0, HIST_BINS - 1, out=idx)
    hist = np.bincount(idx.ravel(), minlength=HIST_BINS)
    t = otsu_threshold(hist)
    threshold = dmin + (t + 1) * width

    codes = np.zeros((hc, wc), dtype=np.uint8)
    for k in range(SAMPLES_PER_RING):
        codes |= (deltas[k] > threshold).astype(np.uint8) << np.uint8(k)
    return CodeMap(codes, radius, float(threshold))


# ---------------------------------------------------------------------------
# pooling


def pool_zone_histograms(cmap: CodeMap, zones: ZoneSpec | str) -> np.ndarray:
    """Per-zone L1-normalized 256-bin code histograms, shape (n_zones, 256).

    A zone with no pixels (tiny or empty code maps) yields a zero row.
    """
    spec = ZoneSpec(zones) if isinstance(zones, str) else zones
    out = np.zeros((spec.n_zones, HIST_BINS))
    for z, (lo, hi) in enumerate(spec.row_blocks(cmap.codes.shape[0])):
        block = cmap.codes[lo:hi]
        if block.size == 0:
            continue
        counts = np.bincount(block.ravel(), minlength=HIST_BINS).astype(np.float64)
        out[z] = counts / counts.sum()
    return out


def extract_features(
    img: GrayImage,
    radii: Iterable[int] = DEFAULT_RADII,
    zones: str = DEFAULT_ZONES,
) -> FeatureVector:
    """Full feature vector of one preprocessed image.

    Blocks are laid out radius-major, zone-minor: 256 bins for (radius[0],
    zone 0), then (radius[0], zone 1), ..., then radius[1], and so on.
    """
    radii = _check_radii(radii)
    spec = ZoneSpec(zones)
    parts = [pool_zone_histograms(srs_code_map(img, r), spec).ravel() for r in radii]
    return FeatureVector(np.concatenate(parts), radii, zones)


def _check_radii(radii: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(r) for r in radii)
    if not out:
        raise ValueError("at least one radius is required")
    if any(r < 1 for r in out):
        raise ValueError(f"radii must be positive, got {out}")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError(f"radii must be strictly increasing, got {out}")
    return out


def config_digest(radii: Iterable[int], zones: str) -> bytes:
    """32-byte digest identifying an extraction configuration.

    Feature stores and models carry this digest so that artifacts produced
    under different configurations cannot be mixed silently.
    """
    radii = _check_radii(radii)
    ZoneSpec(zones)
    text = f"radii={','.join(str(r) for r in radii)};zones={zones};norm=block-l1"
    return hashlib.sha256(text.encode("ascii")).digest()
