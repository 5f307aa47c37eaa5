from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError
from scipy import ndimage

import proposalloc
from proposalloc.exceptions import ConstantMap
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingInput
from proposalloc.exceptions import NonPositiveSigma
from proposalloc.exceptions import OutOfBounds
from proposalloc.utils import atomic_write
from proposalloc.utils import read_json

logger = logging.getLogger(proposalloc.__title__)

HISTOGRAM_BINS = 256

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Image:
    """Pixel grid of shape (height, width, channels) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise InvalidData(f"Image must be HxWx1 or HxWx3, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidData("Image must have at least one pixel")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise InvalidData("Image values must lie in [0, 1]")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class GrayMap:
    """Single-channel real map of shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidData(
                f"GrayMap must be a non-empty HxW array, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidData("GrayMap values must be finite")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def normalized(self) -> GrayMap:
        """Min-max scaled copy in [0, 1]; a constant map becomes all zeros."""
        low, high = float(self.values.min()), float(self.values.max())
        if high <= low:
            return GrayMap(np.zeros_like(self.values))
        return GrayMap((self.values - low) / (high - low))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise InvalidData(f"BinaryMask must be HxW, got {bits.shape}")
        object.__setattr__(self, "bits", _readonly(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box, ``x0``/``y0`` inclusive and ``x1``/``y1`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x0 < 0 or self.y0 < 0 or self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InvalidData(f"Invalid box {self.to_list()}")

    @classmethod
    def from_list(cls, values: Sequence[int]) -> Box:
        if len(values) != 4:
            raise InvalidData(f"A box needs 4 coordinates, got {list(values)}")
        return cls(*values)

    def to_list(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def within(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def intersection(self, other: Box) -> int:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0) * max(h, 0)


class Component(NamedTuple):
    """Connected region: pixel coordinates as (x, y) rows and its tight box."""

    pixels: np.ndarray
    box: Box

    @property
    def area(self) -> int:
        return len(self.pixels)


def check_box(box: Box, width: int, height: int) -> None:
    if not box.within(width, height):
        raise OutOfBounds(f"Box {box.to_list()} exceeds {width}x{height}")


def boxes_mask(boxes: Iterable[Box], width: int, height: int) -> np.ndarray:
    """Boolean HxW array, true inside any of the boxes."""
    covered = np.zeros((height, width), dtype=bool)
    for box in boxes:
        check_box(box, width, height)
        covered[box.y0 : box.y1, box.x0 : box.x1] = True
    return covered


def histogram_bins(gray: GrayMap) -> np.ndarray:
    """256-bin index of every value after min-max normalization."""
    low, high = float(gray.values.min()), float(gray.values.max())
    if high <= low:
        raise ConstantMap(f"Map is constant ({low}); nothing to threshold")
    normalized = (gray.values - low) / (high - low)
    bins = np.floor(normalized * HISTOGRAM_BINS).astype(np.int64)
    return np.clip(bins, 0, HISTOGRAM_BINS - 1)


def otsu_bin(gray: GrayMap) -> int:
    """First histogram bin of the upper class in the best Otsu split.

    Returns ``k`` in ``[1, 255]``: bins ``< k`` form the lower class.
    """
    bins = histogram_bins(gray)
    counts = np.bincount(bins.ravel(), minlength=HISTOGRAM_BINS).astype(np.float64)
    total = counts.sum()
    omega = np.cumsum(counts)[:-1] / total
    mu = np.cumsum(counts * np.arange(HISTOGRAM_BINS))[:-1] / total
    mu_total = float(np.dot(counts, np.arange(HISTOGRAM_BINS))) / total
    # Bin 0 and bin 255 are always populated, so both classes are non-empty
    between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    return int(np.argmax(between)) + 1


def otsu_threshold(gray: GrayMap) -> float:
    """Otsu threshold over a 256-bin histogram, in the map's own value scale.

    The threshold is the lower boundary of bin ``otsu_bin(gray)``, moved into
    ``[max of the lower class, min of the upper class)`` when rounding puts it
    outside. ``binarize(gray, t)`` then keeps exactly the upper-class bins.

    :raises ConstantMap: if the map has a single value.
    """
    k = otsu_bin(gray)
    values = gray.values
    low, high = float(values.min()), float(values.max())
    boundary = low + (k / HISTOGRAM_BINS) * (high - low)
    upper = histogram_bins(gray) >= k
    lower_max = float(values[~upper].max())
    upper_min = float(values[upper].min())
    return min(max(boundary, lower_max), float(np.nextafter(upper_min, -np.inf)))


def binarize(gray: GrayMap, threshold: float) -> BinaryMask:
    return BinaryMask(gray.values > threshold)


def connected_components(mask: BinaryMask) -> List[Component]:
    """8-connected regions of the true pixels, largest first.

    Ties in area are broken by the (y0, x0) corner of the tight box, then by
    raster order of the region's first pixel.
    """
    labels, count = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    components: List[Component] = []
    for index, (rows, cols) in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[rows, cols] == index)
        pixels = np.stack([xs + cols.start, ys + rows.start], axis=1)
        box = Box(cols.start, rows.start, cols.stop, rows.stop)
        components.append(Component(_readonly(pixels), box))
    components.sort(key=lambda c: (-c.area, c.box.y0, c.box.x0))
    return components


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(x**2) / (2 * sigma**2))
    return weights / weights.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), clamped borders."""
    if not sigma > 0:
        raise NonPositiveSigma(f"Blur sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    blurred = img.data
    for axis in (0, 1):
        blurred = ndimage.gaussian_filter1d(
            blurred, sigma, axis=axis, mode="nearest", radius=radius
        )
    return Image(np.clip(blurred, 0.0, 1.0))


def blur_outside_box(
    img: Image, box: Box, sigma: float, blurred: Optional[Image] = None
) -> Image:
    """Blur everything but the content of ``box``.

    ``blurred`` may carry a precomputed ``gaussian_blur(img, sigma)`` so that
    many boxes of one image share a single convolution.
    """
    check_box(box, img.width, img.height)
    if blurred is None:
        blurred = gaussian_blur(img, sigma)
    elif not sigma > 0:
        raise NonPositiveSigma(f"Blur sigma must be positive, got {sigma}")
    data = np.array(blurred.data)
    data[box.y0 : box.y1, box.x0 : box.x1] = img.data[box.y0 : box.y1, box.x0 : box.x1]
    return Image(data)


def _sample_positions(size_in: int, size_out: int) -> np.ndarray:
    if size_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, size_in - 1.0, size_out)


def resize_bilinear(gray: GrayMap, out_w: int, out_h: int) -> GrayMap:
    """Bilinear resampling with corner-aligned sample positions."""
    if out_w < 1 or out_h < 1:
        raise InvalidData(f"Output size must be positive, got {out_w}x{out_h}")
    if (out_h, out_w) == gray.values.shape:
        return GrayMap(gray.values)
    rows, cols = np.meshgrid(
        _sample_positions(gray.height, out_h),
        _sample_positions(gray.width, out_w),
        indexing="ij",
    )
    resized = ndimage.map_coordinates(
        gray.values, [rows, cols], order=1, mode="nearest"
    )
    return GrayMap(resized)


def resize_image(img: Image, out_w: int, out_h: int) -> Image:
    if (img.width, img.height) == (out_w, out_h):
        return img
    channels = [
        resize_bilinear(GrayMap(img.data[:, :, c]), out_w, out_h).values
        for c in range(img.channels)
    ]
    return Image(np.clip(np.stack(channels, axis=2), 0.0, 1.0))


def read_image(path: Path) -> Image:
    """Load an 8-bit PPM (P6) or PGM (P5) image into [0, 1]."""
    if not path.exists():
        raise MissingInput(f"Image not found: '{path}'")
    try:
        with PILImage.open(path) as pil:
            pil = pil if pil.mode in ("L", "RGB") else pil.convert("RGB")
            data = np.asarray(pil, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise InvalidData(f"Unreadable image '{path}': {e}") from e
    return Image(data)


def encode_image(img: Image) -> bytes:
    quantized = np.rint(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = PILImage.fromarray(quantized[:, :, 0])
    else:
        pil = PILImage.fromarray(quantized)
    buffer = io.BytesIO()
    pil.save(buffer, format="PPM")
    return buffer.getvalue()


def write_image(path: Path, img: Image) -> None:
    atomic_write(path, encode_image(img))


def read_mask(path: Path) -> BinaryMask:
    """PGM mask, any nonzero pixel is foreground."""
    return BinaryMask(read_image(path).data[:, :, 0] > 0)


def write_mask(path: Path, mask: BinaryMask) -> None:
    write_image(path, Image(mask.bits.astype(np.float64)))


def sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_gray_map(path: Path, gray: GrayMap) -> None:
    """Raw little-endian float32 values plus a ``{width, height}`` sidecar."""
    atomic_write(path, gray.values.astype("<f4").tobytes())
    meta = {"width": gray.width, "height": gray.height}
    atomic_write(sidecar(path), json.dumps(meta, sort_keys=True))


def read_gray_map(path: Path) -> GrayMap:
    meta_path = sidecar(path)
    if not path.exists() or not meta_path.exists():
        raise MissingInput(f"Map or its sidecar not found: '{path}'")
    meta = read_json(meta_path, "Map sidecar")
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidData(f"Malformed map sidecar '{meta_path}': {e!r}") from e
    values = np.frombuffer(path.read_bytes(), dtype="<f4")
    if width < 1 or height < 1 or values.size != width * height:
        raise InvalidData(
            f"'{path}' holds {values.size} values, sidecar declares {width}x{height}"
        )
    return GrayMap(values.reshape(height, width).astype(np.float64))


def box_tuple(box: Box) -> Tuple[int, int, int, int]:
    return box.x0, box.y0, box.x1, box.y1
