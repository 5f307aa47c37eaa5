from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from proposalloc.exceptions import AllUnknown
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import NoBackground
from proposalloc.exceptions import OutOfBounds
from proposalloc.exceptions import Overlap
from proposalloc.imaging import Box
from proposalloc.imaging import GrayMap
from proposalloc.imaging import Image
from proposalloc.imaging import boxes_mask
from proposalloc.imaging import check_box

WEIGHT_EPSILON = 1e-8


class PixelLabel(enum.IntEnum):
    BG = 0
    FG = 1
    UNKNOWN = -1


@dataclass(frozen=True)
class SamplingConfig:
    """How many pixels may be drawn, and from how large a candidate pool.

    ``n_plus``/``n_minus`` fix the pool sizes in pixels; when left unset the
    pools are ``plus_fraction`` of the box area and ``minus_fraction`` of the
    area outside every box.
    """

    n_plus: Optional[int] = None
    n_minus: Optional[int] = None
    plus_fraction: float = 0.3
    minus_fraction: float = 0.3
    samples_per_side: int = 10

    def __post_init__(self):
        for name in ("n_plus", "n_minus"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise InvalidData(f"{name} must be at least 1, got {value}")
        for name in ("plus_fraction", "minus_fraction"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise InvalidData(f"{name} must lie in (0, 1]")
        if self.samples_per_side < 1:
            raise InvalidData("samples_per_side must be at least 1")

    def foreground_pool(self, box_area: int) -> int:
        wanted = (
            self.n_plus
            if self.n_plus is not None
            else round(self.plus_fraction * box_area)
        )
        return int(min(max(wanted, 1), box_area))

    def background_pool(self, exterior_area: int) -> int:
        wanted = (
            self.n_minus
            if self.n_minus is not None
            else round(self.minus_fraction * exterior_area)
        )
        return int(min(max(wanted, 1), exterior_area))


@dataclass(frozen=True, eq=False)
class PseudoLabelMask:
    """Partial per-pixel supervision, row-major, entries from ``PixelLabel``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int8, copy=True)
        if labels.ndim != 2:
            raise InvalidData(f"Pseudo-label mask must be HxW, got {labels.shape}")
        if not np.isin(labels, [label.value for label in PixelLabel]).all():
            raise InvalidData(
                "Pseudo-label mask holds values outside {FG, BG, UNKNOWN}"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != PixelLabel.UNKNOWN

    def to_image(self) -> Image:
        """Grey-level rendering: FG white, BG black, UNKNOWN mid-grey."""
        levels = np.full(self.labels.shape, 128.0)
        levels[self.labels == PixelLabel.FG] = 255.0
        levels[self.labels == PixelLabel.BG] = 0.0
        return Image(levels / 255.0)


def _as_coordinates(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.int64).reshape(-1, 2)


def _draw_count(pool: int, cfg: SamplingConfig, count: Optional[int]) -> int:
    if count is None:
        return min(cfg.samples_per_side, pool)
    if not 0 <= count <= pool:
        raise InvalidData(f"Cannot draw {count} pixels from a pool of {pool}")
    return count


def sample_foreground(
    e: GrayMap,
    box: Box,
    cfg: SamplingConfig,
    rng: np.random.Generator,
    count: Optional[int] = None,
) -> np.ndarray:
    """Draw foreground pixels among the strongest activations inside ``box``.

    The candidates are the top-n+ activations of ``e`` within the box; draws
    are without replacement with probability proportional to the activation.
    Non-positive activations are shifted first so that the weakest candidate
    keeps a small positive weight.

    :param count:
        Pixels to draw; ``min(samples_per_side, n+)`` when omitted.
    :return: distinct ``(x, y)`` rows.
    """
    check_box(box, e.width, e.height)
    inside = e.values[box.y0 : box.y1, box.x0 : box.x1].ravel()
    pool = cfg.foreground_pool(box.area)
    candidates = np.argsort(-inside, kind="stable")[:pool]
    activations = inside[candidates]
    weights = activations
    if activations.min() <= 0.0:
        weights = activations - (activations.min() - WEIGHT_EPSILON)
    draws = _draw_count(pool, cfg, count)
    p = weights / weights.sum()
    chosen = rng.choice(candidates, size=draws, replace=False, p=p)
    ys, xs = np.divmod(chosen, box.width)
    return np.stack([xs + box.x0, ys + box.y0], axis=1)


def sample_background(
    e: GrayMap,
    all_boxes: Sequence[Box],
    cfg: SamplingConfig,
    rng: np.random.Generator,
    count: Optional[int] = None,
) -> np.ndarray:
    """Draw background pixels uniformly among the weakest activations outside all
    boxes.

    :param count:
        Pixels to draw; ``min(samples_per_side, n-)`` when omitted.
    :return: distinct ``(x, y)`` rows.
    :raises NoBackground: if the boxes cover the whole map.
    """
    exterior = ~boxes_mask(all_boxes, e.width, e.height)
    flat = np.flatnonzero(exterior)
    if flat.size == 0:
        raise NoBackground("Proposal boxes cover the entire image")
    pool = cfg.background_pool(flat.size)
    candidates = flat[np.argsort(e.values.ravel()[flat], kind="stable")[:pool]]
    draws = _draw_count(pool, cfg, count)
    chosen = rng.choice(candidates, size=draws, replace=False)
    ys, xs = np.divmod(chosen, e.width)
    return np.stack([xs, ys], axis=1)


def sample_pseudo_labels(
    e: GrayMap,
    box: Box,
    all_boxes: Sequence[Box],
    cfg: SamplingConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw as many foreground as background pixels for one proposal.

    Both sides take ``min(samples_per_side, n+, n-)`` pixels. When the boxes
    leave no exterior, the background is empty and the foreground keeps
    ``min(samples_per_side, n+)``.

    :return: ``(fg, bg)`` arrays of distinct ``(x, y)`` rows.
    """
    check_box(box, e.width, e.height)
    exterior = int(np.count_nonzero(~boxes_mask(all_boxes, e.width, e.height)))
    if exterior == 0:
        return sample_foreground(e, box, cfg, rng), np.empty((0, 2), dtype=np.int64)
    count = min(
        cfg.samples_per_side,
        cfg.foreground_pool(box.area),
        cfg.background_pool(exterior),
    )
    fg = sample_foreground(e, box, cfg, rng, count)
    bg = sample_background(e, all_boxes, cfg, rng, count)
    return fg, bg


def build_pseudo_mask(
    fg: np.ndarray, bg: np.ndarray, width: int, height: int
) -> PseudoLabelMask:
    """Encode sampled ``(x, y)`` pixels as a partial mask, UNKNOWN elsewhere.

    :raises Overlap: if a pixel is both foreground and background.
    :raises OutOfBounds: if a pixel falls outside the image.
    :raises AllUnknown: if neither set holds a pixel.
    """
    fg, bg = _as_coordinates(fg), _as_coordinates(bg)
    for pixels in (fg, bg):
        if pixels.size and (
            pixels.min() < 0
            or pixels[:, 0].max() >= width
            or pixels[:, 1].max() >= height
        ):
            raise OutOfBounds(f"Pixel outside {width}x{height}")
    if len(fg) + len(bg) == 0:
        raise AllUnknown("No labeled pixel to build a mask from")
    labels = np.full((height, width), PixelLabel.UNKNOWN, dtype=np.int8)
    labels[fg[:, 1], fg[:, 0]] = PixelLabel.FG
    if np.any(labels[bg[:, 1], bg[:, 0]] == PixelLabel.FG):
        raise Overlap("A pixel is sampled as both foreground and background")
    labels[bg[:, 1], bg[:, 0]] = PixelLabel.BG
    return PseudoLabelMask(labels)
