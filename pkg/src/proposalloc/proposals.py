from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import proposalloc
from proposalloc.exceptions import ConstantMap
from proposalloc.exceptions import DimensionMismatch
from proposalloc.exceptions import EmptyPool
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import KOutOfRange
from proposalloc.exceptions import MissingInput
from proposalloc.imaging import Box
from proposalloc.imaging import GrayMap
from proposalloc.imaging import Image
from proposalloc.imaging import binarize
from proposalloc.imaging import blur_outside_box
from proposalloc.imaging import connected_components
from proposalloc.imaging import gaussian_blur
from proposalloc.imaging import otsu_threshold
from proposalloc.imaging import resize_bilinear
from proposalloc.imaging import sidecar
from proposalloc.scorer import Scorer
from proposalloc.utils import atomic_write
from proposalloc.utils import read_json

logger = logging.getLogger(proposalloc.__title__)

DEFAULT_K = 5
DEFAULT_BLUR_SIGMA = 10.0
DEFAULT_MIN_AREA = 4


@dataclass(frozen=True)
class AttentionStack:
    """The N single-channel attention maps of one image."""

    maps: Tuple[GrayMap, ...]

    def __post_init__(self):
        maps = tuple(self.maps)
        if len(maps) < 1:
            raise InvalidData("An attention stack needs at least one map")
        if len({m.values.shape for m in maps}) != 1:
            raise InvalidData("Attention maps must share their dimensions")
        object.__setattr__(self, "maps", maps)

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def width(self) -> int:
        return self.maps[0].width

    @property
    def height(self) -> int:
        return self.maps[0].height

    def resized(self, width: int, height: int) -> AttentionStack:
        maps = tuple(resize_bilinear(m, width, height) for m in self.maps)
        return AttentionStack(maps)

    def mean(self) -> GrayMap:
        return GrayMap(np.mean([m.values for m in self.maps], axis=0))


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    map_index: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidData(f"Proposal score {self.score} outside [0, 1]")
        if self.map_index < 0:
            raise InvalidData(f"Negative map index {self.map_index}")

    def to_json(self) -> Dict[str, Any]:
        return {
            "box": self.box.to_list(),
            "map_index": self.map_index,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, value: Dict[str, Any]) -> ScoredBox:
        return cls(
            Box.from_list(value["box"]), int(value["map_index"]), float(value["score"])
        )


def _rank_key(entry: ScoredBox) -> Tuple[float, int, int]:
    return -entry.score, -entry.box.area, entry.map_index


@dataclass(frozen=True)
class ProposalPool:
    """Top-K proposals, best first."""

    entries: Tuple[ScoredBox, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        keys = [_rank_key(e) for e in entries]
        if keys != sorted(keys):
            raise InvalidData("Proposal pool entries must be ranked")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> ScoredBox:
        return self.entries[index]

    @property
    def boxes(self) -> List[Box]:
        return [entry.box for entry in self.entries]


def score_boxes(
    img: Image,
    label: int,
    stack: AttentionStack,
    scorer: Scorer,
    blur_sigma: float,
    min_area: int = DEFAULT_MIN_AREA,
    image_id: Optional[str] = None,
) -> List[ScoredBox]:
    """Every component box of every map, scored by the true-class posterior.

    Boxes are visited map by map, each map's components largest first.
    """
    if (stack.width, stack.height) != (img.width, img.height):
        raise DimensionMismatch(
            f"Attention maps are {stack.width}x{stack.height}, "
            f"image is {img.width}x{img.height}"
        )
    if not 0 <= label < scorer.num_classes:
        raise InvalidData(f"Label {label} outside [0, {scorer.num_classes})")
    blurred = gaussian_blur(img, blur_sigma)
    found: List[ScoredBox] = []
    for map_index, attention in enumerate(stack.maps):
        try:
            threshold = otsu_threshold(attention)
        except ConstantMap:
            logger.warning(
                f"Skipping constant attention map {map_index} of '{image_id}'"
            )
            continue
        for component in connected_components(binarize(attention, threshold)):
            if component.area < min_area:
                continue
            perturbed = blur_outside_box(
                img, component.box, blur_sigma, blurred=blurred
            )
            posterior = scorer.score(perturbed, image_id=image_id, box=component.box)
            found.append(ScoredBox(component.box, map_index, posterior[label]))
    return found


def harvest_proposals(
    img: Image,
    label: int,
    stack: AttentionStack,
    scorer: Scorer,
    k: int = DEFAULT_K,
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
    *,
    min_area: int = DEFAULT_MIN_AREA,
    image_id: Optional[str] = None,
) -> ProposalPool:
    """Build the pool of the ``k`` most discriminative boxes of ``img``.

    Each attention map is Otsu-binarized, each connected region's tight box
    is kept while the rest of the image is blurred, and the box is scored by
    the posterior of ``label`` under ``scorer``.

    :raises EmptyPool: if no map yields a usable box.
    """
    if k < 1:
        raise KOutOfRange(f"K must be at least 1, got {k}")
    found = score_boxes(img, label, stack, scorer, blur_sigma, min_area, image_id)
    if not found:
        raise EmptyPool(f"No proposal found for image '{image_id}'")
    ranked = sorted(found, key=_rank_key)
    logger.debug(f"'{image_id}': kept {min(k, len(ranked))} of {len(ranked)} boxes")
    return ProposalPool(tuple(ranked[:k]))


def draw_index(pool: ProposalPool, rng: np.random.Generator) -> int:
    if len(pool) == 0:
        raise EmptyPool("Cannot select from an empty proposal pool")
    return int(rng.integers(len(pool)))


def select_random_proposal(pool: ProposalPool, rng: np.random.Generator) -> ScoredBox:
    """Uniformly pick one pool entry."""
    return pool[draw_index(pool, rng)]


def pool_to_json(
    image_id: str, label: int, pool: Optional[ProposalPool]
) -> Dict[str, Any]:
    entries = [] if pool is None else [entry.to_json() for entry in pool.entries]
    return {"image_id": image_id, "label": label, "proposals": entries}


def save_pools(path: Path, records: Sequence[Dict[str, Any]]) -> None:
    atomic_write(path, json.dumps(list(records), indent=2))


def load_pools(path: Path) -> Dict[str, ProposalPool]:
    """Pools keyed by image id; images without proposals map to an empty pool."""
    if not path.exists():
        raise MissingInput(f"Proposals not found: '{path}'")
    pools: Dict[str, ProposalPool] = {}
    try:
        for record in read_json(path, "Proposals"):
            entries = tuple(ScoredBox.from_json(v) for v in record["proposals"])
            pools[str(record["image_id"])] = ProposalPool(entries)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidData(f"Malformed proposals '{path}': {e!r}") from e
    return pools


def read_attention_stack(path: Path) -> AttentionStack:
    """Raw little-endian float32 N x H x W file with an ``{n_maps, height, width}``
    sidecar."""
    meta_path = sidecar(path)
    if not path.exists() or not meta_path.exists():
        raise MissingInput(f"Attention stack or its sidecar not found: '{path}'")
    meta = read_json(meta_path, "Attention sidecar")
    try:
        shape = (int(meta["n_maps"]), int(meta["height"]), int(meta["width"]))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidData(f"Malformed attention sidecar '{meta_path}': {e!r}") from e
    if min(shape) < 1:
        raise InvalidData(f"Attention sidecar '{meta_path}' declares {shape}")
    values = np.frombuffer(path.read_bytes(), dtype="<f4")
    if values.size != shape[0] * shape[1] * shape[2]:
        raise InvalidData(
            f"'{path}' holds {values.size} values, sidecar declares {shape}"
        )
    cube = values.reshape(shape).astype(np.float64)
    return AttentionStack(tuple(GrayMap(layer) for layer in cube))


def write_attention_stack(path: Path, stack: AttentionStack) -> None:
    cube = np.stack([m.values for m in stack.maps]).astype("<f4")
    atomic_write(path, cube.tobytes())
    meta = {"n_maps": len(stack), "height": stack.height, "width": stack.width}
    atomic_write(sidecar(path), json.dumps(meta, sort_keys=True))
