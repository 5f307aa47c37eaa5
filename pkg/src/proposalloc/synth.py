from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import asdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

import proposalloc
from proposalloc.exceptions import ConstantMap
from proposalloc.exceptions import InvalidData
from proposalloc.imaging import BinaryMask
from proposalloc.imaging import Box
from proposalloc.imaging import GrayMap
from proposalloc.imaging import Image
from proposalloc.imaging import binarize
from proposalloc.imaging import connected_components
from proposalloc.imaging import otsu_threshold
from proposalloc.imaging import resize_bilinear
from proposalloc.imaging import write_image
from proposalloc.imaging import write_mask
from proposalloc.model import Dataset
from proposalloc.model import Directory
from proposalloc.model import Record
from proposalloc.model import write_records
from proposalloc.proposals import AttentionStack
from proposalloc.proposals import read_attention_stack
from proposalloc.proposals import write_attention_stack
from proposalloc.utils import atomic_write
from proposalloc.utils import image_rng
from proposalloc.utils import ordered_map
from proposalloc.utils import read_json

logger = logging.getLogger(proposalloc.__title__)

MANIFEST = "manifest.json"

RECOVERY_IOU = 0.7
PLACEMENT_ATTEMPTS = 50
OBJECT_MARGIN = 2
NOISE_GRID = 4

FULL = "full"
PART = "part"

PEAK_RANGE = (0.85, 1.0)
GAIN_FLOOR = 0.65
HOTSPOT_SCALE = 0.15
PART_KEEP = (0.6, 0.8)
SPURIOUS_PROBABILITY = 0.5
SPURIOUS_HEIGHT = (0.35, 0.6)
SPURIOUS_SIGMA = (1.0, 2.0)
JITTER = 0.1


@dataclass(frozen=True)
class SynthSpec:
    num_images: int = 100
    num_classes: int = 4
    image_size: int = 64
    distractors_per_image: int = 3
    attention_maps_per_image: int = 6
    noise_level: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_images < 1:
            raise InvalidData("num_images must be at least 1")
        if self.num_classes < 2:
            raise InvalidData("num_classes must be at least 2")
        if self.image_size < 16:
            raise InvalidData("image_size must be at least 16")
        if self.distractors_per_image < 0:
            raise InvalidData("distractors_per_image must not be negative")
        if self.attention_maps_per_image < 2:
            raise InvalidData("attention_maps_per_image must be at least 2")
        if not 0.0 <= self.noise_level <= 1.0:
            raise InvalidData("noise_level must lie in [0, 1]")

    @property
    def class_maps(self) -> int:
        """Maps of the class object: all of them without distractors, else half."""
        if self.distractors_per_image == 0:
            return self.attention_maps_per_image
        return (self.attention_maps_per_image + 1) // 2

    @property
    def full_class_maps(self) -> int:
        """Class-object maps covering the whole object; the others show a part."""
        return (self.class_maps + 1) // 2


@dataclass(frozen=True)
class SceneObject:
    kind: str
    box: Box
    color: Tuple[float, float, float]
    is_class: bool

    def mask(self, size: int) -> np.ndarray:
        bits = np.zeros((size, size), dtype=bool)
        if self.kind == "rect":
            bits[self.box.y0 : self.box.y1, self.box.x0 : self.box.x1] = True
            return bits
        ys, xs = np.mgrid[0:size, 0:size] + 0.5
        cx = (self.box.x0 + self.box.x1) / 2.0
        cy = (self.box.y0 + self.box.y1) / 2.0
        rx, ry = self.box.width / 2.0, self.box.height / 2.0
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0

    def to_json(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "box": self.box.to_list(),
            "color": list(self.color),
            "is_class": self.is_class,
        }


@dataclass(frozen=True, eq=False)
class SynthImage:
    record: Record
    image: Image
    mask: BinaryMask
    stack: AttentionStack
    objects: Tuple[SceneObject, ...]
    map_objects: Tuple[int, ...]
    map_kinds: Tuple[str, ...]

    def manifest_entry(self) -> Dict[str, Any]:
        return {
            "image_id": self.record.image_id,
            "label": self.record.label,
            "objects": [o.to_json() for o in self.objects],
            "map_objects": list(self.map_objects),
            "map_kinds": list(self.map_kinds),
        }


def image_id_for(index: int) -> str:
    return f"img_{index:04d}"


def class_color(label: int, num_classes: int) -> Tuple[float, float, float]:
    """Saturated hue identifying ``label``."""
    return colorsys.hsv_to_rgb(label / num_classes, 0.85, 0.9)


def class_kind(label: int) -> str:
    return "ellipse" if label % 2 else "rect"


def tight_box(bits: np.ndarray) -> Box:
    ys, xs = np.nonzero(bits)
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _value_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = GrayMap(rng.random((NOISE_GRID, NOISE_GRID)))
    return resize_bilinear(coarse, size, size).values


def _draw_box(rng: np.random.Generator, size: int, low: float, high: float) -> Box:
    lo, hi = max(3, round(low * size)), max(4, round(high * size))
    width, height = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    x0 = int(rng.integers(0, size - width + 1))
    y0 = int(rng.integers(0, size - height + 1))
    return Box(x0, y0, x0 + width, y0 + height)


def _separated(box: Box, placed: List[Box]) -> bool:
    for other in placed:
        if (
            box.x0 < other.x1 + OBJECT_MARGIN
            and other.x0 < box.x1 + OBJECT_MARGIN
            and box.y0 < other.y1 + OBJECT_MARGIN
            and other.y0 < box.y1 + OBJECT_MARGIN
        ):
            return False
    return True


def _place_objects(
    spec: SynthSpec, label: int, rng: np.random.Generator, image_id: str
) -> List[SceneObject]:
    size = spec.image_size
    target = SceneObject(
        class_kind(label),
        _draw_box(rng, size, 0.3, 0.55),
        class_color(label, spec.num_classes),
        True,
    )
    objects = [target]
    for _ in range(spec.distractors_per_image):
        for _ in range(PLACEMENT_ATTEMPTS):
            box = _draw_box(rng, size, 0.12, 0.25)
            if _separated(box, [o.box for o in objects]):
                break
        else:
            logger.debug(f"'{image_id}': no room left for a distractor")
            continue
        gray = float(rng.uniform(0.15, 0.85))
        tint = colorsys.hsv_to_rgb(float(rng.random()), 0.15, gray)
        kind = str(rng.choice(["rect", "ellipse"]))
        objects.append(SceneObject(kind, box, tint, False))
    return objects


def _render(
    spec: SynthSpec, objects: List[SceneObject], rng: np.random.Generator
) -> Tuple[np.ndarray, List[np.ndarray]]:
    size = spec.image_size
    base = 0.35 + 0.3 * _value_noise(rng, size)
    tint = rng.uniform(-0.04, 0.04, size=3)
    pixels = np.clip(base[:, :, np.newaxis] + tint, 0.0, 1.0)
    pixels = pixels + rng.normal(0.0, 0.02, size=pixels.shape)
    masks = [o.mask(size) for o in objects]
    # The class object goes last so it is never hidden
    for index in list(range(1, len(objects))) + [0]:
        pixels[masks[index]] = objects[index].color
    return np.clip(pixels, 0.0, 1.0), masks


def _assign_maps(
    spec: SynthSpec, num_objects: int, rng: np.random.Generator
) -> Tuple[Tuple[int, ...], Tuple[str, ...]]:
    """Object shown by every map, and whether it shows all of it.

    The class object gets ``spec.class_maps`` maps, alternately full and
    partial in map order; distractors share the rest round-robin.
    """
    n_maps = spec.attention_maps_per_image
    own = n_maps if num_objects == 1 else spec.class_maps
    others = [int(i) for i in rng.permutation(np.arange(1, num_objects))]
    assigned = [0] * own + [others[j % len(others)] for j in range(n_maps - own)]
    map_objects = tuple(int(i) for i in rng.permutation(assigned))
    kinds, seen = [], 0
    for index in map_objects:
        if index == 0:
            kinds.append(FULL if seen % 2 == 0 else PART)
            seen += 1
        else:
            kinds.append(FULL)
    return map_objects, tuple(kinds)


def _cut(
    support: np.ndarray, box: Box, rng: np.random.Generator, grid: np.ndarray
) -> np.ndarray:
    """Keep one side of ``support``: a random share of the box along one axis."""
    ys, xs = grid
    keep = float(rng.uniform(*PART_KEEP))
    if int(rng.integers(2)) == 0:
        coords, start, extent = xs, box.x0, box.width
    else:
        coords, start, extent = ys, box.y0, box.height
    if rng.random() < 0.5:
        side = coords < start + keep * extent
    else:
        side = coords > start + (1.0 - keep) * extent
    kept = support & side
    return kept if kept.any() else support


def _object_response(
    spec: SynthSpec,
    mask: np.ndarray,
    box: Box,
    kind: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Object support with soft edges, strongest around a random hot spot."""
    size = spec.image_size
    grid = np.mgrid[0:size, 0:size] + 0.5
    support = _cut(mask, box, rng, grid) if kind == PART else mask
    cy, cx = divmod(int(rng.choice(np.flatnonzero(support))), size)
    spread = HOTSPOT_SCALE * (box.width + box.height) / 2.0
    distance = (grid[1] - cx - 0.5) ** 2 + (grid[0] - cy - 0.5) ** 2
    gain = GAIN_FLOOR + (1.0 - GAIN_FLOOR) * np.exp(-distance / (2.0 * spread**2))
    sigma = max(0.5, size / 64.0)
    # Flat inside the support, soft only outside it
    falloff = ndimage.gaussian_filter(support.astype(np.float64), sigma)
    shape = np.where(support, 1.0, falloff)
    return float(rng.uniform(*PEAK_RANGE)) * gain * shape


def _spurious_blob(
    spec: SynthSpec, avoid: Box, rng: np.random.Generator
) -> Optional[np.ndarray]:
    """Small isolated bump away from ``avoid``, or ``None`` without room."""
    size = spec.image_size
    scale = size / 64.0
    sigma = float(rng.uniform(*SPURIOUS_SIGMA)) * scale
    height = float(rng.uniform(*SPURIOUS_HEIGHT))
    margin = 3.0 * sigma
    for _ in range(PLACEMENT_ATTEMPTS):
        cx, cy = rng.uniform(0.0, size, size=2)
        if (
            avoid.x0 - margin < cx < avoid.x1 + margin
            and avoid.y0 - margin < cy < avoid.y1 + margin
        ):
            continue
        ys, xs = np.mgrid[0:size, 0:size] + 0.5
        distance = (xs - cx) ** 2 + (ys - cy) ** 2
        return height * np.exp(-distance / (2.0 * sigma**2))
    return None


def _attention(
    spec: SynthSpec,
    objects: List[SceneObject],
    masks: List[np.ndarray],
    rng: np.random.Generator,
) -> Tuple[AttentionStack, Tuple[int, ...], Tuple[str, ...]]:
    map_objects, map_kinds = _assign_maps(spec, len(objects), rng)
    size = spec.image_size
    maps = []
    for index, kind in zip(map_objects, map_kinds):
        box = objects[index].box
        values = _object_response(spec, masks[index], box, kind, rng)
        if rng.random() < SPURIOUS_PROBABILITY:
            blob = _spurious_blob(spec, box, rng)
            if blob is not None:
                values = values + blob
        clutter = spec.noise_level * _value_noise(rng, size)
        jitter = JITTER * spec.noise_level * rng.random((size, size))
        maps.append(GrayMap(values + clutter + jitter))
    return AttentionStack(tuple(maps)), map_objects, map_kinds


def synthesize_image(spec: SynthSpec, index: int) -> SynthImage:
    """Build one scene; the result depends only on ``spec`` and ``index``."""
    image_id = image_id_for(index)
    label = index % spec.num_classes
    rng = image_rng(spec.seed, image_id)
    objects = _place_objects(spec, label, rng, image_id)
    pixels, masks = _render(spec, objects, rng)
    stack, map_objects, map_kinds = _attention(spec, objects, masks, rng)
    record = Record(
        image_id=image_id,
        label=label,
        boxes=(tight_box(masks[0]),),
        mask_path=f"{Directory.MASKS}/{image_id}.pgm",
    )
    return SynthImage(
        record,
        Image(pixels),
        BinaryMask(masks[0]),
        stack,
        tuple(objects),
        map_objects,
        map_kinds,
    )


def synth_generate(spec: SynthSpec, root: Path, jobs: int = 1) -> Dataset:
    """Write a synthetic corpus under ``root``.

    Each image holds one class object, whose hue and shape give its label,
    among desaturated distractors on a value-noise background. Every
    attention map responds to a single object, strongest around a hot spot,
    over smooth clutter and sometimes a spurious blob. Half of the maps
    follow the class object and every other one of those covers only part
    of it.
    """

    def write(index: int) -> SynthImage:
        scene = synthesize_image(spec, index)
        image_id = scene.record.image_id
        write_image(root / Directory.IMAGES / f"{image_id}.ppm", scene.image)
        write_mask(root / Directory.MASKS / f"{image_id}.pgm", scene.mask)
        write_attention_stack(
            root / Directory.ATTENTION / f"{image_id}.raw", scene.stack
        )
        return scene

    scenes = ordered_map(write, range(spec.num_images), jobs)
    records = tuple(scene.record for scene in scenes)
    write_records(root / Dataset.GT_FILE, records)
    manifest = {"spec": asdict(spec), "images": [s.manifest_entry() for s in scenes]}
    atomic_write(root / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Wrote {len(records)} images to '{root}'")
    return Dataset(root, records)


def load_manifest(root: Path) -> Dict[str, Any]:
    return read_json(root / MANIFEST, "Manifest")


def recovers_box(gray: GrayMap, box: Box, min_iou: float = RECOVERY_IOU) -> bool:
    """Whether an Otsu region of ``gray`` matches ``box`` at IoU >= ``min_iou``."""
    try:
        threshold = otsu_threshold(gray)
    except ConstantMap:
        return False
    for component in connected_components(binarize(gray, threshold)):
        inter = component.box.intersection(box)
        if inter / (component.box.area + box.area - inter) >= min_iou:
            return True
    return False


def self_check(root: Path, min_iou: float = RECOVERY_IOU) -> float:
    """Fraction of images whose gt box is recovered from a map of the class object."""
    manifest = load_manifest(root)
    dataset = Dataset.load(root)
    hits = 0
    for entry, record in zip(manifest["images"], dataset.records):
        stack = read_attention_stack(dataset.attention_path(record.image_id))
        own = [j for j, o in enumerate(entry["map_objects"]) if o == 0]
        hits += any(recovers_box(stack.maps[j], record.boxes[0], min_iou) for j in own)
    return hits / len(dataset.records)


def companion_settings(
    spec: SynthSpec, output: Optional[str] = "output"
) -> Dict[str, Any]:
    """Run settings suited to a corpus made from ``spec``.

    The pool keeps as many proposals as there are full views of the class
    object, and the CRF weight is large enough for labels to spread over a
    flat-colored region within the step budget.
    """
    return {
        "data": ".",
        "output": output,
        "working_size": spec.image_size,
        "k": spec.full_class_maps,
        "blur_sigma": max(2.0, spec.image_size / 16.0),
        "optimization": {
            "steps": 300,
            "learning_rate": 0.5,
            "lambda1": 1.0,
            "lambda2": 2e-2,
        },
        "seed": spec.seed,
    }
