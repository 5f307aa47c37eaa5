from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import proposalloc
from proposalloc.exceptions import DimensionMismatch
from proposalloc.exceptions import EmptyDataset
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingGtBox
from proposalloc.exceptions import MissingMask
from proposalloc.exceptions import OutOfBounds
from proposalloc.exceptions import ShortPredictionList
from proposalloc.imaging import BinaryMask
from proposalloc.imaging import Box
from proposalloc.imaging import connected_components
from proposalloc.losses import LocalizationMap
from proposalloc.mapopt import binarize_map
from proposalloc.utils import atomic_write
from proposalloc.utils import ordered_map

logger = logging.getLogger(proposalloc.__title__)

DEFAULT_DELTAS: Tuple[float, ...] = (0.3, 0.5, 0.7)
LOCALIZATION_DELTA = 0.5
PART_IOP = 0.5
MORE_IOA = 0.7
MULTI_IOG = 0.3


def default_thresholds() -> np.ndarray:
    """The 256 thresholds i/255 swept by every dataset-level metric."""
    return np.arange(256, dtype=np.float64) / 255.0


@dataclass(frozen=True)
class GtAnnotation:
    image_id: str
    class_label: int
    gt_boxes: Tuple[Box, ...]
    gt_mask: Optional[BinaryMask] = None

    def __post_init__(self):
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))

    def check(self, width: int, height: int) -> None:
        for box in self.gt_boxes:
            if not box.within(width, height):
                raise OutOfBounds(f"'{self.image_id}': box {box.to_list()} exceeds map")
        if self.gt_mask is not None and self.gt_mask.bits.shape != (height, width):
            raise DimensionMismatch(f"'{self.image_id}': mask does not match its map")


class BoxRatios(NamedTuple):
    iou: float
    iop: float
    ioa: float
    iog: float


def box_ratios(pred: Box, gt: Box) -> BoxRatios:
    """Intersection over union, predicted area, annotated area and gt area.

    IoA and IoG both divide by the ground-truth box; the two names are kept
    because the error metrics are defined with them separately.
    """
    inter = pred.intersection(gt)
    union = pred.area + gt.area - inter
    return BoxRatios(inter / union, inter / pred.area, inter / gt.area, inter / gt.area)


def boxes_from_map(S: LocalizationMap, tau: float) -> List[Box]:
    """Tight boxes of the 8-connected regions of S1 > tau, largest first."""
    return [component.box for component in connected_components(binarize_map(S, tau))]


def _check_pairs(maps: Sequence[LocalizationMap], gts: Sequence[GtAnnotation]) -> None:
    if len(maps) != len(gts):
        raise DimensionMismatch(f"{len(maps)} maps for {len(gts)} annotations")
    if len(maps) == 0:
        raise EmptyDataset("Nothing to evaluate")
    for S, gt in zip(maps, gts):
        gt.check(S.width, S.height)


def _check_boxes(gts: Sequence[GtAnnotation]) -> None:
    for gt in gts:
        if not gt.gt_boxes:
            raise MissingGtBox(f"'{gt.image_id}' has no ground-truth box")


def pxap(
    maps: Sequence[LocalizationMap],
    gts: Sequence[GtAnnotation],
    thresholds: Optional[np.ndarray] = None,
) -> float:
    """Area under the dataset-pooled pixel precision-recall curve.

    Operating points are S1 > tau for every swept tau, visited from the
    highest threshold down and closed by the all-positive point (recall 1,
    precision equal to the foreground prevalence). Precision with no
    positive prediction counts as 1.
    """
    _check_pairs(maps, gts)
    thresholds = default_thresholds() if thresholds is None else np.sort(thresholds)
    tp = np.zeros(thresholds.size)
    fp = np.zeros(thresholds.size)
    positives = total = 0
    for S, gt in zip(maps, gts):
        if gt.gt_mask is None:
            raise MissingMask(f"'{gt.image_id}' has no ground-truth mask")
        inside = np.sort(S.foreground[gt.gt_mask.bits])
        outside = np.sort(S.foreground[~gt.gt_mask.bits])
        tp += inside.size - np.searchsorted(inside, thresholds, side="right")
        fp += outside.size - np.searchsorted(outside, thresholds, side="right")
        positives += inside.size
        total += inside.size + outside.size
    if positives == 0:
        logger.warning("Ground-truth masks hold no foreground pixel; PxAP is 0")
        return 0.0
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.ones_like(tp), where=predicted > 0)
    recall = tp / positives
    precision = np.append(precision[::-1], positives / total)
    recall = np.append(recall[::-1], 1.0)
    return float(np.sum(precision * np.diff(recall, prepend=0.0)))


def _best_ious(
    S: LocalizationMap, gt: GtAnnotation, thresholds: np.ndarray
) -> np.ndarray:
    values = np.sort(S.foreground.ravel())
    counts = values.size - np.searchsorted(values, thresholds, side="right")
    best = np.zeros(thresholds.size)
    previous_count, previous_iou = -1, 0.0
    for i, tau in enumerate(thresholds):
        # Same number of pixels above tau means the same binary mask
        if counts[i] != previous_count:
            boxes = boxes_from_map(S, tau)
            previous_iou = max(
                (box_ratios(p, g).iou for p in boxes for g in gt.gt_boxes),
                default=0.0,
            )
            previous_count = counts[i]
        best[i] = previous_iou
    return best


def image_ious(
    maps: Sequence[LocalizationMap],
    gts: Sequence[GtAnnotation],
    thresholds: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> np.ndarray:
    """Best box IoU of every image at every threshold, shape (thresholds, images)."""
    _check_pairs(maps, gts)
    _check_boxes(gts)
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds)
    rows = ordered_map(
        lambda pair: _best_ious(pair[0], pair[1], thresholds), zip(maps, gts), jobs
    )
    return np.stack(rows, axis=1)


@dataclass(frozen=True, eq=False)
class BoxAccuracy:
    """Accuracy curve over thresholds for each IoU criterion."""

    thresholds: np.ndarray
    deltas: Tuple[float, ...]
    curve: np.ndarray
    ious: np.ndarray

    def best_index(self, delta: float) -> int:
        return int(np.argmax(self.curve[:, self.deltas.index(delta)]))

    @property
    def per_delta(self) -> Dict[float, float]:
        return {
            d: float(self.curve[self.best_index(d), j])
            for j, d in enumerate(self.deltas)
        }

    @property
    def best_threshold(self) -> Dict[float, float]:
        return {d: float(self.thresholds[self.best_index(d)]) for d in self.deltas}

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_delta.values())))

    def to_csv(self) -> str:
        header = ",".join(["tau"] + [f"acc@{d:g}" for d in self.deltas])
        lines = [header]
        for tau, row in zip(self.thresholds, self.curve):
            lines.append(",".join([f"{tau:.6f}"] + [f"{v:.4f}" for v in row]))
        return "\n".join(lines) + "\n"


def box_accuracy(
    ious: np.ndarray, thresholds: np.ndarray, deltas: Sequence[float] = DEFAULT_DELTAS
) -> BoxAccuracy:
    deltas = tuple(float(d) for d in deltas)
    curve = np.stack([100.0 * np.mean(ious >= d, axis=1) for d in deltas], axis=1)
    return BoxAccuracy(np.asarray(thresholds), deltas, curve, ious)


def maxboxacc(
    maps: Sequence[LocalizationMap],
    gts: Sequence[GtAnnotation],
    deltas: Sequence[float] = DEFAULT_DELTAS,
    thresholds: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> BoxAccuracy:
    """Box accuracy at the best single threshold shared by the whole dataset.

    Every connected region contributes a candidate box and an image counts
    as localized at ``delta`` when its best box reaches IoU >= ``delta``.
    """
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds)
    return box_accuracy(image_ious(maps, gts, thresholds, jobs), thresholds, deltas)


def topk_loc(
    preds: Sequence[Sequence[int]],
    maps: Sequence[LocalizationMap],
    gts: Sequence[GtAnnotation],
    k: int,
    delta: float = LOCALIZATION_DELTA,
    thresholds: Optional[np.ndarray] = None,
    accuracy: Optional[BoxAccuracy] = None,
) -> float:
    """Percentage of images with the label in the top ``k`` and IoU >= ``delta``.

    The IoU is read at the dataset-optimal threshold for ``delta``; pass
    ``accuracy`` to reuse a curve already computed over the same data.
    """
    if len(preds) != len(gts):
        raise DimensionMismatch(f"{len(preds)} predictions for {len(gts)} annotations")
    for gt, ranked in zip(gts, preds):
        if len(ranked) < k:
            raise ShortPredictionList(
                f"'{gt.image_id}': {len(ranked)} predictions, need {k}"
            )
    if accuracy is None or delta not in accuracy.deltas:
        accuracy = maxboxacc(maps, gts, (delta,), thresholds)
    ious = accuracy.ious[accuracy.best_index(delta)]
    hits = [
        gt.class_label in list(ranked)[:k] and iou >= delta
        for gt, ranked, iou in zip(gts, preds, ious)
    ]
    return 100.0 * float(np.mean(hits))


class ErrorRates(NamedTuple):
    lpe: float
    lme: float
    mie: float


def error_metrics(
    pred_boxes: Sequence[Optional[Box]],
    gts: Sequence[GtAnnotation],
    condition_on_failure: bool = True,
) -> ErrorRates:
    """Part, more and multi-instance error rates, as percentages of all images.

    LPE and LME only count images whose box misses IoU 0.5 unless
    ``condition_on_failure`` is false; both use the best-matching gt box.
    An image without a predicted box counts in none of the three.
    """
    if len(pred_boxes) != len(gts):
        raise DimensionMismatch(f"{len(pred_boxes)} boxes for {len(gts)} annotations")
    if len(gts) == 0:
        raise EmptyDataset("Nothing to evaluate")
    _check_boxes(gts)
    part = more = multi = 0
    for pred, gt in zip(pred_boxes, gts):
        if pred is None:
            continue
        ratios = [box_ratios(pred, g) for g in gt.gt_boxes]
        best = max(ratios, key=lambda r: r.iou)
        if best.iou < LOCALIZATION_DELTA or not condition_on_failure:
            part += best.iop > PART_IOP
            more += best.ioa > MORE_IOA
        multi += sum(r.iog > MULTI_IOG for r in ratios) >= 2
    n = len(gts)
    return ErrorRates(100.0 * part / n, 100.0 * more / n, 100.0 * multi / n)


def primary_boxes(maps: Sequence[LocalizationMap], tau: float) -> List[Optional[Box]]:
    """Largest region box of each map at ``tau``, ``None`` where nothing exceeds it."""
    boxes = []
    for S in maps:
        found = boxes_from_map(S, tau)
        boxes.append(found[0] if found else None)
    return boxes


@dataclass(frozen=True)
class MetricsReport:
    pxap: Optional[float]
    maxboxacc_per_delta: Dict[str, float]
    maxboxacc_mean: float
    top1_loc: Optional[float]
    top5_loc: Optional[float]
    lpe: float
    lme: float
    mie: float
    best_threshold: Dict[str, float]
    num_images: int

    def to_json(self) -> Dict[str, Any]:
        return {
            "pxap": self.pxap,
            "maxboxacc_per_delta": self.maxboxacc_per_delta,
            "maxboxacc_mean": self.maxboxacc_mean,
            "top1_loc": self.top1_loc,
            "top5_loc": self.top5_loc,
            "lpe": self.lpe,
            "lme": self.lme,
            "mie": self.mie,
            "best_threshold": self.best_threshold,
            "num_images": self.num_images,
        }


def evaluate(
    maps: Sequence[LocalizationMap],
    gts: Sequence[GtAnnotation],
    predictions: Optional[Sequence[Sequence[int]]] = None,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    thresholds: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> Tuple[MetricsReport, BoxAccuracy]:
    """Every localization measure over one dataset.

    PxAP is ``None`` unless every annotation carries a mask; Top-k Loc is
    ``None`` without class predictions, and Top-5 falls back to every
    predicted label when fewer than five are given.
    """
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds)
    deltas = tuple(deltas)
    if LOCALIZATION_DELTA not in deltas:
        raise InvalidData(f"Deltas must include {LOCALIZATION_DELTA}")
    accuracy = maxboxacc(maps, gts, deltas, thresholds, jobs)

    if all(gt.gt_mask is not None for gt in gts):
        pixel_ap: Optional[float] = pxap(maps, gts, thresholds)
    else:
        logger.warning("Some annotations have no mask; PxAP is not reported")
        pixel_ap = None

    top1 = top5 = None
    if predictions is not None:
        top1 = topk_loc(predictions, maps, gts, 1, accuracy=accuracy)
        widest = min(5, min(len(ranked) for ranked in predictions))
        top5 = topk_loc(predictions, maps, gts, widest, accuracy=accuracy)

    tau = accuracy.best_threshold[LOCALIZATION_DELTA]
    errors = error_metrics(primary_boxes(maps, tau), gts)

    report = MetricsReport(
        pxap=pixel_ap,
        maxboxacc_per_delta={f"{d:g}": v for d, v in accuracy.per_delta.items()},
        maxboxacc_mean=accuracy.mean,
        top1_loc=top1,
        top5_loc=top5,
        lpe=errors.lpe,
        lme=errors.lme,
        mie=errors.mie,
        best_threshold={f"{d:g}": v for d, v in accuracy.best_threshold.items()},
        num_images=len(gts),
    )
    return report, accuracy


def save_report(path: Path, report: MetricsReport) -> None:
    atomic_write(path, json.dumps(report.to_json(), indent=2, sort_keys=True))
