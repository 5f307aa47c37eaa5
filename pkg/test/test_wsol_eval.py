import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from proposalloc.exceptions import DimensionMismatch
from proposalloc.exceptions import EmptyDataset
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingGtBox
from proposalloc.exceptions import MissingMask
from proposalloc.exceptions import OutOfBounds
from proposalloc.exceptions import ShortPredictionList
from proposalloc.imaging import BinaryMask
from proposalloc.imaging import Box
from proposalloc.losses import LocalizationMap
from proposalloc.wsol_eval import GtAnnotation
from proposalloc.wsol_eval import box_ratios
from proposalloc.wsol_eval import boxes_from_map
from proposalloc.wsol_eval import default_thresholds
from proposalloc.wsol_eval import error_metrics
from proposalloc.wsol_eval import evaluate
from proposalloc.wsol_eval import maxboxacc
from proposalloc.wsol_eval import pxap
from proposalloc.wsol_eval import save_report
from proposalloc.wsol_eval import topk_loc

SIZE = 10


def box_values(*boxes: Box, size: int = SIZE) -> np.ndarray:
    values = np.zeros((size, size))
    for box in boxes:
        values[box.y0 : box.y1, box.x0 : box.x1] = 1.0
    return values


def annotation(
    image_id: str, *boxes: Box, label: int = 0, with_mask: bool = True
) -> GtAnnotation:
    mask = BinaryMask(box_values(*boxes) > 0) if with_mask else None
    return GtAnnotation(image_id, label, boxes, mask)


def brute_force_ap(maps, gts, thresholds) -> float:
    points = []
    prevalence_num = prevalence_den = 0
    for tau in sorted(thresholds, reverse=True):
        tp = fp = positives = 0
        for S, gt in zip(maps, gts):
            for y in range(S.height):
                for x in range(S.width):
                    predicted = S.foreground[y, x] > tau
                    truth = gt.gt_mask.bits[y, x]
                    tp += predicted and truth
                    fp += predicted and not truth
                    positives += truth
        precision = tp / (tp + fp) if tp + fp else 1.0
        points.append((tp / positives, precision))
    for gt in gts:
        prevalence_num += int(gt.gt_mask.bits.sum())
        prevalence_den += gt.gt_mask.bits.size
    points.append((1.0, prevalence_num / prevalence_den))
    area, previous_recall = 0.0, 0.0
    for recall, precision in points:
        area += precision * (recall - previous_recall)
        previous_recall = recall
    return area


class BoxRatiosTest(unittest.TestCase):
    def test_ratios(self):
        ratios = box_ratios(Box(0, 0, 4, 4), Box(2, 0, 6, 4))
        self.assertAlmostEqual(ratios.iou, 8 / 24)
        self.assertAlmostEqual(ratios.iop, 0.5)
        self.assertAlmostEqual(ratios.iog, 0.5)

    def test_disjoint(self):
        self.assertEqual(box_ratios(Box(0, 0, 2, 2), Box(5, 5, 7, 7)).iou, 0.0)

    def test_regions_from_map(self):
        values = box_values(Box(0, 0, 2, 2), Box(4, 4, 9, 9))
        S = LocalizationMap.from_foreground(values)
        self.assertEqual(boxes_from_map(S, 0.5), [Box(4, 4, 9, 9), Box(0, 0, 2, 2)])

    def test_thresholds(self):
        thresholds = default_thresholds()
        self.assertEqual(thresholds.size, 256)
        self.assertEqual((thresholds[0], thresholds[-1]), (0.0, 1.0))


class PxapTest(unittest.TestCase):
    gt = annotation("a", Box(2, 2, 6, 6))

    def test_perfect(self):
        S = LocalizationMap.from_foreground(box_values(Box(2, 2, 6, 6)))
        self.assertAlmostEqual(pxap([S], [self.gt]), 1.0, delta=1e-12)

    def test_complement(self):
        S = LocalizationMap.from_foreground(1.0 - box_values(Box(2, 2, 6, 6)))
        self.assertAlmostEqual(pxap([S], [self.gt]), 16 / 100, delta=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        thresholds = np.linspace(0, 1, 17)
        for _ in range(10):
            maps = [
                LocalizationMap.from_foreground(rng.random((SIZE, SIZE)))
                for _ in range(3)
            ]
            gts = [
                GtAnnotation(
                    str(i),
                    0,
                    (Box(0, 0, 1, 1),),
                    BinaryMask(rng.random((SIZE, SIZE)) < 0.3),
                )
                for i in range(3)
            ]
            self.assertAlmostEqual(
                pxap(maps, gts, thresholds),
                brute_force_ap(maps, gts, thresholds),
                delta=1e-9,
            )

    def test_missing_mask(self):
        S = LocalizationMap.from_foreground(np.zeros((SIZE, SIZE)))
        with self.assertRaises(MissingMask):
            pxap([S], [annotation("a", Box(0, 0, 2, 2), with_mask=False)])

    def test_no_foreground(self):
        S = LocalizationMap.from_foreground(np.full((SIZE, SIZE), 0.5))
        empty = BinaryMask(np.zeros((SIZE, SIZE), dtype=bool))
        gt = GtAnnotation("a", 0, (Box(0, 0, 2, 2),), empty)
        self.assertEqual(pxap([S], [gt]), 0.0)

    def test_empty(self):
        with self.assertRaises(EmptyDataset):
            pxap([], [])


class MaxBoxAccTest(unittest.TestCase):
    def test_perfect(self):
        S = LocalizationMap.from_foreground(box_values(Box(1, 1, 7, 5)))
        accuracy = maxboxacc([S], [annotation("a", Box(1, 1, 7, 5))])
        self.assertEqual(accuracy.per_delta, {0.3: 100.0, 0.5: 100.0, 0.7: 100.0})
        self.assertEqual(accuracy.mean, 100.0)

    def test_half_box(self):
        S = LocalizationMap.from_foreground(box_values(Box(0, 0, 10, 2)))
        accuracy = maxboxacc([S], [annotation("a", Box(0, 0, 10, 4))])
        self.assertEqual(accuracy.per_delta, {0.3: 100.0, 0.5: 100.0, 0.7: 0.0})
        self.assertAlmostEqual(accuracy.mean, 200 / 3)

    def test_best_region_counts(self):
        values = box_values(Box(0, 0, 6, 6), Box(8, 8, 10, 10))
        S = LocalizationMap.from_foreground(values)
        accuracy = maxboxacc([S], [annotation("a", Box(8, 8, 10, 10))])
        self.assertEqual(accuracy.per_delta[0.7], 100.0)

    def test_shared_threshold(self):
        low = np.zeros((SIZE, SIZE))
        low[2:6, 2:6] = 0.3
        high = np.zeros((SIZE, SIZE))
        high[2:6, 2:6] = 0.9
        maps = [LocalizationMap.from_foreground(v) for v in (low, high)]
        gts = [annotation(str(i), Box(2, 2, 6, 6)) for i in range(2)]
        accuracy = maxboxacc(maps, gts)
        self.assertEqual(accuracy.per_delta[0.5], 100.0)
        self.assertLess(accuracy.best_threshold[0.5], 0.3)
        self.assertEqual(accuracy.ious.shape, (256, 2))

    def test_curve_csv(self):
        S = LocalizationMap.from_foreground(box_values(Box(1, 1, 7, 5)))
        csv = maxboxacc([S], [annotation("a", Box(1, 1, 7, 5))]).to_csv().splitlines()
        self.assertEqual(csv[0], "tau,acc@0.3,acc@0.5,acc@0.7")
        self.assertEqual(len(csv), 257)

    def test_missing_box(self):
        S = LocalizationMap.from_foreground(np.zeros((SIZE, SIZE)))
        with self.assertRaises(MissingGtBox):
            maxboxacc([S], [GtAnnotation("a", 0, ())])

    def test_box_out_of_bounds(self):
        S = LocalizationMap.from_foreground(np.zeros((SIZE, SIZE)))
        with self.assertRaises(OutOfBounds):
            maxboxacc([S], [GtAnnotation("a", 0, (Box(0, 0, 11, 2),))])

    def test_count_mismatch(self):
        S = LocalizationMap.from_foreground(np.zeros((SIZE, SIZE)))
        with self.assertRaises(DimensionMismatch):
            maxboxacc([S, S], [annotation("a", Box(0, 0, 2, 2))])


class TopkTest(unittest.TestCase):
    maps = [
        LocalizationMap.from_foreground(box_values(Box(2, 2, 6, 6))) for _ in range(2)
    ]
    gts = [annotation(str(i), Box(2, 2, 6, 6), label=i) for i in range(2)]

    def test_label_and_box(self):
        self.assertEqual(topk_loc([[0, 1], [0, 1]], self.maps, self.gts, 1), 50.0)
        self.assertEqual(topk_loc([[0, 1], [0, 1]], self.maps, self.gts, 2), 100.0)

    def test_box_must_match(self):
        wrong = [LocalizationMap.from_foreground(box_values(Box(7, 7, 9, 9)))] * 2
        self.assertEqual(topk_loc([[0], [1]], wrong, self.gts, 1), 0.0)

    def test_short_list(self):
        with self.assertRaises(ShortPredictionList):
            topk_loc([[0], [1]], self.maps, self.gts, 2)


class ErrorMetricsTest(unittest.TestCase):
    def test_part_error(self):
        gts = [annotation("a", Box(0, 0, 10, 6))]
        pred = [Box(0, 0, 10, 10)]
        unconditioned = error_metrics(pred, gts, condition_on_failure=False)
        self.assertEqual(unconditioned.lpe, 100.0)
        self.assertEqual(error_metrics(pred, gts).lpe, 0.0)

    def test_more_error(self):
        rates = error_metrics([Box(0, 0, 10, 10)], [annotation("a", Box(2, 2, 8, 8))])
        self.assertEqual((rates.lpe, rates.lme, rates.mie), (0.0, 100.0, 0.0))

    def test_multi_instance(self):
        gts = [
            GtAnnotation("a", 0, (Box(0, 0, 5, 5), Box(8, 0, 13, 5))),
            GtAnnotation("b", 0, (Box(0, 0, 5, 5),)),
        ]
        rates = error_metrics([Box(3, 0, 10, 5), None], gts)
        self.assertEqual(rates.mie, 50.0)
        self.assertEqual(rates.lme, 0.0)

    def test_missing_prediction_counts_nowhere(self):
        rates = error_metrics([None], [annotation("a", Box(0, 0, 2, 2))])
        self.assertEqual(tuple(rates), (0.0, 0.0, 0.0))


class EvaluateTest(unittest.TestCase):
    def test_perfect_maps(self):
        boxes = [Box(1, 1, 5, 5), Box(3, 2, 9, 8)]
        maps = [LocalizationMap.from_foreground(box_values(b)) for b in boxes]
        gts = [annotation(str(i), b, label=i) for i, b in enumerate(boxes)]
        report, accuracy = evaluate(maps, gts, predictions=[[0, 1], [1, 0]])
        self.assertAlmostEqual(report.pxap, 1.0)
        self.assertEqual(report.maxboxacc_mean, 100.0)
        expected = {"0.3": 100.0, "0.5": 100.0, "0.7": 100.0}
        self.assertEqual(report.maxboxacc_per_delta, expected)
        self.assertEqual((report.top1_loc, report.top5_loc), (100.0, 100.0))
        self.assertEqual((report.lpe, report.lme, report.mie), (0.0, 0.0, 0.0))
        self.assertEqual(report.num_images, 2)
        self.assertEqual(report.best_threshold["0.5"], 0.0)

    def test_without_masks_or_predictions(self):
        S = LocalizationMap.from_foreground(box_values(Box(1, 1, 5, 5)))
        report, _ = evaluate([S], [annotation("a", Box(1, 1, 5, 5), with_mask=False)])
        self.assertIsNone(report.pxap)
        self.assertIsNone(report.top1_loc)

    def test_deltas_need_half(self):
        S = LocalizationMap.from_foreground(box_values(Box(1, 1, 5, 5)))
        with self.assertRaises(InvalidData):
            evaluate([S], [annotation("a", Box(1, 1, 5, 5))], deltas=(0.3, 0.7))

    def test_report_file(self):
        S = LocalizationMap.from_foreground(box_values(Box(1, 1, 5, 5)))
        report, _ = evaluate([S], [annotation("a", Box(1, 1, 5, 5))])
        with tempfile.TemporaryDirectory() as temp:
            path = Path(temp) / "report.json"
            save_report(path, report)
            content = json.loads(path.read_text())
        self.assertEqual(
            set(content),
            {
                "pxap",
                "maxboxacc_per_delta",
                "maxboxacc_mean",
                "top1_loc",
                "top5_loc",
                "lpe",
                "lme",
                "mie",
                "best_threshold",
                "num_images",
            },
        )


if __name__ == "__main__":
    unittest.main()
