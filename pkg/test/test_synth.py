import tempfile
import unittest
from pathlib import Path

import numpy as np

from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingInput
from proposalloc.imaging import Box
from proposalloc.imaging import GrayMap
from proposalloc.model import Dataset
from proposalloc.synth import FULL
from proposalloc.synth import MANIFEST
from proposalloc.synth import SynthSpec
from proposalloc.synth import companion_settings
from proposalloc.synth import load_manifest
from proposalloc.synth import recovers_box
from proposalloc.synth import self_check
from proposalloc.synth import synth_generate
from proposalloc.synth import synthesize_image
from proposalloc.synth import tight_box


def tree_bytes(root: Path):
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


class SpecTest(unittest.TestCase):
    def test_invalid(self):
        for kwargs in (
            {"num_images": 0},
            {"num_classes": 1},
            {"image_size": 8},
            {"attention_maps_per_image": 1},
            {"noise_level": 1.5},
        ):
            with self.subTest(**kwargs), self.assertRaises(InvalidData):
                SynthSpec(**kwargs)


class SceneTest(unittest.TestCase):
    spec = SynthSpec(num_images=6, num_classes=3, image_size=48, seed=4)

    def test_deterministic(self):
        first = synthesize_image(self.spec, 2)
        second = synthesize_image(self.spec, 2)
        np.testing.assert_array_equal(first.image.data, second.image.data)
        self.assertEqual(first.map_objects, second.map_objects)
        for a, b in zip(first.stack.maps, second.stack.maps):
            np.testing.assert_array_equal(a.values, b.values)

    def test_record(self):
        for index in range(6):
            scene = synthesize_image(self.spec, index)
            self.assertEqual(scene.record.label, index % 3)
            self.assertEqual(scene.record.boxes, (tight_box(scene.mask.bits),))
            self.assertTrue(scene.objects[0].is_class)
            most = 1 + self.spec.distractors_per_image
            self.assertLessEqual(len(scene.objects), most)

    def test_class_object_has_a_map(self):
        for index in range(6):
            scene = synthesize_image(self.spec, index)
            self.assertEqual(len(scene.map_objects), self.spec.attention_maps_per_image)
            self.assertIn(0, scene.map_objects)

    def test_class_object_gets_full_and_partial_maps(self):
        for index in range(6):
            scene = synthesize_image(self.spec, index)
            if len(scene.objects) == 1:
                continue
            kinds = [k for o, k in zip(scene.map_objects, scene.map_kinds) if o == 0]
            self.assertEqual(len(kinds), self.spec.class_maps)
            self.assertEqual(kinds.count(FULL), self.spec.full_class_maps)
            self.assertEqual(kinds[::2], [FULL] * len(kinds[::2]))
            distractor_kinds = {
                k for o, k in zip(scene.map_objects, scene.map_kinds) if o != 0
            }
            self.assertLessEqual(distractor_kinds, {FULL})

    def test_hot_spot_and_partial_coverage(self):
        spec = SynthSpec(num_images=8, image_size=64, noise_level=0.0, seed=5)
        for index in range(8):
            scene = synthesize_image(spec, index)
            inside = scene.mask.bits
            for values, o, kind in zip(
                (m.values for m in scene.stack.maps),
                scene.map_objects,
                scene.map_kinds,
            ):
                if o != 0:
                    continue
                covered = np.mean(values[inside] > 0.3)
                if kind == FULL:
                    self.assertEqual(covered, 1.0)
                    floor, peak = values[inside].min(), values[inside].max()
                    self.assertLess(floor / peak, 0.8)
                else:
                    self.assertLess(covered, 0.95)

    def test_clutter_scales_with_noise_level(self):
        quiet = SynthSpec(num_images=2, image_size=48, noise_level=0.0, seed=6)
        loud = SynthSpec(num_images=2, image_size=48, noise_level=0.5, seed=6)
        for index in range(2):
            a, b = synthesize_image(quiet, index), synthesize_image(loud, index)
            self.assertEqual(a.map_objects, b.map_objects)
            np.testing.assert_array_equal(a.image.data, b.image.data)
            for quiet_map, loud_map in zip(a.stack.maps, b.stack.maps):
                clutter = loud_map.values - quiet_map.values
                self.assertGreaterEqual(clutter.min(), 0.0)
                self.assertLessEqual(clutter.max(), 0.55 + 1e-9)
                self.assertGreater(clutter.mean(), 0.1)

    def test_without_distractors(self):
        spec = SynthSpec(num_images=3, image_size=32, distractors_per_image=0)
        for index in range(3):
            self.assertEqual(set(synthesize_image(spec, index).map_objects), {0})


class GenerateTest(unittest.TestCase):
    spec = SynthSpec(num_images=8, num_classes=2, image_size=48, seed=1)

    def test_layout(self):
        with tempfile.TemporaryDirectory() as temp:
            root = Path(temp)
            dataset = synth_generate(self.spec, root)
            loaded = Dataset.load(root)
            self.assertEqual(loaded.records, dataset.records)
            self.assertEqual(loaded.num_classes, 2)
            for record in loaded.records:
                self.assertTrue(loaded.image_path(record.image_id).exists())
                self.assertTrue(loaded.attention_path(record.image_id).exists())
                self.assertTrue((root / record.mask_path).exists())
            manifest = load_manifest(root)
            self.assertEqual(manifest["spec"]["num_images"], 8)
            self.assertEqual(len(manifest["images"]), 8)

    def test_same_seed_same_bytes(self):
        with tempfile.TemporaryDirectory() as first:
            with tempfile.TemporaryDirectory() as second:
                synth_generate(self.spec, Path(first))
                synth_generate(self.spec, Path(second), jobs=2)
                self.assertEqual(tree_bytes(Path(first)), tree_bytes(Path(second)))

    def test_attention_recovers_objects(self):
        with tempfile.TemporaryDirectory() as temp:
            synth_generate(SynthSpec(), Path(temp), jobs=4)
            self.assertGreaterEqual(self_check(Path(temp)), 0.95)

    def test_missing_manifest(self):
        with tempfile.TemporaryDirectory() as temp:
            with self.assertRaises(MissingInput):
                load_manifest(Path(temp))
            self.assertFalse((Path(temp) / MANIFEST).exists())


class RecoveryTest(unittest.TestCase):
    def test_square(self):
        values = np.zeros((20, 20))
        values[4:12, 6:14] = 1.0
        self.assertTrue(recovers_box(GrayMap(values), Box(6, 4, 14, 12)))
        self.assertFalse(recovers_box(GrayMap(values), Box(0, 0, 4, 4)))

    def test_constant(self):
        self.assertFalse(recovers_box(GrayMap(np.ones((8, 8))), Box(0, 0, 4, 4)))


class CompanionTest(unittest.TestCase):
    def test_settings(self):
        settings = companion_settings(SynthSpec(image_size=64, seed=3))
        self.assertEqual(settings["working_size"], 64)
        self.assertEqual(settings["blur_sigma"], 4.0)
        self.assertEqual(settings["seed"], 3)
        self.assertEqual(settings["k"], 2)
        self.assertEqual(settings["optimization"]["steps"], 300)
        self.assertEqual(settings["optimization"]["lambda2"], 2e-2)

    def test_pool_size_follows_full_views(self):
        self.assertEqual(companion_settings(SynthSpec(distractors_per_image=0))["k"], 3)
        spec = SynthSpec(attention_maps_per_image=10)
        self.assertEqual(companion_settings(spec)["k"], 3)


if __name__ == "__main__":
    unittest.main()
