from __future__ import annotations

import abc
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import proposalloc
from proposalloc.exceptions import ChannelMismatch
from proposalloc.exceptions import EmptyDataset
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import KOutOfRange
from proposalloc.exceptions import LabelOutOfRange
from proposalloc.exceptions import MissingInput
from proposalloc.imaging import Box
from proposalloc.imaging import Image
from proposalloc.imaging import box_tuple
from proposalloc.imaging import resize_image
from proposalloc.utils import atomic_write
from proposalloc.utils import read_json

logger = logging.getLogger(proposalloc.__title__)

DEFAULT_DOWNSAMPLE = 16
DEFAULT_BATCH_SIZE = 32

CacheKey = Tuple[str, Optional[Tuple[int, ...]]]

LabeledImage = Tuple[Image, int]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ClassScores:
    """Posterior over the classes for one image."""

    probabilities: np.ndarray

    def __post_init__(self):
        probabilities = np.array(self.probabilities, dtype=np.float64, copy=True)
        if probabilities.ndim != 1 or probabilities.size < 1:
            raise InvalidData("Class scores must be a non-empty vector")
        if probabilities.min() < 0.0 or probabilities.max() > 1.0:
            raise InvalidData("Class scores must lie in [0, 1]")
        if abs(probabilities.sum() - 1.0) > 1e-6:
            raise InvalidData(f"Class scores sum to {probabilities.sum()}, not 1")
        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    def __getitem__(self, label: int) -> float:
        return float(self.probabilities[label])

    @property
    def num_classes(self) -> int:
        return self.probabilities.size


class Scorer(abc.ABC):
    """Anything that turns an image into class posteriors.

    ``image_id`` and ``box`` identify the request for implementations that
    look scores up instead of computing them; ``box`` is ``None`` for the
    unperturbed image.
    """

    num_classes: int

    @abc.abstractmethod
    def score(
        self, img: Image, *, image_id: Optional[str] = None, box: Optional[Box] = None
    ) -> ClassScores:
        ...


@dataclass(frozen=True, eq=False)
class TinyClassifier(Scorer):
    """Softmax regression over a mean-centered d x d thumbnail of the image."""

    num_classes: int
    downsample: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        bias = np.array(self.bias, dtype=np.float64, copy=True)
        if weights.ndim != 2 or weights.shape[0] != self.num_classes:
            raise InvalidData(
                f"Weights must be {self.num_classes}xD, got {weights.shape}"
            )
        if bias.shape != (self.num_classes,):
            raise InvalidData(f"Bias must have {self.num_classes} entries")
        if weights.shape[1] not in (self.downsample**2, 3 * self.downsample**2):
            raise InvalidData(
                f"Feature dim {weights.shape[1]} does not match a "
                f"{self.downsample}x{self.downsample} thumbnail"
            )
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def channels(self) -> int:
        return self.feature_dim // (self.downsample * self.downsample)

    def features(self, img: Image) -> np.ndarray:
        if img.channels != self.channels:
            raise ChannelMismatch(
                f"Classifier expects {self.channels} channel(s), "
                f"image has {img.channels}"
            )
        return extract_features(img, self.downsample)

    def score(
        self, img: Image, *, image_id: Optional[str] = None, box: Optional[Box] = None
    ) -> ClassScores:
        logits = self.weights @ self.features(img) + self.bias
        return ClassScores(softmax(logits))


class ScoreCache(Scorer):
    """Scores precomputed offline, keyed by image id and box."""

    def __init__(self, entries: Dict[CacheKey, np.ndarray]):
        if not entries:
            raise EmptyDataset("Score cache is empty")
        sizes = {len(scores) for scores in entries.values()}
        if len(sizes) != 1:
            raise InvalidData(f"Score cache mixes class counts: {sorted(sizes)}")
        self.entries = entries
        self.num_classes = sizes.pop()

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(entries={len(self.entries)})"

    def score(
        self, img: Image, *, image_id: Optional[str] = None, box: Optional[Box] = None
    ) -> ClassScores:
        key = (str(image_id), None if box is None else box_tuple(box))
        if key not in self.entries:
            raise MissingInput(f"No cached score for image '{image_id}' box {key[1]}")
        return ClassScores(self.entries[key])


def extract_features(img: Image, downsample: int) -> np.ndarray:
    thumbnail = resize_image(img, downsample, downsample).data.ravel()
    return thumbnail - thumbnail.mean()


def score(classifier: Scorer, img: Image, **keys) -> ClassScores:
    """Full posterior of ``classifier`` on ``img``."""
    return classifier.score(img, **keys)


def predict_topk(classifier: Scorer, img: Image, k: int, **keys) -> List[int]:
    """The ``k`` most probable labels, ties going to the lower label."""
    if not 1 <= k <= classifier.num_classes:
        raise KOutOfRange(f"k={k} outside [1, {classifier.num_classes}]")
    probabilities = classifier.score(img, **keys).probabilities
    ranked = sorted(range(probabilities.size), key=lambda c: (-probabilities[c], c))
    return ranked[:k]


def cross_entropy(classifier: TinyClassifier, dataset: Sequence[LabeledImage]) -> float:
    features = np.stack([classifier.features(img) for img, _ in dataset])
    labels = np.array([label for _, label in dataset])
    probabilities = softmax(features @ classifier.weights.T + classifier.bias)
    picked = np.clip(probabilities[np.arange(labels.size), labels], 1e-12, 1.0)
    return float(-np.mean(np.log(picked)))


def accuracy(classifier: Scorer, dataset: Sequence[LabeledImage]) -> float:
    if not dataset:
        return 0.0
    hits = sum(predict_topk(classifier, img, 1)[0] == label for img, label in dataset)
    return hits / len(dataset)


def train_tiny_classifier(
    dataset: Sequence[LabeledImage],
    epochs: int,
    learning_rate: float,
    seed: int,
    *,
    num_classes: Optional[int] = None,
    downsample: int = DEFAULT_DOWNSAMPLE,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> TinyClassifier:
    """Fit a ``TinyClassifier`` by mini-batch gradient descent on cross-entropy.

    :param dataset:
        ``(image, label)`` pairs; every image must have the same channel count.
    :param num_classes:
        Number of classes, by default one more than the largest label.
    :raises EmptyDataset: if ``dataset`` is empty.
    :raises LabelOutOfRange: if a label falls outside ``[0, num_classes)``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("Cannot train on an empty dataset")
    labels = np.array([label for _, label in dataset], dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelOutOfRange(f"Labels must lie in [0, {num_classes})")
    channels = dataset[0][0].channels
    if any(img.channels != channels for img, _ in dataset):
        raise ChannelMismatch("All training images must share a channel count")

    features = np.stack([extract_features(img, downsample) for img, _ in dataset])
    weights = np.zeros((num_classes, features.shape[1]))
    bias = np.zeros(num_classes)
    rng = np.random.default_rng(seed)

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            probabilities = softmax(features[batch] @ weights.T + bias)
            probabilities[np.arange(batch.size), labels[batch]] -= 1.0
            weights -= learning_rate * (probabilities.T @ features[batch]) / batch.size
            bias -= learning_rate * probabilities.mean(axis=0)
        if logger.isEnabledFor(logging.DEBUG):
            probabilities = softmax(features @ weights.T + bias)
            picked = np.clip(probabilities[np.arange(labels.size), labels], 1e-12, 1.0)
            loss = -np.mean(np.log(picked))
            logger.debug(f"Epoch {epoch + 1}/{epochs}: loss {loss:.6f}")

    return TinyClassifier(num_classes, downsample, weights, bias)


def save_classifier(path: Path, classifier: TinyClassifier) -> None:
    content = {
        "num_classes": classifier.num_classes,
        "feature_dim": classifier.feature_dim,
        "downsample": classifier.downsample,
        "weights": classifier.weights.ravel().tolist(),
        "bias": classifier.bias.tolist(),
    }
    atomic_write(path, json.dumps(content))


def load_classifier(path: Path) -> TinyClassifier:
    if not path.exists():
        raise MissingInput(f"Classifier not found: '{path}'")
    content = read_json(path, "Classifier")
    try:
        num_classes = int(content["num_classes"])
        feature_dim = int(content["feature_dim"])
        weights = np.array(content["weights"], dtype=np.float64)
        return TinyClassifier(
            num_classes=num_classes,
            downsample=int(content["downsample"]),
            weights=weights.reshape(num_classes, feature_dim),
            bias=np.array(content["bias"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidData(f"Malformed classifier file '{path}': {e}") from e


def load_score_cache(path: Path) -> ScoreCache:
    if not path.exists():
        raise MissingInput(f"Score cache not found: '{path}'")
    entries: Dict[CacheKey, np.ndarray] = {}
    try:
        for record in read_json(path, "Score cache"):
            box = record.get("box")
            box_key = None if box is None else tuple(int(v) for v in box)
            scores = np.array(record["scores"], dtype=np.float64)
            entries[(str(record["image_id"]), box_key)] = scores
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise InvalidData(f"Malformed score cache '{path}': {e!r}") from e
    return ScoreCache(entries)
