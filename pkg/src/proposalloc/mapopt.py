from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

import proposalloc
from proposalloc.exceptions import DimensionMismatch
from proposalloc.exceptions import InvalidData
from proposalloc.imaging import BinaryMask
from proposalloc.imaging import Image
from proposalloc.losses import DEFAULT_LAMBDA1
from proposalloc.losses import DEFAULT_LAMBDA2
from proposalloc.losses import AffinityParams
from proposalloc.losses import LocalizationMap
from proposalloc.losses import MapLogits
from proposalloc.losses import affinity_matrix
from proposalloc.losses import softmax_map
from proposalloc.losses import total_loss
from proposalloc.proposals import AttentionStack
from proposalloc.proposals import ProposalPool
from proposalloc.proposals import draw_index
from proposalloc.pseudolabels import SamplingConfig
from proposalloc.pseudolabels import build_pseudo_mask
from proposalloc.pseudolabels import sample_pseudo_labels
from proposalloc.utils import atomic_write

logger = logging.getLogger(proposalloc.__title__)


@dataclass(frozen=True)
class OptConfig:
    steps: int = 500
    learning_rate: float = 0.5
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    affinity: AffinityParams = field(default_factory=AffinityParams)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidData(f"steps must be at least 1, got {self.steps}")
        if not self.learning_rate >= 0:
            raise InvalidData(
                f"learning_rate must not be negative, got {self.learning_rate}"
            )
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidData("Loss weights must not be negative")


class TraceStep(NamedTuple):
    proposal: int
    loss: float


@dataclass(frozen=True)
class OptTrace:
    steps: Tuple[TraceStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def losses(self) -> np.ndarray:
        return np.array([step.loss for step in self.steps])

    def to_json(self) -> Dict[str, Any]:
        return {"steps": [{"proposal": s.proposal, "loss": s.loss} for s in self.steps]}


def optimize_map(
    img: Image,
    stack: AttentionStack,
    pool: ProposalPool,
    cfg: OptConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[LocalizationMap, OptTrace]:
    """Fit a localization map to stochastic pseudo-labels by gradient descent.

    Starting from uniform logits, every step picks a random proposal of
    ``pool``, samples foreground pixels inside it from the attention map that
    produced it and as many background pixels outside every pool box, then
    descends the combined partial cross-entropy and CRF loss.

    :param rng:
        Random stream to draw from; a fresh one seeded with ``cfg.seed`` when
        omitted.
    :raises EmptyPool: if ``pool`` has no entry.
    """
    if (stack.width, stack.height) != (img.width, img.height):
        raise DimensionMismatch(
            f"Attention maps are {stack.width}x{stack.height}, "
            f"image is {img.width}x{img.height}"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    boxes = pool.boxes
    affinity = affinity_matrix(img, cfg.affinity) if cfg.lambda2 != 0.0 else None
    logits = np.zeros((2, img.height, img.width))
    trace: List[TraceStep] = []

    for step in range(cfg.steps):
        index = draw_index(pool, rng)
        proposal = pool[index]
        if proposal.map_index >= len(stack):
            raise InvalidData(
                f"Proposal map index {proposal.map_index} exceeds the stack"
            )
        attention = stack.maps[proposal.map_index]
        fg, bg = sample_pseudo_labels(attention, proposal.box, boxes, cfg.sampling, rng)
        if len(bg) == 0:
            logger.debug(f"Step {step}: no background outside the pool")
        mask = build_pseudo_mask(fg, bg, img.width, img.height)
        current = softmax_map(MapLogits(logits))
        loss, grad = total_loss(
            mask, current, img, cfg.lambda1, cfg.lambda2, cfg.affinity, affinity
        )
        logits = logits - cfg.learning_rate * grad
        trace.append(TraceStep(index, loss))

    return softmax_map(MapLogits(logits)), OptTrace(tuple(trace))


def binarize_map(S: LocalizationMap, tau: float) -> BinaryMask:
    """Foreground pixels of ``S``: where S1 exceeds ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidData(f"Threshold {tau} outside [0, 1]")
    return BinaryMask(S.foreground > tau)


def save_trace(path: Path, trace: OptTrace) -> None:
    atomic_write(path, json.dumps(trace.to_json()))
