from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse

from proposalloc.exceptions import AllUnknown
from proposalloc.exceptions import DimensionMismatch
from proposalloc.exceptions import InvalidData
from proposalloc.imaging import Image
from proposalloc.pseudolabels import PseudoLabelMask

PROBABILITY_FLOOR = 1e-12

DEFAULT_LAMBDA1 = 1.0
DEFAULT_LAMBDA2 = 2e-9


@dataclass(frozen=True, eq=False)
class MapLogits:
    """Unconstrained two-channel scores, shape (2, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 3 or values.shape[0] != 2:
            raise InvalidData(f"Logits must be 2xHxW, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidData("Logits must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, width: int, height: int) -> MapLogits:
        return cls(np.zeros((2, height, width)))


@dataclass(frozen=True, eq=False)
class LocalizationMap:
    """Background (channel 0) and foreground (channel 1) probabilities."""

    probabilities: np.ndarray

    def __post_init__(self):
        probabilities = np.array(self.probabilities, dtype=np.float64, copy=True)
        if probabilities.ndim != 3 or probabilities.shape[0] != 2:
            raise InvalidData(
                f"Localization map must be 2xHxW, got {probabilities.shape}"
            )
        if probabilities.min() < 0.0 or probabilities.max() > 1.0:
            raise InvalidData("Localization map values must lie in [0, 1]")
        if np.max(np.abs(probabilities.sum(axis=0) - 1.0)) > 1e-6:
            raise InvalidData("Localization map channels must sum to 1")
        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    @classmethod
    def from_foreground(cls, foreground: np.ndarray) -> LocalizationMap:
        foreground = np.clip(np.asarray(foreground, dtype=np.float64), 0.0, 1.0)
        return cls(np.stack([1.0 - foreground, foreground]))

    @property
    def background(self) -> np.ndarray:
        return self.probabilities[0]

    @property
    def foreground(self) -> np.ndarray:
        return self.probabilities[1]

    @property
    def height(self) -> int:
        return self.probabilities.shape[1]

    @property
    def width(self) -> int:
        return self.probabilities.shape[2]


@dataclass(frozen=True)
class AffinityParams:
    sigma_spatial: float = 2.0
    sigma_color: float = 0.1
    radius: int = 5

    def __post_init__(self):
        if not (self.sigma_spatial > 0 and self.sigma_color > 0):
            raise InvalidData("Affinity sigmas must be positive")
        if self.radius < 1:
            raise InvalidData("Affinity radius must be at least 1")


class LossValue(NamedTuple):
    loss: float
    grad: np.ndarray


def _check_dimensions(first, second) -> None:
    if (first.width, first.height) != (second.width, second.height):
        raise DimensionMismatch(
            f"{first.width}x{first.height} does not match "
            f"{second.width}x{second.height}"
        )


def softmax_map(logits: MapLogits) -> LocalizationMap:
    shifted = logits.values - logits.values.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    return LocalizationMap(exp / exp.sum(axis=0, keepdims=True))


def partial_ce(Y: PseudoLabelMask, S: LocalizationMap) -> LossValue:
    """Cross-entropy summed over the labeled pixels of ``Y``.

    The gradient is taken with respect to the logits behind ``S``: softmax
    minus one-hot at labeled pixels, zero elsewhere.
    """
    _check_dimensions(Y, S)
    ys, xs = np.nonzero(Y.labeled)
    if ys.size == 0:
        raise AllUnknown("Partial cross-entropy needs at least one labeled pixel")
    target = Y.labels[ys, xs].astype(np.int64)
    picked = np.clip(S.probabilities[target, ys, xs], PROBABILITY_FLOOR, 1.0)
    grad = np.zeros_like(S.probabilities)
    grad[:, ys, xs] = S.probabilities[:, ys, xs]
    grad[target, ys, xs] -= 1.0
    return LossValue(float(-np.sum(np.log(picked))), grad)


def affinity_matrix(img: Image, params: AffinityParams) -> sparse.csr_matrix:
    """Sparse symmetric Gaussian affinity over pixel position and color.

    Only pairs within Chebyshev distance ``radius`` are kept; the diagonal is
    zero. Pixels are indexed row-major.
    """
    height, width = img.height, img.width
    index = np.arange(height * width).reshape(height, width)
    rows, cols, weights = [], [], []
    for dy in range(-params.radius, params.radius + 1):
        for dx in range(-params.radius, params.radius + 1):
            if (dy == 0 and dx == 0) or abs(dy) >= height or abs(dx) >= width:
                continue
            here = (
                slice(max(0, -dy), height - max(0, dy)),
                slice(max(0, -dx), width - max(0, dx)),
            )
            there = (
                slice(max(0, dy), height + min(0, dy)),
                slice(max(0, dx), width + min(0, dx)),
            )
            color = np.sum((img.data[here] - img.data[there]) ** 2, axis=-1)
            weight = np.exp(
                -(dy * dy + dx * dx) / (2.0 * params.sigma_spatial**2)
                - color / (2.0 * params.sigma_color**2)
            )
            rows.append(index[here].ravel())
            cols.append(index[there].ravel())
            weights.append(weight.ravel())
    size = height * width
    if not rows:
        return sparse.csr_matrix((size, size))
    return sparse.csr_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )


def crf_loss(
    S: LocalizationMap,
    img: Image,
    params: AffinityParams,
    affinity: Optional[sparse.csr_matrix] = None,
) -> LossValue:
    """Pairwise CRF regularizer, sum over channels of S^T W (1 - S).

    ``affinity`` may carry a precomputed ``affinity_matrix(img, params)``.
    """
    _check_dimensions(S, img)
    if affinity is None:
        affinity = affinity_matrix(img, params)
    probabilities = S.probabilities.reshape(2, -1)
    loss = float(np.sum(probabilities * (affinity @ (1.0 - probabilities).T).T))
    grad_s = (affinity @ (1.0 - 2.0 * probabilities).T).T
    # Chain through the per-pixel softmax: dS_c/dz_k = S_c (delta_ck - S_k)
    grad_z = probabilities * (grad_s - np.sum(probabilities * grad_s, axis=0))
    return LossValue(loss, grad_z.reshape(S.probabilities.shape))


def total_loss(
    Y: PseudoLabelMask,
    S: LocalizationMap,
    img: Image,
    lambda1: float = DEFAULT_LAMBDA1,
    lambda2: float = DEFAULT_LAMBDA2,
    params: Optional[AffinityParams] = None,
    affinity: Optional[sparse.csr_matrix] = None,
) -> LossValue:
    """``lambda1 * partial_ce + lambda2 * crf_loss`` with the summed gradient."""
    pixel = partial_ce(Y, S)
    loss, grad = lambda1 * pixel.loss, lambda1 * pixel.grad
    if lambda2 != 0.0:
        regularizer = crf_loss(S, img, params or AffinityParams(), affinity)
        loss += lambda2 * regularizer.loss
        grad = grad + lambda2 * regularizer.grad
    return LossValue(loss, grad)
