"""Explanation-quality metrics for saliency maps.

Two families: agreement with a ground-truth mask (pixel accuracy, mean IoU,
average precision), and behavioural tests that erase pixels in saliency
order and watch whether the model's prediction survives.  All metrics are
deterministic given their inputs; erasure ties are broken by flat pixel
index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import require

log = logging.getLogger(__name__)

PERTURBATION_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class SaliencyEval:
    """Bundle of per-input saliency metrics (None where not computed)."""

    input_id: str
    pixel_accuracy: Optional[float] = None
    miou: Optional[float] = None
    average_precision: Optional[float] = None
    s_faith: Optional[float] = None
    p_auc_positive: Optional[float] = None
    p_auc_negative: Optional[float] = None


def s_faith(map_clean: np.ndarray, map_perturbed: np.ndarray,
            epsilon: float = 0.01) -> float:
    """Stability score: pixel count over summed absolute map change.

    ``N / (sum |M - M'| + epsilon)``; identical maps score ``N / epsilon``,
    and the score decays as the perturbed map drifts from the clean one.
    """
    a = np.asarray(map_clean, dtype=np.float64)
    b = np.asarray(map_perturbed, dtype=np.float64)
    require(a.shape == b.shape, "maps must share a shape")
    require(epsilon > 0.0, "epsilon must be positive")
    return a.size / (float(np.abs(a - b).sum()) + epsilon)


def _binarize(saliency: np.ndarray) -> np.ndarray:
    """Strictly-above-mean thresholding (the fixed binarization rule)."""
    s = np.asarray(saliency, dtype=np.float64)
    return s > s.mean()


def pixel_accuracy(saliency: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of pixels whose binarized saliency matches the mask."""
    s = np.asarray(saliency, dtype=np.float64)
    g = np.asarray(mask).astype(bool)
    require(s.shape == g.shape, "saliency and mask must share a shape")
    return float((_binarize(s) == g).mean())


def miou(saliency: np.ndarray, mask: np.ndarray) -> float:
    """Mean IoU of the binarized saliency over the two classes.

    An empty union (class absent from both) counts as IoU 1 -- vacuous
    agreement -- so the mean stays defined for one-sided masks.
    """
    s = np.asarray(saliency, dtype=np.float64)
    g = np.asarray(mask).astype(bool)
    require(s.shape == g.shape, "saliency and mask must share a shape")
    pred = _binarize(s)
    ious = []
    for cls in (False, True):
        inter = int(np.logical_and(pred == cls, g == cls).sum())
        union = int(np.logical_or(pred == cls, g == cls).sum())
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def average_precision(saliency: np.ndarray, mask: np.ndarray) -> float:
    """Area under the precision-recall curve (trapezoidal).

    Pixels are ranked by saliency (ties toward the smaller flat index); the
    curve is traced at each distinct score threshold and anchored at
    (recall 0, precision 1).  An all-zero mask has no positives to rank, so
    the area is defined as 0 and a warning is logged.
    """
    s = np.asarray(saliency, dtype=np.float64).ravel()
    g = np.asarray(mask).astype(bool).ravel()
    require(s.shape == g.shape, "saliency and mask must share a shape")
    total_pos = int(g.sum())
    if total_pos == 0:
        log.warning("average_precision: empty mask, returning 0")
        return 0.0
    order = np.lexsort((np.arange(s.size), -s))
    ranked = g[order]
    tp = np.cumsum(ranked)
    idx = np.arange(1, s.size + 1)
    sorted_scores = s[order]
    boundary = np.ones(s.size, dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    recalls = np.concatenate([[0.0], tp[boundary] / total_pos])
    precisions = np.concatenate([[1.0], tp[boundary] / idx[boundary]])
    return float(np.trapezoid(precisions, recalls))


def erase_pixels(image: np.ndarray, saliency: np.ndarray, fraction: float,
                 most_salient_first: bool, fill: float = 0.0) -> np.ndarray:
    """Copy of ``image`` with a fraction of pixels replaced by ``fill``.

    Pixels go in saliency order -- descending for the positive (erase the
    explanation) test, ascending for the negative control -- with ties
    broken by flat index so the erasure is reproducible.
    """
    img = np.asarray(image, dtype=np.float64)
    s = np.asarray(saliency, dtype=np.float64).ravel()
    require(img.size == s.size, "saliency and image must share a size")
    require(0.0 <= fraction <= 1.0, "fraction must lie in [0, 1]")
    key = -s if most_salient_first else s
    order = np.lexsort((np.arange(s.size), key))
    n_erase = int(round(fraction * s.size))
    out = img.ravel().copy()
    out[order[:n_erase]] = fill
    return out.reshape(img.shape)


def perturbation_curve(predict_fn: Callable[[np.ndarray], int],
                       image: np.ndarray, saliency: np.ndarray,
                       positive: bool = True,
                       fractions: Sequence[float] = PERTURBATION_FRACTIONS,
                       fill: float = 0.0):
    """Prediction-consistency curve under growing pixel erasure.

    At each fraction the most (positive) or least (negative) salient pixels
    are filled and the prediction is compared against the clean one.  The
    zero-fraction point is prepended as a sanity anchor; it is 1 by
    definition.

    :return: list of (fraction, correctness) pairs, correctness in {0, 1}.
    """
    clean = predict_fn(np.asarray(image, dtype=np.float64))
    curve = [(0.0, 1.0)]
    for f in fractions:
        erased = erase_pixels(image, saliency, f, positive, fill)
        curve.append((float(f), 1.0 if predict_fn(erased) == clean else 0.0))
    return curve


def p_auc(curve) -> float:
    """100 times the mean correctness over the nonzero fractions."""
    vals = [c for f, c in curve if f > 0.0]
    require(len(vals) > 0, "curve has no nonzero fractions")
    return 100.0 * float(np.mean(vals))


def upsample_attention(attn: np.ndarray, image_size: int,
                       patch_size: int) -> np.ndarray:
    """Spread patch attention weights over their pixel blocks."""
    attn = np.asarray(attn, dtype=np.float64)
    side = image_size // patch_size
    require(attn.size == side * side, "attention length mismatch")
    grid = attn.reshape(side, side)
    return np.repeat(np.repeat(grid, patch_size, axis=0), patch_size, axis=1)
