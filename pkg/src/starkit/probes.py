"""Random loss inputs at smooth points, for gradient checks and the ``loss`` command.

Each probe returns ``(fn, inputs)`` such that ``fn(**inputs)`` is a
:class:`~starkit.losses.LossValue` and every input is a differentiable
argument. Points keep a margin from clips and kinks so that a finite
difference step of 1e-5 never crosses one.
"""

from __future__ import annotations

from functools import partial
from typing import Callable, Dict, Tuple

import numpy as np

from . import losses
from .core import Mask

Probe = Tuple[Callable[..., losses.LossValue], Dict[str, np.ndarray]]
KINK_MARGIN = 1e-3


def _probs(rng, shape):
    return rng.uniform(0.05, 0.95, size=shape)


def similarity(rng: np.random.Generator) -> Probe:
    return losses.similarity_loss, {"frame_embeddings": rng.normal(size=(4, 8))}


def dissimilarity(rng: np.random.Generator) -> Probe:
    return losses.dissimilarity_loss, {"tracks": rng.normal(size=(3, 4, 8))}


def stc(rng: np.random.Generator, cfg: losses.ContrastiveConfig = losses.ContrastiveConfig(tau=3)) -> Probe:
    return partial(losses.stc_loss, cfg=cfg), {"frames": rng.normal(size=(cfg.tau, 4, 8))}


def dice(rng: np.random.Generator, cfg: losses.SegLossConfig = losses.SegLossConfig()) -> Probe:
    gt = Mask(rng.random((8, 8)) < 0.5)
    return partial(losses.dice_loss, gt=gt, cfg=cfg), {"pred_probs": _probs(rng, (8, 8))}


def focal(rng: np.random.Generator, cfg: losses.SegLossConfig = losses.SegLossConfig()) -> Probe:
    gt = Mask(rng.random((8, 8)) < 0.5)
    return partial(losses.focal_loss, gt=gt, cfg=cfg), {"pred_probs": _probs(rng, (8, 8))}


def action(rng: np.random.Generator) -> Probe:
    labels = rng.integers(0, 2, size=6)
    return partial(losses.action_loss, labels=labels), {"pred_probs": _probs(rng, 6)}


def _edges(box):
    x, y, w, h = box
    return np.array([x, y, x + w, y + h])


def _smooth(pred, gt) -> bool:
    """No coordinate ties (L1 kinks) and no coinciding edges (GIoU min/max kinks)."""
    if np.any(np.abs(pred - gt) < KINK_MARGIN):
        return False
    pe, ge = _edges(pred), _edges(gt)
    # every x-edge of one box against every x-edge of the other, same for y
    for i in (0, 2):
        for j in (0, 2):
            if abs(pe[i] - ge[j]) < KINK_MARGIN or abs(pe[i + 1] - ge[j + 1]) < KINK_MARGIN:
                return False
    return True


def detection(rng: np.random.Generator, cfg: losses.DetectionLossConfig = losses.DetectionLossConfig(),
              n_slots: int = 4, n_gt: int = 2) -> Probe:
    """Detection probe with the Hungarian matching frozen at the sampled point."""
    while True:
        gt = np.column_stack([rng.uniform(0.05, 0.6, (n_gt, 2)), rng.uniform(0.1, 0.3, (n_gt, 2))])
        boxes = np.column_stack([rng.uniform(0.05, 0.6, (n_slots, 2)), rng.uniform(0.1, 0.3, (n_slots, 2))])
        boxes[:n_gt] = gt + rng.normal(scale=0.03, size=gt.shape)
        boxes[:, 2:] = np.abs(boxes[:, 2:]) + 0.02
        probs = _probs(rng, n_slots)
        matching = losses.detection_loss(boxes, probs, gt, cfg).info["matching"]
        if all(_smooth(boxes[p], gt[g]) for p, g in matching.pairs):
            break
    fn = partial(losses.detection_loss, gt_boxes=gt, cfg=cfg, matching=matching)
    return fn, {"pred_boxes": boxes, "pred_probs": probs}


PROBES = {
    "similarity": similarity,
    "dissimilarity": dissimilarity,
    "stc": stc,
    "detection": detection,
    "dice": dice,
    "focal": focal,
    "action": action,
}
