"""Evaluation for segmentation, tracking, action and re-identification.

* segmentation: mask mAP over IoU thresholds 0.50:0.95 and at 0.50
* tracking: cMOTSA and its soft variant scMOTSA
* re-identification: CMC rank-k accuracy per inter-frame interval
* action: rank-based AUC-ROC

Under the fixed-population constraint every ground-truth identity is paired
with exactly one tracked prediction per frame, so tracking has no false
negatives: a pair is a TP when its mask IoU exceeds 0.5 and an FP otherwise,
and a track left unlinked in a frame counts as an FP with IoU 0.

scMOTSA uses soft_tp = sum of mask IoUs over TP pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .assignment import greedy_max
from .core import FrameRecord, VideoSequence, mask_iou, mask_iou_matrix
from .tracker import TrackedSequence

TP_IOU = 0.5
DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class MapConfig:
    iou_thresholds: Tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    interpolation: str = "101"  # or "all"

    def __post_init__(self):
        t = self.iou_thresholds
        if not t or any(not 0.0 < x <= 1.0 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("IoU thresholds must be strictly increasing in (0, 1]")
        if self.interpolation not in ("101", "all"):
            raise ValueError("interpolation must be '101' or 'all'")


@dataclass
class TrackingTally:
    tp: int = 0
    fp: int = 0
    soft_tp: float = 0.0

    def add(self, iou: float) -> None:
        if iou > TP_IOU:
            self.tp += 1
            self.soft_tp += iou
        else:
            self.fp += 1


@dataclass
class CmotsaResult:
    cmotsa: float
    scmotsa: float
    tally: TrackingTally


@dataclass
class CmcCurve:
    interframe_interval: int
    accuracy_at_k: List[float]

    def rank(self, k: int) -> float:
        """Accuracy at rank ``k`` (1-based); ranks past the gallery size saturate."""
        return self.accuracy_at_k[min(k, len(self.accuracy_at_k)) - 1]


@dataclass
class MetricsReport:
    map_50_95: Optional[float] = None
    map_50: Optional[float] = None
    cmotsa: Dict[str, float] = field(default_factory=dict)
    scmotsa: Dict[str, float] = field(default_factory=dict)
    cmc: List[CmcCurve] = field(default_factory=list)
    action_auc: Optional[float] = None
    tallies: Dict[str, TrackingTally] = field(default_factory=dict)
    id_switches: Dict[str, int] = field(default_factory=dict)

    def to_lines(self) -> List[str]:
        """``key=value`` lines; keys are MetricsReport field names, dotted for nested entries."""
        lines = []
        if self.map_50_95 is not None:
            lines.append(f"map_50_95={self.map_50_95!r}")
        if self.map_50 is not None:
            lines.append(f"map_50={self.map_50!r}")
        for mode in sorted(self.cmotsa):
            lines.append(f"cmotsa.{mode}={self.cmotsa[mode]!r}")
            lines.append(f"scmotsa.{mode}={self.scmotsa[mode]!r}")
            if mode in self.tallies:
                t = self.tallies[mode]
                lines.append(f"tallies.{mode}.tp={t.tp}")
                lines.append(f"tallies.{mode}.fp={t.fp}")
                lines.append(f"tallies.{mode}.soft_tp={t.soft_tp!r}")
            if mode in self.id_switches:
                lines.append(f"id_switches.{mode}={self.id_switches[mode]}")
        for curve in self.cmc:
            for k, acc in enumerate(curve.accuracy_at_k, start=1):
                lines.append(f"cmc.{curve.interframe_interval}.{k}={acc!r}")
        if self.action_auc is not None:
            lines.append(f"action_auc={self.action_auc!r}")
        return lines


# -- segmentation -----------------------------------------------------------------


def _aligned(preds: Sequence[FrameRecord], gts: Sequence[FrameRecord]):
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction frames vs {len(gts)} ground-truth frames")
    for p, g in zip(preds, gts):
        if p.frame_index != g.frame_index:
            raise ValueError(f"frame index mismatch: {p.frame_index} vs {g.frame_index}")
    return list(zip(preds, gts))


def match_detections(preds: Sequence[FrameRecord], gts: Sequence[FrameRecord], iou_thresh: float,
                     ious: Optional[List[np.ndarray]] = None):
    """Score-ordered greedy claiming of ground truths.

    Returns ``(scores, is_tp, n_gt)`` in descending score order. A detection is
    a TP if some still-unclaimed ground truth in its frame has IoU above the
    threshold; it claims the one with the highest IoU.
    """
    pairs = _aligned(preds, gts)
    if ious is None:
        ious = [mask_iou_matrix([i.mask for i in p.instances], [i.mask for i in g.instances]) for p, g in pairs]
    n_gt = sum(len(g.instances) for _, g in pairs)
    dets = [
        (inst.det_score, f, k)
        for f, (p, _) in enumerate(pairs)
        for k, inst in enumerate(p.instances)
    ]
    dets.sort(key=lambda d: -d[0])  # stable: frame then slot order among ties
    claimed = [np.zeros(len(g.instances), dtype=bool) for _, g in pairs]
    scores = np.empty(len(dets))
    is_tp = np.zeros(len(dets), dtype=bool)
    for rank, (score, f, k) in enumerate(dets):
        scores[rank] = score
        row = np.where(claimed[f], -1.0, ious[f][k]) if ious[f].size else np.empty(0)
        if row.size and row.max() > iou_thresh:
            j = int(np.argmax(row))
            claimed[f][j] = True
            is_tp[rank] = True
    return scores, is_tp, n_gt


def _ap_from_flags(is_tp: np.ndarray, n_gt: int, interpolation: str) -> float:
    if is_tp.size == 0:
        return 0.0
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "101":
        points = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, points, side="left")
        vals = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
        return float(np.mean(vals))
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def average_precision(preds: Sequence[FrameRecord], gts: Sequence[FrameRecord], iou_thresh: float,
                      interpolation: str = "101") -> float:
    """Mask AP at one IoU threshold, pooled over all frames."""
    scores, is_tp, n_gt = match_detections(preds, gts, iou_thresh)
    if n_gt == 0:
        raise ValueError("average precision is undefined without ground truths")
    return _ap_from_flags(is_tp, n_gt, interpolation)


def map_metric(preds: Sequence[FrameRecord], gts: Sequence[FrameRecord],
               cfg: MapConfig = MapConfig()) -> Tuple[float, float]:
    """``(mean AP over cfg thresholds, AP at IoU 0.5)``."""
    pairs = _aligned(preds, gts)
    if sum(len(g.instances) for _, g in pairs) == 0:
        raise ValueError("average precision is undefined without ground truths")
    ious = [mask_iou_matrix([i.mask for i in p.instances], [i.mask for i in g.instances]) for p, g in pairs]

    def ap(t):
        _, is_tp, n_gt = match_detections(preds, gts, t, ious)
        return _ap_from_flags(is_tp, n_gt, cfg.interpolation)

    aps = [ap(t) for t in cfg.iou_thresholds]
    return float(np.mean(aps)), ap(0.5)


# -- tracking ---------------------------------------------------------------------


def cmotsa(tracked: TrackedSequence, gt: VideoSequence) -> CmotsaResult:
    """Constrained MOTSA and its soft variant over all frames and tracks."""
    gt_frames = {fr.frame_index: fr for fr in gt.frames}
    tally = TrackingTally()
    for ft in tracked.frames:
        g = gt_frames.get(ft.frame_index)
        if g is None:
            raise ValueError(f"no ground truth for frame {ft.frame_index}")
        for tid in tracked.track_ids:
            g_inst = g.by_id(tid)
            if g_inst is None:
                raise ValueError(f"track {tid} has no ground-truth identity in frame {ft.frame_index}")
            pred = ft.assigned.get(tid)
            tally.add(mask_iou(pred.mask, g_inst.mask) if pred is not None else 0.0)
    total = tally.tp + tally.fp
    if total == 0:
        raise ValueError("nothing to evaluate")
    return CmotsaResult(tally.tp / total, tally.soft_tp / total, tally)


def identity_switches(tracked: TrackedSequence, gt: VideoSequence) -> int:
    """Count changes of the ground-truth identity a track covers.

    In each frame, tracked masks are greedily matched to ground-truth masks by
    IoU; a track covers an identity when that IoU exceeds 0.5. A switch is
    counted when a track's covered identity differs from the last one it covered.
    """
    gt_frames = {fr.frame_index: fr for fr in gt.frames}
    last: Dict[int, int] = {}
    switches = 0
    for ft in tracked.frames:
        g = gt_frames[ft.frame_index]
        tids = [t for t in tracked.track_ids if ft.assigned.get(t) is not None]
        if not tids or not g.instances:
            continue
        iou = mask_iou_matrix([ft.assigned[t].mask for t in tids], [i.mask for i in g.instances])
        for r, c in greedy_max(iou).pairs:
            if iou[r, c] <= TP_IOU:
                continue
            tid, gid = tids[r], g.instances[c].instance_id
            if tid in last and last[tid] != gid:
                switches += 1
            last[tid] = gid
    return switches


# -- re-identification -----------------------------------------------------------------


def cmc_hits(gallery: FrameRecord, query: FrameRecord) -> np.ndarray:
    """Per-query 0-based rank of the true identity in the gallery, by ascending cosine distance.

    Queries whose identity is absent from the gallery are skipped.
    """
    if not gallery.instances:
        raise ValueError("empty gallery")
    g_ids = np.array([i.instance_id for i in gallery.instances])
    g = np.stack([i.embedding for i in gallery.instances])
    g_norm = np.linalg.norm(g, axis=1)
    ranks = []
    for q in query.instances:
        hit = np.flatnonzero(g_ids == q.instance_id)
        if hit.size == 0:
            continue
        qn = np.linalg.norm(q.embedding)
        if qn == 0 or np.any(g_norm == 0):
            raise ValueError("cosine distance undefined for a zero-norm embedding")
        dist = 1.0 - (g @ q.embedding) / (g_norm * qn)
        order = np.argsort(dist, kind="stable")
        ranks.append(int(np.flatnonzero(order == hit[0])[0]))
    return np.array(ranks, dtype=int)


def cmc(gallery: FrameRecord, query: FrameRecord, interval: int = 0,
        max_rank: Optional[int] = None) -> CmcCurve:
    """CMC curve for one gallery/query frame pair, ranks 1..max_rank (default: gallery size)."""
    ranks = cmc_hits(gallery, query)
    size = max_rank or len(gallery.instances)
    if ranks.size == 0:
        raise ValueError("no query identity is present in the gallery")
    acc = [float(np.mean(ranks < k)) for k in range(1, size + 1)]
    return CmcCurve(interval, acc)


def cmc_curve(videos: Sequence[VideoSequence], interval: int, max_rank: Optional[int] = None) -> CmcCurve:
    """CMC at an inter-frame interval: ``interval`` frames are skipped between gallery and query.

    Accuracy is averaged over all frame pairs of a video, then over videos.
    """
    if interval < 0:
        raise ValueError("interval must be non-negative")
    gap = interval + 1
    size = max_rank or max(len(fr.instances) for v in videos for fr in v.frames)
    per_video = []
    for v in videos:
        curves = []
        for t in range(len(v.frames) - gap):
            ranks = cmc_hits(v.frames[t], v.frames[t + gap])
            if ranks.size:
                curves.append([float(np.mean(ranks < k)) for k in range(1, size + 1)])
        if curves:
            per_video.append(np.mean(curves, axis=0))
    if not per_video:
        raise ValueError(f"no frame pairs {gap} frames apart")
    return CmcCurve(interval, [float(x) for x in np.mean(per_video, axis=0)])


# -- action -----------------------------------------------------------------------------


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def action_pairs(preds: Sequence[FrameRecord], gts: Sequence[FrameRecord]):
    """(predicted action scores, ground-truth labels) for greedily IoU-matched instance pairs."""
    scores, labels = [], []
    for p, g in _aligned(preds, gts):
        if not p.instances or not g.instances:
            continue
        iou = mask_iou_matrix([i.mask for i in p.instances], [i.mask for i in g.instances])
        for r, c in greedy_max(iou).pairs:
            if iou[r, c] > 0:
                scores.append(p.instances[r].action_score)
                labels.append(g.instances[c].action)
    return np.array(scores), np.array(labels, dtype=int)
