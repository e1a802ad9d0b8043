"""Constrained tracking of a fixed population of N animals.

No animal enters or leaves, so the tracker keeps exactly N track ids for the
whole sequence and only ever re-links them to the instances of each new
frame, either by greedy mask IoU or by greedy cosine similarity of
embeddings with a distance gate.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import greedy_max
from .core import FrameRecord, InstanceRecord, Mask, SequenceMeta, VideoSequence, mask_iou_matrix

MODES = ("masks", "embeddings")
GATE_METRICS = ("cosine", "euclidean")


@dataclass(frozen=True)
class TrackerConfig:
    mode: str = "masks"
    radius_r: float = 0.5
    burn_in: int = 15
    gate_metric: str = "cosine"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.radius_r <= 2.0:
            raise ValueError("radius_r must lie in (0, 2]")
        if self.burn_in < 1:
            raise ValueError("burn_in must be at least 1")
        if self.gate_metric not in GATE_METRICS:
            raise ValueError(f"gate_metric must be one of {GATE_METRICS}")


@dataclass
class TrackState:
    n: int
    track_ids: List[int]
    slot_to_track: Dict[int, int]
    last_masks: Dict[int, Mask]
    last_embeddings: Dict[int, np.ndarray]


@dataclass
class MatchDiagnostic:
    """How one track was linked in one frame.

    ``flag`` is ``"ok"``, ``"forced"`` (linked with zero similarity),
    ``"gated"`` (no instance within the radius) or ``"shortfall"``
    (fewer instances than tracks). ``slot`` and ``similarity`` are None
    for unlinked tracks.
    """

    track_id: int
    slot: Optional[int]
    matched_by: str
    similarity: Optional[float]
    flag: str


@dataclass
class FrameTracks:
    frame_index: int
    assigned: Dict[int, Optional[InstanceRecord]]
    diagnostics: List[MatchDiagnostic] = field(default_factory=list)
    unmatched_slots: List[int] = field(default_factory=list)
    shortfall: int = 0


@dataclass
class TrackedSequence:
    track_ids: List[int]
    frames: List[FrameTracks]

    def to_video_sequence(self, meta: SequenceMeta) -> VideoSequence:
        """Tracked predictions with ``instance_id`` set to the track id; unlinked tracks omitted."""
        out = []
        for ft in self.frames:
            insts = []
            for tid in self.track_ids:
                inst = ft.assigned.get(tid)
                if inst is None:
                    continue
                insts.append(
                    InstanceRecord(
                        tid, inst.mask, inst.bbox, inst.embedding,
                        inst.action, inst.action_score, inst.det_score,
                    )
                )
            out.append(FrameRecord(ft.frame_index, insts))
        return VideoSequence(meta, out)

    @classmethod
    def from_video_sequence(cls, seq: VideoSequence, track_ids: Sequence[int]) -> "TrackedSequence":
        """Inverse of :meth:`to_video_sequence`: instance ids are read as track ids."""
        frames = []
        for fr in seq.frames:
            assigned = {tid: fr.by_id(tid) for tid in track_ids}
            frames.append(FrameTracks(fr.frame_index, assigned))
        return cls(list(track_ids), frames)


def estimate_count(frames: Sequence[FrameRecord], burn_in: int) -> int:
    """Mode of the per-frame instance count over the first ``burn_in`` frames; ties go to the smaller count."""
    if not frames:
        raise ValueError("cannot estimate a count from zero frames")
    if burn_in < 1 or burn_in > len(frames):
        raise ValueError(f"burn_in must lie in [1, {len(frames)}], got {burn_in}")
    counts = Counter(len(fr.instances) for fr in frames[:burn_in])
    best = max(counts.values())
    return min(c for c, k in counts.items() if k == best)


def select_top_n(frame: FrameRecord, n: int) -> Tuple[FrameRecord, int]:
    """Keep the ``n`` highest-scoring instances in their original order.

    Returns the reduced frame and the shortfall ``max(0, n - len(frame))``.
    """
    order = sorted(range(len(frame.instances)), key=lambda i: -frame.instances[i].det_score)
    keep = sorted(order[:n])
    return FrameRecord(frame.frame_index, [frame.instances[i] for i in keep]), max(0, n - len(frame.instances))


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def init_tracks(gt_frame: FrameRecord, pred_frame: FrameRecord) -> Tuple[TrackState, FrameTracks]:
    """Link predictions to ground-truth identities by greedy maximum mask IoU."""
    n = len(gt_frame.instances)
    if len(pred_frame.instances) != n:
        raise ValueError(
            f"first frame has {len(pred_frame.instances)} predictions for {n} ground-truth instances"
        )
    if n == 0:
        raise ValueError("cannot initialise tracks on an empty frame")
    iou = mask_iou_matrix([g.mask for g in gt_frame.instances], [p.mask for p in pred_frame.instances])
    matching = greedy_max(iou)
    state = TrackState(n, sorted(g.instance_id for g in gt_frame.instances), {}, {}, {})
    ft = FrameTracks(pred_frame.frame_index, {})
    for r, c in matching.pairs:
        tid = gt_frame.instances[r].instance_id
        inst = pred_frame.instances[c]
        state.slot_to_track[c] = tid
        state.last_masks[tid] = inst.mask
        state.last_embeddings[tid] = inst.embedding
        ft.assigned[tid] = inst
        ft.diagnostics.append(
            MatchDiagnostic(tid, c, "masks", float(iou[r, c]), "ok" if iou[r, c] > 0 else "forced")
        )
    ft.diagnostics.sort(key=lambda d: d.track_id)
    return state, ft


def _apply(state: TrackState, frame: FrameRecord, sim: np.ndarray, pairs, matched_by: str) -> FrameTracks:
    # an unlinked track is "gated" if instances were left over, else the frame ran short
    unlinked_flag = "gated" if len(pairs) < len(frame.instances) else "shortfall"
    ft = FrameTracks(frame.frame_index, {tid: None for tid in state.track_ids})
    linked = {}
    for r, c in pairs:
        linked[state.track_ids[r]] = (c, float(sim[r, c]))
    state.slot_to_track = {}
    for tid in state.track_ids:
        if tid in linked:
            c, s = linked[tid]
            inst = frame.instances[c]
            ft.assigned[tid] = inst
            state.slot_to_track[c] = tid
            state.last_masks[tid] = inst.mask
            state.last_embeddings[tid] = inst.embedding
            forced = matched_by == "masks" and s <= 0
            ft.diagnostics.append(MatchDiagnostic(tid, c, matched_by, s, "forced" if forced else "ok"))
        else:
            ft.diagnostics.append(MatchDiagnostic(tid, None, matched_by, None, unlinked_flag))
    ft.unmatched_slots = [c for c in range(len(frame.instances)) if c not in state.slot_to_track]
    ft.shortfall = max(0, state.n - len(frame.instances))
    return ft


def step_masks(state: TrackState, frame: FrameRecord) -> FrameTracks:
    """Re-link every track to the instance with greedily maximal IoU against its last mask."""
    if not frame.instances:
        return _apply(state, frame, np.zeros((state.n, 0)), [], "masks")
    last = [state.last_masks[t] for t in state.track_ids]
    iou = mask_iou_matrix(last, [inst.mask for inst in frame.instances])
    return _apply(state, frame, iou, greedy_max(iou).pairs, "masks")


def step_embeddings(state: TrackState, frame: FrameRecord, radius_r: float,
                    gate_metric: str = "cosine") -> FrameTracks:
    """Greedy cosine-similarity linking; a pair is taken only if its distance is below ``radius_r``.

    Tracks left unlinked keep their previous embedding for the next frame.
    """
    if not frame.instances:
        return _apply(state, frame, np.zeros((state.n, 0)), [], "embeddings")
    last = np.stack([state.last_embeddings[t] for t in state.track_ids])
    new = np.stack([inst.embedding for inst in frame.instances])
    cos = _cosine_matrix(last, new)
    if gate_metric == "cosine":
        dist = 1.0 - cos
    elif gate_metric == "euclidean":
        # distance between unit-normalized embeddings, also in [0, 2]
        dist = np.sqrt(np.maximum(2.0 - 2.0 * cos, 0.0))
    else:
        raise ValueError(f"unknown gate metric {gate_metric!r}")
    pairs = greedy_max(cos, allowed=dist < radius_r).pairs
    return _apply(state, frame, cos, pairs, "embeddings")


def track(preds: VideoSequence, gt_first_frame: FrameRecord, cfg: TrackerConfig = TrackerConfig()) -> TrackedSequence:
    """Initialise on the first frame against ground truth, then step frame by frame."""
    if not preds.frames:
        raise ValueError("prediction sequence has no frames")
    n = len(gt_first_frame.instances)
    first, _ = select_top_n(preds.frames[0], n)
    state, ft0 = init_tracks(gt_first_frame, first)
    frames = [ft0]
    for fr in preds.frames[1:]:
        top, _ = select_top_n(fr, n)
        if cfg.mode == "masks":
            frames.append(step_masks(state, top))
        else:
            frames.append(step_embeddings(state, top, cfg.radius_r, cfg.gate_metric))
    return TrackedSequence(list(state.track_ids), frames)
