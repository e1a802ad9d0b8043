"""Deterministic synthetic pen: ground-truth sequences and controlled corruptions.

Randomness comes from :class:`PenRng`, a PCG64 stream (numpy's bit generator,
seeded through ``SeedSequence(seed)``). Only raw 64-bit draws are used; the
transforms on top are fixed here so output does not depend on numpy's
distribution code:

* uniform: ``(u64 >> 11) * 2**-53`` in [0, 1)
* normal: Box-Muller, ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, one normal per pair
* integer below n: ``floor(uniform * n)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .core import (
    BBox,
    FrameRecord,
    InstanceRecord,
    Mask,
    SequenceMeta,
    VideoSequence,
    mask_iou,
    rasterize_ellipse,
)


class SimulationError(RuntimeError):
    pass


class PenRng:
    def __init__(self, seed: int):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self._bits = np.random.PCG64(seed)

    def uniform(self, size: Optional[int] = None):
        raw = self._bits.random_raw(1 if size is None else size)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u

    def normal(self, size: Optional[int] = None):
        n = 1 if size is None else size
        u = self.uniform(2 * n)
        z = np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
        return float(z[0]) if size is None else z

    def below(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)


@dataclass(frozen=True)
class PenConfig:
    n_pigs: int = 31
    frame_w: int = 256
    frame_h: int = 256
    fps: float = 3.0
    n_frames: int = 15
    seed: int = 0
    embed_dim: int = 256
    semi_major: Tuple[float, float] = (10.0, 16.0)
    semi_minor: Tuple[float, float] = (5.0, 8.0)
    step_sigma: float = 1.5
    turn_sigma: float = 0.1
    jitter_sigma: float = 0.2
    p_stay_active: float = 0.9
    p_stay_inactive: float = 0.95
    p_active_init: float = 0.5
    placement_tries: int = 1000
    min_visible: float = 0.5

    def __post_init__(self):
        if self.n_pigs < 1:
            raise ValueError("n_pigs must be at least 1")
        if self.frame_w < 64 or self.frame_h < 64:
            raise ValueError("frame dimensions must be at least 64")
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be at least 1")
        for p in (self.p_stay_active, self.p_stay_inactive, self.p_active_init, self.min_visible):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if 2 * self.semi_major[1] >= min(self.frame_w, self.frame_h):
            raise ValueError("pigs do not fit in the frame")


@dataclass
class PigModel:
    cx: float
    cy: float
    a: float
    b: float
    theta: float
    active: bool
    identity: np.ndarray

    def mask(self, width: int, height: int) -> Mask:
        return rasterize_ellipse(width, height, self.cx, self.cy, self.a, self.b, self.theta)


@dataclass(frozen=True)
class CorruptionConfig:
    """``target_iou`` 1.0 and all rates/noise 0 leave the sequence untouched.

    ``embed_noise_sigma`` is the per-entry standard deviation of Gaussian noise
    added to each embedding before renormalization.
    """

    target_iou: float = 1.0
    drop_rate: float = 0.0
    dup_rate: float = 0.0
    embed_noise_sigma: float = 0.0
    score_noise: float = 0.0
    action_noise: float = 0.0
    shuffle: bool = False

    def __post_init__(self):
        if not 0.0 < self.target_iou <= 1.0:
            raise ValueError("target_iou must lie in (0, 1]")
        if not 0.0 <= self.drop_rate <= 1.0 or not 0.0 <= self.dup_rate <= 1.0:
            raise ValueError("rates must lie in [0, 1]")
        if min(self.embed_noise_sigma, self.score_noise, self.action_noise) < 0:
            raise ValueError("noise levels must be non-negative")


# -- ground truth ---------------------------------------------------------------------


def _identity_vectors(rng: PenRng, n: int, dim: int, tries: int) -> List[np.ndarray]:
    vecs: List[np.ndarray] = []
    for _ in range(n):
        for _ in range(tries):
            v = rng.normal(dim)
            norm = np.linalg.norm(v)
            if norm == 0:
                continue
            v = v / norm
            if all(float(v @ w) < 0.95 for w in vecs):
                vecs.append(v)
                break
        else:
            raise SimulationError("could not draw distinct identity vectors")
    return vecs


def _place(rng: PenRng, cfg: PenConfig, identities) -> List[PigModel]:
    pigs: List[PigModel] = []
    covered = np.zeros((cfg.frame_h, cfg.frame_w), dtype=bool)
    for i in range(cfg.n_pigs):
        for _ in range(cfg.placement_tries):
            a = cfg.semi_major[0] + rng.uniform() * (cfg.semi_major[1] - cfg.semi_major[0])
            b = cfg.semi_minor[0] + rng.uniform() * (cfg.semi_minor[1] - cfg.semi_minor[0])
            cx = a + rng.uniform() * (cfg.frame_w - 2 * a)
            cy = a + rng.uniform() * (cfg.frame_h - 2 * a)
            theta = rng.uniform() * math.pi
            active = rng.uniform() < cfg.p_active_init
            pig = PigModel(cx, cy, a, b, theta, active, identities[i])
            m = pig.mask(cfg.frame_w, cfg.frame_h).bits
            area = np.count_nonzero(m)
            if area and np.count_nonzero(m & ~covered) >= cfg.min_visible * area:
                pigs.append(pig)
                covered |= m
                break
        else:
            raise SimulationError(f"could not place pig {i} after {cfg.placement_tries} tries")
    return pigs


def _reflect(v: float, lo: float, hi: float) -> float:
    if v < lo:
        v = 2 * lo - v
    elif v > hi:
        v = 2 * hi - v
    return min(max(v, lo), hi)


def _advance(rng: PenRng, cfg: PenConfig, pig: PigModel) -> None:
    stay = cfg.p_stay_active if pig.active else cfg.p_stay_inactive
    if rng.uniform() >= stay:
        pig.active = not pig.active
    if pig.active:
        dx, dy = rng.normal(2) * cfg.step_sigma
        pig.theta = (pig.theta + rng.normal() * cfg.turn_sigma) % math.pi
    else:
        dx, dy = rng.normal(2) * cfg.jitter_sigma
    pig.cx = _reflect(pig.cx + dx, pig.a, cfg.frame_w - pig.a)
    pig.cy = _reflect(pig.cy + dy, pig.a, cfg.frame_h - pig.a)


def _snapshot(cfg: PenConfig, pigs: List[PigModel], frame_index: int) -> FrameRecord:
    insts = []
    for i, pig in enumerate(pigs):
        m = pig.mask(cfg.frame_w, cfg.frame_h)
        act = int(pig.active)
        insts.append(InstanceRecord(i, m, m.bbox(), pig.identity.copy(), act, float(act), 1.0))
    return FrameRecord(frame_index, insts)


def generate(cfg: PenConfig = PenConfig()) -> VideoSequence:
    """Ground-truth sequence: rasterized ellipses on a bounded random walk, N fixed throughout."""
    rng = PenRng(cfg.seed)
    identities = _identity_vectors(rng, cfg.n_pigs, cfg.embed_dim, cfg.placement_tries)
    pigs = _place(rng, cfg, identities)
    frames = []
    for t in range(cfg.n_frames):
        if t > 0:
            for pig in pigs:
                _advance(rng, cfg, pig)
        frames.append(_snapshot(cfg, pigs, t))
    meta = SequenceMeta(cfg.n_pigs, cfg.fps, cfg.frame_w, cfg.frame_h, cfg.embed_dim)
    seq = VideoSequence(meta, frames)
    seq.validate(fixed_population=True)
    return seq


# -- corruption -------------------------------------------------------------------------

_MAX_RADIUS = 20.0
_PAD = int(_MAX_RADIUS) + 2


class _Boundary:
    """Distance field of one mask, cropped around it, for fast dilation/erosion.

    Each pixel's distance to the mask edge gets a dither in [0, 1), so a
    growing radius peels (or adds) every boundary layer gradually instead of
    all at once. IoU to the original mask is monotone in the radius.
    """

    def __init__(self, mask: Mask, grow: bool, rng: PenRng):
        h, w = mask.bits.shape
        bb = mask.bbox()
        self.y0 = max(0, int(bb.y) - _PAD)
        self.x0 = max(0, int(bb.x) - _PAD)
        self.y1 = min(h, int(bb.y2) + _PAD)
        self.x1 = min(w, int(bb.x2) + _PAD)
        self.shape = (h, w)
        self.grow = grow
        self.crop = mask.bits[self.y0:self.y1, self.x0:self.x1]
        self.area = int(np.count_nonzero(self.crop))
        if self.area == 0:
            self.dist = np.zeros(self.crop.shape)
            return
        edt = ndimage.distance_transform_edt(~self.crop if grow else self.crop)
        self.dist = edt + rng.uniform(self.crop.size).reshape(self.crop.shape)

    def crop_at(self, r: float) -> np.ndarray:
        if self.grow:
            return self.crop | (self.dist <= r)
        return self.crop & (self.dist > r)

    def iou_at(self, r: float) -> float:
        if self.area == 0:
            return 0.0
        k = int(np.count_nonzero(self.crop_at(r)))
        if self.grow:
            return self.area / k
        return k / self.area

    def mask_at(self, r: float) -> Mask:
        out = np.zeros(self.shape, dtype=bool)
        out[self.y0:self.y1, self.x0:self.x1] = self.crop_at(r)
        return Mask(out)


def calibrate_radius(fields: List[_Boundary], target: float) -> float:
    """Radius whose median IoU lands closest to ``target`` (bisection; IoU falls as r grows)."""
    if not fields or target >= 1.0:
        return 0.0

    def median(r):
        return float(np.median([f.iou_at(r) for f in fields]))

    lo, hi = 0.0, _MAX_RADIUS
    best_r, best_err = 0.0, abs(median(0.0) - target)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        m = median(mid)
        if abs(m - target) < best_err:
            best_r, best_err = mid, abs(m - target)
        if m > target:
            lo = mid
        else:
            hi = mid
    return best_r


def corrupt(gt: VideoSequence, cfg: CorruptionConfig = CorruptionConfig(), seed: int = 0) -> VideoSequence:
    """Prediction-like copy of ``gt`` with controlled mask, embedding, score and count errors.

    Each instance is dilated or eroded (coin flip) by one sequence-wide radius,
    found by bisection so the median mask IoU to ground truth hits
    ``cfg.target_iou``. Detection scores are the true IoU plus noise.
    """
    rng = PenRng(seed)
    fields = []
    for fr in gt.frames:
        row = []
        for inst in fr.instances:
            grow = rng.uniform() < 0.5
            row.append(_Boundary(inst.mask, grow, rng) if cfg.target_iou < 1.0 else None)
        fields.append(row)
    radius = calibrate_radius([f for row in fields for f in row if f is not None], cfg.target_iou)

    next_id = 1 + max((i.instance_id for fr in gt.frames for i in fr.instances), default=-1)
    frames = []
    for fr, row in zip(gt.frames, fields):
        insts = []
        for inst, field in zip(fr.instances, row):
            mask = inst.mask if field is None or radius == 0.0 else field.mask_at(radius)
            emb = inst.embedding
            if cfg.embed_noise_sigma > 0:
                emb = emb + cfg.embed_noise_sigma * rng.normal(emb.size)
                norm = np.linalg.norm(emb)
                emb = emb / norm if norm > 0 else inst.embedding
            iou = 1.0 if mask is inst.mask else mask_iou(mask, inst.mask)
            det = iou + cfg.score_noise * rng.normal() if cfg.score_noise > 0 else iou
            act = inst.action_score
            if cfg.action_noise > 0:
                act = act + cfg.action_noise * rng.normal()
            insts.append(
                InstanceRecord(
                    inst.instance_id, mask, mask.bbox() if mask is not inst.mask else inst.bbox,
                    emb, inst.action, min(max(act, 0.0), 1.0), min(max(det, 0.0), 1.0),
                )
            )
        if cfg.drop_rate > 0 and insts and rng.uniform() < cfg.drop_rate:
            del insts[rng.below(len(insts))]
        if cfg.dup_rate > 0 and insts and rng.uniform() < cfg.dup_rate:
            src = insts[rng.below(len(insts))]
            insts.append(replace(src, instance_id=next_id, det_score=0.5 * src.det_score))
            next_id += 1
        if cfg.shuffle and len(insts) > 1:
            order = np.argsort(rng.uniform(len(insts)), kind="stable")
            insts = [insts[i] for i in order]
        frames.append(FrameRecord(fr.frame_index, insts))
    return VideoSequence(gt.meta, frames)
