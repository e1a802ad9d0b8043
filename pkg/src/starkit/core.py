"""Domain types, mask and box geometry, and the RLE codec.

Masks are stored one raster per instance. Instances in the same frame may
overlap, so nothing here ever assumes a single label map per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np


class Mask:
    """Binary occupancy grid of shape ``(height, width)``, row-major."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("mask width and height must be positive")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
            arr = arr.astype(bool)
        self.bits = arr

    @classmethod
    def zeros(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def bbox(self) -> "BBox":
        """Tight bounding box; a zero-size box at the origin for empty masks."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        if rows.size == 0:
            return BBox(0.0, 0.0, 0.0, 0.0)
        y0, y1 = int(rows[0]), int(rows[-1]) + 1
        x0, x1 = int(cols[0]), int(cols[-1]) + 1
        return BBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def __repr__(self):
        return f"Mask(width={self.width}, height={self.height}, area={self.area})"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner ``(x, y)`` and extents ``(w, h)``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box extents must be non-negative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)


@dataclass(eq=False)
class InstanceRecord:
    """One animal instance in one frame (ground truth or prediction)."""

    instance_id: int
    mask: Mask
    bbox: BBox
    embedding: np.ndarray
    action: int = 0
    action_score: float = 0.0
    det_score: float = 1.0

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=float)
        if self.embedding.ndim != 1:
            raise ValueError("embedding must be a 1-D vector")
        if not np.all(np.isfinite(self.embedding)):
            raise ValueError("embedding entries must be finite")
        if self.action not in (0, 1):
            raise ValueError(f"action label must be 0 or 1, got {self.action}")
        for name in ("action_score", "det_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def __eq__(self, other):
        if not isinstance(other, InstanceRecord):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.mask == other.mask
            and self.bbox == other.bbox
            and self.embedding.shape == other.embedding.shape
            and bool(np.array_equal(self.embedding, other.embedding))
            and self.action == other.action
            and self.action_score == other.action_score
            and self.det_score == other.det_score
        )

    __hash__ = None


@dataclass
class FrameRecord:
    frame_index: int
    instances: List[InstanceRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate instance ids in frame {self.frame_index}")

    def __len__(self):
        return len(self.instances)

    def by_id(self, instance_id: int) -> Optional[InstanceRecord]:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        return None


@dataclass(frozen=True)
class SequenceMeta:
    """Sequence-level header: population size, frame rate, raster size, embedding width."""

    n: int
    fps: float
    width: int
    height: int
    embed_dim: int


@dataclass
class VideoSequence:
    meta: SequenceMeta
    frames: List[FrameRecord] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self, fixed_population: bool = False) -> None:
        """Check structural invariants; ``fixed_population`` also demands N instances per frame."""
        prev = -1
        for fr in self.frames:
            if fr.frame_index <= prev:
                raise ValueError("frame indices must be strictly increasing")
            prev = fr.frame_index
            for inst in fr.instances:
                if inst.mask.width != self.meta.width or inst.mask.height != self.meta.height:
                    raise ValueError(
                        f"frame {fr.frame_index}: mask is {inst.mask.width}x{inst.mask.height}, "
                        f"sequence is {self.meta.width}x{self.meta.height}"
                    )
                if inst.embedding.shape[0] != self.meta.embed_dim:
                    raise ValueError(
                        f"frame {fr.frame_index}: embedding dim {inst.embedding.shape[0]} "
                        f"!= {self.meta.embed_dim}"
                    )
            if fixed_population and len(fr.instances) != self.meta.n:
                raise ValueError(
                    f"frame {fr.frame_index} has {len(fr.instances)} instances, expected {self.meta.n}"
                )

    def __len__(self):
        return len(self.frames)


def _check_same_shape(a: Mask, b: Mask) -> None:
    if a.bits.shape != b.bits.shape:
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mask_iou(a: Mask, b: Mask) -> float:
    """|a & b| / |a | b|; 0.0 when both masks are empty."""
    _check_same_shape(a, b)
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return np.count_nonzero(a.bits & b.bits) / union


def mask_iou_matrix(rows: Sequence[Mask], cols: Sequence[Mask]) -> np.ndarray:
    """Pairwise mask IoU, shape ``(len(rows), len(cols))``."""
    if len(rows) == 0 or len(cols) == 0:
        return np.zeros((len(rows), len(cols)))
    shape = rows[0].bits.shape
    for m in (*rows, *cols):
        if m.bits.shape != shape:
            raise ValueError("all masks must share the same dimensions")
    a = np.stack([m.bits.ravel() for m in rows]).astype(np.float64)
    b = np.stack([m.bits.ravel() for m in cols]).astype(np.float64)
    inter = a @ b.T
    union = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def _edge_area(b: BBox) -> float:
    # from edge differences, like the intersection, so identical boxes give exactly 1
    return (b.x2 - b.x) * (b.y2 - b.y)


def _inter_union(a: BBox, b: BBox):
    iw = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = iw * ih
    return inter, max(_edge_area(a) + _edge_area(b) - inter, inter)


def bbox_iou(a: BBox, b: BBox) -> float:
    inter, union = _inter_union(a, b)
    if union <= 0:
        return 0.0
    return inter / union


def bbox_giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in [-1, 1]. Raises if both boxes have zero area."""
    if a.area <= 0 and b.area <= 0:
        raise ValueError("GIoU undefined for two degenerate boxes")
    inter, union = _inter_union(a, b)
    enclose = (max(a.x2, b.x2) - min(a.x, b.x)) * (max(a.y2, b.y2) - min(a.y, b.y))
    return inter / union - (enclose - union) / enclose


def rle_encode(m: Mask) -> List[int]:
    """Column-major run lengths; the first run counts zeros and may be 0."""
    flat = m.bits.T.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs: Iterable[int], width: int, height: int) -> Mask:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("run lengths must be non-negative")
    total = sum(runs)
    if total != width * height:
        raise ValueError(f"run lengths sum to {total}, expected {width * height}")
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return Mask(flat.reshape(width, height).T.copy())


def rasterize_ellipse(
    width: int, height: int, cx: float, cy: float, a: float, b: float, theta: float
) -> Mask:
    """Pixel (col, row) is inside iff its centre (col + 0.5, row + 0.5) satisfies the ellipse inequality."""
    xs = np.arange(width) + 0.5 - cx
    ys = np.arange(height) + 0.5 - cy
    dx, dy = np.meshgrid(xs, ys)
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return Mask(u * u + v * v <= 1.0)
