"""Fixed-population instance tracking, loss kernels and evaluation metrics for group-housed pigs."""

from .assignment import Matching, greedy_max, hungarian_min
from .core import (
    BBox,
    FrameRecord,
    InstanceRecord,
    Mask,
    SequenceMeta,
    VideoSequence,
    bbox_giou,
    bbox_iou,
    mask_iou,
    rle_decode,
    rle_encode,
)

__version__ = "0.1.0"
