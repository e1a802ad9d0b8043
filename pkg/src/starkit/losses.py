"""Loss kernels for the segmentation, tracking, action and re-identification heads, with hand-derived gradients.

Every kernel returns a :class:`LossValue` whose ``grads`` are keyed by the
name of the real-valued input they differentiate, so :func:`grad_check` can
perturb the same inputs by name.

Logs are taken of ``clip(x, LOG_EPS, 1)``; the derivative of a clipped log is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .assignment import Matching, hungarian_min
from .core import Mask

LOG_EPS = 1e-12


@dataclass(frozen=True)
class ContrastiveConfig:
    lambda_s: float = 1.0
    lambda_ds: float = 1.0
    tau: int = 2
    batch_k: int = 2

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_ds < 0:
            raise ValueError("contrastive weights must be non-negative")
        if self.tau < 2 or self.batch_k < 2:
            raise ValueError("tau and batch_k must be at least 2")


@dataclass(frozen=True)
class DetectionLossConfig:
    w_class: float = 1.0
    w_l1: float = 5.0
    w_giou: float = 2.0

    def __post_init__(self):
        ws = (self.w_class, self.w_l1, self.w_giou)
        if min(ws) < 0 or max(ws) == 0:
            raise ValueError("detection weights must be non-negative and not all zero")


@dataclass(frozen=True)
class SegLossConfig:
    dice_eps: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.dice_eps <= 0:
            raise ValueError("dice_eps must be positive")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must lie in [0, 1]")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")


@dataclass
class LossValue:
    value: float
    terms: Dict[str, float]
    grads: Dict[str, np.ndarray]
    info: Dict[str, object] = field(default_factory=dict)


# -- cosine helpers ---------------------------------------------------------


def _unit_rows(e: np.ndarray):
    norms = np.linalg.norm(e, axis=-1)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    return e / norms[..., None], norms


def _pairwise_cos(e: np.ndarray):
    """Cosines over unordered pairs ``i < j`` of rows of ``e`` and the gradient of their sum."""
    u, norms = _unit_rows(e)
    cos = np.clip(u @ u.T, -1.0, 1.0)
    iu = np.triu_indices(e.shape[0], k=1)
    others = u.sum(axis=0)[None, :] - u
    weight = cos.sum(axis=1) - np.diag(cos)
    grad = (others - weight[:, None] * u) / norms[:, None]
    return cos[iu], grad


def _as_embeddings(x, ndim: int, what: str) -> np.ndarray:
    try:
        arr = np.array(x, dtype=float)
    except ValueError as exc:  # ragged nesting
        raise ValueError(f"{what}: inconsistent shapes ({exc})") from None
    if arr.ndim != ndim:
        raise ValueError(f"{what}: expected a {ndim}-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: entries must be finite")
    return arr


# -- spatio-temporal contrastive ---------------------------------------------


def similarity_loss(frame_embeddings) -> LossValue:
    """Sum over unordered pairs ``i < j`` of cos(psi_i, psi_j) within one frame."""
    e = _as_embeddings(frame_embeddings, 2, "frame_embeddings")
    if e.shape[0] < 2:
        raise ValueError("similarity loss needs at least two embeddings")
    pair_cos, grad = _pairwise_cos(e)
    total = float(np.sum(pair_cos))
    return LossValue(total, {"similarity": total}, {"frame_embeddings": grad})


def dissimilarity_loss(tracks) -> LossValue:
    """Sum over pigs and frame pairs ``t1 < t2`` of (1 - cos(psi_t1, psi_t2)).

    ``tracks[i][t]`` is pig ``i``'s embedding in frame ``t`` of the window.
    """
    try:
        lengths = [len(t) for t in tracks]
    except TypeError:
        raise ValueError("tracks must be a sequence of per-pig embedding sequences") from None
    if not lengths:
        raise ValueError("tracks is empty")
    if len(set(lengths)) != 1:
        missing = [i for i, n in enumerate(lengths) if n != max(lengths)]
        raise ValueError(f"pigs {missing} are missing from some frames of the window")
    e = _as_embeddings(tracks, 3, "tracks")
    n_pigs, n_frames, _ = e.shape
    if n_frames < 2:
        raise ValueError("dissimilarity loss needs at least two frames")
    total = 0.0
    grad = np.empty_like(e)
    pairs = n_frames * (n_frames - 1) // 2
    for i in range(n_pigs):
        pair_cos, g = _pairwise_cos(e[i])
        total += float(np.sum(1.0 - pair_cos))
        grad[i] = -g
    return LossValue(
        total, {"dissimilarity": total}, {"tracks": grad}, {"frame_pairs_per_pig": pairs}
    )


def stc_loss(frames, cfg: ContrastiveConfig = ContrastiveConfig(), mode: Optional[str] = None) -> LossValue:
    """lambda_s * (sum of per-frame similarity losses) + lambda_ds * dissimilarity over all frame pairs.

    ``frames[t][i]`` is pig ``i`` in frame ``t``. ``mode="window"`` requires
    ``tau`` frames (consecutive window); ``mode="batch"`` requires ``batch_k``
    frames, giving C(K, 2) frame pairs per pig.
    """
    e = _as_embeddings(frames, 3, "frames")
    n_frames = e.shape[0]
    if mode == "window" and n_frames != cfg.tau:
        raise ValueError(f"window mode expects tau={cfg.tau} frames, got {n_frames}")
    if mode == "batch" and n_frames != cfg.batch_k:
        raise ValueError(f"batch mode expects K={cfg.batch_k} frames, got {n_frames}")
    if mode not in (None, "window", "batch"):
        raise ValueError(f"unknown mode {mode!r}")

    sim_total = 0.0
    grad = np.zeros_like(e)
    for t in range(n_frames):
        lv = similarity_loss(e[t])
        sim_total += lv.value
        grad[t] += cfg.lambda_s * lv.grads["frame_embeddings"]
    ds = dissimilarity_loss(np.swapaxes(e, 0, 1))
    grad += cfg.lambda_ds * np.swapaxes(ds.grads["tracks"], 0, 1)

    terms = {"similarity": cfg.lambda_s * sim_total, "dissimilarity": cfg.lambda_ds * ds.value}
    value = terms["similarity"] + terms["dissimilarity"]
    info = {"frames": n_frames, "frame_pairs_per_pig": ds.info["frame_pairs_per_pig"]}
    return LossValue(value, terms, {"frames": grad}, info)


# -- detection -----------------------------------------------------------------


def giou_with_grad(b: np.ndarray, g: np.ndarray):
    """GIoU of boxes ``(x, y, w, h)`` and its gradient with respect to ``b``.

    At kinks (coinciding edges) one-sided derivatives are taken.
    """
    bx1, by1, bw, bh = b
    gx1, gy1, gw, gh = g
    bx2, by2, gx2, gy2 = bx1 + bw, by1 + bh, gx1 + gw, gy1 + gh

    def overlap(lo_b, hi_b, lo_g, hi_g):
        lo, hi = max(lo_b, lo_g), min(hi_b, hi_g)
        if hi <= lo:
            return 0.0, 0.0, 0.0
        # d/d lo_b and d/d hi_b
        return hi - lo, (-1.0 if lo_b > lo_g else 0.0), (1.0 if hi_b < hi_g else 0.0)

    def hull(lo_b, hi_b, lo_g, hi_g):
        return (
            max(hi_b, hi_g) - min(lo_b, lo_g),
            (-1.0 if lo_b < lo_g else 0.0),
            (1.0 if hi_b > hi_g else 0.0),
        )

    iw, diw_lo, diw_hi = overlap(bx1, bx2, gx1, gx2)
    ih, dih_lo, dih_hi = overlap(by1, by2, gy1, gy2)
    cw, dcw_lo, dcw_hi = hull(bx1, bx2, gx1, gx2)
    ch, dch_lo, dch_hi = hull(by1, by2, gy1, gy2)

    inter = iw * ih
    area_b = bw * bh
    union = area_b + gw * gh - inter
    enclose = cw * ch
    if union <= 0 or enclose <= 0:
        raise ValueError("GIoU undefined for two degenerate boxes")
    giou = inter / union - (enclose - union) / enclose

    # partials in corner coordinates (x1, y1, x2, y2) of b
    d_inter = np.array([diw_lo * ih, dih_lo * iw, diw_hi * ih, dih_hi * iw])
    d_area = np.array([-bh, -bw, bh, bw])
    d_enclose = np.array([dcw_lo * ch, dch_lo * cw, dcw_hi * ch, dch_hi * cw])
    d_union = d_area - d_inter
    d_giou = d_inter / union - inter / union**2 * d_union + d_union / enclose - union / enclose**2 * d_enclose
    # chain rule to (x, y, w, h): x2 = x + w, y2 = y + h
    grad = np.array([d_giou[0] + d_giou[2], d_giou[1] + d_giou[3], d_giou[2], d_giou[3]])
    return giou, grad


def _log_clip(x):
    return np.log(np.clip(x, LOG_EPS, 1.0))


def _dlog_clip(x):
    """Derivative of log(clip(x, LOG_EPS, 1)); zero where clipped."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = x > LOG_EPS
    out[inside] = 1.0 / x[inside]
    return out


def detection_cost_matrix(pred_boxes, pred_probs, gt_boxes, cfg: DetectionLossConfig) -> np.ndarray:
    """Matching cost ``-w_class * p + w_l1 * |b - g|_1 - w_giou * GIoU``, predictions as rows."""
    n_pred, n_gt = len(pred_boxes), len(gt_boxes)
    cost = np.empty((n_pred, n_gt))
    for p in range(n_pred):
        for g in range(n_gt):
            giou, _ = giou_with_grad(pred_boxes[p], gt_boxes[g])
            l1 = float(np.abs(pred_boxes[p] - gt_boxes[g]).sum())
            cost[p, g] = -cfg.w_class * pred_probs[p] + cfg.w_l1 * l1 - cfg.w_giou * giou
    return cost


def detection_loss(
    pred_boxes,
    pred_probs,
    gt_boxes,
    cfg: DetectionLossConfig = DetectionLossConfig(),
    matching: Optional[Matching] = None,
) -> LossValue:
    """Set-prediction loss for a single foreground class.

    Boxes are ``(x, y, w, h)`` in normalized image coordinates; ``pred_probs``
    is each slot's pig probability. Slots are Hungarian-matched to ground
    truths (unless ``matching`` is given). Matched slots pay cross-entropy
    towards "pig" plus L1 and (1 - GIoU) box terms; unmatched slots pay
    cross-entropy towards background. Cross-entropy is averaged over slots,
    box terms are normalized by the number of ground truths. Gradients treat
    the matching as constant.
    """
    b = np.array(pred_boxes, dtype=float)
    p = np.array(pred_probs, dtype=float)
    g = np.array(gt_boxes, dtype=float).reshape(-1, 4)
    if b.ndim != 2 or b.shape[1] != 4:
        raise ValueError(f"pred_boxes must have shape (P, 4), got {b.shape}")
    if p.shape != (b.shape[0],):
        raise ValueError(f"pred_probs must have shape ({b.shape[0]},), got {p.shape}")
    if g.shape[0] > b.shape[0]:
        raise ValueError("need at least as many prediction slots as ground-truth boxes")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("pred_probs must lie in [0, 1]")

    n_pred, n_gt = b.shape[0], g.shape[0]
    if matching is None:
        if n_gt > 0:
            matching = hungarian_min(detection_cost_matrix(b, p, g, cfg))
        else:
            matching = Matching([], list(range(n_pred)), [])
    matched = dict(matching.pairs)

    grad_b = np.zeros_like(b)
    grad_p = np.zeros_like(p)
    ce = 0.0
    l1 = 0.0
    giou_term = 0.0
    norm = max(n_gt, 1)
    for slot in range(n_pred):
        if slot in matched:
            ce -= float(_log_clip(p[slot]))
            grad_p[slot] = -cfg.w_class * _dlog_clip(p[slot]) / n_pred
            diff = b[slot] - g[matched[slot]]
            l1 += float(np.abs(diff).sum())
            giou, dgiou = giou_with_grad(b[slot], g[matched[slot]])
            giou_term += 1.0 - giou
            grad_b[slot] = (cfg.w_l1 * np.sign(diff) - cfg.w_giou * dgiou) / norm
        else:
            ce -= float(_log_clip(1.0 - p[slot]))
            grad_p[slot] = cfg.w_class * _dlog_clip(1.0 - p[slot]) / n_pred
    terms = {
        "class": cfg.w_class * ce / n_pred,
        "l1": cfg.w_l1 * l1 / norm,
        "giou": cfg.w_giou * giou_term / norm,
    }
    value = terms["class"] + terms["l1"] + terms["giou"]
    return LossValue(
        value,
        terms,
        {"pred_boxes": grad_b, "pred_probs": grad_p},
        {"matching": matching},
    )


# -- segmentation ----------------------------------------------------------------


def _seg_inputs(pred_probs, gt):
    p = np.array(pred_probs, dtype=float)
    g = gt.bits if isinstance(gt, Mask) else np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match mask shape {g.shape}")
    if not np.all((p >= 0) & (p <= 1)):
        raise ValueError("mask probabilities must lie in [0, 1]")
    return p, g.astype(float)


def dice_loss(pred_probs, gt, cfg: SegLossConfig = SegLossConfig()) -> LossValue:
    """1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)."""
    p, g = _seg_inputs(pred_probs, gt)
    eps = cfg.dice_eps
    num = 2.0 * float(np.sum(p * g)) + eps
    den = float(np.sum(p)) + float(np.sum(g)) + eps
    value = 1.0 - num / den
    grad = -(2.0 * g * den - num) / den**2
    return LossValue(value, {"dice": value}, {"pred_probs": grad})


def focal_pixelwise(p: np.ndarray, g: np.ndarray, alpha: float, gamma: float):
    """Per-pixel focal loss and its derivative with respect to ``p``."""
    pos = g > 0.5
    p_t = np.where(pos, p, 1.0 - p)
    alpha_t = np.where(pos, alpha, 1.0 - alpha)
    one_minus = 1.0 - p_t
    modulator = one_minus**gamma
    log_pt = _log_clip(p_t)
    loss = alpha_t * modulator * -log_pt
    # d/dp_t of -(1 - p_t)^gamma log p_t; the first term vanishes at p_t = 1.
    safe = np.where(one_minus > 0, one_minus, 1.0)
    d_mod = np.where(one_minus > 0, gamma * safe ** (gamma - 1.0), 0.0) if gamma > 0 else 0.0
    d_pt = alpha_t * (d_mod * log_pt - modulator * _dlog_clip(p_t))
    return loss, np.where(pos, d_pt, -d_pt)


def focal_loss(pred_probs, gt, cfg: SegLossConfig = SegLossConfig()) -> LossValue:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t."""
    p, g = _seg_inputs(pred_probs, gt)
    loss, grad = focal_pixelwise(p, g, cfg.focal_alpha, cfg.focal_gamma)
    value = float(np.mean(loss))
    return LossValue(value, {"focal": value}, {"pred_probs": grad / p.size})


# -- action ---------------------------------------------------------------------


def action_loss(pred_probs, labels) -> LossValue:
    """Mean binary cross-entropy between active-probabilities and 0/1 labels."""
    p = np.array(pred_probs, dtype=float).reshape(-1)
    y = np.array(labels, dtype=float).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} probabilities but {y.size} labels")
    if p.size == 0:
        raise ValueError("action loss needs at least one instance")
    if not np.all((p >= 0) & (p <= 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = y == 1
    per = np.where(pos, -_log_clip(p), -_log_clip(1.0 - p))
    value = float(np.mean(per))
    grad = np.where(pos, -_dlog_clip(p), _dlog_clip(1.0 - p)) / p.size
    return LossValue(value, {"action": value}, {"pred_probs": grad})


# -- gradient checking ------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: Dict[str, float]
    rel_tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.rel_tol


def grad_check(
    lossfn: Callable[..., LossValue],
    inputs: Mapping[str, np.ndarray],
    rel_tol: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, entry by entry.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``. The caller
    picks a point away from clips and kinks; for detection the matching should
    be passed in fixed.
    """
    base = {k: np.array(v, dtype=float) for k, v in inputs.items()}
    analytic = lossfn(**base).grads
    per_input = {}
    count = 0
    for name, x in base.items():
        if name not in analytic:
            continue
        worst = 0.0
        a = analytic[name]
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + step
            f_plus = lossfn(**base).value
            x[idx] = orig - step
            f_minus = lossfn(**base).value
            x[idx] = orig
            num = (f_plus - f_minus) / (2.0 * step)
            err = abs(a[idx] - num) / max(abs(a[idx]), abs(num), floor)
            worst = max(worst, err)
            count += 1
        per_input[name] = float(worst)
    return GradCheckReport(max(per_input.values(), default=0.0), per_input, rel_tol, count)
