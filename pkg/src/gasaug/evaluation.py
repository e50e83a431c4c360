"""Noise-injection protocol and R40 average-precision evaluation.

Noise robustness is probed by adding k ~ U{0..k'} uniform points around each
ground-truth box (k' in {0, 20, 50, 100}). Detection quality is measured as
BEV / 3D average precision at IoU 0.7 on the vehicle class, sampled at 40
recall positions, split into KITTI-style easy / moderate / hard buckets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLabel, NoGroundTruth
from .geometry import (
    DEFAULT_VEHICLE_CLASSES,
    Detection,
    DetectionFrame,
    GtObject,
    PointCloud,
    from_box_frame,
)
from .loss import bev_iou, iou3d
from .seeding import SeededRng

NOISE_DILATION = 0.25  # m added on each horizontal face of the gt box


class Difficulty(enum.IntEnum):
    """Evaluation buckets; higher value = harder. IGNORED never counts."""

    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


@dataclass(frozen=True)
class NoiseProtocolParams:
    """Noise level: per-box point count is drawn uniformly from {0..k_prime}."""

    k_prime: int
    dilation: float = NOISE_DILATION

    def __post_init__(self):
        if self.k_prime < 0:
            raise ValueError("k_prime must be >= 0")
        if self.dilation < 0.0:
            raise ValueError("dilation must be >= 0")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol constants.

    metric is "bev" (footprint IoU) or "3d" (oriented volume IoU).
    range_gates optionally caps the BEV distance per difficulty, standing in
    for KITTI's image-height criterion in this LiDAR-only setting.
    """

    iou_threshold: float = 0.7
    metric: str = "bev"
    recall_positions: int = 40
    vehicle_classes: frozenset[str] = DEFAULT_VEHICLE_CLASSES
    range_gates: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.metric not in ("bev", "3d"):
            raise ValueError(f"metric must be 'bev' or '3d', got '{self.metric}'")
        if self.recall_positions < 1:
            raise ValueError("recall_positions must be >= 1")

    def iou_fn(self):
        return bev_iou if self.metric == "bev" else iou3d


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int


@dataclass
class APResult:
    """AP percentages per difficulty plus the full-score-range match counts."""

    ap_easy: float
    ap_moderate: float
    ap_hard: float
    counts: dict[Difficulty, MatchCounts] = field(default_factory=dict)

    def ap(self, difficulty: Difficulty) -> float:
        return {
            Difficulty.EASY: self.ap_easy,
            Difficulty.MODERATE: self.ap_moderate,
            Difficulty.HARD: self.ap_hard,
        }[difficulty]


def inject_noise(
    frame: DetectionFrame, params: NoiseProtocolParams, rng: SeededRng
) -> DetectionFrame:
    """Add k ~ U{0..k'} uniform points around each ground-truth box.

    Points are uniform inside the box dilated by ``params.dilation`` on each
    horizontal face (height untouched), with reflectivity ~ U[0, 1]. Original
    points, boxes and predictions are untouched; k' = 0 returns the frame
    unchanged. Per-box draw order: k, then the k x 3 positions, then the k
    reflectivities.
    """
    if params.k_prime == 0:
        return frame
    chunks = [frame.cloud.points]
    for gt in frame.gt_boxes:
        k = rng.randint(0, params.k_prime)
        if k == 0:
            continue
        box = gt.box
        half = np.array(
            [
                box.length / 2.0 + params.dilation,
                box.width / 2.0 + params.dilation,
                box.height / 2.0,
            ]
        )
        local = (rng.random((k, 3)) * 2.0 - 1.0) * half
        world = from_box_frame(local, box)
        refl = rng.random(k)
        chunks.append(np.column_stack([world, refl]))
    if len(chunks) == 1:
        cloud = frame.cloud
    else:
        cloud = PointCloud(np.vstack(chunks), frame.cloud.frame_id)
    return DetectionFrame(cloud, list(frame.gt_boxes), list(frame.pred_boxes))


def assign_difficulty(
    gt: GtObject, range_gates: tuple[float, float, float] | None = None
) -> Difficulty:
    """KITTI-style bucket from occlusion and truncation.

    Easy: occlusion 0, truncation <= 0.15; Moderate: occlusion <= 1,
    truncation <= 0.30; Hard: occlusion <= 2, truncation <= 0.50; otherwise
    Ignored. An optional per-difficulty BEV range gate replaces the
    image-height criterion.
    """
    occ, trunc = gt.occlusion, gt.truncation
    if occ not in (0, 1, 2, 3):
        raise InvalidLabel(f"occlusion must be one of 0..3, got {occ!r}")
    if not 0.0 <= trunc <= 1.0:
        raise InvalidLabel(f"truncation must be in [0, 1], got {trunc!r}")
    dist = float(np.hypot(gt.box.center[0], gt.box.center[1]))
    gates = range_gates or (np.inf, np.inf, np.inf)
    if occ <= 0 and trunc <= 0.15 and dist <= gates[0]:
        return Difficulty.EASY
    if occ <= 1 and trunc <= 0.30 and dist <= gates[1]:
        return Difficulty.MODERATE
    if occ <= 2 and trunc <= 0.50 and dist <= gates[2]:
        return Difficulty.HARD
    return Difficulty.IGNORED


def match_detections(
    preds: list[Detection],
    gts: list[GtObject],
    config: EvalConfig,
    difficulty: Difficulty,
):
    """Greedy score-ordered matching for one frame at one difficulty.

    Predictions are processed in descending score order (ties by input
    order); each claims the highest-IoU still-unmatched countable gt with
    IoU >= threshold. Gts harder than the evaluated difficulty (or ignored,
    or of a non-vehicle class) are "don't care": a prediction overlapping
    one is neither TP nor FP.

    Returns (flags, matched): flags[i] is 1 (TP), 0 (FP) or -1 (ignored)
    for preds[i] in input order; matched[j] marks countable gts claimed.
    """
    iou_of = config.iou_fn()
    vehicle_gts = [
        (j, gt) for j, gt in enumerate(gts) if gt.label in config.vehicle_classes
    ]
    levels = {j: assign_difficulty(gt, config.range_gates) for j, gt in vehicle_gts}
    countable = [j for j, _ in vehicle_gts if levels[j] <= difficulty]
    dont_care = [j for j, _ in vehicle_gts if levels[j] > difficulty]

    flags = np.zeros(len(preds), dtype=np.int8)
    matched = np.zeros(len(gts), dtype=bool)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    for i in order:
        box = preds[i].box
        best_j, best_iou = -1, 0.0
        for j in countable:
            if matched[j]:
                continue
            v = iou_of(box, gts[j].box)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= config.iou_threshold:
            flags[i] = 1
            matched[best_j] = True
            continue
        if any(
            iou_of(box, gts[j].box) >= config.iou_threshold for j in dont_care
        ):
            flags[i] = -1
        else:
            flags[i] = 0
    return flags, matched


def _interpolated_ap(
    scores: np.ndarray, flags: np.ndarray, n_gt: int, positions: int
) -> float:
    """R-point interpolated AP in percent from pooled (score, TP/FP) pairs.

    Precision/recall is evaluated at distinct score thresholds only (a
    threshold cannot split a tie group), then AP averages, over recall
    positions i/R for i = 1..R, the best precision at recall >= i/R.
    """
    if n_gt == 0 or len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    f = flags[order]
    tp = np.cumsum(f == 1)
    fp = np.cumsum(f == 0)
    cut = np.ones(len(s), dtype=bool)
    cut[:-1] = s[:-1] > s[1:]  # last element of every tie group
    recall = tp[cut] / n_gt
    precision = tp[cut] / np.maximum(tp[cut] + fp[cut], 1)
    total = 0.0
    for i in range(1, positions + 1):
        r = i / positions
        at = precision[recall >= r]
        total += at.max() if len(at) else 0.0
    return 100.0 * total / positions


def average_precision_r40(
    frames: list[tuple[list[Detection], list[GtObject]]], config: EvalConfig
) -> APResult:
    """Pooled average precision over frames, per difficulty.

    Ignored-flag predictions (don't-care overlaps) are excluded from the
    pool. A difficulty with no countable ground truth reports AP 0.0; if no
    vehicle ground truth exists at all, AP is undefined.

    Raises:
        NoGroundTruth: no vehicle gt in any frame.
    """
    total_vehicle_gts = sum(
        1
        for _, gts in frames
        for gt in gts
        if gt.label in config.vehicle_classes
    )
    if total_vehicle_gts == 0:
        raise NoGroundTruth("no vehicle ground truth across frames")

    aps: dict[Difficulty, float] = {}
    counts: dict[Difficulty, MatchCounts] = {}
    for difficulty in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        pooled_scores: list[float] = []
        pooled_flags: list[int] = []
        n_gt = 0
        for preds, gts in frames:
            flags, _ = match_detections(preds, gts, config, difficulty)
            for det, flag in zip(preds, flags):
                if flag >= 0:
                    pooled_scores.append(det.score)
                    pooled_flags.append(flag)
            n_gt += sum(
                1
                for gt in gts
                if gt.label in config.vehicle_classes
                and assign_difficulty(gt, config.range_gates) <= difficulty
            )
        scores = np.asarray(pooled_scores)
        flags = np.asarray(pooled_flags)
        aps[difficulty] = _interpolated_ap(
            scores, flags, n_gt, config.recall_positions
        )
        tp = int((flags == 1).sum()) if len(flags) else 0
        fp = int((flags == 0).sum()) if len(flags) else 0
        counts[difficulty] = MatchCounts(tp, fp, n_gt - tp)

    return APResult(
        aps[Difficulty.EASY], aps[Difficulty.MODERATE], aps[Difficulty.HARD], counts
    )
