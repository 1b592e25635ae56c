"""Detection accuracy metrics: IoU, greedy matching, average precision,
miss rate, log-average miss rate, and the frame-directory evaluation
harness.

Boxes use inclusive pixel corners, so a box's width is x_max - x_min + 1.
Matching ranks predictions by confidence (ties keep input order) and
greedily claims the unmatched ground truth with the highest IoU at or
above the threshold; later predictions on an already-claimed ground truth
count as false positives. Average precision sums precision at true-positive
ranks only and divides by the ground-truth count.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .annotations import BoundingBox, Detection, parse_label, parse_prediction
from .errors import EvaluationError

logger = logging.getLogger(__name__)

# Reference operating points for the log-average miss rate: nine
# false-positives-per-image values log-spaced over [1e-2, 1e0].
LAMR_REFERENCE_FPPI = tuple(np.logspace(-2.0, 0.0, num=9))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive pixel areas; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one ranked prediction list against ground truths.

    tp_flags holds one flag per prediction in confidence-descending rank
    order; fn counts unmatched ground truths.
    """

    tp_flags: tuple[bool, ...]
    fn: int

    def __post_init__(self):
        if self.fn < 0:
            raise ValueError("fn must be non-negative")

    @property
    def tp(self) -> int:
        return sum(self.tp_flags)

    @property
    def fp(self) -> int:
        return len(self.tp_flags) - self.tp

    @property
    def g_tp(self) -> int:
        """Total ground-truth positives: matched plus missed."""
        return self.tp + self.fn


def _rank_and_match(
    preds: list[tuple[int, Detection]], gts: list[BoundingBox], threshold: float
) -> tuple[list[tuple[int, bool]], int]:
    """Greedy matching core for a single class.

    Takes (input_index, detection) pairs, returns ((input_index, is_tp) in
    rank order, fn count). Confidence ties keep input order; equal-IoU
    ground-truth candidates resolve to the lowest index.
    """
    ranked = sorted(preds, key=lambda p: -p[1].confidence)
    claimed = [False] * len(gts)
    out = []
    for idx, det in ranked:
        best_j, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if claimed[j]:
                continue
            v = iou(det.box, gt)
            if v > best_iou:
                best_iou, best_j = v, j
        hit = best_j >= 0 and best_iou >= threshold
        if hit:
            claimed[best_j] = True
        out.append((idx, hit))
    return out, claimed.count(False)


def match_detections(
    preds: list[Detection], gts: list[BoundingBox], threshold: float = 0.5
) -> MatchResult:
    """Match single-class predictions against ground truths.

    A prediction is a true positive when it claims an unmatched ground
    truth at IoU >= threshold (inclusive); duplicates on a claimed ground
    truth are false positives; unmatched ground truths are false negatives.
    """
    classes = {d.box.class_name for d in preds} | {g.class_name for g in gts}
    if len(classes) > 1:
        raise ValueError(f"match_detections requires a single class, got {sorted(classes)}")
    ranked, fn = _rank_and_match(list(enumerate(preds)), list(gts), threshold)
    return MatchResult(tuple(flag for _, flag in ranked), fn)


def average_precision(match: MatchResult, literal_all_ranks: bool = False) -> float:
    """AP = (1/G_TP) * sum over true-positive ranks i of TP_seen(i)/i.

    Computed in exact rational arithmetic, then converted to float.
    literal_all_ranks=True instead sums TP_seen(i)/i over every rank, a
    reading that can exceed 1; it exists for comparison only.
    """
    if match.g_tp == 0:
        raise EvaluationError("average precision is undefined with no ground-truth positives")
    total = Fraction(0)
    seen = 0
    for rank, flag in enumerate(match.tp_flags, start=1):
        if flag:
            seen += 1
        if flag or literal_all_ranks:
            total += Fraction(seen, rank)
    return float(total / match.g_tp)


def mean_ap(values: list[float]) -> float:
    """Arithmetic mean of a non-empty list of average precisions."""
    if not values:
        raise EvaluationError("mean average precision of an empty list")
    return math.fsum(values) / len(values)


def miss_rate(match: MatchResult) -> float:
    """MR = FN / (TP + FN)."""
    if match.tp + match.fn == 0:
        raise EvaluationError("miss rate is undefined with no ground-truth positives")
    return match.fn / (match.tp + match.fn)


@dataclass(frozen=True)
class _FrameMatch:
    """Per-prediction records and per-class tallies for one frame."""

    # (class_name, confidence, input_index, is_tp) per prediction
    records: tuple[tuple[str, float, int, bool], ...]
    fn_by_class: dict[str, int]
    gt_by_class: dict[str, int]


def _match_frame(preds: list[Detection], gts: list[BoundingBox], threshold: float) -> _FrameMatch:
    preds_by_class: dict[str, list[tuple[int, Detection]]] = defaultdict(list)
    for idx, det in enumerate(preds):
        preds_by_class[det.box.class_name].append((idx, det))
    gts_by_class: dict[str, list[BoundingBox]] = defaultdict(list)
    for gt in gts:
        gts_by_class[gt.class_name].append(gt)
    records = []
    fn_by_class: dict[str, int] = {}
    for cls in sorted(set(preds_by_class) | set(gts_by_class)):
        ranked, fn = _rank_and_match(preds_by_class.get(cls, []), gts_by_class.get(cls, []), threshold)
        fn_by_class[cls] = fn
        for idx, flag in ranked:
            records.append((cls, preds[idx].confidence, idx, flag))
    gt_by_class = {cls: len(boxes) for cls, boxes in gts_by_class.items()}
    return _FrameMatch(tuple(records), fn_by_class, gt_by_class)


def _ranked_flags(records: list[tuple[float, int, bool]]) -> tuple[bool, ...]:
    # records: (confidence, tie-break key, flag); rank by confidence desc.
    ranked = sorted(records, key=lambda r: (-r[0], r[1]))
    return tuple(flag for _, _, flag in ranked)


def log_average_miss_rate(
    frames: list[tuple[list[Detection], list[BoundingBox]]], threshold: float = 0.5
) -> float:
    """Miss rate averaged over the nine log-spaced FPPI reference points.

    Sweeping the confidence threshold over all detections traces a
    (false positives per image, miss rate) curve; each reference point
    samples the curve at the highest achievable FPPI not exceeding it
    (miss rate 1 when the curve starts above the point). The result is the
    exponentiated mean of the clamped log samples, or exactly 0.0 for a
    detector that reaches zero miss rate without any false positive.
    """
    if not frames:
        raise EvaluationError("log-average miss rate of an empty dataset")
    pooled = []  # (confidence, (frame, input index), is_tp)
    g_total = 0
    for fi, (preds, gts) in enumerate(frames):
        fm = _match_frame(preds, gts, threshold)
        g_total += len(gts)
        pooled.extend((conf, (fi, idx), flag) for _, conf, idx, flag in fm.records)
    if g_total == 0:
        raise EvaluationError("log-average miss rate is undefined with no ground truths")
    flags = _ranked_flags(pooled)
    cum_tp = np.cumsum(flags) if flags else np.zeros(0)
    cum_fp = np.arange(1, len(flags) + 1) - cum_tp
    fppi = cum_fp / len(frames)
    mr = (g_total - cum_tp) / g_total
    samples = []
    for ref in LAMR_REFERENCE_FPPI:
        below = np.nonzero(fppi <= ref)[0]
        samples.append(mr[below[-1]] if below.size else 1.0)
    if all(s == 0.0 for s in samples):
        return 0.0
    return float(np.exp(np.mean(np.log(np.maximum(samples, 1e-10)))))


@dataclass(frozen=True)
class ClassStats:
    """Aggregate results for one class; ap and miss_rate are None when the
    class has no ground truths anywhere."""

    ap: float | None
    tp: int
    fp: int
    fn: int
    miss_rate: float | None


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassStats]
    mean_ap: float
    lamr: float
    frames: int

    def to_json(self) -> str:
        payload = {
            "frames": self.frames,
            "mAP": self.mean_ap,
            "lamr": self.lamr,
            "classes": {
                cls: {"ap": s.ap, "tp": s.tp, "fp": s.fp, "fn": s.fn, "miss_rate": s.miss_rate}
                for cls, s in sorted(self.per_class.items())
            },
        }
        return json.dumps(payload, indent=2) + "\n"


def evaluate_frames(
    frames: list[tuple[list[Detection], list[BoundingBox]]], threshold: float = 0.5
) -> EvalReport:
    """Score a dataset of (predictions, ground truths) frame pairs.

    The headline mAP is the mean of per-frame average precisions (frames
    without ground truths are excluded as undefined); per-class statistics
    pool each class's predictions across all frames.
    """
    if not frames:
        raise EvaluationError("cannot evaluate an empty dataset")
    frame_aps = []
    class_records: dict[str, list[tuple[float, tuple[int, int], bool]]] = defaultdict(list)
    class_fn: dict[str, int] = defaultdict(int)
    class_gt: dict[str, int] = defaultdict(int)
    for fi, (preds, gts) in enumerate(frames):
        fm = _match_frame(preds, gts, threshold)
        for cls, conf, idx, flag in fm.records:
            class_records[cls].append((conf, (fi, idx), flag))
        for cls, fn in fm.fn_by_class.items():
            class_fn[cls] += fn
        for cls, count in fm.gt_by_class.items():
            class_gt[cls] += count
        if gts:
            flags = _ranked_flags([(conf, idx, flag) for _, conf, idx, flag in fm.records])
            frame_aps.append(average_precision(MatchResult(flags, len(gts) - sum(flags))))
    if not frame_aps:
        raise EvaluationError("no frame has ground-truth boxes; nothing to score")
    per_class = {}
    for cls in sorted(set(class_records) | set(class_gt)):
        flags = _ranked_flags(class_records.get(cls, []))
        result = MatchResult(flags, class_fn.get(cls, 0))
        if class_gt.get(cls, 0) == 0:
            per_class[cls] = ClassStats(None, result.tp, result.fp, result.fn, None)
        else:
            per_class[cls] = ClassStats(
                average_precision(result), result.tp, result.fp, result.fn, miss_rate(result)
            )
    return EvalReport(
        per_class=per_class,
        mean_ap=mean_ap(frame_aps),
        lamr=log_average_miss_rate(frames, threshold),
        frames=len(frames),
    )


def evaluate_dirs(
    gt_dir: str | Path,
    pred_dir: str | Path,
    threshold: float = 0.5,
    report_path: str | Path | None = None,
) -> EvalReport:
    """Evaluate stem-paired TXT files from a ground-truth and a prediction
    directory.

    A ground-truth stem without a prediction file scores as zero detections
    (its boxes become misses) with a warning; prediction stems without
    ground truth are an error, as is an empty pairing.
    """
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gt_files = sorted(gt_dir.glob("*.txt"))
    if not gt_files:
        raise EvaluationError(f"no ground-truth .txt files in {gt_dir}")
    pred_files = {p.stem: p for p in pred_dir.glob("*.txt")}
    gt_stems = [p.stem for p in gt_files]
    unpaired = sorted(set(pred_files) - set(gt_stems))
    if unpaired:
        raise EvaluationError(
            "prediction files without a ground-truth counterpart: " + ", ".join(unpaired)
        )
    if not any(s in pred_files for s in gt_stems):
        raise EvaluationError(
            f"no common stems between {gt_dir} and {pred_dir}; nothing to evaluate"
        )
    frames = []
    for gt_file in gt_files:
        stem = gt_file.stem
        if stem in pred_files:
            preds = parse_prediction(pred_files[stem])
        else:
            logger.warning("no prediction file for %s; its ground truths count as misses", stem)
            preds = []
        frames.append((preds, parse_label(gt_file)))
    report = evaluate_frames(frames, threshold)
    if report_path is not None:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")
    return report
