"""Frame-wise and segmental evaluation measures, all in percent."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyInput, EmptySequence, LengthMismatch

UNLABELED = -1
OVERLAP_MODES = ("iou", "gt")


@dataclass(frozen=True)
class Segment:
    label: int
    start: int
    end: int  # inclusive

    @property
    def length(self):
        return self.end - self.start + 1


def segments_from_labels(labels):
    """Run-length encode a label sequence into maximal segments."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptySequence("Cannot segment an empty label sequence")
    boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries - 1, [len(labels) - 1]])
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"Prediction has {pred.size} frames, ground truth {gt.size}")
    return pred, gt


# =====================
# FRAME-WISE MEASURES
# =====================
def frame_accuracy(pred, gt):
    pred, gt = _pair(pred, gt)
    if gt.size == 0:
        raise EmptySequence("No frames to score")
    return 100.0 * float(np.mean(pred == gt))


def per_class_f1(pred, gt):
    """Frame-level F1 for every class occurring in pred or gt."""
    pred, gt = _pair(pred, gt)
    scores = {}
    for c in np.union1d(np.unique(pred), np.unique(gt)):
        tp = np.sum((pred == c) & (gt == c))
        n_pred, n_gt = np.sum(pred == c), np.sum(gt == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gt if n_gt else 0.0
        scores[int(c)] = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)
    return scores


def average_f1(pred, gt):
    """Mean of per-class F1 over classes present in gt or pred, x100."""
    scores = per_class_f1(pred, gt)
    if not scores:
        raise EmptySequence("No frames to score")
    return 100.0 * float(np.mean(list(scores.values())))


# =====================
# SEGMENTAL MEASURES
# =====================
def levenshtein(p, y):
    rows, cols = len(p), len(y)
    table = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    table[:, 0] = np.arange(rows + 1)
    table[0, :] = np.arange(cols + 1)
    for i in range(1, rows + 1):
        for j in range(1, cols + 1):
            cost = 0 if p[i - 1] == y[j - 1] else 1
            table[i, j] = min(table[i - 1, j] + 1, table[i, j - 1] + 1, table[i - 1, j - 1] + cost)
    return int(table[rows, cols])


def edit_score(pred_segments, gt_segments):
    """100 * (1 - D / max(|p|, |g|)) over segment label strings, clamped at 0."""
    if not pred_segments or not gt_segments:
        raise EmptySequence("Edit score needs non-empty segment lists")
    p = [s.label for s in pred_segments]
    y = [s.label for s in gt_segments]
    return max(0.0, 100.0 * (1.0 - levenshtein(p, y) / max(len(p), len(y))))


def overlap_ratio(a, b, mode="iou"):
    intersection = min(a.end, b.end) - max(a.start, b.start) + 1
    if intersection <= 0:
        return 0.0
    if mode == "gt":
        return intersection / b.length
    return intersection / (max(a.end, b.end) - min(a.start, b.start) + 1)


def match_segments(pred_segments, gt_segments, tau=0.10, overlap="iou"):
    """Greedy temporal-order matching; returns (tp, fp, fn).

    A predicted segment takes the earliest unmatched same-class ground-truth segment whose overlap exceeds tau.
    """
    if overlap not in OVERLAP_MODES:
        raise ConfigError(f"Unknown overlap mode '{overlap}'")
    matched = [False] * len(gt_segments)
    tp = 0
    for p in pred_segments:
        for j, g in enumerate(gt_segments):
            if matched[j] or g.label != p.label or g.start > p.end:
                continue
            if overlap_ratio(p, g, overlap) > tau:
                matched[j] = True
                tp += 1
                break
    return tp, len(pred_segments) - tp, len(gt_segments) - tp


def segmental_f1(pred_segments, gt_segments, tau=0.10, overlap="iou"):
    if pred_segments and gt_segments and pred_segments[-1].end != gt_segments[-1].end:
        raise LengthMismatch("Segment lists tile sequences of different length")
    tp, fp, fn = match_segments(pred_segments, gt_segments, tau, overlap)
    denominator = 2 * tp + fp + fn
    return 100.0 * 2 * tp / denominator if denominator else 100.0


# =====================
# REPORTS
# =====================
@dataclass
class VideoMetrics:
    video_id: str
    accuracy: float
    average_f1: float
    edit_score: float
    f1_at_10: float
    per_class_f1: dict = field(default_factory=dict)
    fold: str = ""


@dataclass
class MetricsReport:
    accuracy: float
    average_f1: float
    edit_score: float
    f1_at_10: float
    per_class_f1: dict
    per_video: list

    MEASURES = ("accuracy", "average_f1", "edit_score", "f1_at_10")

    def as_row(self):
        return {m: getattr(self, m) for m in self.MEASURES}


def evaluate_video(pred, gt, video_id="", tau=0.10, overlap="iou", fold=""):
    """All four measures on the labeled frames of one video (unlabeled gt frames are dropped)."""
    pred, gt = _pair(pred, gt)
    keep = gt != UNLABELED
    pred, gt = pred[keep], gt[keep]
    if gt.size == 0:
        raise EmptySequence(f"Video {video_id} has no labeled frames")
    pred_segments, gt_segments = segments_from_labels(pred), segments_from_labels(gt)
    return VideoMetrics(
        video_id=video_id,
        accuracy=frame_accuracy(pred, gt),
        average_f1=average_f1(pred, gt),
        edit_score=edit_score(pred_segments, gt_segments),
        f1_at_10=segmental_f1(pred_segments, gt_segments, tau, overlap),
        per_class_f1={c: 100.0 * v for c, v in per_class_f1(pred, gt).items()},
        fold=fold,
    )


def aggregate_report(per_video):
    """Unweighted mean over videos of every measure; per-class F1 averaged where the class occurs."""
    per_video = list(per_video)
    if not per_video:
        raise EmptyInput("Cannot aggregate an empty list of videos")
    means = {m: float(np.mean([getattr(v, m) for v in per_video])) for m in MetricsReport.MEASURES}
    classes = sorted({c for v in per_video for c in v.per_class_f1})
    per_class = {c: float(np.mean([v.per_class_f1[c] for v in per_video if c in v.per_class_f1])) for c in classes}
    return MetricsReport(per_class_f1=per_class, per_video=per_video, **means)


def mean_of_reports(reports):
    """Average already-aggregated reports (e.g. experiment repetitions)."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("No reports to average")
    means = {m: float(np.mean([getattr(r, m) for r in reports])) for m in MetricsReport.MEASURES}
    classes = sorted({c for r in reports for c in r.per_class_f1})
    per_class = {c: float(np.mean([r.per_class_f1[c] for r in reports if c in r.per_class_f1])) for c in classes}
    return MetricsReport(per_class_f1=per_class, per_video=[v for r in reports for v in r.per_video], **means)
