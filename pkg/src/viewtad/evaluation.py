"""Event decoding and event-based mAP at IoU thresholds.

Per class, consecutive windows with probability at or above the threshold
become one detection segment scored by its mean probability. Detections are
matched greedily in confidence order to the highest-IoU unmatched ground
truth of the same class; average precision uses all-points interpolation
(the precision envelope). Classes without ground truth are excluded from the
mAP mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_THRESHOLDS = (0.1, 0.3, 0.5)


@dataclass
class DetectionSegment:
    cls: int
    start: int  # window index, inclusive
    end: int  # window index, exclusive
    confidence: float = 1.0
    sequence: str = ""

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"degenerate segment [{self.start}, {self.end})")
        if not np.isfinite(self.confidence):
            raise ValueError("confidence must be finite")


@dataclass
class EvalReport:
    thresholds: list[float]
    per_class_ap: dict[float, dict[int, float]]  # threshold -> class -> AP
    mean_ap: dict[float, float]
    counts: dict[float, dict[str, int]]  # threshold -> {tp, fp, missed}
    class_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "thresholds": self.thresholds,
            "map": {f"{t:g}": self.mean_ap[t] for t in self.thresholds},
            "per_class_ap": {
                f"{t:g}": {str(c): ap for c, ap in sorted(self.per_class_ap[t].items())}
                for t in self.thresholds
            },
            "counts": {f"{t:g}": self.counts[t] for t in self.thresholds},
            "class_names": self.class_names,
        }
        return json.dumps(payload, indent=1)

    def write_csv(self, path) -> None:
        classes = sorted({c for t in self.thresholds for c in self.per_class_ap[t]})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + [f"ap@{t:g}" for t in self.thresholds])
            for c in classes:
                name = self.class_names[c] if c < len(self.class_names) else str(c)
                writer.writerow(
                    [name] + [f"{self.per_class_ap[t].get(c, float('nan')):.4f}" for t in self.thresholds]
                )
            writer.writerow(["mAP"] + [f"{self.mean_ap[t]:.4f}" for t in self.thresholds])


def extract_segments(probs: np.ndarray, threshold: float = 0.5, sequence: str = "") -> list[DetectionSegment]:
    """Maximal runs of windows with prob >= threshold, per class independently;
    confidence is the mean probability over the run."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be (T, K), got {probs.shape}")
    segments = []
    t_len, k = probs.shape
    for cls in range(k):
        on = probs[:, cls] >= threshold
        t = 0
        while t < t_len:
            if on[t]:
                start = t
                while t < t_len and on[t]:
                    t += 1
                conf = float(probs[start:t, cls].mean())
                segments.append(DetectionSegment(cls, start, t, conf, sequence))
            else:
                t += 1
    return segments


def interval_iou(a_start, a_end, b_start, b_end) -> float:
    """IoU of half-open integer intervals; 0 when disjoint."""
    if a_end <= a_start or b_end <= b_start:
        raise ValueError("degenerate interval")
    inter = min(a_end, b_end) - max(a_start, b_start)
    if inter <= 0:
        return 0.0
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union


def _match_detections(dets: list[DetectionSegment], gts: list[DetectionSegment], iou_thr: float):
    """Greedy confidence-ordered matching; each GT matches at most once.

    Returns (is_tp flags aligned with sorted dets, number of matched GTs).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    matched = [False] * len(gts)
    flags = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j] or gt.sequence != det.sequence:
                continue
            iou = interval_iou(det.start, det.end, gt.start, gt.end)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thr:
            matched[best_j] = True
            flags[rank] = True
    return flags, sum(matched)


def event_average_precision(
    dets: list[DetectionSegment], gts: list[DetectionSegment], cls: int, iou_thr: float
) -> float:
    """AP for one class at one IoU threshold, all-points interpolation."""
    gts_c = [g for g in gts if g.cls == cls]
    dets_c = [d for d in dets if d.cls == cls]
    if not gts_c:
        raise ValueError(f"class {cls} has no ground truth")
    if not dets_c:
        return 0.0
    flags, _ = _match_detections(dets_c, gts_c, iou_thr)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / len(gts_c)
    precision = tp / (tp + fp)
    # precision envelope (non-increasing), integrate over recall increments
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def evaluate(
    dets: list[DetectionSegment],
    gts: list[DetectionSegment],
    thresholds=DEFAULT_THRESHOLDS,
    class_names=(),
) -> EvalReport:
    """Aggregate detections across sequences per class and report per-threshold
    mAP. mAP is checked to be non-increasing in the IoU threshold."""
    if not gts:
        raise ValueError("empty ground truth")
    classes = sorted({g.cls for g in gts})
    thresholds = sorted(thresholds)
    per_class = {}
    mean_ap = {}
    counts = {}
    for thr in thresholds:
        per_class[thr] = {c: event_average_precision(dets, gts, c, thr) for c in classes}
        mean_ap[thr] = float(np.mean(list(per_class[thr].values())))
        tp_total = fp_total = matched_total = 0
        for c in classes:
            dets_c = [d for d in dets if d.cls == c]
            gts_c = [g for g in gts if g.cls == c]
            flags, matched = _match_detections(dets_c, gts_c, thr)
            tp_total += int(flags.sum())
            fp_total += int((~flags).sum())
            matched_total += matched
        counts[thr] = {"tp": tp_total, "fp": fp_total, "missed": len(gts) - matched_total}
    for lo, hi in zip(thresholds, thresholds[1:]):
        assert mean_ap[lo] >= mean_ap[hi] - 1e-12, "mAP must be monotone in IoU threshold"
    return EvalReport(list(thresholds), per_class, mean_ap, counts, list(class_names))


# ---------------------------------------------------------------------------
# JSON-lines interchange


def save_segments_jsonl(path, segments: list[DetectionSegment]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for seg in segments:
            fh.write(
                json.dumps(
                    {"seq": seg.sequence, "class": seg.cls, "start": seg.start,
                     "end": seg.end, "conf": seg.confidence}
                )
            )
            fh.write("\n")


def load_segments_jsonl(path) -> list[DetectionSegment]:
    segments = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            segments.append(
                DetectionSegment(
                    int(row["class"]), int(row["start"]), int(row["end"]),
                    float(row.get("conf", 1.0)), str(row.get("seq", "")),
                )
            )
    return segments
