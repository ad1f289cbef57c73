"""Confusion matrices and event-matching scores."""
from __future__ import annotations

import bisect
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import EmptyTruth, LengthMismatch


def f_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class ConfusionReport:
    labels: list
    matrix: np.ndarray  # rows = true label, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    macro_precision: float
    macro_recall: float
    micro_precision: float
    micro_recall: float

    def to_csv(self) -> str:
        lines = ["," + ",".join(str(x) for x in self.labels)]
        for lab, row in zip(self.labels, self.matrix):
            lines.append(f"{lab}," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_and_pr(labels_true, labels_pred, labels=None) -> ConfusionReport:
    labels_true, labels_pred = list(labels_true), list(labels_pred)
    if len(labels_true) != len(labels_pred):
        raise LengthMismatch(f"{len(labels_true)} true vs {len(labels_pred)} predicted labels")
    if labels is None:
        labels = sorted(set(labels_true) | set(labels_pred))
    index = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(labels_true, labels_pred):
        m[index[t], index[p]] += 1
    tp = np.diag(m).astype(float)
    pred_tot = m.sum(axis=0)
    true_tot = m.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    acc = float(tp.sum() / m.sum()) if m.sum() else 0.0
    return ConfusionReport(
        list(labels), m, precision, recall,
        float(precision.mean()) if len(labels) else 0.0,
        float(recall.mean()) if len(labels) else 0.0,
        acc, acc,
    )


@dataclass(frozen=True)
class MatchReport:
    recall: float
    precision: float
    f_score: float
    delay_median_us: float
    delay_std_us: float
    tp: int
    fp: int
    fn: int
    undefined: bool = False  # no ground truth: recall is reported as 0

    def to_dict(self) -> dict:
        return asdict(self)


def _report(tp: int, fp: int, fn: int, delays_us, undefined=False) -> MatchReport:
    n_det = tp + fp
    n_truth = tp + fn
    precision = tp / n_det if n_det else 0.0
    recall = tp / n_truth if n_truth else 0.0
    d = np.asarray(delays_us, dtype=float)
    med = float(np.median(d)) if len(d) else 0.0
    std = float(np.std(d)) if len(d) else 0.0
    return MatchReport(recall, precision, f_score(precision, recall), med, std, tp, fp, fn, undefined)


def match_events(detected, truth, tolerance: int, cycles_per_us: int = 3000) -> MatchReport:
    """One-to-one matching: each truth time ``t`` takes the earliest unused
    detection in ``[t, t + tolerance]``."""
    det = sorted(getattr(detected, "times", detected))
    truth = sorted(truth)
    j = 0
    tp = 0
    delays = []
    for t in truth:
        while j < len(det) and det[j] < t:
            j += 1
        if j < len(det) and det[j] <= t + tolerance:
            delays.append((det[j] - t) / cycles_per_us)
            tp += 1
            j += 1
    return _report(tp, len(det) - tp, len(truth) - tp, delays, undefined=not truth)


def match_keystrokes(detected, truth, window_us: float = 40_000.0,
                     cycles_per_us: int = 3000) -> MatchReport:
    """Score detections against key timestamps, two expected per key.

    Each detection goes to its nearest key within ``window_us``; a detection
    equidistant from two keys, or outside every window, is a false positive, as
    are detections past the second one for a key.  Missing detections are false
    negatives.  The delay of a key is its first matched detection minus the key
    time (negative: the interrupt was seen before the input arrived).
    """
    keys = list(getattr(truth, "key_times", truth))
    if not keys:
        raise EmptyTruth("no ground-truth keystrokes")
    det = sorted(getattr(detected, "times", detected))
    window = window_us * cycles_per_us
    per_key: list[list[int]] = [[] for _ in keys]
    fp = 0
    for d in det:
        i = bisect.bisect_left(keys, d)
        cands = [k for k in (i - 1, i) if 0 <= k < len(keys)]
        dist = [abs(d - keys[k]) for k in cands]
        best = min(dist)
        nearest = [k for k, x in zip(cands, dist) if x == best]
        if best > window or len(nearest) > 1:
            fp += 1
        else:
            per_key[nearest[0]].append(d)
    tp = 0
    delays = []
    for k, ds in enumerate(per_key):
        tp += min(len(ds), 2)
        fp += max(len(ds) - 2, 0)
        if ds:
            delays.append((ds[0] - keys[k]) / cycles_per_us)
    return _report(tp, fp, 2 * len(keys) - tp, delays)
