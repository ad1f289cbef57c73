"""Detection traces to fixed-length count vectors, and the dataset file format."""
from __future__ import annotations

import csv

import numpy as np

N_BINS = 400
BIN_US = 5000


def bin_trace(times, cycles_per_us: int = 3000, bin_us: int = BIN_US, n_bins: int = N_BINS,
              start: int = 0) -> np.ndarray:
    """Detections per ``bin_us`` interval after ``start``; events outside the
    ``n_bins`` window (including exactly at its end) are dropped."""
    t = np.asarray(getattr(times, "times", times), dtype=np.int64) - start
    width = bin_us * cycles_per_us
    t = t[(t >= 0) & (t < width * n_bins)]
    return np.bincount(t // width, minlength=n_bins).astype(np.int64)


def write_dataset(path, labels, features) -> None:
    features = np.asarray(features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"bin{i}" for i in range(features.shape[1])])
        for lab, row in zip(labels, features):
            w.writerow([lab] + [int(x) for x in row])


def read_dataset(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: missing dataset header")
    labels = [r[0] for r in rows[1:]]
    x = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return labels, x.reshape(len(labels), len(rows[0]) - 1)
