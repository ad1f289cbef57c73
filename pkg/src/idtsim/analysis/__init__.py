"""Turning detection traces into results."""
from .binning import bin_trace, read_dataset, write_dataset
from .curve import detection_curve
from .forest import ForestParams, RandomForestModel, predict, train_forest
from .metrics import ConfusionReport, MatchReport, confusion_and_pr, f_score, match_events, match_keystrokes

__all__ = [
    "ConfusionReport",
    "ForestParams",
    "MatchReport",
    "RandomForestModel",
    "bin_trace",
    "confusion_and_pr",
    "detection_curve",
    "f_score",
    "match_events",
    "match_keystrokes",
    "predict",
    "read_dataset",
    "train_forest",
    "write_dataset",
]
