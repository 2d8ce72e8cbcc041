"""Metrics, timing, experiment runner and the command-line interface."""
from .metrics import SegReport, confusion_matrix, mean_iou
from .runner import evaluate, run_experiment, time_inference

__all__ = ["SegReport", "confusion_matrix", "evaluate", "mean_iou", "run_experiment", "time_inference"]
