"""Optimization, training loop and evaluation."""

from .evaluation import evaluate, format_metrics_csv, validation_metrics, write_metrics_csv
from .optimizer import AdamState, adam_step
from .trainer import SweepResult, SweepRow, TrainResult, crop_size_sweep, format_history, train, write_history

__all__ = [
    "AdamState",
    "SweepResult",
    "SweepRow",
    "TrainResult",
    "adam_step",
    "crop_size_sweep",
    "evaluate",
    "format_history",
    "format_metrics_csv",
    "train",
    "validation_metrics",
    "write_history",
    "write_metrics_csv",
]
