"""Relational fusion networks for edge-level prediction on road networks."""

from ._rfn import (
    Bundle,
    Checkpoint,
    EvaluationError,
    GraphError,
    IoError,
    TrainedRun,
    TrainingError,
    evaluate,
    inspect,
    load_bundle,
    load_checkpoint,
    predict,
    preprocess,
    train,
)

__all__ = [
    "Bundle",
    "Checkpoint",
    "EvaluationError",
    "GraphError",
    "IoError",
    "TrainedRun",
    "TrainingError",
    "evaluate",
    "inspect",
    "load_bundle",
    "load_checkpoint",
    "predict",
    "preprocess",
    "train",
]
