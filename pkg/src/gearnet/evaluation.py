"""Accuracy measurement. The only code that reads evaluation-only labels."""

from __future__ import annotations

import numpy as np

from .backbones import Backbone, predict_probs
from .data import LabeledSet, evaluation_access


def predict_labels(model: Backbone, x) -> np.ndarray:
    return np.argmax(predict_probs(model, x), axis=1)


def evaluate_target_accuracy(model: Backbone, target: LabeledSet) -> float:
    """Correct target predictions divided by the number of target samples."""
    with evaluation_access():
        y = target.y_true
    return float(np.mean(predict_labels(model, target.x) == y))


def evaluate_source_accuracy(model: Backbone, source: LabeledSet) -> float:
    """Accuracy against the clean source labels."""
    with evaluation_access():
        y = source.y_true
    return float(np.mean(predict_labels(model, source.x) == y))
