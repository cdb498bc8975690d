"""Inference by label scoring.

Every candidate class is overlaid on the input, the frozen network is run in
eval mode, per-layer goodness values are summed (all layers contribute,
including the first), and the argmax wins. Ties break to the lowest class id.
"""

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, SampleBatch, iter_batches
from .errors import UsageError
from .network import FFNetwork, label_goodness


@dataclass
class LabelScores:
    """Per-class total goodness and the resulting predictions for a batch."""

    scores: np.ndarray  # (B, class_count)
    predicted: np.ndarray  # (B,)


def score_labels(net: FFNetwork, batch: SampleBatch) -> LabelScores:
    """Score every candidate label for each sample in the batch."""
    if not net.stats_populated:
        raise UsageError(
            "normalization running statistics are unpopulated; "
            "train for at least one batch before scoring"
        )
    scores = label_goodness(net, batch)
    # np.argmax returns the first maximum: lowest class id on ties.
    return LabelScores(scores, np.argmax(scores, axis=1))


def evaluate(net: FFNetwork, dataset: Dataset, batch_size: int = 256) -> float:
    """Fraction of samples whose predicted class equals the true label."""
    if dataset.num_samples == 0:
        raise UsageError("cannot evaluate an empty dataset")
    correct = 0
    for batch in iter_batches(dataset, batch_size, shuffle=False):
        result = score_labels(net, batch)
        correct += int((result.predicted == batch.labels).sum())
    return correct / dataset.num_samples
