"""Per-instance-index accuracy and request-rate accounting.

Episode metrics bucket by how many times the item's class has already
appeared: the k-th instance column answers "how does the model treat the
k-th sighting of a class". Accuracy counts predictions only; steps where
the model requested the label are excluded from the accuracy denominator
but drive the request rate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episodes import EpisodeStep


@dataclass
class RunMetrics:
    items_per_class: int
    n_requests: np.ndarray  # (items_per_class,) int64, index k-1
    n_predictions: np.ndarray
    n_correct: np.ndarray

    @classmethod
    def empty(cls, items_per_class: int) -> "RunMetrics":
        zeros = lambda: np.zeros(items_per_class, dtype=np.int64)
        return cls(items_per_class, zeros(), zeros(), zeros())

    def accuracy_pct(self, instance: int) -> float | None:
        """Accuracy over predictions at this instance index; None if the
        model never predicted there."""
        k = instance - 1
        if self.n_predictions[k] == 0:
            return None
        return float(100.0 * self.n_correct[k] / self.n_predictions[k])

    def request_pct(self, instance: int) -> float:
        k = instance - 1
        total = self.n_requests[k] + self.n_predictions[k]
        if total == 0:
            return 0.0
        return float(100.0 * self.n_requests[k] / total)

    def rows(self) -> list[dict]:
        out = []
        for k in range(1, self.items_per_class + 1):
            out.append(
                {
                    "instance_index": k,
                    "accuracy_pct": self.accuracy_pct(k),
                    "request_pct": self.request_pct(k),
                    "n_predictions": int(self.n_predictions[k - 1]),
                    "n_requests": int(self.n_requests[k - 1]),
                }
            )
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=[
                    "instance_index",
                    "accuracy_pct",
                    "request_pct",
                    "n_predictions",
                    "n_requests",
                ],
            )
            writer.writeheader()
            for row in self.rows():
                if row["accuracy_pct"] is None:
                    row = dict(row, accuracy_pct="")
                writer.writerow(row)


def accumulate_metrics(
    steps: list[EpisodeStep], metrics: RunMetrics, num_classes: int
) -> RunMetrics:
    """Fold one complete episode into the accumulators (in place).

    ``num_classes`` identifies the request action (index C); every other
    action is a prediction and is scored against the true slot.
    """
    for step in steps:
        k = step.instance_index - 1
        if step.action == num_classes:
            metrics.n_requests[k] += 1
        else:
            metrics.n_predictions[k] += 1
            if step.action == step.true_slot:
                metrics.n_correct[k] += 1
    return metrics
