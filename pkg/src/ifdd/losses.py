"""Classification head, decoupling loss, and recall metrics."""

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T


class ClassifierHead:
    """Two-layer MLP over the flattened dynamic tokens."""

    def __init__(self, rng, n_tokens, c, n_classes, hidden=64, dtype=np.float64):
        n_in = n_tokens * c
        self.n_in = n_in
        self.n_classes = int(n_classes)
        self.w1 = nn.dense(rng, n_in, hidden, dtype)
        self.b1 = nn.zeros((hidden,), dtype)
        self.w2 = nn.dense(rng, hidden, n_classes, dtype)
        self.b2 = nn.zeros((n_classes,), dtype)

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def classify(self, y_d):
        """Token matrix (N, C) -> logit vector (N_C,)."""
        flat = T.reshape(y_d, (1, self.n_in))
        h = T.gelu(T.add_bias(T.matmul(flat, self.w1), self.b1))
        logits = T.add_bias(T.matmul(h, self.w2), self.b2)
        return T.reshape(logits, (self.n_classes,))


def loss_cls(logits, label):
    """Cross-entropy of softmax(logits) at the true class (one sample)."""
    return T.cross_entropy(logits, label)


def loss_lift(y_s, x, constrained_dims="tc", delta=1.0):
    """Global-context loss: Y_S must match the local average of X.

    y_s: token matrix (N, C), reshaped back to (T/2, H, W, C); x: latent
    features (T, H, W, C). In "tc" mode the difference against the
    temporally pooled X is averaged over the spatial dims before the Huber
    penalty (one term per (t, c) cell); "thwc" penalizes the raw difference;
    "none" contributes nothing.
    """
    if constrained_dims == "none":
        return T.Tensor(np.zeros((), dtype=x.dtype))
    t, h, w, c = x.shape
    y = T.reshape(y_s, (t // 2, h, w, c))
    pooled = T.avg_pool_temporal(x, 2)
    diff = T.sub(y, pooled)
    if constrained_dims == "tc":
        return T.sum_all(T.huber(T.mean_axes(diff, (1, 2)), delta))
    if constrained_dims == "thwc":
        return T.sum_all(T.huber(diff, delta))
    raise ValueError(f"unknown constrained_dims {constrained_dims!r}")


def total_loss(cls_term, lift_term, lift_weight=1.0):
    """Unweighted sum by default; the weight is a config override only."""
    if lift_weight == 1.0:
        return T.add(cls_term, lift_term)
    return T.add(cls_term, T.scale(lift_term, lift_weight))


@dataclass
class MetricsReport:
    uar: float
    war: float
    per_class_recall: list
    confusion: np.ndarray

    def to_dict(self):
        return {
            "uar": self.uar,
            "war": self.war,
            "per_class_recall": list(self.per_class_recall),
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(predictions, labels, n_classes):
    """Confusion matrix, WAR (overall accuracy) and UAR (mean class recall).

    Classes absent from `labels` are excluded from the UAR mean.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(predictions) == 0:
        raise ValueError("compute_metrics: empty input")
    if len(predictions) != len(labels):
        raise ValueError("compute_metrics: length mismatch")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("compute_metrics: label out of range")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    row_totals = confusion.sum(axis=1)
    war = float(np.trace(confusion)) / float(confusion.sum())
    per_class = np.zeros(n_classes)
    present = row_totals > 0
    per_class[present] = np.diag(confusion)[present] / row_totals[present]
    uar = float(per_class[present].mean())
    return MetricsReport(uar=uar, war=war, per_class_recall=per_class.tolist(), confusion=confusion)
