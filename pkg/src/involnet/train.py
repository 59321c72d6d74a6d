"""Adam optimisation, the epoch loop and classification metrics."""
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .layers import one_hot, softmax_xent
from .tensor import NumericError, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, cfg):
    """In-place Adam update of every array in ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


@dataclass
class Metrics:
    accuracy: float
    recall: float
    f1: float
    confusion: np.ndarray = field(repr=False)
    precision: float = 0.0

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "f1": self.f1,
            "precision": self.precision,
            "confusion": self.confusion.tolist(),
        }


def metrics_from_confusion(confusion):
    """Accuracy plus macro-averaged recall, precision and F1, in percent.

    Rows of ``confusion`` are true classes, columns predicted classes.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or np.any(cm < 0):
        raise ValueError("confusion must be a square matrix of non-negative counts")
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is all zeros")
    tp = np.diag(cm).astype(float)
    actual = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(
        accuracy=100.0 * tp.sum() / total,
        recall=100.0 * recall.mean(),
        f1=100.0 * f1.mean(),
        confusion=cm,
        precision=100.0 * precision.mean(),
    )


def confusion_matrix(labels, predictions, num_classes=2):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)
    return cm


def evaluate(model, images, labels, batch_size=256):
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty split")
    preds = model.predict(images, batch_size).argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(labels, preds))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_recall: float
    val_f1: float


CSV_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_recall", "val_f1")


def epoch_log_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_accuracy),
                         repr(r.val_recall), repr(r.val_f1)])
    return buf.getvalue()


def train_step(model, x, y_onehot, params, state, cfg):
    logits = model.forward(x, train=True)
    loss, _, dlogits = softmax_xent(logits, y_onehot)
    if not np.isfinite(loss):
        raise NumericError("training loss became non-finite")
    model.backward(dlogits)
    grads = [layer.grads[name] for layer, name in model.trainable()]
    adam_step(params, grads, state, cfg)
    return loss


def train(model, dataset, cfg, progress=None):
    """Fit ``model`` on the train split of ``dataset``.

    Returns ``(model, records)`` with one :class:`EpochRecord` per epoch.
    Validation metrics are NaN when the dataset has no val split.
    """
    x_train, y_train = dataset.arrays("train")
    if len(x_train) == 0:
        raise ValueError("training split is empty")
    x_val, y_val = dataset.arrays("val")

    shuffle_rng = make_rng(cfg.seed, "shuffle")
    model.set_dropout_rng(make_rng(cfg.seed, "dropout"))
    params = [layer.params[name] for layer, name in model.trainable()]
    state = AdamState.for_params(params)
    targets = one_hot(y_train)
    n = len(x_train)

    records = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss_sum += train_step(model, x_train[idx], targets[idx], params, state, cfg) * len(idx)
        if len(x_val):
            m = evaluate(model, x_val, y_val)
            val = (m.accuracy, m.recall, m.f1)
        else:
            val = (float("nan"),) * 3
        rec = EpochRecord(epoch, loss_sum / n, *val)
        records.append(rec)
        log.info("epoch %d/%d loss %.5f val_acc %.2f", epoch, cfg.epochs, rec.train_loss, rec.val_accuracy)
        if progress is not None:
            progress(rec)
    return model, records
