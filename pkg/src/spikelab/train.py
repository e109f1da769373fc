"""Loss, accuracy, optimizers, the epoch loop and the two evaluation schemes."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Dataset, batches
from .errors import ParameterError, ShapeError
from .network import Network, backward, forward, save_checkpoint

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float | None = None  # None: 1e-3 for adam, 0.1 for sgd
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    train_acc_threshold: float = 0.95
    test_acc_threshold: float = 0.91
    eval_batch_size: int = 16
    chunk_size: int = 16  # rows per forward/backward pass within a minibatch; speed only

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}; expected 'sgd' or 'adam'")
        if self.lr is None:
            self.lr = 1e-3 if self.optimizer == "adam" else 0.1
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_batch_size < 1 or self.chunk_size < 1:
            raise ParameterError("batch sizes must be >= 1 and epochs >= 0")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ParameterError(f"labels must lie in [0, {n_classes - 1}], got range [{labels.min()}, {labels.max()}]")
    y = np.zeros((labels.shape[0], n_classes))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def mse_loss(rates: np.ndarray, labels: np.ndarray):
    """Mean of ``(rates - onehot)^2`` over all ``B*C`` entries, and its gradient."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 2:
        raise ShapeError(f"rates must be (B, C), got {rates.shape}")
    diff = rates - one_hot(labels, rates.shape[1])
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def accuracy(rates: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (first index on ties) equals the label."""
    rates = np.asarray(rates)
    return float(np.mean(np.argmax(rates, axis=1) == np.asarray(labels)))


def _check_aligned(params, grads):
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError(f"parameter shapes {[p.shape for p in params]} do not match "
                         f"gradient shapes {[g.shape for g in grads]}")


def sgd_step(params: list, grads: list, state: list | None, lr: float, momentum: float = 0.0) -> list:
    """In-place momentum SGD: ``v = momentum*v + g; p -= lr*v``. Returns the velocity state."""
    _check_aligned(params, grads)
    if state is None:
        state = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, state):
        v *= momentum
        v += g
        p -= lr * v
    return state


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(params: list, grads: list, state: AdamState | None, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              t: int | None = None) -> AdamState:
    """In-place bias-corrected Adam update. ``t`` defaults to ``state.t + 1``."""
    _check_aligned(params, grads)
    if state is None:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    state.t = state.t + 1 if t is None else int(t)
    if state.t < 1:
        raise ParameterError(f"adam step counter must be >= 1, got {state.t}")
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def evaluate(net: Network, dataset: Dataset, batch_size: int = 16) -> tuple[float, float]:
    """Spiking-mode ``(mse_loss, accuracy)`` over a whole dataset."""
    n = len(dataset)
    if n == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        imgs = dataset.images[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        rates, _ = forward(net, imgs, "spiking")
        loss, _ = mse_loss(rates, labels)
        loss_sum += loss * labels.shape[0]
        correct += int(np.sum(np.argmax(rates, axis=1) == labels))
    return loss_sum / n, correct / n


def _batch_gradient(net: Network, data: Dataset, idx: np.ndarray, chunk: int, rng: nx.RngStream) -> list:
    """Minibatch loss gradient, accumulated over chunks of ``chunk`` rows."""
    total = None
    for c, start in enumerate(range(0, len(idx), chunk)):
        part = idx[start:start + chunk]
        rates, tape = forward(net, data.images[part], "spiking", rng.substream(c))
        _, d_rates = mse_loss(rates, data.labels[part])
        grads = backward(net, tape, d_rates * (len(part) / len(idx)))
        flat = [a for g in grads if g is not None for a in (g["weight"], g["bias"])]
        if total is None:
            total = flat
        else:
            for t, a in zip(total, flat):
                t += a
    return total


@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)
    best_epoch: int | None = None
    best_params: np.ndarray | None = None
    best_thresholds: list | None = None


def run_training(net: Network, train: Dataset, test: Dataset, config: TrainConfig,
                 rng: nx.RngStream | None = None, checkpoint_path=None) -> TrainResult:
    """Train with minibatch BPTT; evaluate on both sets after every epoch.

    The checkpoint is rewritten whenever test accuracy strictly improves.
    """
    if len(train) == 0:
        raise ParameterError("training set is empty")
    if rng is None:
        rng = nx.RngStream(config.seed)
    result = TrainResult()
    params = net.param_arrays()
    state = None
    best_acc = -1.0
    for epoch in range(1, config.epochs + 1):
        for b, idx in enumerate(batches(len(train), config.batch_size, config.seed, epoch)):
            flat = _batch_gradient(net, train, idx, config.chunk_size, rng.substream(f"encode/{epoch}/{b}"))
            if config.optimizer == "sgd":
                state = sgd_step(params, flat, state, config.lr, config.momentum)
            else:
                state = adam_step(params, flat, state, config.lr, config.beta1, config.beta2, config.eps)
            net.touch()
        train_loss, train_acc = evaluate(net, train, config.eval_batch_size)
        test_loss, test_acc = evaluate(net, test, config.eval_batch_size)
        m = EpochMetrics(epoch, train_loss, train_acc, test_loss, test_acc)
        result.metrics.append(m)
        log.info("epoch %d train_loss=%.5f train_acc=%.4f test_loss=%.5f test_acc=%.4f",
                 epoch, train_loss, train_acc, test_loss, test_acc)
        if test_acc > best_acc:
            best_acc = test_acc
            result.best_epoch = epoch
            result.best_params = net.get_flat()
            result.best_thresholds = list(net.thresholds)
            if checkpoint_path is not None:
                save_checkpoint(net, checkpoint_path)
    return result


def scheme1_epoch(metrics: list[EpochMetrics], train_thr: float, test_thr: float) -> int | None:
    """First epoch where train and test accuracy both exceed their thresholds."""
    for m in metrics:
        if m.train_acc > train_thr and m.test_acc > test_thr:
            return m.epoch
    return None


def scheme2_best(metrics: list[EpochMetrics]) -> tuple[int, float]:
    """``(epoch, test_acc)`` at peak test accuracy, earliest on ties."""
    if not metrics:
        raise ParameterError("no epochs recorded")
    best = metrics[0]
    for m in metrics[1:]:
        if m.test_acc > best.test_acc:
            best = m
    return best.epoch, best.test_acc


def write_metrics_csv(metrics: list[EpochMetrics], path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([m.epoch] + [f"{getattr(m, c):.9g}" for c in METRIC_COLUMNS[1:]])


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(Path(path), newline="") as f:
        rows = list(csv.DictReader(f))
    return [EpochMetrics(int(r["epoch"]), *(float(r[c]) for c in METRIC_COLUMNS[1:])) for r in rows]
