"""Plain mini-batch gradient-descent training and accuracy evaluation.

The engine is deliberately optimizer-free: w -= lr * grad, nothing else, so
analytic gradient checks stay exact and (seed, data, config) fully determine
the trained weights.  The adapt module reuses `run_training` with its own
per-epoch loss factory; both paths consume the shuffle and dropout streams
identically, which is what makes a lambda=1 adaptation run bit-identical to
plain training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import rng
from ..errors import ConfigError, DivergenceError
from .losses import BatchLoss, LossTerms, MeanSquaredOutputLoss
from .network import Network, batch_gradients, forward_batch, resolve_loss


@dataclass
class TrainConfig:
    """Defaults follow the reference training setup (batch 10, lr 0.001)."""

    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class EpochStats:
    epoch: int
    f1: float
    f2: float
    total: float
    train_acc: float
    valid_acc: float


@dataclass
class TrainResult:
    epochs: list[EpochStats] = field(default_factory=list)
    scale: float | None = None  # frozen adaptation squash scale, if any
    bias: float | None = None

    def to_csv(self, path) -> None:
        lines = ["epoch,f1,f2,total,train_acc,valid_acc"]
        for st in self.epochs:
            va = "" if math.isnan(st.valid_acc) else f"{st.valid_acc:.17g}"
            lines.append(
                f"{st.epoch},{st.f1:.17g},{st.f2:.17g},{st.total:.17g},"
                f"{st.train_acc:.17g},{va}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class EvalResult:
    total: float
    per_class: dict[int, float]
    counts: dict[int, int]
    n: int


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in data])
    ys = np.asarray([float(t) for _, t in data])
    return xs, ys


def _accuracy(net: Network, xb: np.ndarray, yb: np.ndarray) -> float:
    preds, _, _ = forward_batch(net, xb, training=False)
    return float(np.mean((preds >= 0.5) == (yb >= 0.5)))


def run_training(net: Network, xtr: np.ndarray, ytr: np.ndarray, cfg: TrainConfig,
                 make_loss, xva: np.ndarray | None = None,
                 yva: np.ndarray | None = None,
                 on_epoch_start=None) -> tuple[Network, TrainResult]:
    """Shared training loop.

    make_loss(state, batch_indices) -> BatchLoss; state is whatever
    on_epoch_start(net, epoch) returned (None without the hook).  Epoch stats
    are sample-weighted means of the batch loss terms plus end-of-epoch
    accuracies computed in inference mode.
    """
    n = len(xtr)
    if n == 0:
        raise ConfigError("training set is empty")
    shuffle_gen = rng.spawn(cfg.seed, "shuffle")
    dropout_gen = rng.spawn(cfg.seed, "dropout")
    result = TrainResult()
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        state = on_epoch_start(net, epoch) if on_epoch_start is not None else None
        order = shuffle_gen.permutation(n) if cfg.shuffle else np.arange(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss_obj = make_loss(state, idx)
            terms, grads = batch_gradients(net, xtr[idx], ytr[idx], loss_obj,
                                           training=True, gen=dropout_gen)
            sums += np.array(terms) * len(idx)
            for lname, layer_grads in grads.items():
                params = net.layer(lname).params
                for key, grad in layer_grads.items():
                    params[key] -= lr * grad
        f1, f2, total = sums / n
        if not np.isfinite(total):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}")
        train_acc = _accuracy(net, xtr, ytr)
        valid_acc = _accuracy(net, xva, yva) if xva is not None and len(xva) else float("nan")
        result.epochs.append(EpochStats(epoch=epoch, f1=float(f1), f2=float(f2),
                                        total=float(total), train_acc=train_acc,
                                        valid_acc=valid_acc))
    for lay in net.layers:
        for arr in lay.params.values():
            if not np.all(np.isfinite(arr)):
                raise DivergenceError("weights became non-finite after training")
    return net, result


def train(net: Network, train_data, valid_data, cfg: TrainConfig,
          loss="mse_output") -> tuple[Network, TrainResult]:
    """Train in place with plain gradient descent; returns (net, history).

    train_data / valid_data: lists of (input array, 0/1 target).  The same
    (seed, data, config) always produces byte-identical weights.  After
    training the network should be treated as immutable.
    """
    if not train_data:
        raise ConfigError("training set is empty")
    loss_obj = resolve_loss(loss)
    xtr, ytr = _as_arrays(train_data)
    if valid_data:
        xva, yva = _as_arrays(valid_data)
    else:
        xva = yva = None
    return run_training(net, xtr, ytr, cfg, lambda state, idx: loss_obj,
                        xva=xva, yva=yva)


def evaluate(net: Network, data) -> EvalResult:
    """Accuracy with the fixed 0.5 threshold; ties (pred == 0.5) go to class 1."""
    if not data:
        raise ConfigError("evaluation set is empty")
    xb, yb = _as_arrays(data)
    preds, _, _ = forward_batch(net, xb, training=False)
    labels = (yb >= 0.5).astype(int)
    hits = (preds >= 0.5).astype(int) == labels
    per_class = {}
    counts = {}
    for cls in (0, 1):
        mask = labels == cls
        counts[cls] = int(mask.sum())
        if counts[cls]:
            per_class[cls] = float(np.mean(hits[mask]))
    return EvalResult(total=float(np.mean(hits)), per_class=per_class,
                      counts=counts, n=len(yb))


def format_accuracy_cells(train_eval: EvalResult, test_eval: EvalResult,
                          title: str = "accuracy (%)") -> str:
    """Four set/class accuracy cells plus a combined total, as a text table.

    Layout: S_PD | S_NPD | T_PD | T_NPD | Total, percentages with two
    decimals; the total is sample-weighted over both sets.
    """
    def cell(res: EvalResult, cls: int) -> str:
        if cls not in res.per_class:
            return "   --"
        return f"{100.0 * res.per_class[cls]:6.2f}"

    hits = train_eval.total * train_eval.n + test_eval.total * test_eval.n
    total = 100.0 * hits / (train_eval.n + test_eval.n)
    header = f"{'S_PD':>6} {'S_NPD':>6} {'T_PD':>6} {'T_NPD':>6} {'Total':>7}"
    row = (f"{cell(train_eval, 1)} {cell(train_eval, 0)} "
           f"{cell(test_eval, 1)} {cell(test_eval, 0)} {total:6.2f} %")
    return f"{title}\n{header}\n{row}"
