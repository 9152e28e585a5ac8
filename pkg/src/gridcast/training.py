"""Minibatch training: MSE objective, Adagrad updates, seeded shuffling,
early stopping on a time-ordered validation tail.

Determinism contract: given the same seed, data, and model config, the
entire run is bit-reproducible, including across thread counts. The
per-sample forward/backward calls inside a batch are pure and may run on
a thread pool, but their results are reduced in sample-index order, so
the floating-point sums never depend on scheduling.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .tensor import format_value


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.01
    adagrad_epsilon: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.adagrad_epsilon <= 0:
            raise ConfigError(f"adagrad_epsilon must be > 0, got {self.adagrad_epsilon}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in [0, 1), got "
                              f"{self.validation_fraction}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (train_loss, val_loss) per epoch
    stopped_epoch: int = 0
    best_epoch: int = 0
    checksum: int = 0


def format_train_report(report: TrainReport) -> str:
    lines = ["epoch,train_loss,val_loss"]
    for num, (tr, va) in enumerate(report.epochs, start=1):
        lines.append(f"{num},{format_value(tr)},{format_value(va)}")
    lines.append(f"# stopped_epoch {report.stopped_epoch}")
    lines.append(f"# best_epoch {report.best_epoch}")
    lines.append(f"# checksum {report.checksum:08x}")
    return "\n".join(lines) + "\n"


def loss(pred, target) -> float:
    """Mean squared error over cells."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs target {t.shape}")
    d = (p - t).ravel()
    return float(np.sum(d * d) / d.size)


def loss_grad(pred, target) -> np.ndarray:
    """d(mean squared error)/d(pred) = 2 (pred - target) / cell count."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs target {t.shape}")
    return 2.0 * (p - t) / p.size


def adagrad_step(params, grads, state, lr: float, eps: float) -> None:
    """In place: acc += g^2; p -= lr * g / (sqrt(acc) + eps)."""
    if len(params) != len(grads) or len(params) != len(state):
        raise ShapeError("params, grads, state must align one to one")
    for p, g, acc in zip(params, grads, state):
        if p.shape != g.shape or p.shape != acc.shape:
            raise ShapeError(f"parameter {p.shape} vs grad {g.shape} vs "
                             f"accumulator {acc.shape}")
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + eps)


def _param_checksum(model) -> int:
    crc = 0
    for _, _, arr in model.parameters():
        crc = zlib.crc32(np.ascontiguousarray(arr, dtype="<f8").tobytes(), crc)
    return crc & 0xFFFFFFFF


def _sample_pass(model, sample):
    """Loss and parameter gradients for one sample. Pure."""
    pred, caches = model.forward_with_caches(sample.input)
    sample_loss = loss(pred, sample.target)
    _, layer_grads = model.backward(caches, loss_grad(pred, sample.target))
    flat = []
    for entry in layer_grads:
        if entry is not None:
            flat.append(entry[0])
            flat.append(entry[1])
    return sample_loss, flat


def _eval_loss(model, samples, pool) -> float:
    if not samples:
        return 0.0
    if pool is None:
        losses = [loss(model.forward(s.input), s.target) for s in samples]
    else:
        losses = list(pool.map(lambda s: loss(model.forward(s.input), s.target),
                               samples))
    return float(np.sum(np.asarray(losses)) / len(samples))


def train(model, samples, cfg: TrainConfig) -> TrainReport:
    """Algorithm: initialize parameters once from cfg.seed, then repeat
    seeded-shuffled minibatch Adagrad until the validation loss has not
    improved for `patience` epochs (or max_epochs). The best-validation
    parameters are restored before returning.

    The validation split is the time-ordered tail of `samples` (fraction
    cfg.validation_fraction); when that tail is empty the training loss
    stands in for validation in the stopping rule.
    """
    if not samples:
        raise DataError("no training samples")
    spec = tuple(model.input_spec)
    if tuple(samples[0].input.shape) != spec:
        raise ShapeError(f"sample input {samples[0].input.shape} does not match "
                         f"model input {spec}")

    ordered = sorted(samples, key=lambda s: s.t)
    n_val = int(round(len(ordered) * cfg.validation_fraction))
    if n_val >= len(ordered):
        n_val = len(ordered) - 1
    train_set = ordered[:len(ordered) - n_val]
    val_set = ordered[len(ordered) - n_val:]
    if not train_set:
        raise DataError("validation split leaves no training samples")

    model.init_params(cfg.seed)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    params = [arr for _, _, arr in model.parameters()]
    state = [np.zeros_like(p) for p in params]

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    report = TrainReport()
    best_val = np.inf
    best_state = None
    bad_epochs = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = shuffle_rng.permutation(len(train_set))
            loss_sum = 0.0
            for batch_num, lo in enumerate(range(0, len(order), cfg.batch_size), start=1):
                batch = [train_set[k] for k in order[lo:lo + cfg.batch_size]]
                if pool is None:
                    results = [_sample_pass(model, s) for s in batch]
                else:
                    results = list(pool.map(lambda s: _sample_pass(model, s), batch))
                # reduce in sample-index order: scheduling never changes sums
                grad_sum = [np.zeros_like(p) for p in params]
                batch_loss = 0.0
                for sample_loss, flat in results:
                    batch_loss += sample_loss
                    for acc, g in zip(grad_sum, flat):
                        acc += g
                scale = 1.0 / len(batch)
                batch_loss *= scale
                if not np.isfinite(batch_loss):
                    raise DivergenceError(
                        f"loss diverged at epoch {epoch}, batch {batch_num} "
                        f"(loss={batch_loss})")
                loss_sum += batch_loss * len(batch)
                adagrad_step(params, [g * scale for g in grad_sum], state,
                             cfg.learning_rate, cfg.adagrad_epsilon)
            train_loss = loss_sum / len(train_set)
            val_loss = _eval_loss(model, val_set, pool) if val_set else train_loss
            if not np.isfinite(val_loss):
                raise DivergenceError(
                    f"validation loss diverged at epoch {epoch} (loss={val_loss})")
            report.epochs.append((train_loss, val_loss))
            report.stopped_epoch = epoch
            if val_loss < best_val:
                best_val = val_loss
                best_state = model.get_state()
                report.best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    if best_state is not None:
        model.set_state(best_state)
    report.checksum = _param_checksum(model)
    return report
