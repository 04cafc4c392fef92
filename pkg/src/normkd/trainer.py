"""Teacher/student MLP training with Nesterov-momentum SGD and step decay.

Training is bit-deterministic: the parameter init is fixed by the
MlpSpec seed, and every epoch's batch order comes from a counter-based
Philox stream keyed on (seed, epoch), so identical (spec, config,
dataset) inputs always reproduce identical parameters and history.  The
loop is single-threaded by contract.

Distillation uses a cache of precomputed teacher logits; the teacher is
never run online.  With no cache (or beta = 0) the objective is plain
cross entropy scaled by alpha, and the distillation path contributes
nothing, not even zero-valued graph nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .distill import cross_entropy, distill_loss
from .errors import ConfigError, ContractError
from .logitstats import LogitRecord, TemperatureRule
from .numcore import Tape, affine, multiply, relu, value_of


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths [input, hidden..., classes] and the init seed."""

    layer_widths: tuple[int, ...]
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ConfigError(f"need at least [input, classes] widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization recipe, with desk-scale defaults.

    The default schedule is 120 epochs with the learning rate multiplied
    by 0.1 when entering epochs 75, 90 and 105 (1-based).  Momentum is
    always applied in Nesterov form; weight decay is the coupled L2 term
    added to the gradient.
    """

    epochs: int = 120
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple[int, ...] = (75, 90, 105)
    lr_decay_rate: float = 0.1
    alpha: float = 0.1
    beta: float = 0.9
    rule: TemperatureRule | None = None
    seed: int = 0
    std_corrected: bool = True
    detach_student_stat: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        decay = tuple(int(e) for e in self.lr_decay_epochs)
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ConfigError(f"lr_decay_epochs must be strictly increasing, got {decay}")
        if decay and (decay[0] < 1 or decay[-1] >= self.epochs):
            raise ConfigError(
                f"lr_decay_epochs must lie in [1, epochs), got {decay} for {self.epochs} epochs"
            )
        if not self.lr_decay_rate > 0.0:
            raise ConfigError(f"lr_decay_rate must be positive, got {self.lr_decay_rate}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        object.__setattr__(self, "lr_decay_epochs", decay)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    split: str
    ce: float
    kld: float
    total: float
    top1: float


Params = list[tuple[np.ndarray, np.ndarray]]
TrainHistory = list[EpochRecord]


def init_mlp(spec: MlpSpec) -> Params:
    """Fan-in-scaled uniform init: W ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), b = 0."""
    rng = np.random.default_rng(spec.init_seed)
    params: Params = []
    widths = spec.layer_widths
    for d_in, d_out in zip(widths, widths[1:]):
        bound = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        params.append((w, np.zeros(d_out)))
    return params


def forward(params, x):
    """MLP logits; ReLU between layers, none after the last."""
    h = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        h = affine(h, w, b)
        if i < last:
            h = relu(h)
    return h


def evaluate(params: Params, data: Dataset) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    logits = forward(params, data.features)
    return float(np.mean(logits.argmax(axis=1) == data.labels))


def cache_teacher_logits(params: Params, data: Dataset) -> list[LogitRecord]:
    """Raw (unsoftened) logits for every sample, in dataset order."""
    logits = forward(params, data.features)
    return [
        LogitRecord(i, int(data.labels[i]), logits[i].copy())
        for i in range(data.n_samples)
    ]


def _teacher_matrix(cache, data: Dataset) -> np.ndarray:
    """Validate a teacher cache against the dataset and stack its logits."""
    if isinstance(cache, np.ndarray):
        if cache.shape != (data.n_samples, data.num_classes):
            raise ContractError(
                f"teacher logits shape {cache.shape} does not cover dataset "
                f"({data.n_samples} samples, {data.num_classes} classes)"
            )
        return np.asarray(cache, dtype=np.float64)
    records = list(cache)
    if len(records) != data.n_samples:
        raise ContractError(
            f"teacher cache has {len(records)} records, dataset has {data.n_samples}"
        )
    for i, rec in enumerate(records):
        if rec.logits.shape[0] != data.num_classes:
            raise ContractError(
                f"teacher cache record {i} has {rec.logits.shape[0]} classes, "
                f"dataset has {data.num_classes}"
            )
        if rec.sample_id != i or rec.label != int(data.labels[i]):
            raise ContractError(
                f"teacher cache record {i} (sample_id={rec.sample_id}, "
                f"label={rec.label}) does not match dataset row"
            )
    return np.stack([rec.logits for rec in records])


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 64) + int(epoch)))
    return rng.permutation(n)


def _batch_loss(config: TrainConfig, logits, labels, teacher_rows):
    """Scalar loss node plus (ce, kld) floats for the history."""
    if teacher_rows is None or config.beta == 0.0 or config.rule is None:
        ce = cross_entropy(logits, labels)
        total = multiply(ce, config.alpha)
        return total, float(value_of(ce)), 0.0
    report = distill_loss(
        config.rule,
        logits,
        teacher_rows,
        labels,
        alpha=config.alpha,
        beta=config.beta,
        corrected=config.std_corrected,
        detach_student_stat=config.detach_student_stat,
    )
    return report.node if report.node is not None else report.total, report.ce_part, report.kld_part


def _split_record(
    epoch: int, split: str, config: TrainConfig, params: Params, data: Dataset, teacher
) -> EpochRecord:
    logits = forward(params, data.features)
    _, ce, kld = _batch_loss(config, logits, data.labels, teacher)
    return EpochRecord(
        epoch=epoch,
        split=split,
        ce=ce,
        kld=kld,
        total=config.alpha * ce + config.beta * kld,
        top1=float(np.mean(logits.argmax(axis=1) == data.labels)),
    )


def train(
    spec: MlpSpec,
    config: TrainConfig,
    train_data: Dataset,
    teacher_logits=None,
    val_data: Dataset | None = None,
) -> tuple[Params, TrainHistory]:
    """Minimize alpha*CE + beta*KLD(rule) over the training split.

    ``teacher_logits`` is an optional cache (list of LogitRecord in
    dataset order, or an (N, C) array) covering every training sample;
    without it the objective is alpha-scaled plain cross entropy.
    History records ce/kld/total/top1 per epoch for the train split and,
    when ``val_data`` is given, the validation split; validation rows
    report plain cross entropy (kld 0), since teacher logits are cached
    for training samples only.
    """
    if train_data.n_samples == 0:
        raise ContractError("training dataset is empty")
    if spec.layer_widths[0] != train_data.num_features:
        raise ContractError(
            f"spec input width {spec.layer_widths[0]} != dataset features "
            f"{train_data.num_features}"
        )
    if spec.layer_widths[-1] != train_data.num_classes:
        raise ContractError(
            f"spec class width {spec.layer_widths[-1]} != dataset classes "
            f"{train_data.num_classes}"
        )
    teacher = None
    if teacher_logits is not None:
        teacher = _teacher_matrix(teacher_logits, train_data)

    params = [(w.copy(), b.copy()) for (w, b) in init_mlp(spec)]
    history: TrainHistory = []
    if config.epochs == 0:
        return params, history

    momentum_bufs = [(np.zeros_like(w), np.zeros_like(b)) for (w, b) in params]
    lr = config.learning_rate
    x_all, y_all = train_data.features, train_data.labels

    for epoch in range(1, config.epochs + 1):
        if epoch in config.lr_decay_epochs:
            lr *= config.lr_decay_rate
        order = _epoch_order(config.seed, epoch, train_data.n_samples)
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            leaves = [(tape.leaf(w), tape.leaf(b)) for (w, b) in params]
            logits = forward(leaves, x_all[idx])
            teacher_rows = teacher[idx] if teacher is not None else None
            loss, _, _ = _batch_loss(config, logits, y_all[idx], teacher_rows)
            tape.backward(loss)
            for (w, b), (wl, bl), (vw, vb) in zip(params, leaves, momentum_bufs):
                for p, g, v in ((w, wl.grad, vw), (b, bl.grad, vb)):
                    g = g + config.weight_decay * p
                    v *= config.momentum
                    v += g
                    p -= lr * (g + config.momentum * v)
        history.append(_split_record(epoch, "train", config, params, train_data, teacher))
        if val_data is not None:
            history.append(_split_record(epoch, "val", config, params, val_data, None))
    return params, history
