"""Three-class cross-entropy training with hand-derived gradients."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import ClassLogits, Trial, TrialClass, UtteranceRecord, log_softmax, softmax
from .encoder import EncoderParams, backward_batch, forward_batch, group_by_k, score_logits, trial_embeddings
from .errors import TrainingDiverged, ValidationError
from .store import EmbeddingStore
from .synthgen import make_rng

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("train.epochs must be positive")
        if self.batch_size < 1:
            raise ValidationError("train.batch_size must be at least 1")
        # zero is accepted so a run can be used as a pure evaluation pass
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValidationError("train.learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ValidationError("train.weight_decay must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"train.optimizer must be one of {OPTIMIZERS}")
        make_rng(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def ce_loss(logits: ClassLogits, label: TrialClass) -> float:
    """Negative log posterior of the true class."""
    z = logits.as_array() if isinstance(logits, ClassLogits) else np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    return float(-log_softmax(z)[TrialClass(label).index])


def _labels_onehot(labels: np.ndarray) -> np.ndarray:
    y = np.zeros((labels.size, 3))
    y[np.arange(labels.size), labels] = 1.0
    return y


def batch_loss_and_grad(
    e_t: np.ndarray, E_r: np.ndarray, labels: np.ndarray, params: EncoderParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Per-trial losses and the gradient of their *sum*."""
    logits, cache = forward_batch(e_t, E_r, params, return_cache=True)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    losses = -log_softmax(logits)[np.arange(labels.size), labels]
    g = softmax(logits) - _labels_onehot(labels)
    return losses, backward_batch(params, cache, g)


def grad(
    trial: Trial, store: EmbeddingStore, params: EncoderParams, label: TrialClass,
    utts: Mapping[str, UtteranceRecord],
) -> dict[str, np.ndarray]:
    """Gradient of ``ce_loss(forward(trial), label)`` for every parameter tensor."""
    e_t, E_r = trial_embeddings([trial], utts, store)
    _, g = batch_loss_and_grad(e_t, E_r, np.array([TrialClass(label).index]), params)
    return g


class _Adam:
    def __init__(self, cfg: TrainConfig, shapes: Mapping[str, tuple]):
        self.cfg = cfg
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, tensors: dict, grads: Mapping) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            step = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if c.weight_decay:
                step = step + c.weight_decay * tensors[k]
            tensors[k] = tensors[k] - c.learning_rate * step


class _SGD:
    def __init__(self, cfg: TrainConfig, shapes):
        self.cfg = cfg

    def step(self, tensors: dict, grads: Mapping) -> None:
        wd = self.cfg.weight_decay
        for k, g in grads.items():
            tensors[k] = tensors[k] - self.cfg.learning_rate * (g + wd * tensors[k] if wd else g)


def train(
    trials: Sequence[Trial],
    store: EmbeddingStore,
    init_params: EncoderParams,
    config: TrainConfig,
    utts: Mapping[str, UtteranceRecord],
    progress: Optional[callable] = None,
) -> tuple[EncoderParams, list[float]]:
    """Minibatch training; returns final parameters and per-epoch mean loss.

    The batch gradient is the mean of the per-trial gradients. Epoch ``e``
    shuffles with a generator seeded by ``seed + e``.
    """
    if not trials:
        raise ValidationError("training needs at least one trial")
    n = len(trials)
    labels = np.array([t.label.index for t in trials], dtype=np.int64)
    groups = group_by_k(trials)
    # (test, enrollment) arrays per enrollment count, plus position lookup
    arrays = {}
    where = np.empty((n, 2), dtype=np.int64)
    for k, idx in groups.items():
        arrays[k] = trial_embeddings([trials[i] for i in idx], utts, store)
        where[idx, 0] = k
        where[idx, 1] = np.arange(len(idx))

    tensors = {k: v.copy() for k, v in init_params.tensors().items()}
    opt_cls = _Adam if config.optimizer == "adam" else _SGD
    opt = opt_cls(config, {k: v.shape for k, v in tensors.items()})
    params = init_params
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = make_rng(config.seed + epoch).permutation(n) if config.shuffle else np.arange(n)
        epoch_losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start:start + config.batch_size]
            total = None
            for k in np.unique(where[batch, 0]):
                sel = batch[where[batch, 0] == k]
                rows = where[sel, 1]
                e_t, E_r = arrays[int(k)]
                try:
                    losses, g = batch_loss_and_grad(e_t[rows], E_r[rows], labels[sel], params)
                except FloatingPointError:
                    raise TrainingDiverged(f"training diverged at epoch {epoch + 1}, batch {b + 1}") from None
                epoch_losses.append(losses)
                total = g if total is None else {name: total[name] + g[name] for name in total}
            if not np.all(np.isfinite(epoch_losses[-1])):
                raise TrainingDiverged(f"training diverged at epoch {epoch + 1}, batch {b + 1}")
            scale = 1.0 / len(batch)
            opt.step(tensors, {name: scale * g for name, g in total.items()})
            if not _all_finite(tensors):
                raise TrainingDiverged(f"training diverged at epoch {epoch + 1}, batch {b + 1}")
            params = params.with_tensors(tensors)
        mean_loss = math.fsum(np.concatenate(epoch_losses).tolist()) / n
        curve.append(mean_loss)
        log.info("epoch %d mean loss %.6f", epoch + 1, mean_loss)
        if progress is not None:
            progress(epoch + 1, mean_loss)
    return params, curve


def _all_finite(tensors: Mapping[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(v)) for v in tensors.values())


def mean_loss(
    trials: Sequence[Trial], store: EmbeddingStore, params: EncoderParams, utts: Mapping[str, UtteranceRecord]
) -> float:
    logits = score_logits(trials, store, params, utts)
    labels = np.array([t.label.index for t in trials])
    return float(np.mean(-log_softmax(logits)[np.arange(len(trials)), labels]))
