"""Optimisation: Adam, bucketed mini-batches, early stopping on dev accuracy."""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import Bucket, TrainingExample, bucket_examples, shuffle_within

log = logging.getLogger(__name__)

LOSS_SCOPES = ("full_history", "last_turn")


@dataclass
class TrainConfig:
    batch_size: int = 10
    embed_dim: int = 100
    hidden_dim: int = 100
    dropout_keep: float = 0.7
    n_buckets: int = 10
    max_epochs: int = 50
    patience_epochs: int = 4
    top_k: int = 3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    seed: int = 0
    loss_scope: str = "full_history"

    def __post_init__(self):
        for name in ("batch_size", "embed_dim", "hidden_dim", "n_buckets", "max_epochs",
                     "patience_epochs", "top_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must lie in (0, 1]")
        if self.loss_scope not in LOSS_SCOPES:
            raise ValueError(f"loss_scope must be one of {LOSS_SCOPES}")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------- Adam


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place Adam update of ``params`` (name -> array or Tensor)."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}; step aborted")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        p = params[k]
        arr = p.data if isinstance(p, ad.Tensor) else p
        if g.shape != arr.shape:
            raise ad.ShapeError(f"{k}: gradient {g.shape} vs parameter {arr.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(arr)
            state.v[k] = np.zeros_like(arr)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        arr -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(arr.dtype)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# ----------------------------------------------------------- early stopping


@dataclass
class EarlyStopTracker:
    """Top-k dev scores; stops once the set is unchanged for ``patience`` epochs.

    Entries are ``(accuracy, epoch)`` sorted by accuracy descending, earlier
    epoch first on ties.  A newcomer equal to the current k-th score does not
    displace it.
    """

    top_k: int = 3
    patience: int = 4
    ranked: list = field(default_factory=list)
    epochs_since_change: int = 0

    def update(self, accuracy: float, epoch: int) -> bool:
        entered = len(self.ranked) < self.top_k or accuracy > self.ranked[-1][0]
        if entered:
            self.ranked.append((accuracy, epoch))
            self.ranked.sort(key=lambda e: (-e[0], e[1]))
            del self.ranked[self.top_k:]
            self.epochs_since_change = 0
        else:
            self.epochs_since_change += 1
        return self.should_stop

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_change >= self.patience

    @property
    def best(self):
        return self.ranked[0] if self.ranked else None

    def epochs(self) -> set:
        return {e for _, e in self.ranked}


def early_stop_update(tracker: EarlyStopTracker, dev_accuracy: float, epoch: int):
    stop = tracker.update(dev_accuracy, epoch)
    return tracker, stop


# ------------------------------------------------------------------ batching


def make_batches(buckets: Sequence[Bucket], batch_size: int, rng: np.random.Generator) -> list[list]:
    """Shuffle inside each bucket, cut into batches, then shuffle batch order."""
    shuffle_within(buckets, rng)
    batches = []
    for b in buckets:
        for i in range(0, len(b.examples), batch_size):
            batches.append(b.examples[i:i + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


# -------------------------------------------------------------------- loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float
    wall_time: float
    top_k: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_accuracy: float
    history: list
    stopped_early: bool


def turn_loss(model, example: TrainingExample, mode: str = "train", rng=None,
              loss_scope: str = "full_history") -> ad.Tensor:
    """Summed cross-entropy of one example as a scalar tensor."""
    per = model.batch_losses([example], mode, rng, last_turn_only=loss_scope == "last_turn")
    return ad.sum_(per)


def train_step(model, batch, opt: AdamState, config: TrainConfig, rng) -> float:
    params = model.params
    for p in params.values():
        p.grad = None
    loss = model.batch_loss(batch, "train", rng, last_turn_only=config.loss_scope == "last_turn")
    ad.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    if config.clip_norm is not None:
        clip_by_global_norm(grads, config.clip_norm)
    adam_step(params, grads, opt)
    for p in params.values():
        p.grad = None
    return float(loss.data)


def train(model, examples: Sequence[TrainingExample], config: TrainConfig,
          dev_score: Callable[[object], float], log_path=None,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          target_accuracy: float | None = None) -> TrainResult:
    """Fit ``model`` in place and restore the best-dev parameters at the end.

    ``dev_score(model)`` returns the dev joint accuracy after each epoch.
    Training also ends once it reaches ``target_accuracy``, if given.
    """
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(config.seed)
    buckets = bucket_examples(list(examples), config.n_buckets)
    opt = AdamState(config.learning_rate, config.beta1, config.beta2, config.eps)
    tracker = EarlyStopTracker(config.top_k, config.patience_epochs)
    snapshots: dict[int, dict] = {}
    history = []
    stopped = False
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            total, n = 0.0, 0
            for batch in make_batches(buckets, config.batch_size, rng):
                total += train_step(model, batch, opt, config, rng) * len(batch)
                n += len(batch)
            acc = float(dev_score(model))
            if np.isnan(acc):
                raise FloatingPointError(f"dev accuracy is NaN at epoch {epoch}")
            stop = tracker.update(acc, epoch)
            if epoch in tracker.epochs():
                snapshots[epoch] = model.state_dict()
            for e in list(snapshots):
                if e not in tracker.epochs():
                    del snapshots[e]
            rec = EpochRecord(epoch, total / n, acc, time.perf_counter() - t0,
                              [list(x) for x in tracker.ranked])
            history.append(rec)
            log.info("epoch %d loss %.4f dev %.4f", epoch, rec.train_loss, acc)
            if log_file:
                log_file.write(rec.to_json() + "\n")
                log_file.flush()
            if on_epoch:
                on_epoch(rec)
            if stop or (target_accuracy is not None and acc >= target_accuracy):
                stopped = True
                break
    finally:
        if log_file:
            log_file.close()
    best_acc, best_epoch = tracker.best
    best_state = snapshots[best_epoch]
    model.load_state_dict(best_state)
    return TrainResult(copy.deepcopy(best_state), best_epoch, best_acc, history, stopped)
