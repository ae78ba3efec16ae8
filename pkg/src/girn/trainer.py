"""Training: class weights, per-type pretraining, combined fine-tuning."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (RELATION_TYPES, ModelConfig, collate, encode_sample, forward, init_params,
                    loss_and_grads, girn_loss)
from .numcore.optim import OptimizerState, adam_step
from .numcore.rng import RngStream
from .skeldata.preprocess import mirror
from .skeldata.types import N_ACTION

log = logging.getLogger(__name__)

PHASE_OFFSETS = {"pretrain-intra": 1, "pretrain-inter": 2, "pretrain-object": 3, "finetune": 4}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    pretrain_epochs: int = 30
    finetune_epochs: int = 30
    patience: int = 10
    seed: int = 0
    mirror_prob: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.mirror_prob <= 1:
            raise ValueError("mirror_prob must lie in [0, 1]")


@dataclass
class EpochLog:
    phase: str
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_time: float = field(default=0.0, compare=False)

    def record(self) -> dict:
        """Deterministic part of the entry (wall time excluded)."""
        return {"phase": self.phase, "epoch": self.epoch,
                "train_loss": self.train_loss, "train_accuracy": self.train_accuracy,
                "val_loss": self.val_loss, "val_accuracy": self.val_accuracy}


@dataclass
class PhaseResult:
    phase: str
    params: dict
    log: list
    best_epoch: int
    best_val_loss: float
    best_val_accuracy: float


def action_histogram(samples, n_action: int = N_ACTION) -> np.ndarray:
    labels = [p.action_label for s in samples for p in s.persons if p.action_label is not None]
    return np.bincount(np.asarray(labels, dtype=np.intp), minlength=n_action).astype(np.float64)


def compute_class_weights(histogram) -> np.ndarray:
    """Inverse-frequency weights scaled to mean 1; empty classes take the rarest class's weight."""
    h = np.asarray(histogram, dtype=np.float64)
    if (h < 0).any():
        raise ValueError("class counts must be non-negative")
    if h.sum() <= 0:
        raise ValueError("class histogram is empty")
    freq = h / h.sum()
    w = np.zeros_like(freq)
    nz = freq > 0
    w[nz] = 1.0 / freq[nz]
    w[~nz] = w[nz].max()
    return w / w.mean()


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


class EncodingCache:
    """Encodings of a fixed sample list and, lazily, of its mirror images."""

    def __init__(self, samples, cfg: ModelConfig):
        self.samples = list(samples)
        self.cfg = cfg
        n = len(self.samples)
        self._mirrored = [None] * n
        self._enc = {False: [None] * n, True: [None] * n}

    def __len__(self):
        return len(self.samples)

    def sample(self, i: int, flipped: bool = False):
        if not flipped:
            return self.samples[i]
        if self._mirrored[i] is None:
            self._mirrored[i] = mirror(self.samples[i])
        return self._mirrored[i]

    def encoded(self, i: int, flipped: bool = False):
        slots = self._enc[bool(flipped)]
        if slots[i] is None:
            slots[i] = encode_sample(self.sample(i, flipped), self.cfg)
        return slots[i]


def _as_cache(samples, cfg: ModelConfig) -> EncodingCache:
    if isinstance(samples, EncodingCache) and samples.cfg == cfg:
        return samples
    if isinstance(samples, EncodingCache):
        samples = samples.samples
    return EncodingCache(samples, cfg)


def evaluate(params: dict, samples, cfg: ModelConfig, action_weights=None,
             batch_size: int = 32) -> dict:
    """Eval-mode loss, accuracy and predictions over ``samples``.

    ``samples`` may be a plain list or an :class:`EncodingCache`.
    """
    cache = _as_cache(samples, cfg)
    samples = cache.samples
    total, preds = 0.0, []
    for sl in _batches(len(samples), batch_size):
        batch = collate([cache.encoded(i) for i in range(sl.start, sl.stop)])
        out = forward(params, batch, cfg, training=False)
        _, parts = girn_loss(out.group_logits, out.action_logits, batch.group_labels,
                             batch.action_labels, batch.action_sample, batch.size, cfg,
                             action_weights=action_weights)
        total += parts["total"] * batch.size
        preds.extend(np.argmax(out.group_logits.data, axis=-1).tolist())
    labels = [s.group_label for s in samples]
    acc = float(np.mean(np.asarray(preds) == np.asarray(labels)))
    return {"loss": total / len(samples), "accuracy": acc, "predictions": preds, "labels": labels}


def _param_norm(params: dict) -> float:
    return float(np.sqrt(sum(float((v * v).sum()) for v in params.values())))


def train_epoch(params: dict, state: OptimizerState, samples, cfg: ModelConfig,
                tcfg: TrainConfig, rng: RngStream, action_weights=None, trainable=None,
                hook=None):
    """One shuffled pass with mirror augmentation and an Adam step per batch.

    ``hook(batch_samples, mirrored_flags)`` is called before each step.
    ``samples`` may be a plain list or an :class:`EncodingCache`.
    Returns (params, state, metrics).
    """
    cache = _as_cache(samples, cfg)
    gen = rng.generator()
    order = gen.permutation(len(cache))
    flips = gen.random(len(cache)) < tcfg.mirror_prob
    loss_sum, correct = 0.0, 0
    for sl in _batches(len(order), tcfg.batch_size):
        idx = order[sl]
        if hook is not None:
            hook([cache.sample(i, flips[i]) for i in idx], flips[idx])
        batch = collate([cache.encoded(i, flips[i]) for i in idx])
        loss, parts, grads, out = loss_and_grads(params, batch, cfg, True, rng,
                                                 action_weights=action_weights,
                                                 trainable=trainable)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise TrainingDiverged(
                f"non-finite loss/gradient on clips {batch.clip_ids}; "
                f"parameter norm {_param_norm(params):.4g}")
        sub = {k: params[k] for k in grads}
        sub, state = adam_step(sub, grads, state)
        params = {**params, **sub}
        loss_sum += loss * batch.size
        correct += int((np.argmax(out.group_logits.data, axis=-1) == batch.group_labels).sum())
    n = len(cache)
    return params, state, {"loss": loss_sum / n, "accuracy": correct / n}


def train_phase(phase: str, params: dict, cfg: ModelConfig, tcfg: TrainConfig, train, val,
                epochs: int, action_weights=None, trainable=None, hook=None) -> PhaseResult:
    """Train with early stopping on validation loss; keeps the best-val parameters."""
    rng = RngStream(tcfg.seed).fork(100 + PHASE_OFFSETS.get(phase, 0))
    train, val = _as_cache(train, cfg), _as_cache(val, cfg)
    state = OptimizerState(lr=tcfg.lr)
    best = (np.inf, 0.0, -1, params)
    entries, stale = [], 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        params, state, m = train_epoch(params, state, train, cfg, tcfg, rng, action_weights,
                                       trainable, hook)
        v = evaluate(params, val, cfg, action_weights)
        entry = EpochLog(phase, epoch, m["loss"], m["accuracy"], v["loss"], v["accuracy"],
                         time.perf_counter() - t0)
        entries.append(entry)
        log.info("%s epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f (%.1fs)",
                 phase, epoch, m["loss"], m["accuracy"], v["loss"], v["accuracy"],
                 entry.wall_time)
        if v["loss"] < best[0]:
            best = (v["loss"], v["accuracy"], epoch, params)
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    return PhaseResult(phase, best[3], entries, best[2], best[0], best[1])


def g_params(params: dict, kind: str) -> dict:
    prefix = f"g.{kind}."
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def pretrain_type(kind: str, cfg: ModelConfig, tcfg: TrainConfig, train, val,
                  action_weights=None, hook=None) -> PhaseResult:
    """Single-relation-type model trained from scratch; its g block is what gets reused."""
    if kind not in RELATION_TYPES:
        raise ValueError(f"unknown relation type {kind!r}")
    if kind == "object":
        missing = [s.clip_id for s in list(train) + list(val) if s.ball is None]
        if missing:
            raise ValueError(f"object pretraining needs ball tracks; missing in {missing[:5]}")
    single = replace(cfg, relation_types=(kind,))
    phase = f"pretrain-{kind}"
    rng = RngStream(tcfg.seed).fork(PHASE_OFFSETS[phase])
    params = init_params(single, rng)
    return train_phase(phase, params, single, tcfg, train, val, tcfg.pretrain_epochs,
                       action_weights, hook=hook)


def finetune_combined(pretrained: dict, cfg: ModelConfig, tcfg: TrainConfig, train, val,
                      action_weights=None, hook=None) -> PhaseResult:
    """Fresh attention and heads on top of the loaded g blocks; everything trains jointly."""
    rng = RngStream(tcfg.seed).fork(PHASE_OFFSETS["finetune"])
    params = init_params(cfg, rng)
    for kind in cfg.relation_types:
        if kind not in pretrained:
            raise ValueError(f"no pretrained parameters for relation type {kind!r}")
        for name, value in pretrained[kind].items():
            if name not in params:
                raise ValueError(f"unexpected pretrained parameter {name!r}")
            if params[name].shape != value.shape:
                raise ValueError(f"width mismatch for {name}: config {params[name].shape}, "
                                 f"pretrained {value.shape}")
            params[name] = value.copy()
    return train_phase("finetune", params, cfg, tcfg, train, val, tcfg.finetune_epochs,
                       action_weights, hook=hook)


@dataclass
class TrainingRun:
    params: dict
    phases: list
    action_weights: np.ndarray

    @property
    def log(self) -> list:
        return [e for p in self.phases for e in p.log]


def run_training(cfg: ModelConfig, tcfg: TrainConfig, train, val, pretrained: dict | None = None,
                 hook=None) -> TrainingRun:
    """Pretrain each active type, then fine-tune the concatenation.

    A single-type model is just its pretraining phase. Already pretrained g
    blocks can be passed in ``pretrained`` to skip their phase.
    """
    weights = compute_class_weights(action_histogram(train, cfg.n_action))
    pretrained = dict(pretrained or {})
    phases = []
    for kind in cfg.relation_types:
        if kind in pretrained:
            continue
        res = pretrain_type(kind, cfg, tcfg, train, val, weights, hook)
        phases.append(res)
        pretrained[kind] = g_params(res.params, kind)
        if len(cfg.relation_types) == 1:
            return TrainingRun(res.params, phases, weights)
    res = finetune_combined(pretrained, cfg, tcfg, train, val, weights, hook)
    phases.append(res)
    return TrainingRun(res.params, phases, weights)
