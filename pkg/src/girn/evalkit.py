"""Accuracy, confusion matrices and ball-track noise protocols."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelConfig, collate, encode_sample, predict_batch
from .numcore.rng import RngStream
from .skeldata.preprocess import preprocess
from .skeldata.types import GROUP_LABELS, GroupSample, JointTrack

log = logging.getLogger(__name__)

HD_RESOLUTION = (1920, 1080)
HD_NOISE_FACTOR = 1.5
NOISE_KINDS = ("displacement", "dropout")


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple = GROUP_LABELS

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def rates(self) -> np.ndarray:
        """Row-normalised counts; rows without samples stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, normalized: bool = False) -> str:
        values = self.rates() if normalized else self.counts
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred", *self.class_names])
        for name, row in zip(self.class_names, values):
            w.writerow([name, *(f"{v:.6f}" if normalized else int(v) for v in row)])
        return buf.getvalue()


def confusion(predictions, labels, n_classes: int = len(GROUP_LABELS),
              class_names=None) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    for arr, what in ((labels, "label"), (predictions, "prediction")):
        bad = arr[(arr < 0) | (arr >= n_classes)]
        if bad.size:
            raise ValueError(f"invalid {what} index {int(bad[0])} for {n_classes} classes")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    names = tuple(class_names) if class_names is not None else tuple(GROUP_LABELS[:n_classes])
    if len(names) != n_classes:
        raise ValueError(f"{len(names)} class names for {n_classes} classes")
    return ConfusionMatrix(counts, names)


# --- noise protocols -----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    value: float
    repetitions: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "displacement" and self.value < 0:
            raise ValueError("std_px must be >= 0")
        if self.kind == "dropout" and not 0 <= self.value <= 1:
            raise ValueError("dropout chance must lie in [0, 1]")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def noise_scale(resolution) -> float:
    return HD_NOISE_FACTOR if tuple(resolution) == HD_RESOLUTION else 1.0


def displacement_noise(track: JointTrack, std_px: float, resolution, rng) -> JointTrack:
    """Zero-mean Gaussian noise per frame and coordinate, in pixels.

    ``rng`` is a numpy Generator or an RngStream. The std is scaled by 1.5
    for 1920x1080 footage. Invalid frames stay (0, 0).
    """
    if std_px < 0:
        raise ValueError("std_px must be >= 0")
    if std_px == 0:
        return track.copy()
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    sigma = std_px * noise_scale(resolution)
    noise = gen.normal(0.0, sigma, size=track.xy.shape)
    return JointTrack.from_xy(track.xy + noise, track.valid)


def coordinate_dropout(track: JointTrack, chance: float, rng) -> JointTrack:
    """Zero each frame (and clear its validity) independently with ``chance``."""
    if not 0 <= chance <= 1:
        raise ValueError("dropout chance must lie in [0, 1]")
    if chance == 0:
        return track.copy()
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    drop = gen.random(track.frames) < chance
    return JointTrack(track.coords, track.valid & ~drop)


def _noisy(sample: GroupSample, spec: NoiseSpec, gen) -> GroupSample:
    if spec.kind == "displacement":
        ball = displacement_noise(sample.ball, spec.value, sample.resolution, gen)
    else:
        ball = coordinate_dropout(sample.ball, spec.value, gen)
    # persons are shared: preprocessing never mutates its input
    return replace(sample, ball=ball)


@dataclass
class SweepRow:
    spec: NoiseSpec
    accuracies: list
    injected_std: list = field(default_factory=list)
    dropped_fraction: list = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))


def predict_labels(params, samples, cfg, batch_size=32) -> list:
    out = []
    for start in range(0, len(samples), batch_size):
        batch = collate([encode_sample(s, cfg) for s in samples[start:start + batch_size]])
        out.extend(p.group_label for p in predict_batch(params, batch, cfg))
    return out


def evaluate_raw(params: dict, cfg: ModelConfig, raw_samples, impute_dropped: bool = False,
                 **preprocess_kw) -> dict:
    """Preprocess pixel-space samples, predict, and score them."""
    pre = [preprocess(s, interpolate_ball=impute_dropped, **preprocess_kw) for s in raw_samples]
    preds = predict_labels(params, pre, cfg)
    labels = [s.group_label for s in raw_samples]
    return {"accuracy": accuracy(preds, labels), "predictions": preds, "labels": labels,
            "confusion": confusion(preds, labels, cfg.n_group)}


def noise_sweep(params: dict, cfg: ModelConfig, raw_samples, specs, impute_dropped: bool = False,
                **preprocess_kw) -> list:
    """Evaluate ``raw_samples`` under each noise spec, averaged over repetitions.

    Noise goes onto copies of the pixel-space ball tracks before
    preprocessing. Repetition ``r`` of a spec draws from
    ``RngStream(spec.seed).fork(r)``, so rows are reproducible on their own.
    """
    if "object" not in cfg.relation_types:
        raise ValueError("noise_sweep perturbs the ball track; the model has no object "
                         f"relation type (relation_types={cfg.relation_types})")
    missing = [s.clip_id for s in raw_samples if s.ball is None]
    if missing:
        raise ValueError(f"samples without a ball track: {missing[:5]}")
    rows = []
    for spec in specs:
        row = SweepRow(spec, [])
        for r in range(spec.repetitions):
            gen = RngStream(spec.seed).fork(r).generator()
            noisy = [_noisy(s, spec, gen) for s in raw_samples]
            res = evaluate_raw(params, cfg, noisy, impute_dropped, **preprocess_kw)
            row.accuracies.append(res["accuracy"])
            if spec.kind == "displacement":
                diff = np.concatenate([(n.ball.xy - s.ball.xy)[s.ball.valid].ravel()
                                       / noise_scale(s.resolution)
                                       for n, s in zip(noisy, raw_samples)])
                row.injected_std.append(float(diff.std()))
            else:
                kept = sum(int(n.ball.valid.sum()) for n in noisy)
                before = sum(int(s.ball.valid.sum()) for s in raw_samples)
                row.dropped_fraction.append(1.0 - kept / before if before else 0.0)
        log.info("%s %.3g: mean accuracy %.4f over %d repetitions", spec.kind, spec.value,
                 row.mean_accuracy, spec.repetitions)
        rows.append(row)
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "parameter", "repetition", "accuracy", "mean_accuracy"])
    for row in rows:
        for r, acc in enumerate(row.accuracies):
            w.writerow([row.spec.kind, f"{row.spec.value:g}", r, f"{acc:.6f}",
                        f"{row.mean_accuracy:.6f}"])
    return buf.getvalue()
