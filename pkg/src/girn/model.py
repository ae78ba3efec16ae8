"""The relational network: relation modules, pooling, attention, heads, loss."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from .numcore import autodiff as ad
from .numcore.functional import softmax as np_softmax
from .numcore.layers import DenseLayer, dropout, init_truncated_normal, mlp_forward
from .numcore.rng import RngStream
from .pairing import (JointSubset, MissingObjectError, assign_positions, connected_set,
                      STRATEGIES, enumerate_intra_pairs, feature_width, pair_features_batch)
from .skeldata.types import GroupSample

log = logging.getLogger(__name__)

RELATION_TYPES = ("intra", "inter", "object")


@dataclass
class ModelConfig:
    relation_types: tuple = RELATION_TYPES
    attention: bool = True
    individual_heads: bool = True
    g_widths: tuple = (1000, 1000, 1000, 500)
    f_widths: tuple = (500, 250, 250)
    n_group: int = 8
    n_action: int = 9
    frames: int = 21
    connectivity: str = "dense"
    intra_joints: int = 7
    inter_joints: int = 4
    object_joints: int = 7
    dropout: float = 0.25
    init_std: float = 0.045
    group_loss_scale: float | None = None
    individual_factor: float = 2.0

    def __post_init__(self):
        unknown = [t for t in self.relation_types if t not in RELATION_TYPES]
        if unknown:
            raise ValueError(f"unknown relation type(s) {unknown}; expected {RELATION_TYPES}")
        if self.connectivity not in STRATEGIES:
            raise ValueError(f"unknown connectivity {self.connectivity!r}")
        # canonical order keeps parameter layout and concatenation stable
        self.relation_types = tuple(t for t in RELATION_TYPES if t in tuple(self.relation_types))
        self.g_widths = tuple(int(w) for w in self.g_widths)
        self.f_widths = tuple(int(w) for w in self.f_widths)
        if not self.relation_types:
            raise ValueError("at least one relation type must be active")

    @property
    def relation_width(self) -> int:
        return self.g_widths[-1] * len(self.relation_types)

    @property
    def group_scale(self) -> float:
        return 1.0 / self.n_group if self.group_loss_scale is None else self.group_loss_scale

    def subset(self, kind: str) -> JointSubset:
        return JointSubset.of(getattr(self, f"{kind}_joints"))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("relation_types", "g_widths", "f_widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown model config key(s): {', '.join(unknown)}")
        return cls(**data)

    def diff(self, other: "ModelConfig") -> dict:
        """Keys whose values differ, mapped to (self, other)."""
        a, b = self.to_dict(), other.to_dict()
        return {k: (a[k], b[k]) for k in a if a[k] != b[k]}


# --- parameters --------------------------------------------------------------

def _mlp_shapes(in_width: int, widths) -> list:
    shapes, prev = [], in_width
    for w in widths:
        shapes.append((w, prev))
        prev = w
    return shapes


def param_shapes(cfg: ModelConfig) -> dict:
    F = feature_width(cfg.frames)
    D = cfg.relation_width
    shapes = {}
    for t in cfg.relation_types:
        for i, (o, n) in enumerate(_mlp_shapes(F, cfg.g_widths)):
            shapes[f"g.{t}.{i}.weight"] = (o, n)
            shapes[f"g.{t}.{i}.bias"] = (o,)
    if cfg.attention:
        shapes["att.group.key"] = (D, D)
        shapes["att.group.query"] = (D,)
        if cfg.individual_heads:
            shapes["att.indiv.key"] = (D, D)
            shapes["att.indiv.query"] = (D, D)
    heads = [("f_G", D, cfg.n_group)]
    if cfg.individual_heads:
        heads.append(("f_I", 2 * D, cfg.n_action))
    for name, width, n_out in heads:
        for i, (o, n) in enumerate(_mlp_shapes(width, cfg.f_widths + (n_out,))):
            shapes[f"{name}.{i}.weight"] = (o, n)
            shapes[f"{name}.{i}.bias"] = (o,)
    return shapes


def init_params(cfg: ModelConfig, rng: RngStream, zero_output: bool = False) -> dict:
    """Truncated-normal weights, zero biases."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = init_truncated_normal(shape, 0.0, cfg.init_std, rng)
    if zero_output:
        zero_output_layers(params, cfg)
    return params


def zero_output_layers(params: dict, cfg: ModelConfig) -> None:
    last = len(cfg.f_widths)
    for head in ("f_G", "f_I"):
        for part in ("weight", "bias"):
            key = f"{head}.{last}.{part}"
            if key in params:
                params[key][...] = 0.0


def _layers(p: dict, prefix: str, n: int, final: str) -> list:
    return [DenseLayer(p[f"{prefix}.{i}.weight"], p[f"{prefix}.{i}.bias"],
                       final if i == n - 1 else "relu") for i in range(n)]


def g_layers(p: dict, kind: str, cfg: ModelConfig) -> list:
    return _layers(p, f"g.{kind}", len(cfg.g_widths), "relu")


def f_layers(p: dict, head: str, cfg: ModelConfig) -> list:
    return _layers(p, head, len(cfg.f_widths) + 1, "identity")


# --- sample encoding -----------------------------------------------------------

@dataclass
class PairSet:
    """Pairs of one relation type, stored by reference to flat tracks.

    ``tracks`` holds each joint (and the object) once as a (2T,) row; pair
    ``n`` couples rows ``a[n]`` and ``b[n]`` and belongs to person ``owner[n]``.
    The per-frame distance is the only non-linear part of a pair feature and
    is filled in lazily by :meth:`with_distances`.
    """

    tracks: np.ndarray
    a: np.ndarray
    b: np.ndarray
    owner: np.ndarray
    dist: np.ndarray | None = None

    def __len__(self):
        return len(self.a)

    def with_distances(self) -> "PairSet":
        if self.dist is None:
            T = self.tracks.shape[1] // 2
            diff = (self.tracks[self.a] - self.tracks[self.b]).reshape(-1, T, 2)
            self.dist = np.sqrt(np.einsum("ptc,ptc->pt", diff, diff))
        return self

    def features(self) -> np.ndarray:
        """Materialised pair features, one row per pair."""
        T = self.tracks.shape[1] // 2
        return pair_features_batch(self.tracks[self.a].reshape(-1, T, 2),
                                   self.tracks[self.b].reshape(-1, T, 2))


def _pairset(tracks, a, b, owner) -> PairSet:
    return PairSet(tracks, np.asarray(a, dtype=np.intp), np.asarray(b, dtype=np.intp),
                   np.asarray(owner, dtype=np.intp))


@dataclass
class EncodedSample:
    n_persons: int
    group_label: int
    action_labels: np.ndarray
    pairs: dict
    clip_id: str = ""


def _joint_rows(sample: GroupSample, subset: JointSubset) -> np.ndarray:
    """(N * J, 2T) flat tracks, person-major; missing joints are zero rows."""
    T = sample.frames
    out = np.zeros((len(sample.persons), len(subset), 2 * T))
    for n, p in enumerate(sample.persons):
        for j, name in enumerate(subset.members):
            track = p.joints.get(name)
            if track is not None:
                out[n, j] = track.coords
    return out.reshape(-1, 2 * T)


def encode_sample(sample: GroupSample, cfg: ModelConfig) -> EncodedSample:
    """Pair sets for every active relation type, ready for batching."""
    if sample.frames != cfg.frames:
        raise ValueError(f"sample has {sample.frames} frames, model expects {cfg.frames}")
    N = len(sample.persons)
    out = {}
    if "intra" in cfg.relation_types:
        sub = cfg.subset("intra")
        J = len(sub)
        rows = _joint_rows(sample, sub)
        pairs = np.array(enumerate_intra_pairs(sub), dtype=np.intp).reshape(-1, 2)
        base = (np.arange(N) * J)[:, None]
        out["intra"] = _pairset(rows, (base + pairs[:, 0]).ravel(), (base + pairs[:, 1]).ravel(),
                                np.repeat(np.arange(N), len(pairs)))
    if "inter" in cfg.relation_types:
        sub = cfg.subset("inter")
        J = len(sub)
        rows = _joint_rows(sample, sub)
        court = assign_positions(sample)
        ii, kk = np.meshgrid(np.arange(J), np.arange(J), indexing="ij")
        ii, kk = ii.ravel(), kk.ravel()
        a, b, owner = [], [], []
        for p in range(N):
            for q in connected_set(p, court, cfg.connectivity):
                a.append(p * J + ii)
                b.append(q * J + kk)
                owner.append(np.full(J * J, p))
        if a:
            a, b, owner = np.concatenate(a), np.concatenate(b), np.concatenate(owner)
        out["inter"] = _pairset(rows, a, b, owner)
    if "object" in cfg.relation_types:
        if sample.ball is None:
            raise MissingObjectError(f"clip {sample.clip_id!r}: object relations need a ball track")
        sub = cfg.subset("object")
        rows = np.vstack([_joint_rows(sample, sub), sample.ball.coords[None]])
        n_joint = N * len(sub)
        out["object"] = _pairset(rows, np.arange(n_joint), np.full(n_joint, n_joint),
                                 np.repeat(np.arange(N), len(sub)))
    labels = np.array([-1 if p.action_label is None else p.action_label for p in sample.persons],
                      dtype=np.intp)
    return EncodedSample(N, sample.group_label, labels, out, sample.clip_id)


@dataclass
class Batch:
    size: int
    n_max: int
    mask: np.ndarray
    gather: np.ndarray
    n_persons_total: int
    pairs: dict
    group_labels: np.ndarray
    action_labels: np.ndarray
    action_sample: np.ndarray
    clip_ids: list = field(default_factory=list)


def collate(encoded: list) -> Batch:
    B = len(encoded)
    if B == 0:
        raise ValueError("empty batch")
    n_max = max(max(e.n_persons for e in encoded), 1)
    offsets = np.cumsum([0] + [e.n_persons for e in encoded])
    M = int(offsets[-1])
    mask = np.zeros((B, n_max), dtype=bool)
    gather = np.full((B, n_max), M, dtype=np.intp)
    for b, e in enumerate(encoded):
        mask[b, :e.n_persons] = True
        gather[b, :e.n_persons] = offsets[b] + np.arange(e.n_persons)
    pairs = {}
    for kind in encoded[0].pairs:
        sets = [e.pairs[kind] for e in encoded]
        row_off = np.cumsum([0] + [len(s.tracks) for s in sets])
        pairs[kind] = PairSet(
            np.concatenate([s.tracks for s in sets]),
            np.concatenate([s.a + row_off[i] for i, s in enumerate(sets)]),
            np.concatenate([s.b + row_off[i] for i, s in enumerate(sets)]),
            np.concatenate([s.owner + offsets[i] for i, s in enumerate(sets)]),
        ).with_distances()
    action_labels = np.concatenate([e.action_labels for e in encoded])
    action_sample = np.repeat(np.arange(B), [e.n_persons for e in encoded])
    return Batch(B, n_max, mask, gather.reshape(-1), M, pairs,
                 np.array([e.group_label for e in encoded], dtype=np.intp),
                 action_labels, action_sample, [e.clip_id for e in encoded])


# --- building blocks -----------------------------------------------------------

def pooling_matrix(owners, n_persons: int) -> sp.csr_matrix:
    owners = np.asarray(owners, dtype=np.intp)
    counts = np.bincount(owners, minlength=n_persons).astype(np.float64)
    vals = 1.0 / counts[owners] if owners.size else np.zeros(0)
    return sp.csr_matrix((vals, (owners, np.arange(owners.size))), shape=(n_persons, owners.size))


def relation_type_forward(layers, features, owners, n_persons: int):
    """Mean of g(pair) over each person's pairs; persons without pairs get zeros."""
    features = ad.as_tensor(features)
    if features.shape[-1] != layers[0].in_units:
        raise ValueError(f"pair feature width {features.shape[-1]} != module input {layers[0].in_units}")
    h, _ = mlp_forward(layers, features)
    return ad.sparse_matmul(pooling_matrix(owners, n_persons), h)


def _motion_matrix(frames: int) -> np.ndarray:
    """Maps a flat (2T,) track onto its 2(T-1) frame-to-frame deltas."""
    n = 2 * (frames - 1)
    D = np.zeros((n, 2 * frames))
    D[np.arange(n), np.arange(n)] = -1.0
    D[np.arange(n), np.arange(n) + 2] = 1.0
    return D


def _selector(index, n_cols: int) -> sp.csr_matrix:
    index = np.asarray(index, dtype=np.intp)
    return sp.csr_matrix((np.ones(index.size), (np.arange(index.size), index)),
                         shape=(index.size, n_cols))


def relation_type_forward_pairs(layers, pairs: PairSet, n_persons: int):
    """Same result as :func:`relation_type_forward` on ``pairs.features()``.

    The first layer is linear in the coordinate and motion blocks, so those
    projections are computed once per track and gathered per pair; only the
    distance block is projected per pair.
    """
    K, width = pairs.tracks.shape
    T = width // 2
    first = layers[0]
    if first.in_units != feature_width(T):
        raise ValueError(f"pair feature width {feature_width(T)} != module input {first.in_units}")
    pairs.with_distances()
    W = ad.as_tensor(first.weights)
    c = 2 * T
    m = 2 * (T - 1)
    D = _motion_matrix(T)
    Wa = ad.add(ad.columns(W, 0, c), ad.matmul(ad.columns(W, 5 * T, 5 * T + m), D))
    Wb = ad.add(ad.columns(W, c, 2 * c), ad.matmul(ad.columns(W, 5 * T + m, 5 * T + 2 * m), D))
    Wd = ad.columns(W, 2 * c, 5 * T)
    U = ad.linear(pairs.tracks, Wa)
    V = ad.linear(pairs.tracks, Wb)
    pre = ad.add(ad.add(ad.sparse_matmul(_selector(pairs.a, K), U),
                        ad.sparse_matmul(_selector(pairs.b, K), V)),
                 ad.linear(pairs.dist, Wd, first.bias))
    h = ad.ACTIVATIONS[first.activation](pre)
    if len(layers) > 1:
        h, _ = mlp_forward(layers[1:], h)
    return ad.sparse_matmul(pooling_matrix(pairs.owner, n_persons), h)


def concat_relations(blocks: dict):
    order = [k for k in RELATION_TYPES if k in blocks]
    if not order:
        raise ValueError("no active relation types")
    return ad.concat([blocks[k] for k in order], axis=-1)


def _weighted_sum(weights, R):
    # (..., N) x (..., N, D) -> (..., D)
    w = ad.reshape(weights, weights.shape[:-1] + (1, weights.shape[-1]))
    out = ad.matmul(w, R)
    return ad.reshape(out, out.shape[:-2] + (out.shape[-1],))


def _default_mask(R):
    return np.ones(R.shape[:-1], dtype=bool)


def average_pool(R, mask=None):
    """Equal-weight mean over present persons."""
    R = ad.as_tensor(R)
    mask = _default_mask(R) if mask is None else np.asarray(mask, dtype=bool)
    w = mask / np.maximum(mask.sum(axis=-1, keepdims=True), 1)
    return w, _weighted_sum(ad.Tensor(w), R)


def group_attention_pool(R, W_GQ, W_GK, mask=None, dropout_rate: float = 0.0,
                         training: bool = False, gen=None):
    """Score each person by ``W_GQ . tanh(W_GK R_p)``; softmax-weighted mean."""
    R = ad.as_tensor(R)
    mask = _default_mask(R) if mask is None else np.asarray(mask, dtype=bool)
    keys = dropout(ad.tanh(ad.linear(R, W_GK)), dropout_rate, training, gen)
    scores = ad.matmul(keys, W_GQ)
    weights = ad.softmax(scores, axis=-1, mask=mask)
    return weights, _weighted_sum(weights, R)


def _others_mask(mask):
    n = mask.shape[-1]
    return mask[..., :, None] & mask[..., None, :] & ~np.eye(n, dtype=bool)


def average_others(R, mask=None):
    R = ad.as_tensor(R)
    mask = _default_mask(R) if mask is None else np.asarray(mask, dtype=bool)
    m2 = _others_mask(mask)
    w = m2 / np.maximum(m2.sum(axis=-1, keepdims=True), 1)
    return w, ad.matmul(ad.Tensor(w), R)


def individual_attention_pool(R, W_IQ, W_IK, mask=None, dropout_rate: float = 0.0,
                              training: bool = False, gen=None):
    """Reference-dependent pooling of the other persons.

    Row ``q`` of the returned weights holds the softmax over ``p != q`` of
    ``(W_IQ key_q) . key_p`` with ``key_p = tanh(W_IK R_p)``; row ``q`` of the
    pooled output is the weighted mean of those ``R_p``. A person with no
    others gets an all-zero row.
    """
    R = ad.as_tensor(R)
    mask = _default_mask(R) if mask is None else np.asarray(mask, dtype=bool)
    keys = dropout(ad.tanh(ad.linear(R, W_IK)), dropout_rate, training, gen)
    queries = ad.linear(keys, W_IQ)
    scores = ad.matmul(queries, ad.swap_last(keys))
    m2 = _others_mask(mask)
    weights = ad.softmax(scores, axis=-1, mask=m2)
    if ((m2.sum(axis=-1) == 0) & mask).any():
        log.info("individual attention: a present person has no others; pooled as zeros")
    return weights, ad.matmul(weights, R)


def group_inference(layers, pooled, dropout_rate: float = 0.0, training: bool = False,
                    rng: RngStream | None = None):
    out, _ = mlp_forward(layers, pooled, dropout_rate, training, rng)
    return out


def individual_inference(layers, joint_input, dropout_rate: float = 0.0, training: bool = False,
                         rng: RngStream | None = None):
    out, _ = mlp_forward(layers, joint_input, dropout_rate, training, rng)
    return out


# --- loss ----------------------------------------------------------------------

def girn_loss(group_logits, action_logits, group_labels, action_labels, action_sample,
              batch_size: int, cfg: ModelConfig, group_weights=None, action_weights=None):
    """Per-sample loss averaged over the batch.

    group part:      group_scale * w[y] * -log p(y)
    individual part: factor / (N_I * N_b) * sum over labelled persons of w[y] * -log p(y)

    where N_b counts the labelled persons of sample b. Returns (loss, parts).
    """
    group_labels = np.asarray(group_labels, dtype=np.intp)
    gw = np.ones(cfg.n_group) if group_weights is None else np.asarray(group_weights, float)
    probs_g = ad.softmax(group_logits, axis=-1)
    coeff_g = cfg.group_scale * gw[group_labels] / batch_size
    loss_g = ad.weighted_nll(probs_g, group_labels, coeff_g)
    parts = {"group": float(loss_g.data)}
    loss = loss_g
    if action_logits is not None:
        action_labels = np.asarray(action_labels, dtype=np.intp)
        labelled = action_labels >= 0
        aw = np.ones(cfg.n_action) if action_weights is None else np.asarray(action_weights, float)
        counts = np.bincount(np.asarray(action_sample)[labelled], minlength=batch_size)
        if labelled.any():
            owners = np.asarray(action_sample)[labelled]
            y = action_labels[labelled]
            coeff = cfg.individual_factor * aw[y] / (cfg.n_action * counts[owners]) / batch_size
            probs_i = ad.softmax(ad.take_rows(action_logits, np.flatnonzero(labelled)), axis=-1)
            loss_i = ad.weighted_nll(probs_i, y, coeff)
            loss = ad.add(loss, loss_i)
            parts["individual"] = float(loss_i.data)
        else:
            parts["individual"] = 0.0
    parts["total"] = float(loss.data)
    return loss, parts


# --- full model ----------------------------------------------------------------

@dataclass
class ForwardOutput:
    group_logits: object
    action_logits: object
    relations: object
    group_weights: np.ndarray
    indiv_weights: np.ndarray | None
    action_index: np.ndarray


def forward(params: dict, batch: Batch, cfg: ModelConfig, training: bool = False,
            rng: RngStream | None = None) -> ForwardOutput:
    """Forward pass over a collated batch; ``params`` maps names to arrays or Tensors."""
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    blocks = {}
    for kind in cfg.relation_types:
        if kind not in batch.pairs:
            raise ValueError(f"batch was encoded without {kind!r} pairs")
        blocks[kind] = relation_type_forward_pairs(g_layers(p, kind, cfg), batch.pairs[kind],
                                                   batch.n_persons_total)
    R_flat = concat_relations(blocks)
    D = R_flat.shape[-1]
    padded = ad.concat([R_flat, ad.Tensor(np.zeros((1, D)))], axis=0)
    R = ad.reshape(ad.take_rows(padded, batch.gather), (batch.size, batch.n_max, D))
    gen = rng.generator() if training else None
    rate = cfg.dropout
    if cfg.attention:
        gw, pooled = group_attention_pool(R, p["att.group.query"], p["att.group.key"],
                                          batch.mask, rate, training, gen)
    else:
        gw, pooled = average_pool(R, batch.mask)
    group_logits = group_inference(f_layers(p, "f_G", cfg), pooled, rate, training, rng)
    action_logits, iw = None, None
    rows = np.flatnonzero(batch.mask.reshape(-1))
    if cfg.individual_heads:
        if cfg.attention:
            iw, others = individual_attention_pool(R, p["att.indiv.query"], p["att.indiv.key"],
                                                   batch.mask, rate, training, gen)
        else:
            iw, others = average_others(R, batch.mask)
        joint = ad.concat([R, others], axis=-1)
        joint = ad.take_rows(ad.reshape(joint, (batch.size * batch.n_max, 2 * D)), rows)
        action_logits = individual_inference(f_layers(p, "f_I", cfg), joint, rate, training, rng)
        iw = iw.data if isinstance(iw, ad.Tensor) else iw
    gw = gw.data if isinstance(gw, ad.Tensor) else gw
    return ForwardOutput(group_logits, action_logits, R, gw, iw, rows)


@dataclass
class Prediction:
    group_label: int
    action_labels: list
    group_probs: np.ndarray
    attention: np.ndarray


def predict_batch(params: dict, batch: Batch, cfg: ModelConfig) -> list:
    out = forward(params, batch, cfg, training=False)
    probs = np_softmax(out.group_logits.data, axis=-1)
    groups = np.argmax(probs, axis=-1)
    actions = None
    if out.action_logits is not None:
        actions = np.argmax(out.action_logits.data, axis=-1)
    preds, cursor = [], 0
    for b in range(batch.size):
        n = int(batch.mask[b].sum())
        acts = [] if actions is None else [int(a) for a in actions[cursor:cursor + n]]
        cursor += n
        preds.append(Prediction(int(groups[b]), acts, probs[b], out.group_weights[b, :n]))
    return preds


def predict(sample: GroupSample, params: dict, cfg: ModelConfig) -> Prediction:
    """Group label, per-person actions and group attention for one preprocessed sample."""
    return predict_batch(params, collate([encode_sample(sample, cfg)]), cfg)[0]


def loss_and_grads(params: dict, batch: Batch, cfg: ModelConfig, training: bool = False,
                   rng: RngStream | None = None, group_weights=None, action_weights=None,
                   trainable=None):
    """Loss, its parts and gradients for every (or every ``trainable``) parameter."""
    names = list(params) if trainable is None else [k for k in params if k in trainable]
    tensors = {k: (ad.parameter(v, k) if k in names else ad.Tensor(v)) for k, v in params.items()}
    out = forward(tensors, batch, cfg, training, rng)
    loss, parts = girn_loss(out.group_logits, out.action_logits, batch.group_labels,
                            batch.action_labels,
                            batch.action_sample, batch.size, cfg, group_weights, action_weights)
    grads = ad.backward(loss, {k: tensors[k] for k in names})
    return float(loss.data), parts, grads, out

