"""Relation modules, pooling, attention, heads, loss and the assembled forward pass."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import random_scene
from girn.model import (ModelConfig, average_pool, collate, concat_relations, encode_sample,
                        forward, g_layers, girn_loss, group_attention_pool,
                        individual_attention_pool, init_params, loss_and_grads, param_shapes,
                        predict, relation_type_forward, relation_type_forward_pairs,
                        zero_output_layers)
from girn.numcore import DenseLayer, RngStream
from girn.numcore import autodiff as ad
from girn.pairing import JointSubset, MissingObjectError, assign_positions, connected_set
from girn.skeldata import GroupSample, JointTrack, PersonPose

TINY = dict(g_widths=(6, 5), f_widths=(4, 3), frames=5, init_std=0.3)


def _cfg(**kw):
    return ModelConfig(**{**TINY, **kw})


def _perturbed(cfg, seed=0, scale=0.3):
    """Initial params with noisy biases so every code path carries signal."""
    params = init_params(cfg, RngStream(seed))
    g = np.random.default_rng(seed + 100)
    return {k: v + g.normal(0, scale, v.shape) for k, v in params.items()}


def _scene(seed=0, n=12, frames=5, ball=True):
    g = np.random.default_rng(seed)
    s = random_scene(g, n_persons=n, frames=frames, with_ball=ball)
    # unit-scale coordinates, as after preprocessing
    for p in s.persons:
        for name, t in p.joints.items():
            p.joints[name] = JointTrack.from_xy(t.xy / 300.0)
    if s.ball is not None:
        s.ball = JointTrack.from_xy(s.ball.xy / 300.0)
    return s


# --- independent straight-line oracle ------------------------------------------

def _feat(a, b):
    a, b = a.reshape(-1, 2), b.reshape(-1, 2)
    dist = np.array([np.hypot(*(a[t] - b[t])) for t in range(len(a))])
    ma = np.array([a[t + 1] - a[t] for t in range(len(a) - 1)]).reshape(-1)
    mb = np.array([b[t + 1] - b[t] for t in range(len(b) - 1)]).reshape(-1)
    return np.concatenate([a.reshape(-1), b.reshape(-1), dist, ma, mb])


def _mlp(params, prefix, n, x, last_relu):
    for i in range(n):
        x = params[f"{prefix}.{i}.weight"] @ x + params[f"{prefix}.{i}.bias"]
        if i < n - 1 or last_relu:
            x = np.maximum(x, 0.0)
    return x


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _joint(person, name, frames):
    t = person.joints.get(name)
    return np.zeros(2 * frames) if t is None else t.coords


def oracle_forward(params, sample, cfg):
    """Group logits and action logits for one sample, by loops."""
    T, N = cfg.frames, len(sample.persons)
    ng = len(cfg.g_widths)
    blocks = []
    court = assign_positions(sample) if "inter" in cfg.relation_types else None
    for kind in cfg.relation_types:
        names = JointSubset.of(getattr(cfg, f"{kind}_joints")).members
        R = []
        for p, person in enumerate(sample.persons):
            feats = []
            if kind == "intra":
                for i in range(len(names)):
                    for k in range(i + 1, len(names)):
                        feats.append(_feat(_joint(person, names[i], T), _joint(person, names[k], T)))
            elif kind == "inter":
                for q in connected_set(p, court, cfg.connectivity):
                    for i in names:
                        for k in names:
                            feats.append(_feat(_joint(person, i, T),
                                               _joint(sample.persons[q], k, T)))
            else:
                for i in names:
                    feats.append(_feat(_joint(person, i, T), sample.ball.coords))
            outs = [_mlp(params, f"g.{kind}", ng, f, True) for f in feats]
            R.append(np.mean(outs, axis=0) if outs else np.zeros(cfg.g_widths[-1]))
        blocks.append(np.array(R))
    R = np.concatenate(blocks, axis=1)
    nf = len(cfg.f_widths) + 1
    if cfg.attention:
        scores = np.array([params["att.group.query"] @ np.tanh(params["att.group.key"] @ r)
                           for r in R])
        w = _softmax(scores)
    else:
        w = np.full(N, 1.0 / N)
    pooled = sum(w[p] * R[p] for p in range(N))
    group = _mlp(params, "f_G", nf, pooled, False)
    actions = []
    if cfg.individual_heads:
        for q in range(N):
            others = [p for p in range(N) if p != q]
            if cfg.attention:
                keys = [np.tanh(params["att.indiv.key"] @ R[p]) for p in range(N)]
                query = params["att.indiv.query"] @ keys[q]
                wi = _softmax(np.array([query @ keys[p] for p in others]))
            else:
                wi = np.full(len(others), 1.0 / len(others))
            pooled_q = sum(wi[j] * R[p] for j, p in enumerate(others))
            actions.append(_mlp(params, "f_I", nf, np.concatenate([R[q], pooled_q]), False))
    return group, np.array(actions)


def _run(params, samples, cfg):
    return forward(params, collate([encode_sample(s, cfg) for s in samples]), cfg)


class TestRelationTypeForward:
    def _layers(self, seed=0, width=14):
        g = np.random.default_rng(seed)
        return [DenseLayer(g.normal(size=(5, width)), g.normal(size=5)),
                DenseLayer(g.normal(size=(3, 5)), g.normal(size=3))]

    def test_single_pair_is_g(self):
        layers = self._layers()
        x = np.random.default_rng(1).normal(size=(1, 14))
        pooled = relation_type_forward(layers, x, [0], 1).data
        h = np.maximum(layers[1].weights @ np.maximum(layers[0].weights @ x[0] + layers[0].bias, 0)
                       + layers[1].bias, 0)
        np.testing.assert_allclose(pooled[0], h, atol=1e-12)

    def test_duplicating_the_set(self):
        layers = self._layers()
        x = np.random.default_rng(2).normal(size=(4, 14))
        once = relation_type_forward(layers, x, [0, 0, 1, 1], 2).data
        twice = relation_type_forward(layers, np.vstack([x, x]), [0, 0, 1, 1] * 2, 2).data
        np.testing.assert_allclose(once, twice, atol=1e-12)

    def test_empty_person_gets_zeros(self):
        out = relation_type_forward(self._layers(), np.ones((2, 14)), [0, 0], 3).data
        np.testing.assert_array_equal(out[1:], 0.0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            relation_type_forward(self._layers(), np.ones((2, 13)), [0, 0], 1)

    @pytest.mark.parametrize("kind", ["intra", "inter", "object"])
    def test_factorized_matches_materialized(self, kind):
        cfg = _cfg(inter_joints=3)
        params = _perturbed(cfg)
        batch = collate([encode_sample(_scene(s), cfg) for s in range(3)])
        pairs = batch.pairs[kind]
        layers = g_layers(params, kind, cfg)
        naive = relation_type_forward(layers, pairs.features(), pairs.owner,
                                      batch.n_persons_total).data
        fast = relation_type_forward_pairs(layers, pairs, batch.n_persons_total).data
        np.testing.assert_allclose(fast, naive, atol=1e-12)


class TestConcat:
    def test_widths_and_order(self):
        blocks = {k: ad.Tensor(np.full((2, 500), v)) for k, v
                  in (("object", 3.0), ("intra", 1.0), ("inter", 2.0))}
        out = concat_relations(blocks).data
        assert out.shape == (2, 1500)
        np.testing.assert_array_equal(out[:, :500], 1.0)
        np.testing.assert_array_equal(out[:, 1000:], 3.0)
        assert concat_relations({"intra": blocks["intra"]}).shape == (2, 500)
        with pytest.raises(ValueError):
            concat_relations({})

    def test_relation_width(self):
        assert ModelConfig().relation_width == 1500
        assert ModelConfig(relation_types=("intra",)).relation_width == 500
        assert ModelConfig(relation_types=("object", "intra")).relation_types == ("intra", "object")


class TestGroupAttention:
    def test_identical_rows_uniform(self):
        g = np.random.default_rng(0)
        R = np.tile(g.normal(size=6), (4, 1))
        w, pooled = group_attention_pool(R, g.normal(size=6), g.normal(size=(6, 6)))
        np.testing.assert_allclose(w.data, 0.25, atol=1e-15)
        np.testing.assert_allclose(pooled.data, R[0], atol=1e-12)

    def test_single_person(self):
        g = np.random.default_rng(1)
        R = g.normal(size=(1, 6))
        w, pooled = group_attention_pool(R, g.normal(size=6), g.normal(size=(6, 6)))
        assert w.data[0] == 1.0
        np.testing.assert_allclose(pooled.data, R[0])

    def test_distribution_and_hull(self):
        g = np.random.default_rng(2)
        R = g.normal(size=(3, 7, 6))
        mask = np.ones((3, 7), dtype=bool)
        mask[1, 4:] = False
        w, pooled = group_attention_pool(R, g.normal(size=6), g.normal(size=(6, 6)), mask)
        w, pooled = w.data, pooled.data
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
        assert (w >= 0).all() and (w[~mask] == 0).all()
        for b in range(3):
            present = R[b][mask[b]]
            assert (pooled[b] >= present.min(axis=0) - 1e-12).all()
            assert (pooled[b] <= present.max(axis=0) + 1e-12).all()

    def test_zero_query_is_average_pool(self):
        g = np.random.default_rng(3)
        R = g.normal(size=(2, 5, 6))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
        _, pooled = group_attention_pool(R, np.zeros(6), g.normal(size=(6, 6)), mask)
        _, avg = average_pool(R, mask)
        np.testing.assert_allclose(pooled.data, avg.data, atol=1e-12)
        np.testing.assert_allclose(avg.data[0], R[0, :3].mean(axis=0), atol=1e-12)


class TestIndividualAttention:
    def test_two_persons(self):
        g = np.random.default_rng(0)
        R = g.normal(size=(2, 6))
        w, pooled = individual_attention_pool(R, g.normal(size=(6, 6)), g.normal(size=(6, 6)))
        np.testing.assert_array_equal(w.data, [[0, 1], [1, 0]])
        np.testing.assert_allclose(pooled.data, R[::-1])

    def test_identical_others_uniform(self):
        g = np.random.default_rng(1)
        R = np.tile(g.normal(size=6), (5, 1))
        R[2] = g.normal(size=6)
        w, _ = individual_attention_pool(R, g.normal(size=(6, 6)), g.normal(size=(6, 6)))
        np.testing.assert_allclose(w.data[2][[0, 1, 3, 4]], 0.25, atol=1e-15)
        assert w.data[2, 2] == 0.0

    def test_reference_excluded(self):
        g = np.random.default_rng(2)
        R = g.normal(size=(4, 6))
        WQ, WK = g.normal(size=(6, 6)), g.normal(size=(6, 6))
        w, _ = individual_attention_pool(R, WQ, WK)
        assert (np.diag(w.data) == 0).all()
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
        # the pooled row for q is a combination of the others only
        R2 = R.copy()
        R2[0] += 10.0
        w2, pooled2 = individual_attention_pool(R2, WQ, WK)
        np.testing.assert_allclose(pooled2.data[0], w2.data[0] @ R, atol=1e-12)

    def test_lone_person_pools_zeros(self):
        g = np.random.default_rng(3)
        R = g.normal(size=(1, 3, 6))
        mask = np.array([[True, False, False]])
        w, pooled = individual_attention_pool(R, g.normal(size=(6, 6)), g.normal(size=(6, 6)), mask)
        np.testing.assert_array_equal(pooled.data[0, 0], 0.0)


class TestLoss:
    def _cfg(self):
        return ModelConfig(g_widths=(4,), f_widths=(4,))

    def test_uniform_group_no_individuals(self):
        loss, parts = girn_loss(ad.Tensor(np.zeros((3, 8))), None, [0, 4, 7], None, None, 3,
                                self._cfg())
        assert parts["total"] == pytest.approx(np.log(8) / 8, abs=1e-12)
        assert np.log(8) / 8 == pytest.approx(0.2599, abs=1e-4)

    def test_uniform_everything(self):
        labels = np.array([0, 3, 8, 1])
        _, parts = girn_loss(ad.Tensor(np.zeros((1, 8))), ad.Tensor(np.zeros((4, 9))), [2],
                             labels, np.zeros(4, dtype=int), 1, self._cfg())
        assert parts["individual"] == pytest.approx(2 * np.log(9) / 9, abs=1e-12)
        assert parts["total"] == pytest.approx(0.7482, abs=1e-4)
        assert parts["group"] > parts["individual"] / 2

    def test_perfect_predictions(self):
        big = 800.0
        gl = np.full((2, 8), -big)
        gl[[0, 1], [3, 5]] = big
        al = np.full((3, 9), -big)
        al[[0, 1, 2], [1, 1, 0]] = big
        _, parts = girn_loss(ad.Tensor(gl), ad.Tensor(al), [3, 5], [1, 1, 0], [0, 0, 1], 2,
                             self._cfg())
        assert parts["total"] < 1e-12

    def test_normalised_by_labelled_persons(self):
        g = np.random.default_rng(0)
        logits = g.normal(size=(3, 9))
        labels = np.array([1, 4, 2])
        _, a = girn_loss(ad.Tensor(np.zeros((1, 8))), ad.Tensor(logits), [0], labels,
                         np.zeros(3, dtype=int), 1, self._cfg())
        _, b = girn_loss(ad.Tensor(np.zeros((1, 8))), ad.Tensor(np.vstack([logits, logits])),
                         [0], np.concatenate([labels, labels]), np.zeros(6, dtype=int), 1,
                         self._cfg())
        assert a["individual"] == pytest.approx(b["individual"], rel=1e-12)
        # unlabelled persons are skipped
        _, c = girn_loss(ad.Tensor(np.zeros((1, 8))), ad.Tensor(np.vstack([logits, logits])),
                         [0], np.concatenate([labels, [-1, -1, -1]]), np.zeros(6, dtype=int), 1,
                         self._cfg())
        assert c["individual"] == pytest.approx(a["individual"], rel=1e-12)
        _, d = girn_loss(ad.Tensor(np.zeros((1, 8))), ad.Tensor(logits), [0], [-1, -1, -1],
                         np.zeros(3, dtype=int), 1, self._cfg())
        assert d["individual"] == 0.0


class TestForward:
    @pytest.mark.parametrize("attention,heads", [(True, True), (False, True), (True, False),
                                                 (False, False)])
    def test_matches_loop_oracle(self, attention, heads):
        cfg = _cfg(attention=attention, individual_heads=heads, inter_joints=3,
                   connectivity="moderate")
        params = _perturbed(cfg, seed=4)
        samples = [_scene(10), _scene(11, n=9)]
        out = _run(params, samples, cfg)
        cursor = 0
        for b, s in enumerate(samples):
            group, actions = oracle_forward(params, s, cfg)
            np.testing.assert_allclose(out.group_logits.data[b], group, atol=1e-12)
            if heads:
                n = len(s.persons)
                np.testing.assert_allclose(out.action_logits.data[cursor:cursor + n], actions,
                                           atol=1e-12)
                cursor += n

    def test_batch_equals_single(self):
        cfg = _cfg()
        params = _perturbed(cfg)
        samples = [_scene(1), _scene(2, n=10), _scene(3, n=7)]
        together = _run(params, samples, cfg).group_logits.data
        for b, s in enumerate(samples):
            np.testing.assert_allclose(_run(params, [s], cfg).group_logits.data[0], together[b],
                                       atol=1e-12)

    def test_permutation_invariance(self):
        cfg = _cfg()
        params = _perturbed(cfg)
        s = _scene(5)
        order = np.random.default_rng(0).permutation(12)
        shuffled = GroupSample([s.persons[i] for i in order], s.group_label, s.resolution, s.ball)
        a = _run(params, [s], cfg).group_logits.data
        b = _run(params, [shuffled], cfg).group_logits.data
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert predict(s, params, cfg).group_label == predict(shuffled, params, cfg).group_label

    def test_zero_output_uniform(self):
        cfg = _cfg()
        params = init_params(cfg, RngStream(0), zero_output=True)
        out = _run(params, [_scene(0)], cfg)
        np.testing.assert_array_equal(out.group_logits.data, 0.0)
        np.testing.assert_allclose(out.group_weights.sum(), 1.0, atol=1e-12)

    def test_eval_deterministic(self):
        cfg = _cfg(dropout=0.25)
        params = _perturbed(cfg)
        a = _run(params, [_scene(0)], cfg).group_logits.data
        b = _run(params, [_scene(0)], cfg).group_logits.data
        assert np.array_equal(a, b)
        batch = collate([encode_sample(_scene(0), cfg)])
        t = forward(params, batch, cfg, training=True, rng=RngStream(3)).group_logits.data
        assert not np.allclose(t, a)
        with pytest.raises(ValueError):
            forward(params, batch, cfg, training=True)

    def test_intra_only_needs_no_ball(self):
        cfg = _cfg(relation_types=("intra",))
        params = _perturbed(cfg)
        pred = predict(_scene(0, ball=False), params, cfg)
        assert 0 <= pred.group_label < 8
        with pytest.raises(MissingObjectError):
            encode_sample(_scene(0, ball=False), _cfg())

    def test_frames_checked(self):
        with pytest.raises(ValueError):
            encode_sample(_scene(0, frames=7), _cfg())

    def test_ties_go_to_lowest_class(self):
        cfg = _cfg()
        params = init_params(cfg, RngStream(0), zero_output=True)
        assert predict(_scene(0), params, cfg).group_label == 0

    def test_empty_inter_matches_intra_only(self):
        both = _cfg(relation_types=("intra", "inter"), attention=False, individual_heads=False)
        intra = replace(both, relation_types=("intra",))
        params = _perturbed(both)
        width = both.g_widths[-1]
        small = {k: v for k, v in params.items() if k in param_shapes(intra)}
        small["f_G.0.weight"] = params["f_G.0.weight"][:, :width]

        # a lone person has no connected set, so the inter block is the zero vector
        lone = _scene(6, n=1)
        assert len(encode_sample(lone, both).pairs["inter"]) == 0
        a = _run(params, [lone], both).group_logits.data
        b = _run(small, [lone], intra).group_logits.data
        np.testing.assert_allclose(a, b, atol=1e-12)

        # with inter pairs present, zeroed f_G columns on that block give the same logits
        crowd = _scene(7)
        params["f_G.0.weight"][:, width:] = 0.0
        a = _run(params, [crowd], both).group_logits.data
        b = _run(small, [crowd], intra).group_logits.data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestParams:
    def test_full_size_shapes(self):
        shapes = param_shapes(ModelConfig())
        assert [shapes[f"g.inter.{i}.weight"] for i in range(4)] == [
            (1000, 185), (1000, 1000), (1000, 1000), (500, 1000)]
        assert shapes["att.group.key"] == (1500, 1500)
        assert shapes["att.group.query"] == (1500,)
        assert shapes["att.indiv.query"] == (1500, 1500)
        assert shapes["f_G.0.weight"] == (500, 1500)
        assert shapes["f_I.0.weight"] == (500, 3000)
        assert shapes["f_G.3.weight"] == (8, 250)
        assert shapes["f_I.3.weight"] == (9, 250)

    def test_independent_blocks(self):
        params = init_params(_cfg(), RngStream(0))
        assert not np.array_equal(params["g.intra.0.weight"], params["g.inter.0.weight"])
        np.testing.assert_array_equal(params["g.intra.0.bias"], 0.0)

    def test_zero_output_layers(self):
        cfg = _cfg()
        params = init_params(cfg, RngStream(0))
        zero_output_layers(params, cfg)
        np.testing.assert_array_equal(params["f_G.2.weight"], 0.0)
        assert np.abs(params["f_G.1.weight"]).sum() > 0

    def test_config_round_trip_and_diff(self):
        cfg = _cfg()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.diff(replace(cfg, connectivity="sparse")) == {
            "connectivity": ("dense", "sparse")}
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"bogus": 1})
        with pytest.raises(ValueError):
            ModelConfig(relation_types=("spatial",))
        with pytest.raises(ValueError):
            ModelConfig(relation_types=())


class TestGradients:
    def test_end_to_end_central_differences(self):
        cfg = ModelConfig(g_widths=(8, 6), f_widths=(6, 5), frames=4, intra_joints=2,
                          inter_joints=2, object_joints=2, init_std=0.3)
        params = _perturbed(cfg, seed=1)
        g = np.random.default_rng(3)

        def person(team, x):
            return PersonPose({n: JointTrack.from_xy(g.normal(0, 0.3, (4, 2)) + [x, 0])
                               for n in ("LWrist", "RWrist")}, team, int(g.integers(9)))

        s = GroupSample([person("left", -0.5), person("right", 0.5)], 3,
                        ball=JointTrack.from_xy(g.normal(0, 0.3, (4, 2))))
        batch = collate([encode_sample(s, cfg)])
        _, _, grads, _ = loss_and_grads(params, batch, cfg)
        h, worst = 1e-5, 0.0
        names = sorted(params)
        for _ in range(120):
            k = names[g.integers(len(names))]
            idx = tuple(int(g.integers(n)) for n in params[k].shape)
            plus = {a: b.copy() for a, b in params.items()}
            minus = {a: b.copy() for a, b in params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            num = (loss_and_grads(plus, batch, cfg)[0] - loss_and_grads(minus, batch, cfg)[0]) / (2 * h)
            an = grads[k][idx]
            if max(abs(num), abs(an)) > 1e-7:
                worst = max(worst, abs(num - an) / max(abs(num), abs(an)))
        assert worst < 1e-4
