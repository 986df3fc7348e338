import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vain.models import (AgentFrame, Model, ModelSpec, attention_pool, attention_weights,
                         classify_head, commnet_pool, count_encoder_evals, multiply_adds,
                         parity_pair_width)
from vain.numkit import cross_entropy_loss, grad_check

SMALL = dict(enc_hidden=(8,), enc_out=6, comm_dim=5, attn_dim=3, dec_hidden=(7,), pair_hidden=(6,))


def spec(arch, f=4, **kw):
    base = dict(SMALL)
    base.update(kw)
    if arch in ("FC", "SMAX", "ONE_HOP_FC"):
        base.setdefault("head", "softmax")
    return ModelSpec(arch, f, **base)


def brute_force_weights(a, mask, kernel):
    """Direct elementwise evaluation of the pooling weights, one (i, j) at a time."""
    n = len(a)
    w = np.zeros((n, n))
    for i in range(n):
        if not mask[i]:
            continue
        if kernel == "softmax":
            denom = sum(math.exp(-sum((a[i][k] - a[j][k]) ** 2 for k in range(len(a[i]))))
                        for j in range(n) if mask[j])
        for j in range(n):
            if not mask[j] or j == i:
                continue
            e = math.exp(-sum((a[i][k] - a[j][k]) ** 2 for k in range(len(a[i]))))
            w[i, j] = e / denom if kernel == "softmax" else e
    return w


def random_frame(rng, n=6, f=4, p_mask=0.3):
    mask = rng.random(n) > p_mask
    mask[rng.integers(n)] = True
    return AgentFrame(rng.normal(size=(n, f)), mask)


class TestAgentFrame:
    def test_masked_features_zeroed(self):
        fr = AgentFrame(np.ones((3, 2)), np.array([True, False, True]))
        assert not fr.features[1].any()
        assert fr.n_active == 2

    def test_requires_active_agent(self):
        with pytest.raises(ValueError):
            AgentFrame(np.ones((2, 2)), np.array([False, False]))


class TestAttentionPool:
    def test_two_equal_agents(self):
        ec = np.array([[1.0, 2.0], [3.0, 4.0]])
        a = np.zeros((2, 3))
        pooled, w = attention_pool(ec, a, np.array([True, True]))
        np.testing.assert_array_equal(w, [[0, 0.5], [0.5, 0]])
        np.testing.assert_array_equal(pooled[0], 0.5 * ec[1])

    @pytest.mark.parametrize("n", [2, 3, 7, 32])
    def test_equal_attention(self, n):
        a = np.full((n, 4), 0.3)
        mask = np.ones(n, bool)
        w = attention_weights(a, mask, "softmax")
        off = ~np.eye(n, dtype=bool)
        assert (w[off] == 1.0 / n).all()
        assert (np.diag(w) == 0).all()
        wu = attention_weights(a, mask, "unnormalized")
        assert (wu[off] == 1.0).all() and (np.diag(wu) == 0).all()

    def test_single_agent_pools_zero(self):
        for kernel in ("softmax", "unnormalized"):
            pooled, w = attention_pool(np.ones((1, 3)), np.ones((1, 2)), np.array([True]), kernel)
            assert not pooled.any() and not w.any()

    @pytest.mark.parametrize("kernel", ["softmax", "unnormalized"])
    def test_matches_brute_force(self, kernel):
        rng = np.random.default_rng(0)
        for _ in range(5):
            a = rng.normal(size=(6, 3)) * 0.7
            mask = rng.random(6) > 0.3
            mask[0] = True
            w = attention_weights(a, mask, kernel)
            np.testing.assert_allclose(w, brute_force_weights(a.tolist(), mask, kernel),
                                       rtol=1e-12, atol=1e-15)

    def test_softmax_row_sums(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 3))
        w = attention_weights(a, np.ones(5, bool), "softmax")
        d2 = ((a[:, None] - a[None]) ** 2).sum(-1)
        self_weight = 1.0 / np.exp(-d2).sum(axis=1)
        np.testing.assert_allclose(w.sum(axis=1), 1.0 - self_weight, atol=1e-15)
        assert (w.sum(axis=1) > 0).all() and (w.sum(axis=1) <= 1).all()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10_000))
    def test_map_invariants(self, n, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, 4))
        mask = rng.random(n) > 0.3
        mask[0] = True
        shift = rng.normal(size=4)
        for kernel in ("softmax", "unnormalized"):
            w = attention_weights(a, mask, kernel)
            assert (np.diag(w) == 0).all()
            assert (w >= 0).all()
            assert not w[~mask].any() and not w[:, ~mask].any()
        ws = attention_weights(a + shift, mask, "softmax")
        np.testing.assert_allclose(ws, attention_weights(a, mask, "softmax"), atol=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 5, 2))
        mask = rng.random((3, 5)) > 0.2
        mask[:, 0] = True
        w = attention_weights(a, mask, "softmax")
        for b in range(3):
            np.testing.assert_array_equal(w[b], attention_weights(a[b], mask[b], "softmax"))


class TestCommnetPool:
    def test_two_agents(self):
        ec = np.array([[1.0, 2.0], [3.0, 5.0]])
        pooled = commnet_pool(ec, np.array([True, True]))
        np.testing.assert_array_equal(pooled[0], ec[1])
        np.testing.assert_array_equal(pooled[1], ec[0])

    def test_identical_agents(self):
        pooled = commnet_pool(np.tile([1.0, -2.0], (4, 1)), np.ones(4, bool))
        assert (pooled == pooled[0]).all()

    def test_single_and_masked(self):
        pooled = commnet_pool(np.ones((3, 2)), np.array([True, False, False]))
        assert not pooled.any()

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_attention_with_equal_vectors_rescales_mean(self, n):
        rng = np.random.default_rng(n)
        ec = rng.normal(size=(n, 4))
        mask = np.ones(n, bool)
        pooled, _ = attention_pool(ec, np.zeros((n, 3)), mask)
        np.testing.assert_allclose(pooled * n / (n - 1), commnet_pool(ec, mask), atol=1e-12)


class TestInteractionNetwork:
    def test_two_agents_is_psi(self):
        rng = np.random.default_rng(0)
        m = Model(spec("IN", aggregation="sum"))
        x = rng.normal(size=(2, 4))
        m.forward(x)
        psi = m.nets["psi"]
        expected = psi.forward(np.concatenate([x[0], x[1]])[None])[0]
        m.forward(x)
        pooled = m._agents["D"].net.layers[0]._x[0, :5]
        np.testing.assert_allclose(pooled, expected, atol=1e-14)

    def test_zero_psi_gives_zero_interaction(self):
        m = Model(spec("IN", aggregation="sum"))
        for p in m.nets["psi"].parameters():
            p.value[...] = 0.0
        m.forward(np.random.default_rng(1).normal(size=(4, 4)))
        assert not m._agents["D"].net.layers[0]._x[:, :5].any()

    @pytest.mark.parametrize("aggregation", ["sum", "mean"])
    def test_matches_pair_loop(self, aggregation):
        rng = np.random.default_rng(2)
        m = Model(spec("IN", aggregation=aggregation, batchnorm=False))
        x = rng.normal(size=(4, 4))
        mask = np.array([True, True, False, True])
        m.forward(x, mask)
        got = m._agents["D"].net.layers[0]._x[:, :5]
        psi = m.nets["psi"]
        active = np.nonzero(mask)[0]
        rows = []
        for i in active:
            acc = np.zeros(5)
            for j in active:
                if j != i:
                    acc += psi.forward(np.concatenate([x[i], x[j]])[None])[0]
            rows.append(acc / (len(active) - 1) if aggregation == "mean" else acc)
        np.testing.assert_allclose(got, np.array(rows), atol=1e-13)


class TestCounters:
    @pytest.mark.parametrize("n", [2, 8, 22, 32])
    def test_counts_match_formula(self, n):
        rng = np.random.default_rng(n)
        x = rng.normal(size=(n, 4))
        for arch in ("VAIN", "COMMNET", "IN"):
            m = Model(spec(arch))
            m.forward(x)
            comm, pair = count_encoder_evals(arch, n)
            assert (m.counters["comm_evals"], m.counters["pair_evals"]) == (comm, pair)

    def test_known_values(self):
        assert count_encoder_evals("VAIN", 22) == (22, 0)
        assert count_encoder_evals("IN", 32) == (0, 992)
        assert count_encoder_evals("IN", 2) == (0, 2)

    def test_masked_agents_not_counted(self):
        m = Model(spec("IN"))
        mask = np.array([True, True, True, False, False])
        m.forward(np.ones((5, 4)), mask)
        assert m.counters["pair_evals"] == 6

    def test_parity_width(self):
        vain = spec("VAIN", enc_hidden=(64, 64), comm_dim=64, attn_dim=10)
        w = parity_pair_width(vain, 8)
        cand = vain.with_(arch="IN", pair_hidden=(w, w))
        assert abs(multiply_adds(cand, 8) / multiply_adds(vain, 8) - 1) < 0.1


ARCHES = ["VAIN", "COMMNET", "IN", "SMAX", "FC", "ONE_HOP_FC", "LINEAR", "MLP"]


class TestForwardBackward:
    @pytest.mark.parametrize("arch", ARCHES)
    @pytest.mark.parametrize("batchnorm", [False, True])
    def test_gradients(self, arch, batchnorm):
        rng = np.random.default_rng(3)
        B, N, F = 3, 5, 4
        x = rng.normal(size=(B, N, F))
        mask = np.ones((B, N), bool)
        mask[0, 3] = False
        mask[2, 2:] = False
        kernels = ["softmax", "unnormalized"] if arch == "VAIN" else ["softmax"]
        for kernel in kernels:
            m = Model(spec(arch, out_dim=3, batchnorm=batchnorm, kernel=kernel, n_slots=N))
            if m.spec.head == "softmax":
                labels = np.array([0, 4, 1])

                def loss():
                    return cross_entropy_loss(m.forward(x, mask).per_agent[..., 0], labels, mask)[0]

                _, g = cross_entropy_loss(m.forward(x, mask).per_agent[..., 0], labels, mask)
            else:
                r = rng.normal(size=(B, N, 3)) / (B * N * 3)

                def loss():
                    return float((m.forward(x, mask).per_agent * r).sum())

                m.forward(x, mask)
                g = r
            m.zero_grad()
            m.backward(g)
            assert grad_check(loss, m.parameters(), max_per_param=None) < 1e-5

    def test_masked_agents_get_zero_probability_and_gradient(self):
        rng = np.random.default_rng(4)
        m = Model(spec("VAIN", head="softmax"))
        x = rng.normal(size=(5, 4))
        mask = np.array([True, False, True, True, False])
        out = m.forward(x, mask)
        assert (out.probs[~mask] == 0).all()
        assert out.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert not out.attention[~mask].any() and not out.attention[:, ~mask].any()
        # output at masked slots does not depend on their (hidden) features
        x2 = x.copy()
        x2[~mask] = 99.0
        np.testing.assert_array_equal(m.forward(x2, mask).per_agent, out.per_agent)

    @pytest.mark.parametrize("arch", ["VAIN", "COMMNET", "IN"])
    def test_single_agent_depends_only_on_singleton_code(self, arch):
        rng = np.random.default_rng(5)
        m = Model(spec(arch))
        x = rng.normal(size=(1, 4))
        out = m.forward(x).per_agent
        es = m.nets["Es"].forward(x)
        d_in = np.concatenate([np.zeros((1, 5)), es], axis=1)
        np.testing.assert_allclose(out, m.nets["D"].forward(d_in), atol=1e-14)

    def test_identical_agents_identical_outputs(self):
        m = Model(spec("VAIN"))
        out = m.forward(np.tile(np.arange(4.0), (3, 1))).per_agent
        assert (out == out[0]).all()

    def test_feature_mismatch(self):
        with pytest.raises(ValueError):
            Model(spec("VAIN")).forward(np.zeros((3, 5)))

    def test_classifier_arch_needs_softmax_head(self):
        with pytest.raises(ValueError):
            ModelSpec("SMAX", 4, head="regression")

    @pytest.mark.parametrize("arch", ["VAIN", "COMMNET", "IN", "SMAX", "LINEAR", "MLP"])
    def test_permutation_equivariance(self, arch):
        rng = np.random.default_rng(6)
        m = Model(spec(arch, out_dim=2))
        for _ in range(10):
            fr = random_frame(rng, 7)
            perm = rng.permutation(7)
            a = m.forward(fr.features, fr.mask)
            pf = fr.permuted(perm)
            b = m.forward(pf.features, pf.mask)
            np.testing.assert_allclose(b.per_agent, a.per_agent[perm], atol=1e-12, rtol=0)

    def test_vain_with_flat_attention_matches_commnet_pooling(self):
        rng = np.random.default_rng(7)
        v = Model(spec("VAIN", seed=1))
        last = v.nets["Ec"].layers[-1]
        last.weight.value[5:] = 0.0
        last.bias.value[5:] = 0.0
        x = rng.normal(size=(6, 4))
        out = v.forward(x)
        n = 6
        assert (out.attention[~np.eye(n, dtype=bool)] == 1.0 / n).all()
        ec = v.nets["Ec"].forward(x)[:, :5]
        pooled = v._agents["D"].net.layers[0]._x[:, :5]
        np.testing.assert_allclose(pooled, (n - 1) / n * commnet_pool(ec, np.ones(n, bool)),
                                   atol=1e-12)

    def test_state_roundtrip(self):
        m = Model(spec("IN", batchnorm=True))
        m.forward(np.random.default_rng(8).normal(size=(2, 4, 4)))
        state = m.copy_state()
        m2 = Model(spec("IN", batchnorm=True, seed=99))
        m2.load_state(state)
        for (_, a), b in zip(m2.state_arrays(), state):
            np.testing.assert_array_equal(a, b)


class TestClassifyHead:
    def test_uniform(self):
        p = classify_head(np.zeros(32), np.ones(32, bool))
        np.testing.assert_allclose(p, 1 / 32)

    def test_masked_zero(self):
        mask = np.array([True, False, True])
        p = classify_head(np.array([1.0, 5.0, 2.0]), mask)
        assert p[1] == 0.0

    def test_shift_invariant(self):
        o = np.random.default_rng(0).normal(size=10)
        mask = np.ones(10, bool)
        np.testing.assert_allclose(classify_head(o + 7.5, mask), classify_head(o, mask), atol=1e-15)
