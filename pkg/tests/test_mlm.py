"""NADE exactness (enumeration oracles), RNN-conditioned biases, sampling,
sequence scoring consistency, and language-model training."""

import itertools

import numpy as np
import pytest

from conftest import max_rel_error
from pianoscribe.mlm import (Nade, RnnNade, mlm_advance, mlm_conditional,
                             mlm_initial_state, nade_log_prob, nade_sample,
                             train_mlm)


def random_nade(rng, dim, n_hidden):
    n = Nade(dim, n_hidden, rng=rng)
    n.b_h = rng.normal(size=n_hidden)
    n.b_v = rng.normal(size=dim)
    return n


def random_rnn_nade(rng, dim, n_rnn, n_nade):
    m = RnnNade(dim=dim, n_rnn=n_rnn, n_nade=n_nade, rng=rng)
    m.nade.b_h = rng.normal(size=n_nade)
    m.nade.b_v = rng.normal(size=dim)
    m.W1 = rng.normal(size=(dim, n_rnn)) * 0.5
    m.W2 = rng.normal(size=(n_nade, n_rnn)) * 0.5
    return m


def all_configs(dim):
    return np.array(list(itertools.product((0.0, 1.0), repeat=dim)))


class TestNadeLogProb:
    def test_zero_weights_fair_bits(self):
        n = Nade(2, 4)
        for v in all_configs(2):
            assert nade_log_prob(n, v) == pytest.approx(np.log(0.25))

    def test_normalization_enumeration(self, rng):
        n = random_nade(rng, 10, 6)
        total = np.exp(n.log_prob_batch(all_configs(10))).sum()
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_prefix_chain_rule(self, rng):
        n = random_nade(rng, 8, 5)
        v = (rng.random(8) < 0.5).astype(float)
        # recompute each conditional from scratch on the prefix alone:
        # P(v_i | v_<i) must not depend on bits at or after i
        total = 0.0
        for i in range(8):
            masked = v.copy()
            masked[i:] = 0.0
            p = n.conditionals(masked)[i]
            total += v[i] * np.log(p) + (1 - v[i]) * np.log1p(-p)
        assert nade_log_prob(n, v) == pytest.approx(total, abs=1e-12)

    def test_non_binary_rejected(self, rng):
        n = random_nade(rng, 4, 3)
        with pytest.raises(ValueError):
            nade_log_prob(n, np.array([0.5, 0, 0, 0]))

    def test_batch_matches_single(self, rng):
        n = random_nade(rng, 7, 5)
        vs = (rng.random((20, 7)) < 0.5).astype(float)
        batch = n.log_prob_batch(vs)
        singles = np.array([n.log_prob(v) for v in vs])
        np.testing.assert_allclose(batch, singles, atol=1e-12)


class TestNadeSample:
    def test_zero_weights_half_rate(self, rng):
        n = Nade(2, 4)
        samples = n.sample(rng, 100000)
        assert np.all(np.abs(samples.mean(axis=0) - 0.5) < 0.01)

    def test_saturated_bias(self, rng):
        n = Nade(3, 4)
        n.b_v[0] = 20.0
        samples = n.sample(rng, 10000)
        assert samples[:, 0].mean() > 0.999

    def test_empirical_vs_exact_distribution(self, rng):
        n = random_nade(rng, 8, 5)
        configs = all_configs(8)
        exact = np.exp(n.log_prob_batch(configs))
        samples = n.sample(rng, 1000000)
        codes = samples @ (2 ** np.arange(8))
        counts = np.bincount(codes.astype(int), minlength=256) / samples.shape[0]
        exact_codes = configs @ (2 ** np.arange(8))
        empirical = np.zeros(256)
        empirical[exact_codes.astype(int)] = counts[exact_codes.astype(int)]
        tv = 0.5 * np.abs(empirical[exact_codes.astype(int)] - exact).sum()
        assert tv < 0.01

    def test_single_sample_shape(self, rng):
        n = random_nade(rng, 5, 3)
        assert nade_sample(n, rng).shape == (5,)


class TestMlmState:
    def test_initial_state_deterministic(self, rng):
        m = random_rnn_nade(rng, 6, 5, 4)
        a, b = mlm_initial_state(m), mlm_initial_state(m)
        np.testing.assert_array_equal(a.hidden, b.hidden)
        np.testing.assert_array_equal(a.last_frame, b.last_frame)
        assert a.hidden.shape == (5,)
        np.testing.assert_array_equal(a.hidden, 0.0)

    def test_conditional_zero_maps_equal_base(self, rng):
        m = RnnNade(dim=6, n_rnn=5, n_nade=4, rng=rng)  # W1 = W2 = 0
        m.nade.b_v = rng.normal(size=6)
        state = mlm_advance(m, mlm_initial_state(m), (rng.random(6) < 0.5).astype(float))
        cond = mlm_conditional(m, state)
        np.testing.assert_array_equal(cond.b_v, m.nade.b_v)
        np.testing.assert_array_equal(cond.b_h, m.nade.b_h)

    def test_zero_state_biases_equal_base(self, rng):
        m = random_rnn_nade(rng, 6, 5, 4)
        cond = mlm_conditional(m, mlm_initial_state(m))
        np.testing.assert_allclose(cond.b_v, m.nade.b_v)
        np.testing.assert_allclose(cond.b_h, m.nade.b_h)

    def test_conditioned_normalization(self, rng):
        m = random_rnn_nade(rng, 10, 6, 5)
        state = mlm_initial_state(m)
        for _ in range(3):
            state = mlm_advance(m, state, (rng.random(10) < 0.5).astype(float))
        cond = mlm_conditional(m, state)
        total = np.exp(cond.log_prob_batch(all_configs(10))).sum()
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_advance_injective_smoke(self, rng):
        m = random_rnn_nade(rng, 6, 5, 4)
        s = mlm_initial_state(m)
        a = mlm_advance(m, s, np.array([1.0, 0, 0, 0, 0, 0]))
        b = mlm_advance(m, s, np.array([0.0, 1, 0, 0, 0, 0]))
        assert not np.allclose(a.hidden, b.hidden)

    def test_two_path_sequence_likelihood(self, rng):
        m = random_rnn_nade(rng, 6, 5, 4)
        ys = (rng.random((7, 6)) < 0.5).astype(float)
        state = mlm_initial_state(m)
        stepwise = 0.0
        for y in ys:
            stepwise += mlm_conditional(m, state).log_prob(y)
            state = mlm_advance(m, state, y)
        monolithic = -m.sequence_nll(ys) * ys.shape[0]
        assert stepwise == pytest.approx(monolithic, abs=1e-12)

    def test_chunking_invariance(self, rng):
        m = random_rnn_nade(rng, 6, 5, 4)
        ys = (rng.random((9, 6)) < 0.5).astype(float)

        def run(splits):
            state = mlm_initial_state(m)
            for chunk in np.split(ys, splits):
                for y in chunk:
                    state = mlm_advance(m, state, y)
            return state

        a = run([3])
        b = run([2, 5, 8])
        np.testing.assert_allclose(a.hidden, b.hidden, atol=1e-15)
        np.testing.assert_array_equal(a.last_frame, b.last_frame)


class TestTraining:
    def test_gradient_check_reduced_sizes(self, rng):
        m = random_rnn_nade(rng, 6, 8, 7)
        ys = (rng.random((5, 6)) < 0.5).astype(float)
        _, grads = m.loss_and_grads(ys)
        params = m.params()
        eps = 1e-5
        numeric = {}
        for name, p in params.items():
            flat = p.reshape(-1)
            probes = []
            for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                hi = m.sequence_nll(ys)
                flat[i] = orig - eps
                lo = m.sequence_nll(ys)
                flat[i] = orig
                probes.append((int(i), (hi - lo) / (2 * eps)))
            numeric[name] = probes
        assert max_rel_error(grads, numeric) < 1e-4

    def test_memorizes_alternating_chords(self):
        rng = np.random.default_rng(3)
        a = np.zeros(88)
        a[[39, 43, 46]] = 1.0
        b = np.zeros(88)
        b[[41, 45, 48]] = 1.0
        seq = np.array([a, b] * 30)
        model, log = train_mlm([seq] * 4, [seq], n_rnn=24, n_nade=24, seed=1,
                               lr0=0.2, horizon=20000, subsequence=20,
                               max_epochs=120)
        bits = model.sequence_nll(seq) / np.log(2)
        assert bits < 0.1

    def test_log_bookkeeping(self, rng):
        seqs = [(rng.random((30, 88)) < 0.1).astype(float) for _ in range(3)]
        model, log = train_mlm(seqs[:2], seqs[2:], n_rnn=8, n_nade=8, seed=0,
                               max_epochs=5, patience=2)
        assert log.valid_nll[log.best_epoch] == min(log.valid_nll)
        assert all(np.isfinite(log.valid_nll))

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_mlm([], [], n_rnn=4, n_nade=4)


class TestSerialization:
    def test_save_load_round_trip(self, tmp_path, rng):
        m = random_rnn_nade(rng, 88, 12, 10)
        path = tmp_path / "mlm.psnn"
        m.save(path)
        back = RnnNade.load(path)
        for (k1, v1), (k2, v2) in zip(sorted(m.params().items()),
                                      sorted(back.params().items())):
            assert k1 == k2
            np.testing.assert_array_equal(v1, v2)
        ys = (rng.random((4, 88)) < 0.2).astype(float)
        assert m.sequence_nll(ys) == back.sequence_nll(ys)
