"""Controller heads: softmax arithmetic, sampling statistics, gradients."""

import math

import numpy as np
import pytest

from mixreg import controller as ctl
from mixreg.mixing import MixPolicy
from mixreg.neighbors import KnnOptions

OPTS5 = KnnOptions(values=(0, 1, 2, 4, 8))


def tiny_controller(n_examples=5, options=OPTS5, hidden=(8, 8), seed=0):
    return ctl.create_controller(n_examples, options, hidden=hidden, input_len=4, seed=seed)


def zeroed(net):
    for p in net.body.params():
        p[:] = 0.0
    return net


class TestPolicyLogits:
    def test_zero_weight_net_is_uniform(self):
        net = zeroed(tiny_controller())
        p = ctl.softmax_rows(ctl.policy_logits(net))
        np.testing.assert_allclose(p, np.full((5, 5), 0.2), atol=1e-15)

    def test_softmax_arithmetic(self):
        logits = np.array([[math.log(2.0), 0.0, 0.0]])
        np.testing.assert_allclose(ctl.softmax_rows(logits), [[0.5, 0.25, 0.25]], atol=1e-12)

    def test_rows_sum_to_one(self):
        net = tiny_controller(seed=3)
        p = ctl.softmax_rows(ctl.policy_logits(net))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(p > 0)

    def test_shape(self):
        net = tiny_controller(n_examples=7)
        assert ctl.policy_logits(net).shape == (7, 5)


class TestSamplePolicy:
    def test_uniform_net_log_prob(self):
        opts9 = KnnOptions(values=tuple([0] + [2**i for i in range(8)]))
        net = zeroed(tiny_controller(n_examples=4, options=opts9))
        sample = ctl.sample_policy(net, seed=0)
        np.testing.assert_allclose(sample.per_example_log_prob, -math.log(9), atol=1e-12)
        assert abs(sample.log_prob - 4 * -math.log(9)) < 1e-9

    def test_log_prob_is_sum_of_per_example(self):
        net = tiny_controller(seed=5)
        sample = ctl.sample_policy(net, seed=11)
        assert abs(sample.log_prob - sample.per_example_log_prob.sum()) < 1e-9

    def test_saturated_head_always_chosen(self):
        net = zeroed(tiny_controller(n_examples=1))
        net.body.layers[-1].bias[2] = 20.0  # option index 2 dominates
        hits = sum(
            ctl.sample_policy(net, seed=s).policy.choices[0] == 2 for s in range(10000)
        )
        assert hits / 10000 > 0.999

    def test_frequencies_match_softmax_within_multinomial_bounds(self):
        net = tiny_controller(n_examples=2, options=KnnOptions(values=(0, 1, 2)),
                              hidden=(6,), seed=9)
        p = ctl.softmax_rows(ctl.policy_logits(net))
        n = 100000
        counts = np.zeros((2, 3))
        for s in range(n):
            choices = ctl.sample_policy(net, seed=s).policy.choices
            counts[0, choices[0]] += 1
            counts[1, choices[1]] += 1
        freq = counts / n
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) < 3 * sigma)

    def test_entropy_of_uniform_heads(self):
        net = zeroed(tiny_controller(n_examples=3))
        sample = ctl.sample_policy(net, seed=0)
        assert abs(sample.entropy - 3 * math.log(5)) < 1e-12


class TestLogProbOf:
    def test_consistent_with_sample(self):
        net = tiny_controller(seed=6)
        sample = ctl.sample_policy(net, seed=2)
        assert abs(ctl.log_prob_of(net, sample.policy) - sample.log_prob) < 1e-12

    def test_uniform_net_any_policy(self):
        net = zeroed(tiny_controller(n_examples=6))
        policy = MixPolicy(choices=np.array([0, 1, 2, 3, 4, 0]), options=OPTS5)
        assert abs(ctl.log_prob_of(net, policy) - 6 * -math.log(5)) < 1e-12

    def test_matches_softmax_recomputation_after_perturbation(self):
        net = tiny_controller(seed=7)
        net.body.layers[0].weights += 0.1
        policy = ctl.sample_policy(net, seed=1).policy
        logits = ctl.policy_logits(net)
        # oracle: direct softmax
        expected = 0.0
        for i, c in enumerate(policy.choices):
            row = logits[i]
            expected += row[c] - math.log(np.exp(row - row.max()).sum()) - row.max()
        assert abs(ctl.log_prob_of(net, policy) - expected) < 1e-9

    def test_length_mismatch(self):
        net = tiny_controller(n_examples=4)
        policy = MixPolicy(choices=np.zeros(5, dtype=int), options=OPTS5)
        with pytest.raises(ValueError, match="length"):
            ctl.log_prob_of(net, policy)


class TestModePolicy:
    def test_peak_options(self):
        net = zeroed(tiny_controller(n_examples=3))
        out = net.body.layers[-1]
        out.bias[0 * 5 + 3] = 5.0
        out.bias[1 * 5 + 1] = 5.0
        out.bias[2 * 5 + 4] = 5.0
        np.testing.assert_array_equal(ctl.mode_policy(net).choices, [3, 1, 4])

    def test_uniform_ties_resolve_to_zero(self):
        net = zeroed(tiny_controller(n_examples=4))
        policy = ctl.mode_policy(net)
        np.testing.assert_array_equal(policy.k_values, [0, 0, 0, 0])

    def test_matches_argmax_oracle(self):
        net = tiny_controller(seed=8)
        logits = ctl.policy_logits(net)
        np.testing.assert_array_equal(ctl.mode_policy(net).choices, logits.argmax(axis=1))

    def test_invariant_under_row_shift(self):
        net = tiny_controller(seed=9)
        before = ctl.mode_policy(net).choices.copy()
        # shifting every logit of every head by a constant: add to output bias
        net.body.layers[-1].bias += 2.5
        np.testing.assert_array_equal(ctl.mode_policy(net).choices, before)


class TestLogProbGradient:
    def test_matches_finite_differences(self):
        net = tiny_controller(n_examples=5, options=KnnOptions(values=(0, 2, 4)),
                              hidden=(8, 8), seed=10)
        policy = ctl.sample_policy(net, seed=3).policy

        def loss_fn():
            return ctl.log_prob_of(net, policy)

        # analytic: d log softmax / d logits = onehot - p, then through the body
        logits = ctl.policy_logits(net)
        p = ctl.softmax_rows(logits)
        d_logits = -p
        d_logits[np.arange(5), policy.choices] += 1.0
        grads = ctl.logits_gradient_to_params(net, d_logits)
        analytic = [g for lg in grads for g in lg.arrays()]

        h = 1e-5
        for arr, g in zip(net.body.params(), analytic):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + h
                fp = loss_fn()
                arr[i] = orig - h
                fm = loss_fn()
                arr[i] = orig
                fd = (fp - fm) / (2 * h)
                denom = max(abs(fd), abs(g[i]), 1e-8)
                assert abs(fd - g[i]) / denom < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = tiny_controller(seed=12)
        path = tmp_path / "controller.json"
        ctl.save_controller(net, path)
        loaded = ctl.load_controller(path)
        assert loaded.n_examples == net.n_examples
        assert loaded.options.values == net.options.values
        np.testing.assert_array_equal(
            ctl.policy_logits(loaded), ctl.policy_logits(net)
        )
