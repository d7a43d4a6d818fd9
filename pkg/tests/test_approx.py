"""Dense nets, autoregressive policies, Adagrad and snapshots.

Gradient assertions compare analytic backward passes against central
finite differences; rectifier kinks are avoided by resampling draws whose
activation pattern flips within the probe step.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empowerd.approx import (
    Adagrad,
    ARPolicy,
    DenseNet,
    IDENTITY,
    RELU,
    ar_enumerate_logprobs,
    ar_logprob,
    ar_logprob_backward,
    ar_logprob_batch,
    ar_sample,
    backward,
    forward,
    gradient_check,
    init_ar_policy,
    init_dense,
    load_arrays,
    save_arrays,
)


def make_net(rng, dims=(4, 6, 3), activations=(RELU, IDENTITY)):
    return init_dense(list(dims), list(activations), rng)


class TestForward:
    def test_zero_net_gives_zero(self):
        net = DenseNet(
            [np.zeros((3, 4))], [np.zeros(3)], [RELU]
        )
        np.testing.assert_array_equal(forward(net, np.ones(4)), np.zeros(3))

    def test_identity_layer(self):
        net = DenseNet([np.eye(4)], [np.zeros(4)], [IDENTITY])
        x = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_array_equal(forward(net, x), x)

    def test_hand_computed_matrix(self):
        net = DenseNet(
            [np.array([[1.0, 2.0], [3.0, 4.0]])], [np.zeros(2)], [RELU]
        )
        np.testing.assert_array_equal(forward(net, np.ones(2)), [3.0, 7.0])

    def test_batch_matches_single(self):
        # same values up to BLAS summation order between GEMM shapes
        rng = np.random.default_rng(0)
        net = make_net(rng)
        xs = rng.normal(size=(5, 4))
        batched = forward(net, xs)
        for i in range(5):
            np.testing.assert_allclose(batched[i], forward(net, xs[i]), rtol=1e-13)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        net = make_net(rng)
        with pytest.raises(ValueError):
            forward(net, np.ones(5))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        net = make_net(rng)
        x = rng.normal(size=4)
        assert np.array_equal(forward(net, x), forward(net, x))


class TestBackward:
    def test_linear_gradient_is_outer_product(self):
        net = DenseNet([np.zeros((1, 3))], [np.zeros(1)], [IDENTITY])
        x = np.array([1.0, 2.0, 3.0])
        grads, dx = backward(net, x, np.ones(1))
        np.testing.assert_array_equal(grads[0], x[None, :])
        np.testing.assert_array_equal(grads[1], [1.0])
        np.testing.assert_array_equal(dx, np.zeros(3))

    def test_dead_rectifier_blocks_gradient(self):
        net = DenseNet(
            [np.array([[-1.0]]), np.array([[1.0]])],
            [np.zeros(1), np.zeros(1)],
            [RELU, IDENTITY],
        )
        grads, dx = backward(net, np.array([2.0]), np.ones(1))
        np.testing.assert_array_equal(grads[0], [[0.0]])
        np.testing.assert_array_equal(dx, [0.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for draw in range(100):
            net = make_net(rng)
            x = rng.normal(size=4)
            upstream = rng.normal(size=3)

            def loss():
                return float(forward(net, x) @ upstream)

            grads, _ = backward(net, x, upstream)
            err = gradient_check(loss, net.params(), grads, rng, n_coords=4)
            assert err < 1e-5, f"draw {draw}: rel err {err}"

    def test_input_gradient_matches_fd(self):
        rng = np.random.default_rng(43)
        net = make_net(rng)
        x = rng.normal(size=4)
        upstream = rng.normal(size=3)
        _, dx = backward(net, x, upstream)

        def loss():
            return float(forward(net, x) @ upstream)

        err = gradient_check(loss, [x], [dx], rng, n_coords=4)
        assert err < 1e-5


class TestARPolicy:
    def test_zero_logits_are_uniform(self):
        net = DenseNet(
            [np.zeros((5, 5 + 2))], [np.zeros(5)], [IDENTITY]
        )
        pol = ARPolicy(n_actions=5, horizon=3, cond_dim=2, net=net)
        lp = ar_logprob(pol, np.zeros(2), [0, 3, 4])
        assert lp == pytest.approx(3 * np.log(1 / 5))

    def test_single_step_hand_softmax(self):
        # logits [0, ln3, 0, 0, 0] -> action 1 has probability 3/7
        bias = np.array([0.0, np.log(3.0), 0.0, 0.0, 0.0])
        net = DenseNet([np.zeros((5, 5 + 1))], [bias], [IDENTITY])
        pol = ARPolicy(n_actions=5, horizon=1, cond_dim=1, net=net)
        assert ar_logprob(pol, np.zeros(1), [1]) == pytest.approx(np.log(3 / 7))

    def test_normalization_exhaustive(self):
        rng = np.random.default_rng(2)
        for horizon in (1, 2, 3, 4):
            pol = init_ar_policy(3, horizon, 4, hidden=8, rng=rng)
            cond = rng.normal(size=4)
            total = np.exp(ar_enumerate_logprobs(pol, cond)).sum()
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_logprobs_nonpositive(self):
        rng = np.random.default_rng(3)
        pol = init_ar_policy(5, 3, 4, hidden=8, rng=rng)
        assert np.all(ar_enumerate_logprobs(pol, rng.normal(size=4)) <= 0)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(44)
        for draw in range(100):
            pol = init_ar_policy(4, 2, 3, hidden=6, rng=rng)
            cond = rng.normal(size=(2, 3))
            seqs = rng.integers(0, 4, size=(2, 2))
            upstream = rng.normal(size=2)

            def loss():
                return float(ar_logprob_batch(pol, cond, seqs) @ upstream)

            grads, dcond = ar_logprob_backward(pol, cond, seqs, upstream)
            err = gradient_check(loss, pol.net.params(), grads, rng, n_coords=4)
            assert err < 1e-5, f"draw {draw}: rel err {err}"
            err_c = gradient_check(loss, [cond], [dcond], rng, n_coords=2)
            assert err_c < 1e-5

    def test_sampling_frequencies_match_logprob(self):
        rng = np.random.default_rng(5)
        pol = init_ar_policy(5, 1, 2, hidden=6, rng=rng)
        cond = rng.normal(size=2)
        probs = np.exp(ar_enumerate_logprobs(pol, cond))
        n = 100_000
        counts = np.zeros(5)
        for _ in range(n):
            counts[ar_sample(pol, cond, rng)[0]] += 1
        freqs = counts / n
        stderr = np.sqrt(probs * (1 - probs) / n)
        assert np.all(np.abs(freqs - probs) <= 3 * stderr + 1e-9)

    def test_near_deterministic_sampling(self):
        bias = np.zeros(5)
        bias[2] = 20.0
        net = DenseNet([np.zeros((5, 5 + 1))], [bias], [IDENTITY])
        pol = ARPolicy(n_actions=5, horizon=2, cond_dim=1, net=net)
        rng = np.random.default_rng(6)
        draws = [ar_sample(pol, np.zeros(1), rng) for _ in range(2000)]
        hit = sum(d == (2, 2) for d in draws) / len(draws)
        assert hit >= 0.999

    def test_seeded_sampling_reproducible(self):
        pol = init_ar_policy(5, 3, 2, hidden=6, rng=np.random.default_rng(7))
        cond = np.zeros(2)
        a = ar_sample(pol, cond, np.random.default_rng(123))
        b = ar_sample(pol, cond, np.random.default_rng(123))
        assert a == b

    def test_sequence_length_checked(self):
        pol = init_ar_policy(5, 3, 2, hidden=6, rng=np.random.default_rng(8))
        with pytest.raises(ValueError):
            ar_logprob(pol, np.zeros(2), [0, 1])


class TestAdagrad:
    def test_first_step_size(self):
        p = np.array([1.0])
        opt = Adagrad([p], lr=0.1)
        opt.update([p], [np.array([1.0])])
        assert p[0] == pytest.approx(1.0 - 0.1, abs=1e-8)

    def test_zero_gradient_no_move(self):
        p = np.array([1.0, -2.0])
        opt = Adagrad([p], lr=0.1)
        opt.update([p], [np.zeros(2)])
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_step_shrinks_like_inverse_sqrt(self):
        # constant unit gradient: step t has magnitude ~ lr / sqrt(t)
        p = np.array([0.0])
        opt = Adagrad([p], lr=1.0)
        previous = p[0]
        sizes = []
        for _ in range(100):
            opt.update([p], [np.array([1.0])])
            sizes.append(previous - p[0])
            previous = p[0]
        expected = 1.0 / np.sqrt(np.arange(1, 101))
        np.testing.assert_allclose(sizes, expected, rtol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_accumulators_never_decrease(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=4)
        opt = Adagrad([p], lr=0.05)
        last = opt.accum[0].copy()
        for _ in range(10):
            opt.update([p], [rng.normal(size=4)])
            assert np.all(opt.accum[0] >= last)
            last = opt.accum[0].copy()

    def test_shape_mismatch(self):
        p = np.ones(3)
        opt = Adagrad([p], lr=0.1)
        with pytest.raises(ValueError):
            opt.update([p], [np.ones(4)])


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=7), np.array(2.5)]
        path = str(tmp_path / "params.bin")
        save_arrays(path, arrays)
        loaded = load_arrays(path)
        assert len(loaded) == 3
        for a, b in zip(arrays, loaded):
            np.testing.assert_array_equal(a, b)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_arrays(str(path))

    def test_layout_is_little_endian_float64(self, tmp_path):
        path = str(tmp_path / "one.bin")
        save_arrays(path, [np.array([1.5, -2.0])])
        raw = open(path, "rb").read()
        assert raw[:4] == b"EPWD"
        # header: version, count, ndim, dim -> payload starts at byte 20
        payload = np.frombuffer(raw[20:], dtype="<f8")
        np.testing.assert_array_equal(payload, [1.5, -2.0])
