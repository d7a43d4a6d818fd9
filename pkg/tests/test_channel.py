"""Channel construction, mutual information, Blahut-Arimoto and the
path-counting closed form, cross-checked against independent oracles."""

import numpy as np
import pytest

from empowerd.channel import (
    DiscreteChannel,
    ba_step_from_variational,
    blahut_arimoto,
    build_channel,
    channel_from_csv,
    channel_to_csv,
    mutual_information,
    path_count_empowerment,
    path_count_from_channel,
    posterior,
    reachable_state_counts,
    terminal_marginal,
    variational_bound,
)
from empowerd.gridworld import (
    Action,
    EnumerationError,
    box_room,
    cross_room,
    empty_room,
    enumerate_states,
    initial_state,
    key_door,
    rollout,
    two_rooms,
)


def binary_entropy_nats(p):
    """Oracle: closed-form H2(p) in nats."""
    return -p * np.log(p) - (1 - p) * np.log(1 - p)


def bsc(p):
    return DiscreteChannel.from_matrix(np.array([[1 - p, p], [p, 1 - p]]))


def random_channel(rng, n_rows, n_cols):
    probs = rng.gamma(1.0, size=(n_rows, n_cols))
    return DiscreteChannel.from_matrix(probs / probs.sum(axis=1, keepdims=True))


def random_source(rng, n):
    w = rng.gamma(1.0, size=n)
    return w / w.sum()


def random_decoder(rng, n_rows, n_cols):
    q = rng.gamma(1.0, size=(n_rows, n_cols))
    return q / q.sum(axis=0, keepdims=True)


def textbook_ba_update(probs, w):
    """Oracle: one linear-space Blahut-Arimoto source update, written
    independently of the library's log-space implementation."""
    r = w @ probs
    c = np.ones(probs.shape[0])
    for i in range(probs.shape[0]):
        mask = probs[i] > 0
        c[i] = np.exp(np.sum(probs[i, mask] * np.log(probs[i, mask] / r[mask])))
    out = w * c
    return out / out.sum()


class TestBuildChannel:
    def test_one_step_from_center(self):
        spec = empty_room(5, 5)
        start = initial_state(spec, agent=(2, 2))
        ch = build_channel(spec, start, 1)
        assert ch.probs.shape == (5, 5)
        assert ch.is_deterministic()
        # oracle: each row's point mass must sit on the rollout terminal
        for i, seq in enumerate(ch.sequences):
            terminal = rollout(spec, start, seq)
            assert ch.probs[i, ch.states.index(terminal)] == 1.0

    def test_corner_aliasing(self):
        spec = empty_room(5, 5)
        ch = build_channel(spec, initial_state(spec, agent=(1, 1)), 1)
        assert ch.probs.shape == (5, 3)  # 5 rows, only 3 reachable states

    def test_zero_horizon(self):
        spec = empty_room(5, 5)
        start = initial_state(spec, agent=(2, 2))
        ch = build_channel(spec, start, 0)
        assert ch.probs.shape == (1, 1)
        assert ch.states == (start,)

    def test_cap(self):
        spec = empty_room(5, 5)
        with pytest.raises(EnumerationError):
            build_channel(spec, initial_state(spec), 7)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            DiscreteChannel.from_matrix(np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_csv_round_trip(self, tmp_path):
        spec = empty_room(5, 5)
        ch = build_channel(spec, initial_state(spec, agent=(2, 2)), 2)
        path = str(tmp_path / "channel.csv")
        channel_to_csv(ch, path)
        again = channel_from_csv(path)
        np.testing.assert_array_equal(ch.probs, again.probs)


class TestMutualInformation:
    def test_identical_rows_give_zero(self):
        ch = DiscreteChannel.from_matrix(np.tile([0.3, 0.7], (4, 1)))
        assert mutual_information(ch, np.full(4, 0.25)) == 0.0

    def test_identity_channel_uniform_source(self):
        ch = DiscreteChannel.from_matrix(np.eye(5))
        assert mutual_information(ch, np.full(5, 0.2)) == pytest.approx(np.log(5))

    def test_bsc_closed_form(self):
        # oracle: C-style MI of a BSC with uniform input = ln2 - H2(p)
        value = mutual_information(bsc(0.1), np.array([0.5, 0.5]))
        expected = np.log(2) - binary_entropy_nats(0.1)
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(0.368064, abs=1e-6)

    def test_dimension_mismatch(self):
        ch = DiscreteChannel.from_matrix(np.eye(3))
        with pytest.raises(ValueError):
            mutual_information(ch, np.full(4, 0.25))


class TestBlahutArimoto:
    def test_constant_channel(self):
        ch = DiscreteChannel.from_matrix(np.tile([0.0, 1.0, 0.0], (5, 1)))
        res = blahut_arimoto(ch)
        assert res.capacity == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(res.source, 0.2)
        assert res.converged

    def test_identity_channel(self):
        res = blahut_arimoto(DiscreteChannel.from_matrix(np.eye(5)))
        assert res.capacity == pytest.approx(np.log(5), abs=1e-12)
        np.testing.assert_allclose(res.source, 0.2)

    def test_bsc_capacity(self):
        res = blahut_arimoto(bsc(0.1), tol=1e-12)
        expected = np.log(2) - binary_entropy_nats(0.1)
        assert res.capacity == pytest.approx(expected, abs=1e-10)

    def test_history_nondecreasing(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            ch = random_channel(rng, int(rng.integers(2, 9)), int(rng.integers(2, 7)))
            res = blahut_arimoto(ch, tol=1e-11)
            diffs = np.diff(res.capacity_history)
            assert np.all(diffs > -1e-10)
            assert res.capacity <= np.log(min(ch.probs.shape)) + 1e-9

    def test_source_achieves_capacity(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            ch = random_channel(rng, 6, 4)
            res = blahut_arimoto(ch, tol=1e-12)
            assert mutual_information(ch, res.source) == pytest.approx(
                res.capacity, abs=1e-8
            )


class TestPathCounting:
    def test_zero_horizon(self):
        spec = empty_room(5, 5)
        value, source = path_count_empowerment(spec, initial_state(spec), 0)
        assert value == 0.0
        np.testing.assert_allclose(source, [1.0])

    def test_interior_cell_one_step(self):
        # oracle: enumeration; an interior cell reaches 5 distinct cells
        spec = empty_room(7, 7)
        value, _ = path_count_empowerment(spec, initial_state(spec, agent=(3, 3)), 1)
        assert value == pytest.approx(np.log(5))

    def test_corner_one_step(self):
        # oracle: enumeration; a corner reaches stay + two legal moves
        spec = empty_room(7, 7)
        value, _ = path_count_empowerment(spec, initial_state(spec, agent=(1, 1)), 1)
        assert value == pytest.approx(np.log(3))

    def test_matches_channel_variant(self):
        spec = two_rooms()
        start = initial_state(spec, agent=(3, 2))
        value, source = path_count_empowerment(spec, start, 2)
        ch = build_channel(spec, start, 2)
        value2, source2 = path_count_from_channel(ch)
        assert value == pytest.approx(value2, abs=1e-14)
        np.testing.assert_allclose(source, source2)

    def test_rejects_noisy_channel(self):
        with pytest.raises(ValueError):
            path_count_from_channel(bsc(0.1))

    def test_dp_counts_match_enumeration(self):
        # oracle: brute-force rollout enumeration of all sequences
        spec = key_door()
        start = initial_state(spec)
        for horizon in (1, 2, 3):
            counts = reachable_state_counts(spec, start, horizon)
            ch = build_channel(spec, start, horizon)
            brute = {}
            for i in range(ch.n_sequences):
                terminal = ch.states[int(np.argmax(ch.probs[i]))]
                brute[terminal] = brute.get(terminal, 0) + 1
            assert counts == brute


class TestTerminalMarginal:
    def test_point_mass_source_selects_row(self):
        spec = empty_room(5, 5)
        ch = build_channel(spec, initial_state(spec, agent=(2, 2)), 1)
        w = np.zeros(5)
        w[2] = 1.0
        np.testing.assert_array_equal(terminal_marginal(ch, w), ch.probs[2])

    def test_uniform_on_identity(self):
        ch = DiscreteChannel.from_matrix(np.eye(4))
        np.testing.assert_allclose(terminal_marginal(ch, np.full(4, 0.25)), 0.25)

    def test_path_count_source_gives_uniform_marginal(self):
        # Each reachable state gets exactly 1/n(s) mass.
        spec = two_rooms()
        for agent in [(1, 1), (3, 2), (4, 2)]:
            start = initial_state(spec, agent=agent)
            for horizon in (1, 2, 3):
                ch = build_channel(spec, start, horizon)
                _, source = path_count_empowerment(spec, start, horizon)
                marginal = terminal_marginal(ch, source)
                assert marginal.max() - marginal.min() < 1e-12


class TestVariationalBound:
    def test_exact_posterior_at_optimum_is_tight(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            ch = random_channel(rng, 5, 4)
            res = blahut_arimoto(ch, tol=1e-14, max_iter=20_000)
            q = posterior(ch, res.source)
            bound = variational_bound(ch, res.source, q)
            assert bound <= res.capacity + 1e-9
            assert bound == pytest.approx(res.capacity, abs=1e-7)

    def test_uniform_decoder(self):
        # H(w) - log(#sequences): zero exactly for the uniform source,
        # negative otherwise.
        rng = np.random.default_rng(4)
        ch = random_channel(rng, 6, 4)
        q = np.full((6, 4), 1.0 / 6.0)
        assert variational_bound(ch, np.full(6, 1 / 6), q) == pytest.approx(0.0, abs=1e-12)
        for _ in range(10):
            w = random_source(rng, 6)
            assert variational_bound(ch, w, q) <= 1e-12

    def test_never_exceeds_capacity(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            ch = random_channel(rng, 4, 4)
            capacity = blahut_arimoto(ch, tol=1e-12).capacity
            w = random_source(rng, 4)
            q = random_decoder(rng, 4, 4)
            assert variational_bound(ch, w, q) <= capacity + 1e-9

    def test_rejects_unnormalized_decoder(self):
        ch = DiscreteChannel.from_matrix(np.eye(3))
        with pytest.raises(ValueError):
            variational_bound(ch, np.full(3, 1 / 3), np.full((3, 3), 0.5))


class TestBAStepFromVariational:
    def test_matches_textbook_update_at_beta_one(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            ch = random_channel(rng, int(rng.integers(2, 9)), int(rng.integers(2, 7)))
            w = random_source(rng, ch.n_sequences)
            ours = ba_step_from_variational(ch, w, beta=1.0)
            oracle = textbook_ba_update(ch.probs, w)
            np.testing.assert_allclose(ours, oracle, atol=1e-10, rtol=0)

    def test_deterministic_channel_uniform_start(self):
        # one update from uniform weights sequences by 1/(paths to terminal)
        spec = empty_room(6, 6)
        start = initial_state(spec, agent=(1, 1))
        ch = build_channel(spec, start, 2)
        w = np.full(ch.n_sequences, 1.0 / ch.n_sequences)
        stepped = ba_step_from_variational(ch, w, beta=1.0)
        cols = np.argmax(ch.probs, axis=1)
        inverse_counts = 1.0 / np.bincount(cols)[cols]
        np.testing.assert_allclose(
            stepped, inverse_counts / inverse_counts.sum(), atol=1e-12
        )

    def test_identical_rows(self):
        # All rows equal: the divergence term vanishes, so the update is the
        # identity. From the uniform start it stays uniform; any source is a
        # fixed point (the channel carries no information).
        ch = DiscreteChannel.from_matrix(np.tile([0.25, 0.75], (4, 1)))
        np.testing.assert_allclose(
            ba_step_from_variational(ch, np.full(4, 0.25), beta=1.0), 0.25, atol=1e-12
        )
        rng = np.random.default_rng(8)
        w = random_source(rng, 4)
        np.testing.assert_allclose(
            ba_step_from_variational(ch, w, beta=1.0), w, atol=1e-12
        )


class TestExactOracleEquivalence:
    def test_ba_equals_path_count_on_deterministic_envs(self):
        # capacity == log(#reachable states) at every start of small rooms
        for spec in [empty_room(6, 6), two_rooms(7, 5, gap_rows=(2,))]:
            for s in enumerate_states(spec):
                for horizon in (1, 2):
                    ch = build_channel(spec, s, horizon)
                    res = blahut_arimoto(ch)
                    exact, _ = path_count_empowerment(spec, s, horizon)
                    assert abs(res.capacity - exact) < 1e-6
