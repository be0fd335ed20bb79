import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rudpg.replay import InsufficientDataError, ReplayBuffer, Transition, read_snapshot_csv


def filled(capacity, n, seed=0):
    buf = ReplayBuffer(capacity, 2, 1, seed)
    for i in range(n):
        buf.add([i, -i], [0.1 * i], float(i), [i + 1, -i - 1], i % 7 == 0)
    return buf


class TestInsert:
    def test_fresh_slot(self):
        buf = ReplayBuffer(4, 2, 1, 0)
        slot = buf.insert(Transition(np.ones(2), np.ones(1), 1.0, np.zeros(2), False))
        assert len(buf) == 1 and buf.replay_counts[slot] == 0

    def test_ring_eviction(self):
        buf = filled(2, 2)
        buf.sample(2)
        assert buf.replay_counts.tolist() == [1, 1]
        slot = buf.add([9, 9], [9], 9.0, [9, 9], False)
        assert slot == 0 and buf.replay_counts[0] == 0 and len(buf) == 2
        assert 0 not in buf.replay_count_snapshot()
        assert buf.transition(0).reward == 9.0

    def test_insert_steps_increase(self):
        buf = filled(30, 100)
        steps = list(buf.replay_count_snapshot())
        assert steps == sorted(steps) and len(set(steps)) == len(steps)
        assert steps == list(range(70, 100))

    def test_stored_fields(self):
        buf = filled(10, 8)
        t = buf.transition(3)
        np.testing.assert_array_equal(t.state, [3, -3])
        np.testing.assert_array_equal(t.next_state, [4, -4])
        assert t.reward == 3.0 and t.done is False and t.insert_step == 3
        assert buf.transition(7).done is True


class TestSample:
    def test_exhaustive_draw(self):
        buf = filled(10, 10)
        batch = buf.sample(10)
        assert sorted(batch.indices.tolist()) == list(range(10))
        assert buf.replay_counts.tolist() == [1] * 10

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError, match="insufficient data"):
            filled(10, 3).sample(4)

    def test_same_seed_same_indices(self):
        a, b = filled(50, 50, seed=3), filled(50, 50, seed=3)
        for _ in range(20):
            np.testing.assert_array_equal(a.sample(8).indices, b.sample(8).indices)

    def test_batch_contents_match_slots(self):
        buf = filled(20, 20)
        batch = buf.sample(5)
        np.testing.assert_array_equal(batch.rewards, batch.indices.astype(float))
        np.testing.assert_array_equal(batch.states[:, 0], batch.indices)

    @given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_no_replacement_and_conservation(self, size, n, seed):
        n = min(n, size)
        buf = filled(size, size, seed)
        for _ in range(5):
            idx = buf.sample(n).indices
            assert len(set(idx.tolist())) == n
        assert buf.replay_counts.sum() == 5 * n
        buf.check_conservation(n)

    def test_uniform_mean_counts(self):
        # 10,000 draws of 100 from 1000: every slot expects 1000 hits
        buf = filled(1000, 1000, seed=5)
        for _ in range(10_000):
            buf.sample(100)
        counts = buf.replay_counts.astype(float)
        assert abs(counts.mean() - 1000) / 1000 < 0.05
        # slot hits are Binomial(10000, 0.1); the largest deviation stays well inside 5%
        assert np.abs(counts - 1000).max() / 1000 < 0.2

    def test_uniform_chi_square(self):
        from scipy import stats
        buf = filled(200, 200, seed=9)
        for _ in range(2000):
            buf.sample(20)
        counts = buf.replay_counts
        # per-slot counts over many batches are close to multinomial; chi-square does not reject
        stat, p = stats.chisquare(counts)
        assert p > 0.01

    def test_peek_leaves_counters_and_sampler(self):
        a, b = filled(50, 50, seed=1), filled(50, 50, seed=1)
        a.peek(10, np.random.default_rng(0))
        assert a.replay_counts.sum() == 0
        np.testing.assert_array_equal(a.sample(5).indices, b.sample(5).indices)


class TestSnapshot:
    def test_initially_zero(self):
        assert set(filled(10, 10).replay_count_snapshot().values()) == {0}

    def test_sums(self):
        buf = filled(40, 40)
        buf.sample(7)
        assert sum(buf.replay_count_snapshot().values()) == 7
        for _ in range(9):
            buf.sample(7)
        assert sum(buf.replay_count_snapshot().values()) == 70

    def test_csv_round_trip(self, tmp_path):
        buf = filled(40, 40)
        for _ in range(3):
            buf.sample(11)
        path = tmp_path / "snap.csv"
        buf.write_snapshot_csv(path)
        assert path.read_text().splitlines()[0] == "insert_step,replay_count"
        assert read_snapshot_csv(path) == buf.replay_count_snapshot()

    def test_conservation_tracks_eviction(self):
        buf = filled(10, 10)
        for _ in range(4):
            buf.sample(5)
        for i in range(3):
            buf.add([0, 0], [0], 0.0, [0, 0], False)
        buf.sample(5)
        buf.check_conservation(5)
