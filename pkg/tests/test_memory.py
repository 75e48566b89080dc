import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmkdda.data import Batch, one_hot
from mmkdda.memory import EpisodicMemory

K = 4


def make_batch(values, task, num_classes=K):
    """One 1x2x2 image per value, filled with that value; class = value % K."""
    values = list(values)
    images = np.stack([np.full((1, 2, 2), float(v)) for v in values])
    labels = one_hot([int(v) % num_classes for v in values], num_classes)
    return Batch(images=images, labels=labels,
                 task_ids=np.full(len(values), task, dtype=np.int64), role="current")


def stored_values(mem, task):
    return [float(img[0, 0, 0]) for img, _ in mem.slots.get(task, [])]


class TestRingWrites:
    def test_wraparound_hand_simulation(self):
        # capacity 3: write e1,e2 then e3,e4 -> ring holds [e4, e2, e3]
        mem = EpisodicMemory(3)
        mem.write(0, make_batch([1, 2], task=0))
        mem.write(0, make_batch([3, 4], task=0))
        assert stored_values(mem, 0) == [4.0, 2.0, 3.0]
        assert mem.seen_count(0) == 4

    def test_exact_capacity_retained_in_order(self):
        mem = EpisodicMemory(3)
        mem.write(1, make_batch([5, 6, 7], task=1))
        assert stored_values(mem, 1) == [5.0, 6.0, 7.0]

    def test_capacity_zero_is_noop(self):
        mem = EpisodicMemory(0)
        mem.write(0, make_batch([1, 2, 3], task=0))
        assert len(mem) == 0
        out = mem.sample(10, np.random.default_rng(0))
        assert len(out) == 0

    def test_mixed_task_ids_rejected(self):
        mem = EpisodicMemory(3)
        batch = make_batch([1, 2], task=0)
        batch.task_ids[1] = 1
        with pytest.raises(ValueError, match="mixes task ids"):
            mem.write(0, batch)

    @given(
        capacity=st.integers(1, 7),
        writes=st.lists(st.integers(1, 5), min_size=1, max_size=12),
    )
    @settings(max_examples=60, deadline=None)
    def test_ring_matches_list_oracle(self, capacity, writes):
        # Oracle: a plain list overwritten modulo capacity.
        mem = EpisodicMemory(capacity)
        oracle = []
        cursor = 0
        value = 0
        for size in writes:
            batch_values = list(range(value, value + size))
            value += size
            mem.write(0, make_batch(batch_values, task=0))
            for v in batch_values:
                if len(oracle) < capacity:
                    oracle.append(float(v))
                else:
                    oracle[cursor] = float(v)
                cursor = (cursor + 1) % capacity
        assert stored_values(mem, 0) == oracle
        assert len(mem) <= capacity  # capacity invariant

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(1, 4)), min_size=1, max_size=15))
    @settings(max_examples=50, deadline=None)
    def test_capacity_invariant_across_tasks(self, schedule):
        mem = EpisodicMemory(4)
        counter = 0
        for task, size in schedule:
            mem.write(task, make_batch(range(counter, counter + size), task=task))
            counter += size
            for t in mem.slots:
                assert mem.count(t) <= 4


class TestSampling:
    def test_empty_memory_returns_empty_and_skips_rng(self):
        mem = EpisodicMemory(5)
        rng = np.random.default_rng(0)
        before = rng.bit_generator.state
        out = mem.sample(10, rng)
        assert len(out) == 0
        assert rng.bit_generator.state == before

    def test_k_zero_skips_rng(self):
        mem = EpisodicMemory(5)
        mem.write(0, make_batch([1, 2], task=0))
        rng = np.random.default_rng(0)
        before = rng.bit_generator.state
        assert len(mem.sample(0, rng)) == 0
        assert rng.bit_generator.state == before

    def test_undersized_store_returns_everything(self):
        mem = EpisodicMemory(10)
        mem.write(0, make_batch([1, 2, 3, 4, 5], task=0))
        out = mem.sample(5, np.random.default_rng(3))
        assert sorted(img[0, 0, 0] for img in out.images) == [1.0, 2.0, 3.0, 4.0, 5.0]

    def test_no_duplicates_within_one_call(self):
        mem = EpisodicMemory(20)
        mem.write(0, make_batch(range(20), task=0))
        rng = np.random.default_rng(9)
        for _ in range(30):
            out = mem.sample(10, rng)
            values = [img[0, 0, 0] for img in out.images]
            assert len(set(values)) == len(values)

    def test_deterministic_given_rng_state(self):
        mem = EpisodicMemory(10)
        mem.write(0, make_batch(range(10), task=0))
        a = mem.sample(4, np.random.default_rng(42))
        b = mem.sample(4, np.random.default_rng(42))
        assert np.array_equal(a.images, b.images)

    def test_uniformity_chi_square_and_three_sigma(self):
        # 100 stored across 2 tasks, k=10, 10^4 trials: per-example
        # inclusion is Binomial(10^4, 0.1); the pooled counts must pass a
        # chi-square goodness-of-fit test against uniform and every
        # per-example frequency must sit within 3 sigma.
        mem = EpisodicMemory(50)
        mem.write(0, make_batch(range(50), task=0))
        mem.write(1, make_batch(range(50, 100), task=1))
        rng = np.random.default_rng(42)
        counts = np.zeros(100)
        trials = 10_000
        for _ in range(trials):
            out = mem.sample(10, rng)
            for img in out.images:
                counts[int(img[0, 0, 0])] += 1
        expected = trials * 10 / 100
        chi2 = np.sum((counts - expected) ** 2 / expected)
        assert chi2 < 148.23  # 99.9th percentile of chi-square with 99 dof
        sigma = np.sqrt(trials * 0.1 * 0.9)
        assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_sample_pools_all_tasks(self):
        mem = EpisodicMemory(5)
        mem.write(0, make_batch([0, 1], task=0))
        mem.write(2, make_batch([2, 3], task=2))
        out = mem.sample(4, np.random.default_rng(1))
        assert sorted(set(out.task_ids.tolist())) == [0, 2]
