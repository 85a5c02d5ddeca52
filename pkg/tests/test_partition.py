"""Sharding, LDA allocation, mirrored test splits, stats, serialization."""

import numpy as np
import pytest

from feddesk.errors import ParameterError, PartitionError
from feddesk.numerics import RngStream
from feddesk.partition import (
    check_disjoint_cover,
    lda_partition,
    load_partition,
    matching_lda_test_partition,
    matching_shard_test_partition,
    partition_stats,
    save_partition,
    shard_partition,
)


def balanced_labels(n_classes, per_class, seed=0):
    labels = np.repeat(np.arange(n_classes), per_class)
    return np.random.default_rng(seed).permutation(labels)


class TestShard:
    def test_cifar_sized_shards(self):
        labels = balanced_labels(10, 5000)
        part = shard_partition(labels, 100, 10, RngStream(0).child("p"))
        sizes = part.sizes()
        assert set(sizes) == {500}
        # every shard holds 50 same-class samples
        stats = partition_stats(part, labels)
        for c in stats.clients:
            assert all(h % 50 == 0 for h in c.histogram)

    def test_tiny_instance_single_class_clients(self):
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        part = shard_partition(labels, 4, 1, RngStream(1).child("p"))
        for idx in part.assignments:
            assert len(idx) == 2
            assert len({int(labels[i]) for i in idx}) == 1

    def test_single_client_gets_everything(self):
        labels = balanced_labels(3, 4)
        part = shard_partition(labels, 1, 3, RngStream(2).child("p"))
        assert part.sizes() == (12,)
        check_disjoint_cover(part, 12)

    def test_max_classes_per_client(self):
        gen = np.random.default_rng(3)
        for trial in range(50):
            n_classes = int(gen.integers(2, 8))
            s = int(gen.integers(1, 4))
            n_clients = int(gen.integers(1, 6))
            per_class = s * n_clients * int(gen.integers(1, 4))
            labels = balanced_labels(n_classes, per_class, seed=trial)
            if (n_classes * per_class) % (n_clients * s) != 0:
                continue
            shard_size = n_classes * per_class // (n_clients * s)
            if per_class % shard_size != 0:
                continue
            part = shard_partition(labels, n_clients, s, RngStream(trial).child("p"))
            for c in partition_stats(part, labels).clients:
                assert len(c.observed) <= s

    def test_indivisible_rejected_with_remainder(self):
        labels = balanced_labels(3, 5)  # 15 samples
        with pytest.raises(PartitionError, match="remainder"):
            shard_partition(labels, 2, 2, RngStream(4).child("p"))

    def test_per_class_indivisibility_rejected(self):
        # 12 samples over 4 shards of 3, but classes have 4+8 samples
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1])
        with pytest.raises(PartitionError, match="class"):
            shard_partition(labels, 2, 2, RngStream(5).child("p"))

    def test_deterministic(self):
        labels = balanced_labels(4, 8)
        a = shard_partition(labels, 4, 2, RngStream(6).child("p"))
        b = shard_partition(labels, 4, 2, RngStream(6).child("p"))
        assert a == b


class TestLda:
    def test_conservation_exact(self):
        gen = np.random.default_rng(7)
        for trial in range(50):
            labels = balanced_labels(int(gen.integers(2, 6)), int(gen.integers(5, 40)), seed=trial)
            alpha = float(gen.uniform(0.05, 10.0))
            part = lda_partition(labels, int(gen.integers(2, 8)), alpha, RngStream(trial).child("p"))
            assert part.total() == labels.size
            check_disjoint_cover(part, labels.size)

    def test_near_uniform_at_huge_alpha(self):
        labels = balanced_labels(10, 1000)
        part = lda_partition(labels, 10, 1e6, RngStream(8).child("p"))
        stats = partition_stats(part, labels)
        for c in stats.clients:
            for h in c.histogram:
                assert abs(h - 100) <= 10  # within 10% of uniform

    def test_small_alpha_concentrates_classes(self):
        counts = []
        for seed in range(10):
            labels = balanced_labels(10, 100, seed=seed)
            part = lda_partition(labels, 20, 0.05, RngStream(seed).child("p"))
            stats = partition_stats(part, labels)
            counts.extend(len(c.observed) for c in stats.clients if c.n_samples > 0)
        assert np.median(counts) <= 3

    def test_deterministic(self):
        labels = balanced_labels(5, 20)
        a = lda_partition(labels, 6, 0.3, RngStream(9).child("p"))
        b = lda_partition(labels, 6, 0.3, RngStream(9).child("p"))
        assert a == b

    def test_bad_alpha(self):
        with pytest.raises(ParameterError):
            lda_partition(balanced_labels(2, 4), 2, 0.0, RngStream(0))


class TestMirroredTestPartitions:
    def test_shard_mirror_matches_classes(self):
        train_labels = balanced_labels(5, 40, seed=10)
        test_labels = balanced_labels(5, 8, seed=11)
        train = shard_partition(train_labels, 10, 2, RngStream(10).child("p"))
        test = matching_shard_test_partition(train, train_labels, test_labels, RngStream(10).child("t"))
        check_disjoint_cover(test, test_labels.size)
        for k in range(10):
            train_classes = {int(train_labels[i]) for i in train.assignments[k]}
            test_classes = {int(test_labels[i]) for i in test.assignments[k]}
            assert train_classes == test_classes

    def test_lda_mirror_tracks_frequencies(self):
        train_labels = balanced_labels(4, 100, seed=12)
        test_labels = balanced_labels(4, 25, seed=13)
        train = lda_partition(train_labels, 5, 0.5, RngStream(12).child("p"))
        test = matching_lda_test_partition(train, train_labels, test_labels, RngStream(12).child("t"))
        check_disjoint_cover(test, test_labels.size)
        train_stats = partition_stats(train, train_labels, 4)
        test_stats = partition_stats(test, test_labels, 4)
        for tr, te in zip(train_stats.clients, test_stats.clients):
            if tr.n_samples == 0:
                continue
            # test histogram approximates a quarter of the train histogram
            for h_tr, h_te in zip(tr.histogram, te.histogram):
                assert abs(h_te - h_tr / 4.0) <= 2.0


class TestStats:
    def test_observed_unobserved(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        part = shard_partition(labels, 3, 1, RngStream(14).child("p"))
        stats = partition_stats(part, labels, n_classes=3)
        for c in stats.clients:
            assert len(c.observed) == 1
            assert len(c.unobserved) == 2
            assert set(c.observed) | set(c.unobserved) == {0, 1, 2}

    def test_full_coverage_client(self):
        labels = balanced_labels(3, 4)
        part = shard_partition(labels, 1, 3, RngStream(15).child("p"))
        stats = partition_stats(part, labels)
        assert stats.clients[0].unobserved == ()

    def test_single_class_entropy_zero(self):
        labels = np.array([0, 0, 1, 1])
        part = shard_partition(labels, 2, 1, RngStream(16).child("p"))
        stats = partition_stats(part, labels)
        for c in stats.clients:
            assert c.entropy == 0.0


class TestRandomizedAudit:
    def test_disjoint_coverage_over_many_draws(self):
        gen = np.random.default_rng(17)
        checked = 0
        for trial in range(1000):
            n_classes = int(gen.integers(2, 6))
            n_clients = int(gen.integers(1, 8))
            if trial % 2 == 0:
                s = int(gen.integers(1, 4))
                per_class = s * n_clients * int(gen.integers(1, 3))
                labels = balanced_labels(n_classes, per_class, seed=trial)
                total = labels.size
                if total % (n_clients * s) != 0:
                    continue
                if per_class % (total // (n_clients * s)) != 0:
                    continue
                part = shard_partition(labels, n_clients, s, RngStream(trial).child("p"))
            else:
                labels = balanced_labels(n_classes, int(gen.integers(4, 30)), seed=trial)
                part = lda_partition(
                    labels, n_clients, float(gen.uniform(0.05, 5.0)), RngStream(trial).child("p")
                )
            check_disjoint_cover(part, labels.size)
            checked += 1
        assert checked > 500


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        labels = balanced_labels(4, 10)
        part = lda_partition(labels, 4, 0.7, RngStream(18).child("p"))
        path = tmp_path / "part.json"
        save_partition(part, path)
        assert load_partition(path) == part
