"""Simplex-ETF construction, frozen heads, and the ETF validator."""

import numpy as np
import pytest

from feddesk.classifier import (
    ClassifierMatrix,
    build_etf,
    build_random_frozen,
    build_trainable,
    validate_etf,
)
from feddesk.errors import ContractError, DimensionError, ParameterError
from feddesk.numerics import RngStream, cosine, random_orthogonal


def pairwise_cosines(cm):
    c = cm.n_classes
    return [cosine(cm.vectors[i], cm.vectors[j]) for i in range(c) for j in range(i + 1, c)]


class TestBuildEtf:
    def test_two_classes_antipodal(self):
        cm = build_etf(2, 2, RngStream(0).child("etf"))
        assert abs(cosine(cm.vectors[0], cm.vectors[1]) + 1.0) < 1e-9

    def test_four_classes_pairwise_cosine(self):
        for d in (4, 7, 32):
            cm = build_etf(d, 4, RngStream(1).child("etf", d))
            for c in pairwise_cosines(cm):
                assert abs(c + 1.0 / 3.0) < 1e-9

    def test_unit_norms(self):
        cm = build_etf(16, 10, RngStream(2).child("etf"))
        np.testing.assert_allclose(np.linalg.norm(cm.vectors, axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("c", [2, 3, 4, 10, 100])
    def test_square_case_invariants(self, c):
        cm = build_etf(c, c, RngStream(3).child("etf", c))
        target = -1.0 / (c - 1)
        assert np.max(np.abs(np.linalg.norm(cm.vectors, axis=1) - 1.0)) < 1e-9
        gram = cm.vectors @ cm.vectors.T
        off = gram[~np.eye(c, dtype=bool)]
        assert np.max(np.abs(off - target)) < 1e-9

    def test_mean_vector_vanishes(self):
        for c in (2, 3, 4, 10, 100):
            cm = build_etf(max(c, 16), c, RngStream(4).child("etf", c))
            assert float(np.linalg.norm(cm.vectors.mean(axis=0))) < 1e-9

    def test_rotation_covariance(self):
        # rotating the feature space preserves every pairwise cosine
        cm = build_etf(8, 5, RngStream(5).child("etf"))
        rot = random_orthogonal(8, 8, RngStream(5).child("rot"))
        rotated = cm.vectors @ rot
        orig = cm.vectors @ cm.vectors.T
        new = rotated @ rotated.T
        np.testing.assert_allclose(new, orig, atol=1e-12)

    def test_frozen_and_kind(self):
        cm = build_etf(4, 3, RngStream(6).child("etf"))
        assert cm.frozen and cm.kind == "etf"
        with pytest.raises(ValueError):
            cm.vectors[0, 0] = 99.0

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            build_etf(3, 4, RngStream(0))
        with pytest.raises(ParameterError):
            build_etf(4, 1, RngStream(0))


class TestBuildRandomFrozen:
    def test_deterministic(self):
        a = build_random_frozen(64, 10, RngStream(7).child("r"))
        b = build_random_frozen(64, 10, RngStream(7).child("r"))
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_expected_row_norm_near_one(self):
        # entries N(0, 1/d) make the row norm a scaled chi_d, mean close to 1
        means = []
        for seed in range(100):
            cm = build_random_frozen(64, 10, RngStream(seed).child("r"))
            means.append(float(np.mean(np.linalg.norm(cm.vectors, axis=1))))
        assert abs(float(np.mean(means)) - 1.0) < 0.25

    def test_frozen_blocks_mutation(self):
        cm = build_random_frozen(8, 4, RngStream(8).child("r"))
        before = cm.vectors.copy()
        with pytest.raises(ValueError):
            cm.vectors += 1.0
        np.testing.assert_array_equal(cm.vectors, before)


class TestTrainable:
    def test_not_frozen(self):
        cm = build_trainable(8, 4, RngStream(9).child("t"))
        assert not cm.frozen and cm.kind == "trainable"
        cm.vectors[0, 0] = 1.0  # writable


class TestValidateEtf:
    def test_fresh_etf_clean(self):
        report = validate_etf(build_etf(16, 10, RngStream(10).child("etf")))
        assert report.max_norm_deviation < 1e-9
        assert report.max_cosine_deviation < 1e-9

    def test_scaled_row_detected(self):
        cm = build_etf(6, 4, RngStream(11).child("etf"))
        vectors = cm.vectors.copy()
        vectors[2] *= 2.0
        broken = ClassifierMatrix(vectors, kind="etf", frozen=True)
        report = validate_etf(broken)
        assert abs(report.max_norm_deviation - 1.0) < 1e-12
        # cosine is scale-invariant, so the pairwise check still passes
        assert report.max_cosine_deviation < 1e-9

    def test_row_swap_invariant(self):
        cm = build_etf(6, 4, RngStream(12).child("etf"))
        vectors = cm.vectors.copy()
        vectors[[0, 3]] = vectors[[3, 0]]
        report = validate_etf(ClassifierMatrix(vectors, kind="etf", frozen=True))
        assert report.max_norm_deviation < 1e-9
        assert report.max_cosine_deviation < 1e-9

    def test_wrong_kind_rejected(self):
        cm = build_random_frozen(8, 4, RngStream(13).child("r"))
        with pytest.raises(ContractError):
            validate_etf(cm)
