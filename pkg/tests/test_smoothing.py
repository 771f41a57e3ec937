import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothcal.errors import ConfigError, ShapeError
from smoothcal.smoothing import (
    CurveParams,
    TeacherPredictions,
    beta_epsilons,
    beta_targets,
    bs_soft_targets,
    cls_targets,
    hard_targets,
    ils1_epsilon,
    ils1_targets,
    ils2_targets,
    ils_targets,
    standard_ls,
)
from smoothcal.synth import canonical_model, sample

from conftest import random_prob_matrix


def teacher(probs):
    return TeacherPredictions(np.asarray(probs, dtype=float))


class TestHardAndStandard:
    def test_one_hot(self):
        np.testing.assert_array_equal(hard_targets([0], 3), [[1, 0, 0]])
        np.testing.assert_array_equal(hard_targets([2], 3), [[0, 0, 1]])

    def test_empty(self):
        assert hard_targets([], 3).shape == (0, 3)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            hard_targets([3], 3)

    def test_standard_ls_reference_row(self):
        row = standard_ls([0], 3, 0.1)[0]
        np.testing.assert_allclose(row, [0.9333333333, 0.0333333333, 0.0333333333], atol=1e-9)

    def test_zero_eps_is_hard(self):
        labels = [0, 2, 1]
        np.testing.assert_array_equal(standard_ls(labels, 3, 0.0), hard_targets(labels, 3))

    def test_two_class(self):
        np.testing.assert_allclose(standard_ls([1], 2, 0.2)[0], [0.1, 0.9], atol=1e-12)

    def test_eps_validation(self):
        with pytest.raises(ConfigError):
            standard_ls([0], 3, 0.5)


class TestCurve:
    def test_vertex_is_zero(self):
        assert ils1_epsilon(0.8, CurveParams(center=0.8, scale=2.0)) == 0.0

    def test_hand_value(self):
        assert math.isclose(ils1_epsilon(0.9, CurveParams(center=0.8, scale=2.0)), 0.02, abs_tol=1e-12)

    def test_cap(self):
        # raw value 2.0 * 0.16 = 0.32 clips to the 0.2 cap
        assert ils1_epsilon(0.4, CurveParams(center=0.8, scale=2.0)) == 0.2

    def test_sinusoidal(self):
        params = CurveParams(family="sinusoidal", center=0.5, scale=3.0)
        val = ils1_epsilon(0.5, params)
        assert math.isclose(val, 0.1, abs_tol=1e-12)  # sin(0) + 1 scaled by 0.1
        assert 0.0 <= ils1_epsilon(0.9, params) <= 0.2

    @settings(max_examples=300, deadline=None)
    @given(p=st.floats(0.0, 1.0), center=st.floats(0.0, 1.0), scale=st.floats(0.01, 10.0))
    def test_bounded_and_continuous(self, p, center, scale):
        params = CurveParams(center=center, scale=scale)
        v = ils1_epsilon(p, params)
        assert 0.0 <= v <= params.cap
        h = 1e-7
        if p + h <= 1.0:
            assert abs(ils1_epsilon(p + h, params) - v) < 1e-4

    def test_bad_family(self):
        with pytest.raises(ConfigError):
            CurveParams(family="cubic")


class TestIls1Targets:
    def test_teacher_at_center_gives_hard(self):
        t = teacher([[0.8, 0.15, 0.05], [0.1, 0.8, 0.1]])
        out = ils1_targets([0, 1], 3, t, CurveParams(center=0.8, scale=2.0))
        np.testing.assert_array_equal(out, hard_targets([0, 1], 3))

    def test_hand_value(self):
        t = teacher([[0.9, 0.06, 0.04]])
        out = ils1_targets([0], 3, t, CurveParams(center=0.8, scale=2.0))[0]
        np.testing.assert_allclose(out, [0.9866666667, 0.0066666667, 0.0066666667], atol=1e-9)

    def test_cap_saturation_matches_fixed_ls(self):
        params = CurveParams(center=0.8, scale=2.0, cap=0.2)
        cut = params.center - math.sqrt(params.cap / params.scale)
        probs = np.array([[0.2, 0.5, 0.3], [0.45, 0.3, 0.25]])
        assert (probs[:, 0] <= cut).all()
        out = ils1_targets([0, 0], 3, teacher(probs), params)
        np.testing.assert_allclose(out, standard_ls([0, 0], 3, 0.2), atol=1e-12)

    def test_misaligned(self):
        with pytest.raises(ShapeError):
            ils1_targets([0, 1], 3, teacher([[1 / 3] * 3]), CurveParams())


class TestIls2Targets:
    def test_hand_value(self):
        out = ils2_targets([0], 3, teacher([[0.7, 0.2, 0.1]]), 0.1)[0]
        np.testing.assert_allclose(out, [0.9, 0.0666666667, 0.0333333333], atol=1e-9)

    def test_uniform_teacher_spreads_uniformly(self):
        out = ils2_targets([1], 3, teacher([[1 / 3, 1 / 3, 1 / 3]]), 0.12)[0]
        assert math.isclose(out[1], 0.88, abs_tol=1e-12)
        assert math.isclose(out[0], out[2], abs_tol=1e-15)

    def test_standard_ls_fixed_point(self):
        # feeding standard-LS rows back as the teacher reproduces them when
        # the factor is adjusted for the eps/K the true class keeps
        labels = np.array([0, 2, 1, 1])
        eps = 0.09
        ls = standard_ls(labels, 3, eps)
        out = ils2_targets(labels, 3, teacher(ls), eps * (3 - 1) / 3)
        np.testing.assert_allclose(out, ls, atol=1e-12)

    def test_zero_eps_hard(self):
        t = teacher([[0.5, 0.3, 0.2]])
        np.testing.assert_array_equal(ils2_targets([0], 3, t, 0.0), hard_targets([0], 3))

    def test_saturated_teacher_falls_back(self, caplog):
        t = teacher([[1.0, 0.0, 0.0]])
        with caplog.at_level(logging.WARNING, logger="smoothcal.smoothing"):
            out = ils2_targets([0], 3, t, 0.1)[0]
        np.testing.assert_allclose(out, [0.9, 0.05, 0.05], atol=1e-12)
        assert any("saturated" in rec.message for rec in caplog.records)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), eps=st.floats(0.001, 0.45))
    def test_ratio_preservation(self, seed, eps):
        rng = np.random.default_rng(seed)
        probs = random_prob_matrix(rng, 6, 4)
        probs = np.clip(probs, 1e-6, None)
        probs /= probs.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, 6)
        out = ils2_targets(labels, 4, teacher(probs), eps)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        for i, lab in enumerate(labels):
            wrong = [j for j in range(4) if j != lab]
            for a in range(len(wrong) - 1):
                j1, j2 = wrong[a], wrong[a + 1]
                lhs = out[i, j1] * probs[i, j2]
                rhs = out[i, j2] * probs[i, j1]
                assert abs(lhs - rhs) < 1e-9


class TestCombinedIls:
    def test_teacher_at_center_gives_hard(self):
        t = teacher([[0.8, 0.1, 0.1]])
        np.testing.assert_array_equal(
            ils_targets([0], 3, t, CurveParams(center=0.8, scale=2.0)), hard_targets([0], 3)
        )

    def test_hand_value(self):
        t = teacher([[0.9, 0.08, 0.02]])
        out = ils_targets([0], 3, t, CurveParams(center=0.8, scale=2.0))[0]
        np.testing.assert_allclose(out, [0.98, 0.016, 0.004], atol=1e-12)

    def test_wrong_class_ratios_follow_teacher(self, rng):
        probs = random_prob_matrix(rng, 10, 3)
        labels = rng.integers(0, 3, 10)
        out = ils_targets(labels, 3, teacher(probs), CurveParams(center=0.8, scale=2.0))
        for i, lab in enumerate(labels):
            wrong = [j for j in range(3) if j != lab]
            lhs = out[i, wrong[0]] * probs[i, wrong[1]]
            rhs = out[i, wrong[1]] * probs[i, wrong[0]]
            assert abs(lhs - rhs) < 1e-9


class TestClsTargets:
    def test_equidistant_reduces_to_standard(self):
        # equilateral triangle of centroids; the true class keeps 1 - eps, so
        # the matrix equals uniform smoothing at the rescaled factor eps*K/(K-1)
        feats = np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
        labels = np.array([0, 1, 2])
        np.testing.assert_allclose(
            cls_targets(feats, labels, 3, 0.1), standard_ls(labels, 3, 0.1 * 3 / 2), atol=1e-12
        )

    def test_two_class_always_standard(self, rng):
        feats = rng.normal(size=(20, 2))
        labels = rng.integers(0, 2, 20)
        np.testing.assert_allclose(
            cls_targets(feats, labels, 2, 0.2), standard_ls(labels, 2, 0.4), atol=1e-12
        )

    def test_canonical_geometry_prefers_nearer_class(self):
        ds = sample(canonical_model(), 500, seed=4)
        out = cls_targets(ds.features, ds.labels, 3, 0.1)
        row = out[ds.labels == 0][0]
        assert row[1] > row[2]  # class 2 centroid is nearer to class 1 than class 3


class TestBsSoft:
    def test_beta_one_is_hard(self, rng):
        preds = random_prob_matrix(rng, 4, 3)
        np.testing.assert_array_equal(
            bs_soft_targets([0, 1, 2, 0], 3, preds, beta=1.0), hard_targets([0, 1, 2, 0], 3)
        )

    def test_one_hot_prediction_is_hard(self):
        preds = np.eye(3)[[1]]
        np.testing.assert_allclose(
            bs_soft_targets([1], 3, preds, beta=0.95), hard_targets([1], 3), atol=1e-15
        )

    def test_hand_value(self):
        out = bs_soft_targets([0], 3, np.array([[0.5, 0.3, 0.2]]), beta=0.95)[0]
        np.testing.assert_allclose(out, [0.975, 0.015, 0.01], atol=1e-12)


class TestBetaSmoothing:
    def test_large_a_degenerates_to_constant(self):
        eps = beta_epsilons(2000, alpha=0.4, a=1e9, seed=1, target_mean=0.1)
        assert eps.std() < 1e-4
        assert abs(eps.mean() - 0.1) < 1e-3

    def test_deterministic(self):
        a = beta_targets([0, 1, 2], 3, 0.4, 1.0, seed=9, target_mean=0.08)
        b = beta_targets([0, 1, 2], 3, 0.4, 1.0, seed=9, target_mean=0.08)
        np.testing.assert_array_equal(a, b)

    def test_monte_carlo_mean(self):
        # E[Beta(a,1)] = a/(a+1); the fitted scale makes the factors average
        # to the requested mean
        eps = beta_epsilons(100_000, alpha=0.4, a=2.0, seed=3, target_mean=0.061)
        assert abs(eps.mean() - 0.061) < 1e-3

    def test_unreachable_mean(self):
        with pytest.raises(ConfigError):
            beta_epsilons(10, alpha=0.4, a=1.0, seed=0, target_mean=0.45)


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    eps=st.floats(0.0, 0.49),
    k=st.integers(2, 6),
)
def test_every_strategy_emits_distributions(seed, eps, k):
    rng = np.random.default_rng(seed)
    n = 8
    labels = rng.integers(0, k, n)
    probs = random_prob_matrix(rng, n, k)
    t = TeacherPredictions(probs)
    params = CurveParams(center=0.8, scale=2.0)
    feats = rng.normal(size=(n, 2))
    matrices = [
        hard_targets(labels, k),
        standard_ls(labels, k, eps),
        ils1_targets(labels, k, t, params),
        ils2_targets(labels, k, t, eps),
        ils_targets(labels, k, t, params),
        bs_soft_targets(labels, k, probs, beta=0.95),
    ]
    if (np.bincount(labels, minlength=k) > 0).all():
        matrices.append(cls_targets(feats, labels, k, eps))
    for out in matrices:
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        if eps < (k - 1) / k:
            rows = np.arange(n)
            true_vals = out[rows, labels]
            others = out.copy()
            others[rows, labels] = -1
            assert np.all(true_vals > others.max(axis=1))
