"""Tests for the capacity evaluators and their Monte-Carlo validation."""

import math

import numpy as np
import pytest

from besovnet.complexity import (
    CapacityQuery,
    block_removal_perturbation,
    critical_radius,
    generalization_bound,
    lipschitz_conv,
    lipschitz_dense,
    lipschitz_resnext,
    log_covering_bound,
    validate_block_removal,
    validate_lipschitz_conv,
    validate_lipschitz_dense,
    validate_lipschitz_resnext,
)


def query(**kw):
    base = dict(w=8, L=6, K=6, b_res=1.0, b_out=1.0, n=1000, delta=0.1)
    base.update(kw)
    return CapacityQuery(**base)


class TestLipschitzFormulas:
    def test_dense_balanced_unit(self):
        assert lipschitz_dense(4.0, 4) == 1.0

    def test_dense_single_layer(self):
        assert lipschitz_dense(4.0, 1) == 2.0

    def test_dense_two_layers(self):
        assert lipschitz_dense(2.0, 2) == 1.0

    def test_conv_reduces_to_dense_at_unit_kernel(self):
        assert lipschitz_conv(3.0, 3, 1) == lipschitz_dense(3.0, 3)

    def test_conv_hand_value(self):
        assert lipschitz_conv(2.0, 2, 4) == 4.0

    def test_conv_monotone_in_kernel(self):
        vals = [lipschitz_conv(2.0, 3, K) for K in (1, 2, 4, 8)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_resnext_identity_at_zero_budget(self):
        assert lipschitz_resnext(0.0, 4, 3) == 1.0

    def test_resnext_e_value(self):
        assert lipschitz_resnext(4.0, 4, 1) == pytest.approx(math.e, rel=1e-12)


class TestBlockRemoval:
    def test_zero_block(self):
        assert block_removal_perturbation(0.0, 2.0, 4.0, 4, 3) == 0.0

    def test_monotone_in_block_norm(self):
        vals = [block_removal_perturbation(b, 2.0, 4.0, 4, 3) for b in (0.1, 0.5, 1.0)]
        assert vals[0] < vals[1] < vals[2]


class TestLogCoveringBound:
    def test_hand_transcription(self):
        q = query()
        L = q.L
        beta = (2 / L) / (1 - 2 / L)
        kappa = math.sqrt(q.b_out) * math.exp((q.K * q.b_res / L) ** (L / 2))
        expected = (
            q.w**2
            * L
            * q.b_res ** (1 / (1 - 2 / L))
            * q.K ** ((2 - 2 / L) / (1 - 2 / L))
            * kappa**beta
            * q.delta**-beta
        )
        assert log_covering_bound(q) == pytest.approx(expected, rel=1e-12)

    def test_decreasing_in_accuracy(self):
        assert log_covering_bound(query(delta=0.2)) < log_covering_bound(query(delta=0.1))

    def test_increasing_in_budget(self):
        assert log_covering_bound(query(b_res=2.0)) > log_covering_bound(query(b_res=1.0))

    def test_shallow_depth_rejected(self):
        with pytest.raises(ValueError):
            log_covering_bound(query(L=2))


class TestCriticalRadius:
    def test_decreasing_in_samples(self):
        r1 = critical_radius(query(n=1000)).delta_n
        r2 = critical_radius(query(n=4000)).delta_n
        assert r2 < r1

    def test_sixteenfold_sample_scaling(self):
        L = 6
        r1 = critical_radius(query(n=500, L=L)).delta_n
        r2 = critical_radius(query(n=8000, L=L)).delta_n
        expected = 16.0 ** (-(1 - 2 / L) / (2 - 2 / L))
        assert r2 / r1 == pytest.approx(expected, rel=1e-9)

    def test_entropy_condition_satisfied(self):
        for n in (10**5, 10**8):
            for L in (4, 6, 10):
                res = critical_radius(query(n=n, L=L))
                assert res.quadrature_residual <= 0.0

    def test_consistency_with_covering_bound(self):
        # substituting delta_n back: n^{-1/2} integral <= delta_n^2 / 4,
        # with a strictly negative residual once the window is nonempty
        res = critical_radius(query(n=10**7))
        assert res.delta_n > 0.0
        assert res.quadrature_residual < 0.0


class TestGeneralizationBound:
    def test_limit_in_samples(self):
        far = generalization_bound(query(n=10**40), 1.2, 1, 2.0, 1.0, 2.0, 0.5)
        assert far == pytest.approx(2.0 * math.exp(-0.5 * 6), rel=1e-6)

    def test_decreasing_in_samples(self):
        lo = generalization_bound(query(n=1000), 1.2, 1, 2.0, 1.0, 1.0, 1.0)
        hi = generalization_bound(query(n=100), 1.2, 1, 2.0, 1.0, 1.0, 1.0)
        assert lo < hi

    def test_exponent_limit_at_log_depth(self):
        # with L -> infinity the sample exponent approaches (a/d)/(2a/d + 1)
        alpha, d, p = 1.2, 1, 2.0
        ratio = alpha / d
        target = ratio / (2 * ratio + 1)

        def exponent(L):
            p_term = 2 / (p * L)
            return ratio * (1 - 2 / L) / (2 * ratio * (1 - 1 / L) + 1 - p_term)

        assert abs(exponent(10**6) - target) < 1e-5
        gaps = [abs(exponent(L) - target) for L in (10, 100, 1000)]
        assert gaps[2] < gaps[1] < gaps[0]

    def test_shallow_depth_rejected(self):
        with pytest.raises(ValueError):
            generalization_bound(query(L=2), 1.2, 1, 2.0, 1.0, 1.0, 1.0)


class TestMonteCarloValidation:
    def test_dense_quotients_below_bound(self):
        assert validate_lipschitz_dense(seed=1, n_nets=10, n_pairs=200) <= 1.0

    def test_conv_quotients_below_bound(self):
        assert validate_lipschitz_conv(seed=2, n_nets=10, n_pairs=100) <= 1.0

    def test_resnext_quotients_below_bound(self):
        assert validate_lipschitz_resnext(seed=3, n_nets=5, n_pairs=100) <= 1.0

    def test_block_removal_below_bound(self):
        assert validate_block_removal(seed=4, n_trials=50) <= 1.0

    def test_validators_deterministic(self):
        a = validate_lipschitz_dense(seed=7, n_nets=3, n_pairs=50)
        b = validate_lipschitz_dense(seed=7, n_nets=3, n_pairs=50)
        assert a == b
