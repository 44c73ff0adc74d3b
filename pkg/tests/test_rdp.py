import math

import mpmath
import numpy as np
import pytest

from hybriddp.errors import InfeasibleError, ValidationError
from hybriddp.rdp import (
    MechanismSpec,
    RdpCurve,
    SamplingPlan,
    asymptotic_coordinate_limit,
    asymptotic_twice,
    calibrate_sigma,
    compose_and_convert,
    converted_epsilon,
    coordinate_curve,
    coordinate_sampling_rdp,
    coordinate_sampling_rdp_hybrid,
    default_alphas,
    gaussian_rdp,
    subsampled_gaussian_curve,
    subsampled_gaussian_rdp_1d,
    twice_curve,
    twice_sampling_rdp,
)
from hybriddp.sensitivity import Hybrid, L2Ball, LpLinfMix, SubspaceClip

E_HALF = math.log(0.75 + 0.25 * math.e)


def mp_subsampled(alpha, q, s, sigma):
    mpmath.mp.dps = 50
    q, z = mpmath.mpf(q), mpmath.mpf(s) ** 2 / (2 * mpmath.mpf(sigma) ** 2)
    total = mpmath.fsum(
        mpmath.binomial(alpha, v) * (1 - q) ** (alpha - v) * q**v * mpmath.exp(v * (v - 1) * z)
        for v in range(alpha + 1)
    )
    return float(mpmath.log(total) / (alpha - 1))


class TestGaussian:
    def test_examples(self):
        assert gaussian_rdp(2, 1.0, 1.0) == 1.0
        assert gaussian_rdp(3, 0.0, 1.0) == 0.0
        assert gaussian_rdp(4, 2.0, 2.0) == 2.0

    def test_bad_sigma(self):
        with pytest.raises(ValidationError):
            gaussian_rdp(2, 1.0, 0.0)

    def test_bad_order(self):
        with pytest.raises(ValidationError):
            gaussian_rdp(1, 1.0, 1.0)
        with pytest.raises(ValidationError):
            gaussian_rdp(2.5, 1.0, 1.0)


class TestSubsampled:
    def test_full_rate(self):
        assert subsampled_gaussian_rdp_1d(2, 1.0, 1.0, 1.0) == pytest.approx(1.0, rel=1e-15)

    @pytest.mark.parametrize("alpha", [2, 5, 64])
    def test_zero_rate(self, alpha):
        assert subsampled_gaussian_rdp_1d(alpha, 0.0, 3.0, 0.5) == 0.0

    def test_half_rate(self):
        assert subsampled_gaussian_rdp_1d(2, 0.5, 1.0, 1.0) == pytest.approx(E_HALF, rel=1e-14)
        assert E_HALF == pytest.approx(0.357373, abs=1e-5)

    @pytest.mark.parametrize(
        "alpha,q,s,sigma",
        [(2, 0.005, 1, 5), (3, 0.01, 1, 0.3), (16, 0.1, 1, 0.5), (64, 0.005, 1, 2), (200, 0.3, 1, 3), (256, 1e-4, 1, 0.8),
         (3, 0.17, 3.2e-5, 2), (2, 0.5, 1e-6, 1), (64, 0.01, 1e-4, 1), (16, 0.3, 0.01, 0.5)],
    )
    def test_high_precision(self, alpha, q, s, sigma):
        assert subsampled_gaussian_rdp_1d(alpha, q, s, sigma) == pytest.approx(mp_subsampled(alpha, q, s, sigma), rel=1e-12)

    def test_no_nan_to_256(self):
        for sigma in (0.1, 0.3, 1.0, 5.0):
            for q in (1e-6, 0.005, 0.5, 0.999):
                curve = subsampled_gaussian_curve(range(2, 257), q, 1.0, sigma)
                assert np.all(np.isfinite(curve)) and np.all(curve >= 0)
                for alpha in (2, 100, 256):
                    assert math.isfinite(subsampled_gaussian_rdp_1d(alpha, q, 1.0, sigma))

    def test_saturation_lower_bound(self):
        checked = 0
        for alpha in range(2, 257, 7):
            for sigma in (0.3, 0.5, 1.0, 2.0):
                tau = 1.0 / (2 * sigma**2)
                for q in (0.005, 0.01, 0.1, 0.5):
                    if alpha * (alpha - 1) * tau < 2 or q < math.exp(-(alpha - 1) * tau / 2):
                        continue
                    log_inner = alpha * (math.log(q) + (alpha - 1) * tau)
                    lower = np.logaddexp(0.0, math.log(0.5) + log_inner) / (alpha - 1)
                    assert subsampled_gaussian_rdp_1d(alpha, q, 1.0, sigma) >= lower * (1 - 1e-12)
                    checked += 1
        assert checked > 50

    def test_monotone(self):
        qs = [0.001, 0.01, 0.1, 0.5, 1.0]
        sigmas = [0.3, 0.5, 1.0, 2.0, 5.0]
        for alpha in (2, 8, 32):
            by_q = [subsampled_gaussian_rdp_1d(alpha, q, 1.0, 1.0) for q in qs]
            assert all(b >= a for a, b in zip(by_q, by_q[1:]))
            by_sigma = [subsampled_gaussian_rdp_1d(alpha, 0.1, 1.0, s) for s in sigmas]
            assert all(b <= a for a, b in zip(by_sigma, by_sigma[1:]))
            by_s = [subsampled_gaussian_rdp_1d(alpha, 0.1, s, 1.0) for s in (0.1, 0.5, 1.0, 2.0)]
            assert all(b >= a for a, b in zip(by_s, by_s[1:]))

    def test_curve_matches_pointwise(self):
        curve = subsampled_gaussian_curve([2, 3, 10, 40], 0.02, 1.0, 0.7)
        direct = [subsampled_gaussian_rdp_1d(a, 0.02, 1.0, 0.7) for a in (2, 3, 10, 40)]
        np.testing.assert_allclose(curve, direct, rtol=1e-12)


class TestCoordinate:
    def test_pure_reduction(self):
        assert coordinate_sampling_rdp(2, 1.0, 1, 0.0, 1.0, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_four_coordinates(self):
        assert coordinate_sampling_rdp(2, 0.5, 4, 0.0, 1.0, 1.0) == pytest.approx(4 * E_HALF, rel=1e-14)
        assert 4 * E_HALF == pytest.approx(1.429493, abs=1e-5)

    def test_single_coordinate_is_1d(self):
        for alpha in (2, 7, 33):
            a = coordinate_sampling_rdp(alpha, 0.05, 1, 0.0, 0.8, 1.3)
            b = subsampled_gaussian_rdp_1d(alpha, 0.05, 0.8, 1.3)
            assert a == pytest.approx(b, rel=1e-12)

    def test_remainder_adds(self):
        a = coordinate_sampling_rdp(4, 0.1, 3, 0.2, 0.5, 1.0)
        b = 3 * subsampled_gaussian_rdp_1d(4, 0.1, 0.5, 1.0) + subsampled_gaussian_rdp_1d(4, 0.1, 0.2, 1.0)
        assert a == pytest.approx(b, rel=1e-12)

    def test_hybrid_single_block(self):
        assert coordinate_sampling_rdp_hybrid(3, 0.2, [(1.5, 0.4, 6)]) == pytest.approx(
            coordinate_sampling_rdp(3, 0.2, 6, 0.0, 0.4, 1.5), rel=1e-15)

    def test_hybrid_additive(self):
        one = coordinate_sampling_rdp_hybrid(5, 0.3, [(1.0, 0.5, 3)])
        two = coordinate_sampling_rdp_hybrid(5, 0.3, [(1.0, 0.5, 3), (1.0, 0.5, 3)])
        assert two == pytest.approx(2 * one, rel=1e-15)

    def test_hybrid_example(self):
        got = coordinate_sampling_rdp_hybrid(2, 0.5, [(1.0, 1.0, 2), (2.0, 1.0, 3)])
        want = 2 * subsampled_gaussian_rdp_1d(2, 0.5, 1.0, 1.0) + 3 * subsampled_gaussian_rdp_1d(2, 0.5, 1.0, 2.0)
        assert got == pytest.approx(want, rel=1e-14)

    def test_hybrid_empty(self):
        with pytest.raises(ValidationError):
            coordinate_sampling_rdp_hybrid(2, 0.5, [])

    def test_monotone_in_cinf(self):
        vals = [coordinate_sampling_rdp(8, 0.05, 16, 0.0, c, 1.0) for c in (0.05, 0.1, 0.25, 0.5)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestTwice:
    def test_zero_q1(self):
        assert twice_sampling_rdp(5, 0.0, lambda v: 1.0) == 0.0

    def test_full_q1(self):
        eps0 = lambda v: 0.1 * v
        assert twice_sampling_rdp(6, 1.0, eps0) == pytest.approx(eps0(6), rel=1e-14)

    def test_example(self):
        got = twice_sampling_rdp(2, 0.5, lambda v: 0.2)
        mpmath.mp.dps = 40
        exact = float(mpmath.log(mpmath.mpf(0.25) + 0.5 + 0.25 * mpmath.exp(mpmath.mpf(0.2))))
        assert got == pytest.approx(exact, rel=1e-13)
        assert got == pytest.approx(0.053867, abs=1e-5)

    def test_negative_inner(self):
        with pytest.raises(ValidationError):
            twice_sampling_rdp(3, 0.5, lambda v: -0.1)

    def test_curve_matches_pointwise(self):
        inner = lambda orders: coordinate_curve(orders, 0.5, 10, 0.0, 0.3, 1.0)
        alphas = [2, 5, 17]
        got = twice_curve(alphas, 0.02, inner)
        want = [twice_sampling_rdp(a, 0.02, lambda v: coordinate_sampling_rdp(v, 0.5, 10, 0.0, 0.3, 1.0)) for a in alphas]
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_monotone_in_rates(self):
        inner = lambda q2: (lambda v: coordinate_sampling_rdp(v, q2, 16, 0.0, 0.25, 1.0))
        by_q1 = [twice_sampling_rdp(8, q1, inner(0.5)) for q1 in (0.001, 0.01, 0.1, 0.5)]
        assert all(b >= a for a, b in zip(by_q1, by_q1[1:]))
        by_q2 = [twice_sampling_rdp(8, 0.05, inner(q2)) for q2 in (0.1, 0.3, 0.6, 1.0)]
        assert all(b >= a for a, b in zip(by_q2, by_q2[1:]))


class TestAsymptotic:
    def test_examples(self):
        assert asymptotic_coordinate_limit(5, 0.0, 0.7) == 0.0
        assert asymptotic_coordinate_limit(4, 0.005, 0.5) == pytest.approx(5e-5, rel=1e-14)
        assert asymptotic_twice(4, 0.0, 0.5, 0.5) == 0.0
        for alpha in (2, 10, 100):
            assert asymptotic_twice(alpha, 0.3, 0.0, 0.5) == 0.0

    def test_twice_with_linear_inner(self):
        q1, q2, tau = 0.1, 0.4, 0.5
        got = asymptotic_twice(6, q1, q2, tau)
        want = twice_sampling_rdp(6, q1, lambda v: v * q2**2 * tau)
        assert got == pytest.approx(want, rel=1e-14)


class TestConversion:
    def test_linear_curve(self):
        curve = RdpCurve.from_arrays(range(2, 257), [0.01 * a for a in range(2, 257)])
        eps, alpha = compose_and_convert(curve, 100, 1e-5)
        assert alpha == 4
        assert eps == pytest.approx(4 + math.log(1e5) / 3, rel=1e-14)
        assert eps == pytest.approx(7.8376, abs=1e-4)

    def test_zero_curve(self):
        eps, alpha = compose_and_convert(RdpCurve({2: 0.0}), 1, 1e-5)
        assert (eps, alpha) == (pytest.approx(math.log(1e5)), 2)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
    def test_bad_delta(self, delta):
        with pytest.raises(ValidationError):
            compose_and_convert(RdpCurve({2: 0.1}), 1, delta)

    def test_curve_validation(self):
        with pytest.raises(ValidationError):
            RdpCurve({2: -0.1})
        with pytest.raises(ValidationError):
            RdpCurve({})

    def test_csv_roundtrip(self, tmp_path):
        curve = RdpCurve.from_arrays([2, 3, 9], [0.1, 1 / 3, 2.5e-17])
        curve.to_csv(tmp_path / "c.csv")
        back = RdpCurve.from_csv(tmp_path / "c.csv")
        assert back.entries == curve.entries

    def test_env_alpha_max(self, monkeypatch):
        monkeypatch.setenv("HYBRIDDP_ALPHA_MAX", "32")
        assert default_alphas() == list(range(2, 33))


class TestMechanism:
    def test_json_roundtrip(self):
        mech = MechanismSpec(
            "twice", Hybrid((SubspaceClip(4, 1.0, d0=4), SubspaceClip(10, 0.5))), (0.7, 1.2), SamplingPlan(0.02, 0.5)
        )
        back = MechanismSpec.from_json(mech.to_json())
        assert back == mech

    def test_modes_on_l2(self):
        alphas = [2, 4, 8]
        pure = MechanismSpec("pure", L2Ball(1.0), 2.0).rdp_curve(alphas)
        np.testing.assert_allclose(pure.eps, [gaussian_rdp(a, 1.0, 2.0) for a in alphas], rtol=1e-15)
        inp = MechanismSpec("input", L2Ball(1.0), 2.0, SamplingPlan(0.1, 0.5)).rdp_curve(alphas)
        np.testing.assert_allclose(inp.eps, [subsampled_gaussian_rdp_1d(a, 0.05, 1.0, 2.0) for a in alphas], rtol=1e-12)

    def test_lp_linf_coordinate(self):
        mech = MechanismSpec("coordinate", LpLinfMix(2, 1.0, 0.1), 1.0, SamplingPlan(1.0, 0.01))
        got = mech.rdp_curve([4]).eps[0]
        assert got == pytest.approx(coordinate_sampling_rdp(4, 0.01, 100, 0.0, 0.1, 1.0), rel=1e-12)

    def test_bad_mode(self):
        with pytest.raises(ValidationError):
            MechanismSpec("shuffled", L2Ball(1.0))

    def test_plan_rates(self):
        with pytest.raises(ValidationError):
            SamplingPlan(1.5, 0.5)


class TestCalibrate:
    def test_roundtrip_pure(self):
        template = MechanismSpec("pure", L2Ball(1.0), 1.0)
        target, _ = converted_epsilon(template.scaled(1.7), 1, 1e-5)
        assert calibrate_sigma(template, 1, 1e-5, target) == pytest.approx(1.7, rel=1e-5)

    def test_roundtrip_twice(self):
        template = MechanismSpec("twice", LpLinfMix(2, 1.0, 0.1), 1.0, SamplingPlan(0.02, 0.5))
        target, _ = converted_epsilon(template.scaled(0.9), 500, 1e-5)
        sigma = calibrate_sigma(template, 500, 1e-5, target)
        assert sigma == pytest.approx(0.9, rel=1e-5)
        assert converted_epsilon(template.scaled(sigma), 500, 1e-5)[0] <= target

    def test_monotone_in_T(self):
        template = MechanismSpec("input", L2Ball(1.0), 1.0, SamplingPlan(0.01, 1.0))
        sig = [calibrate_sigma(template, T, 1e-5, 4.0) for T in (100, 1000, 10000)]
        assert sig[0] < sig[1] < sig[2]

    def test_infinite_target(self):
        template = MechanismSpec("pure", L2Ball(1.0), 1.0)
        assert calibrate_sigma(template, 1, 1e-5, math.inf) == pytest.approx(1e-3)

    def test_unreachable(self):
        template = MechanismSpec("pure", L2Ball(1.0), 1.0)
        with pytest.raises(InfeasibleError):
            calibrate_sigma(template, 1, 1e-5, 1e-6)
