import itertools
import os
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from hybriddp import kernels
from hybriddp import _pykernels

BACKENDS = kernels.backends()


def brute_log_mgf(alpha, q, x):
    from math import comb, exp, log

    return log(sum(comb(alpha, v) * q**v * (1 - q) ** (alpha - v) * exp(x[v]) for v in range(alpha + 1)))


@pytest.mark.parametrize("name", sorted(BACKENDS))
class TestBackend:
    def test_log_mgf_matches_direct_sum(self, name):
        impl = BACKENDS[name]
        rng = np.random.default_rng(0)
        for alpha in (2, 3, 7, 20):
            for q in (0.01, 0.3, 0.9):
                x = np.concatenate([[0.0], rng.uniform(0, 3, alpha)])
                assert impl.binomial_log_mgf(alpha, q, x) == pytest.approx(brute_log_mgf(alpha, q, x), rel=1e-12)

    def test_log_mgf_edge_rates(self, name):
        impl = BACKENDS[name]
        x = np.array([0.0, 0.5, 1.0, 2.0])
        assert impl.binomial_log_mgf(3, 0.0, x) == 0.0
        assert impl.binomial_log_mgf(3, 1.0, x) == 2.0

    def test_log_mgf_huge_exponents_finite(self, name):
        impl = BACKENDS[name]
        v = np.arange(257, dtype=float)
        x = v * (v - 1) * 0.0107
        out = impl.binomial_log_mgf(256, 0.5, x)
        exact = mpmath.log(mpmath.fsum(
            mpmath.binomial(256, k) * mpmath.mpf(0.5) ** 256 * mpmath.exp(x[k]) for k in range(257)))
        assert out == pytest.approx(float(exact), rel=1e-12)

    def test_curve_matches_scalar(self, name):
        impl = BACKENDS[name]
        z = 0.3
        curve = impl.subsampled_gaussian_curve(30, 0.05, z)
        v = np.arange(31, dtype=float)
        for alpha in (2, 9, 30):
            direct = _pykernels.binomial_log_mgf(alpha, 0.05, v * (v - 1) * z) / (alpha - 1)
            assert curve[alpha - 2] == pytest.approx(direct, rel=1e-12)

    def test_max_sign_quadratic_bruteforce(self, name):
        impl = BACKENDS[name]
        rng = np.random.default_rng(1)
        for d in (1, 2, 5, 9):
            B = rng.normal(size=(d, d))
            A = B @ B.T
            val, z = impl.max_sign_quadratic(A)
            best = max(np.array(s) @ A @ np.array(s) for s in itertools.product((-1, 1), repeat=d))
            assert val == pytest.approx(best, rel=1e-12)
            assert float(z @ A @ z) == pytest.approx(val, rel=1e-12)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled backend not built")
def test_backends_agree():
    c, p = BACKENDS["cython"], BACKENDS["python"]
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.uniform(0.001, 0.99)
        z = rng.uniform(0.001, 2.0)
        np.testing.assert_allclose(c.subsampled_gaussian_curve(64, q, z), p.subsampled_gaussian_curve(64, q, z), rtol=1e-12)
        eps0 = np.concatenate([[0, 0], rng.uniform(0, 1, 63).cumsum()])
        np.testing.assert_allclose(c.twice_curve(64, q, eps0), p.twice_curve(64, q, eps0), rtol=1e-12)


def test_forced_fallback():
    env = dict(os.environ, HYBRIDDP_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from hybriddp import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
