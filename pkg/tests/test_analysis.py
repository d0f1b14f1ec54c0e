import math

import numpy as np
import pytest
from scipy import special, stats

from gaclab.analysis import (
    TABLE_KAPPAS,
    analytic_saturation_fraction,
    bench_sampling,
    bessel_ratio,
    concentration_table,
    log_bessel_iv,
    mean_resultant_length,
    policy_saturation,
    saturation_cutoff,
    tanh_saturation,
    vmf_entropy,
    vmf_entropy_asymptotic,
    vmf_sample,
    vmf_sample_batch,
    vmf_sample_stats,
)
from gaclab.analysis.vmf import log_normalizer


def a3(kappa):
    return 1.0 / math.tanh(kappa) - 1.0 / kappa


class TestBessel:
    @pytest.mark.parametrize("nu", [0.0, 0.5, 1.0, 2.5, 7.5])
    @pytest.mark.parametrize("x", [0.1, 1.0, 5.0, 19.9, 20.0, 50.0, 300.0])
    def test_log_iv_against_scipy(self, nu, x):
        # log I = log(ive) + x
        ref = math.log(special.ive(nu, x)) + x
        assert log_bessel_iv(nu, x) == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_no_overflow_at_large_argument(self):
        val = log_bessel_iv(7.5, 1e5)
        assert math.isfinite(val) and val == pytest.approx(math.log(special.ive(7.5, 1e5)) + 1e5)

    def test_ratio_against_scipy(self):
        for nu, x in [(0.5, 1.0), (1.5, 10.0), (7.5, 3.0), (2.0, 500.0)]:
            assert bessel_ratio(nu, x) == pytest.approx(special.ive(nu + 1, x) / special.ive(nu, x),
                                                        rel=1e-12)

    @pytest.mark.parametrize("kappa", [0.05, 1.0, 5.0, 30.0, 1000.0])
    def test_a3_closed_form(self, kappa):
        assert mean_resultant_length(kappa, 3) == pytest.approx(a3(kappa), rel=1e-12)

    def test_resultant_edge_cases(self):
        assert mean_resultant_length(0.0, 5) == 0.0
        with pytest.raises(OverflowError):
            mean_resultant_length(1e7, 3)
        with pytest.raises(OverflowError):
            log_bessel_iv(1.0, math.inf)
        with pytest.raises(ValueError):
            mean_resultant_length(-1.0, 3)

    def test_normalizer_integrates_to_one_d3(self):
        # on S^2 the density depends on t = cos angle with surface element 2 pi dt
        kappa = 2.0
        c = math.exp(log_normalizer(kappa, 3))
        t = np.linspace(-1, 1, 200_001)
        total = np.trapezoid(c * np.exp(kappa * t) * 2 * np.pi, t)
        assert total == pytest.approx(1.0, rel=1e-8)


class TestVmfSampler:
    @pytest.mark.parametrize("d,kappa", [(3, 1.0), (3, 5.0), (6, 2.0)])
    def test_mean_resultant(self, d, kappa):
        st = vmf_sample_stats(kappa, d, 100_000, np.random.default_rng(11))
        assert abs(st.mean_resultant - mean_resultant_length(kappa, d)) < 0.01
        assert 0.0 <= st.mean_resultant <= 1.0

    def test_d3_kappa5_spot_value(self):
        # coth(5) - 1/5 = 0.80009...
        assert a3(5.0) == pytest.approx(0.8003, abs=5e-4)

    def test_uniform_case(self):
        st = vmf_sample_stats(0.0, 4, 100_000, np.random.default_rng(0))
        assert st.mean_resultant < 0.01 and st.rejections_per_sample == 0

    def test_unit_norm_and_direction(self, rng):
        mu = np.array([0.0, 0.6, 0.8, 0.0])
        x, rej = vmf_sample_batch(mu, 20.0, 4, 5000, rng)
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
        assert rej >= 0
        m = x.mean(axis=0)
        assert m @ mu / np.linalg.norm(m) > 0.999

    def test_single_sampler(self, rng):
        mu = np.array([1.0, 0.0, 0.0])
        xs = np.array([vmf_sample(mu, 5.0, 3, rng)[0] for _ in range(20_000)])
        assert abs(np.linalg.norm(xs.mean(axis=0)) - a3(5.0)) < 0.01

    def test_d2(self, rng):
        x, _ = vmf_sample_batch([1.0, 0.0], 3.0, 2, 50_000, rng)
        ref = special.ive(1, 3.0) / special.ive(0, 3.0)
        assert abs(np.linalg.norm(x.mean(axis=0)) - ref) < 0.01


class TestEntropy:
    @pytest.mark.parametrize("d", [3, 6, 17])
    def test_decreasing(self, d):
        vals = [vmf_entropy(k, d) for k in (0.5, 1, 2, 5, 10, 20)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_uniform_limit(self):
        # entropy of the uniform law on S^2 is log(4 pi)
        assert vmf_entropy(1e-6, 3) == pytest.approx(math.log(4 * math.pi), abs=1e-6)

    def test_matches_scipy_d3(self):
        ref = stats.vonmises_fisher([0, 0, 1], 4.0).entropy()
        assert vmf_entropy(4.0, 3) == pytest.approx(ref, rel=1e-10)

    def test_asymptotic_matches_at_reference(self):
        assert vmf_entropy_asymptotic(20.0, 17) == pytest.approx(vmf_entropy(20.0, 17))

    @pytest.mark.parametrize("d", [3, 6, 17])
    def test_large_kappa_log_slope(self, d):
        # concentrating on a (d-1)-dimensional sphere: H(2k) - H(k) -> -(d-1)/2 log 2
        step = vmf_entropy(2e4, d) - vmf_entropy(1e4, d)
        assert step == pytest.approx(-0.5 * (d - 1) * math.log(2.0), rel=1e-3)

    def test_asymptotic_shape(self):
        k = 7.0
        diff = vmf_entropy_asymptotic(2 * k, 6) - vmf_entropy_asymptotic(k, 6)
        assert diff == pytest.approx(-k + 2.5 * math.log(2.0))

    @pytest.mark.xfail(strict=True, reason="relative gap at d=17, kappa=10 is larger than 0.05; "
                       "the leading-order form is poor far below the matching point")
    def test_asymptotic_d17_kappa10(self):
        exact = vmf_entropy(10.0, 17)
        assert abs(exact - vmf_entropy_asymptotic(10.0, 17)) / abs(exact) < 0.05

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            vmf_entropy(1e9, 3)


class TestSaturation:
    def test_cutoff_against_scipy(self):
        c = saturation_cutoff(0.05)
        assert c == pytest.approx(np.arctanh(np.sqrt(0.95)), rel=1e-14)
        assert 1 - np.tanh(c) ** 2 == pytest.approx(0.05)

    def test_analytic_fraction_against_scipy(self):
        ref = 2 * stats.norm.cdf(-np.arctanh(np.sqrt(0.95)))
        assert analytic_saturation_fraction(0.0, 1.0, 0.05) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("mean,std,thr", [(0.0, 1.0, 0.05), (0.0, 1.0, 0.1), (1.5, 0.5, 0.05),
                                              (-0.7, 2.0, 0.1), (0.0, 3.0, 0.05)])
    def test_mc_agrees(self, mean, std, thr):
        rep = tanh_saturation(mean, std, thr, 400_000, np.random.default_rng(2))
        assert abs(rep.mc_fraction - rep.analytic_fraction) <= 5 * rep.mc_sigma()

    def test_narrow_input_never_saturates(self):
        rep = tanh_saturation(0.0, 1e-6, 0.05, 1000, np.random.default_rng(0))
        assert rep.mc_fraction == 0.0 and rep.analytic_fraction < 1e-300

    def test_policy_log(self):
        assert policy_saturation(np.zeros(50), 0.05).mc_fraction == 0.0
        assert policy_saturation(np.array([3.0, -3.0, 3.0]), 0.05).mc_fraction == 1.0
        with pytest.raises(ValueError):
            policy_saturation([], 0.05)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            saturation_cutoff(1.0)


class TestConcentrationTable:
    def test_rows(self, rng):
        rows = concentration_table(TABLE_KAPPAS, 3, 2000, rng)
        assert [r.kappa for r in rows] == list(TABLE_KAPPAS)
        for r in rows:
            assert r.weight == pytest.approx(1 / (1 + math.exp(-r.kappa)), abs=1e-9)
        means = [r.measured_concentration for r in rows]
        assert means == sorted(means)

    def test_reproducible(self):
        a = concentration_table([0.0, 1.0], 3, 500, np.random.default_rng(5))
        b = concentration_table([0.0, 1.0], 3, 500, np.random.default_rng(5))
        assert a == b


class TestBench:
    def test_rows_and_columns(self, rng):
        rows = bench_sampling(5, [0.0, 5.0], 200, rng, repeats=1)
        assert len(rows) == 2 * 2 * 2
        assert {(r.sampler, r.mode) for r in rows} == {
            ("gac", "single"), ("gac", "batched"), ("vmf", "single"), ("vmf", "batched")}
        for r in rows:
            assert r.time_per_sample > 0 and r.rejections_per_sample >= 0
            assert 0.0 <= r.mean_resultant <= 1.0
            if r.sampler == "gac":
                assert r.rejections_per_sample == 0
