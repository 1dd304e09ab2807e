"""Information measures against independently computed references.

Frozen constants below were produced with 50-digit arithmetic and
rounded to double precision; tests assert them at 1e-12 unless a wider
tolerance is stated.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routing_audit.errors import DomainError, DpiViolationWarning
from routing_audit.info import (
    JointDistribution,
    binary_entropy,
    bits_to_trust,
    entropy,
    fano_invert,
    fano_lower_bound,
    kl_bernoulli,
    mutual_information,
    routing_efficiency,
    slack_decompose,
    wilson_interval,
)

# 50-digit oracle values.
H_0745 = 0.5677618322739665
PHI50_0745 = 0.4448550510617627
PHI50_0261 = 2.3221576185310796
KL_09_005 = 2.3762054022458987
KL_075_005 = 1.6972873841435725
KL_095_005 = 2.6499950812
KL_0398_0036 = 0.6729253833
KL_075_0036 = 1.9400081069
LN50 = 3.9120230054281460


class TestEntropy:
    def test_uniform(self):
        assert entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)

    def test_point_mass_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_binary_entropy_reference(self):
        assert binary_entropy(0.745) == pytest.approx(H_0745, abs=1e-12)

    def test_binary_entropy_symmetry(self):
        assert binary_entropy(0.3) == pytest.approx(binary_entropy(0.7), abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(DomainError):
            entropy([0.5, 0.6])

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            entropy([1.1, -0.1])

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_binary_entropy_bounds(self, p):
        h = binary_entropy(p)
        assert 0.0 <= h <= math.log(2) + 1e-15


class TestKlBernoulli:
    def test_reference_values(self):
        assert kl_bernoulli(0.9, 0.05) == pytest.approx(KL_09_005, abs=1e-12)
        assert kl_bernoulli(0.75, 0.05) == pytest.approx(KL_075_005, abs=1e-12)
        assert kl_bernoulli(0.95, 0.05) == pytest.approx(KL_095_005, abs=1e-9)
        assert kl_bernoulli(0.398, 0.036) == pytest.approx(KL_0398_0036, abs=1e-9)
        assert kl_bernoulli(0.75, 0.036) == pytest.approx(KL_075_0036, abs=1e-9)

    def test_identical_is_exact_zero(self):
        assert kl_bernoulli(0.37, 0.37) == 0.0
        assert kl_bernoulli(0.0, 0.0) == 0.0
        assert kl_bernoulli(1.0, 1.0) == 0.0

    def test_degenerate_reference_is_infinite(self):
        assert kl_bernoulli(0.5, 0.0) == math.inf
        assert kl_bernoulli(0.5, 1.0) == math.inf

    def test_degenerate_p_finite(self):
        # p in {0,1} against interior q stays finite.
        assert kl_bernoulli(1.0, 0.5) == pytest.approx(math.log(2), abs=1e-12)
        assert kl_bernoulli(0.0, 0.5) == pytest.approx(math.log(2), abs=1e-12)

    def test_alias(self):
        assert bits_to_trust(0.75, 0.05) == kl_bernoulli(0.75, 0.05)

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=1e-9, max_value=1.0 - 1e-9),
    )
    def test_nonnegative(self, p, q):
        assert kl_bernoulli(p, q) >= 0.0

    @given(st.floats(min_value=0.01, max_value=0.99))
    def test_zero_iff_equal(self, p):
        assert kl_bernoulli(p, p) == 0.0
        assert kl_bernoulli(p, min(p + 0.005, 0.995)) > 0.0 or p + 0.005 > 0.995


class TestFano:
    def test_reference_cells(self):
        assert fano_lower_bound(50, 0.745) == pytest.approx(PHI50_0745, abs=1e-12)
        assert fano_lower_bound(50, 0.261) == pytest.approx(PHI50_0261, abs=1e-12)

    def test_zero_error_gives_log_m(self):
        assert fano_lower_bound(50, 0.0) == pytest.approx(LN50, abs=1e-10)

    def test_zero_at_uniform_endpoint(self):
        # The expression vanishes identically at eps = 1 - 1/M; the
        # clamp keeps rounding dust from leaking a negative bound.
        for m in (2, 3, 50):
            b = fano_lower_bound(m, 1.0 - 1.0 / m)
            assert b == pytest.approx(0.0, abs=1e-12)
            assert b >= 0.0

    def test_domain_error_past_uniform(self):
        with pytest.raises(DomainError):
            fano_lower_bound(50, 0.99)
        with pytest.raises(DomainError):
            fano_lower_bound(2, 0.745)

    def test_m_must_be_at_least_two(self):
        with pytest.raises(DomainError):
            fano_lower_bound(1, 0.1)

    @given(st.integers(min_value=2, max_value=200), st.data())
    def test_monotone_in_eps(self, m, data):
        hi = 1.0 - 1.0 / m
        e1 = data.draw(st.floats(min_value=0.0, max_value=hi))
        e2 = data.draw(st.floats(min_value=0.0, max_value=hi))
        lo, hi_e = sorted((e1, e2))
        assert fano_lower_bound(m, lo) >= fano_lower_bound(m, hi_e) - 1e-12


class TestFanoInvert:
    def test_zero_info_gives_uniform_limit(self):
        assert fano_invert(50, 0.0) == pytest.approx(0.98, abs=1e-9)

    def test_round_trip(self):
        for m in (2, 5, 50):
            for eps in (0.0, 0.1, 0.3):
                if eps >= 1 - 1 / m:
                    continue
                info = fano_lower_bound(m, eps)
                eps_back = fano_invert(m, info)
                assert fano_lower_bound(m, eps_back) == pytest.approx(info, abs=1e-9)

    def test_info_above_log_m_rejected(self):
        with pytest.raises(DomainError):
            fano_invert(50, LN50 + 0.1)

    def test_negative_info_rejected(self):
        with pytest.raises(DomainError):
            fano_invert(50, -0.01)

    @given(st.integers(min_value=2, max_value=64), st.floats(min_value=0.0, max_value=1.0))
    def test_inversion_residual(self, m, frac):
        info = frac * math.log(m) * 0.999
        eps = fano_invert(m, info)
        assert 0.0 <= eps <= 1 - 1 / m + 1e-12
        assert fano_lower_bound(m, eps) == pytest.approx(info, abs=1e-8)


def _brute_mi(p: np.ndarray) -> float:
    """Independent MI oracle: direct double loop over the joint."""
    pv = p.sum(axis=1)
    py = p.sum(axis=0)
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                total += p[i, j] * math.log(p[i, j] / (pv[i] * py[j]))
    return total


def _random_uniform_v_joint(rng: np.random.Generator, m: int) -> JointDistribution:
    rows = rng.dirichlet(np.ones(m), size=m)
    joint = rows / m  # uniform V marginal by construction
    return JointDistribution(joint)


class TestMutualInformation:
    def test_independent_is_zero(self):
        j = JointDistribution(np.full((3, 3), 1 / 9))
        assert mutual_information(j) == pytest.approx(0.0, abs=1e-12)

    def test_identity_coupling_is_log_m(self):
        j = JointDistribution(np.eye(4) / 4)
        assert mutual_information(j) == pytest.approx(math.log(4), abs=1e-12)

    def test_against_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            m = int(rng.integers(2, 9))
            j = _random_uniform_v_joint(rng, m)
            assert mutual_information(j) == pytest.approx(_brute_mi(j.p), abs=1e-10)


class TestSlackDecomposition:
    def test_identity_on_random_joints(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            m = int(rng.integers(2, 9))
            j = _random_uniform_v_joint(rng, m)
            d = slack_decompose(j)
            mi = mutual_information(j)
            assert d.mutual_information == pytest.approx(mi, abs=1e-10)
            assert d.fano_term + d.jensen_slack + d.confusion_slack == pytest.approx(
                mi, abs=1e-9
            )
            assert d.jensen_slack >= -1e-10
            assert d.confusion_slack >= -1e-10

    def test_symmetric_channel_has_zero_slack(self):
        # The symmetric-confusion joint meets the bound with equality.
        m, eps = 5, 0.3
        p = np.full((m, m), eps / (m - 1) / m)
        np.fill_diagonal(p, (1 - eps) / m)
        d = slack_decompose(JointDistribution(p))
        assert d.jensen_slack == pytest.approx(0.0, abs=1e-10)
        assert d.confusion_slack == pytest.approx(0.0, abs=1e-10)
        assert d.error_rate == pytest.approx(eps, abs=1e-12)
        assert d.mutual_information == pytest.approx(fano_lower_bound(m, eps), abs=1e-10)

    def test_rejects_nonuniform_v(self):
        p = np.array([[0.5, 0.1], [0.2, 0.2]])
        with pytest.raises(DomainError):
            slack_decompose(JointDistribution(p))

    def test_fano_term_matches_raw_expression(self):
        rng = np.random.default_rng(3)
        j = _random_uniform_v_joint(rng, 6)
        d = slack_decompose(j)
        eps = d.error_rate
        raw = math.log(6) - binary_entropy(eps) - eps * math.log(5)
        assert d.fano_term == pytest.approx(raw, abs=1e-12)


class TestRoutingEfficiency:
    def test_plain_ratio(self):
        assert routing_efficiency(0.45, 2.3221576185310796) == pytest.approx(
            0.19377, abs=1e-4
        )

    def test_zero_available_rejected(self):
        with pytest.raises(DomainError):
            routing_efficiency(0.1, 0.0)

    def test_dpi_violation_warns_and_clamps(self):
        with pytest.warns(DpiViolationWarning):
            eta = routing_efficiency(1.5, 1.0)
        assert eta == 1.0

    def test_within_tolerance_no_warning(self):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert routing_efficiency(1.0 + 1e-12, 1.0) == 1.0


class TestWilson:
    def test_reference_cell(self):
        iv = wilson_interval(399, 400)
        assert iv.lower == pytest.approx(0.98598, abs=1e-4)
        assert iv.upper > 0.999

    def test_brackets_estimate(self):
        for n, s in ((10, 3), (50, 0), (50, 50), (1, 1)):
            iv = wilson_interval(s, n)
            assert iv.lower <= s / n <= iv.upper
            assert 0.0 <= iv.lower <= iv.upper <= 1.0

    def test_mean_coverage_small_n(self):
        # Mean coverage over a fine grid of true p stays near nominal
        # for every n up to 50 (pointwise small-n coverage cannot).
        from math import comb

        grid = [i / 100 for i in range(1, 100)]
        for n in range(1, 51):
            ivs = [wilson_interval(s, n) for s in range(n + 1)]
            cov = []
            for p in grid:
                c = sum(
                    comb(n, s) * p**s * (1 - p) ** (n - s)
                    for s in range(n + 1)
                    if ivs[s].lower <= p <= ivs[s].upper
                )
                cov.append(c)
            assert sum(cov) / len(cov) >= 0.93, f"mean coverage broke at n={n}"

    def test_rejects_bad_counts(self):
        with pytest.raises(DomainError):
            wilson_interval(5, 4)
        with pytest.raises(DomainError):
            wilson_interval(-1, 4)
        with pytest.raises(DomainError):
            wilson_interval(0, 0)


class TestJointDistribution:
    def test_from_channel(self):
        prior = np.array([0.5, 0.5])
        channel = np.array([[0.9, 0.1], [0.2, 0.8]])
        j = JointDistribution.from_channel(prior, channel)
        assert j.p[0, 1] == pytest.approx(0.05, abs=1e-15)
        assert j.row_marginal() == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(DomainError):
            JointDistribution(np.array([[0.5, 0.5], [0.5, 0.5]]))

    def test_immutable(self):
        j = JointDistribution(np.eye(2) / 2)
        with pytest.raises(ValueError):
            j.p[0, 0] = 0.3
