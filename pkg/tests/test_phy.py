import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from green_oran.phy import (
    LinkGain,
    PhyConstants,
    channel_dispersion,
    channel_gain,
    embb_rb_rate,
    embb_user_rate,
    pathloss_db,
    q_function,
    q_inv,
    sinr,
    urllc_rate,
    urllc_rb_bracket,
)

PHY = PhyConstants()
HALF = PhyConstants(urllc_error_target=0.4999999999)  # Q^-1 ~ 0

# Frozen from 40-digit mpmath evaluations (see test_frozen_values_match_mpmath).
PL_250M = 98.22275032520140
GAIN_83_3 = 4.677351412871982e-09
Q_INV_1E5 = 4.264890793922825
Q_OF_2 = 0.02275013194817921
URLLC_OMEGA3 = 208273.85009235077


def test_frozen_values_match_mpmath():
    mp.mp.dps = 40
    assert float(120.8 + 37.5 * mp.log10(mp.mpf("0.25"))) == pytest.approx(PL_250M, rel=1e-15)
    assert float(mp.power(10, mp.mpf("-8.33"))) == pytest.approx(GAIN_83_3, rel=1e-15)
    tail = lambda z: mp.erfc(z / mp.sqrt(2)) / 2  # noqa: E731
    z = mp.findroot(lambda z: tail(z) - mp.mpf("1e-5"), 4.2)
    assert float(z) == pytest.approx(Q_INV_1E5, rel=1e-15)
    assert float(tail(2)) == pytest.approx(Q_OF_2, rel=1e-15)
    expect = 180000 * (2 - mp.sqrt(mp.mpf("0.9375") / 24) * z)
    assert float(expect) == pytest.approx(URLLC_OMEGA3, rel=1e-15)


class TestPathloss:
    def test_unit_distance(self):
        assert pathloss_db(1.0) == pytest.approx(120.8, abs=1e-12)

    def test_hundred_metres(self):
        assert pathloss_db(0.1) == pytest.approx(83.3, abs=1e-12)

    def test_quarter_km(self):
        assert pathloss_db(0.25) == pytest.approx(PL_250M, rel=1e-14)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_non_positive_distance_rejected(self, d):
        with pytest.raises(ValueError):
            pathloss_db(d)

    def test_vectorised(self):
        out = pathloss_db(np.array([0.1, 1.0]))
        np.testing.assert_allclose(out, [83.3, 120.8])


class TestChannelGain:
    def test_calculator_value(self):
        assert channel_gain(83.3, 1.0, 0.0) == pytest.approx(GAIN_83_3, rel=1e-12)

    def test_zero_fading(self):
        assert channel_gain(95.0, 0.0, 7.0) == 0.0

    def test_identity(self):
        assert channel_gain(0.0, 1.0, 0.0) == 1.0

    def test_shadowing_adds_to_pathloss(self):
        assert channel_gain(80.0, 2.0, 3.3) == pytest.approx(channel_gain(83.3, 2.0, 0.0), rel=1e-14)

    def test_negative_fading_rejected(self):
        with pytest.raises(ValueError):
            channel_gain(80.0, -1.0)


def _lg(rx):
    return LinkGain(1.0, rx)


class TestSinr:
    def test_interference_free(self):
        assert sinr(_lg(1e-10), [], [], 1e-10) == pytest.approx(1.0)

    def test_symmetric_interferer(self):
        assert sinr(_lg(1e-10), [_lg(1e-10)], [], 1e-10) == pytest.approx(0.5)
        assert sinr(_lg(1e-10), [_lg(1e-10)], [], 1e-30) == pytest.approx(1.0)

    def test_two_classes(self):
        assert sinr(_lg(2e-10), [_lg(1e-10)], [_lg(0.5e-10)], 0.5e-10) == pytest.approx(1.0)

    def test_noise_must_be_positive(self):
        with pytest.raises(ValueError):
            sinr(_lg(1.0), [], [], 0.0)

    def test_linkgain_rejects_negative(self):
        with pytest.raises(ValueError):
            LinkGain(-1.0, 1.0)

    @given(st.lists(st.floats(0, 1e-8), max_size=6), st.integers(0, 6), st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_invariant_to_list_membership_and_order(self, rx, split, rnd):
        links = [_lg(r) for r in rx]
        base = sinr(_lg(3e-9), links, [], 1e-12)
        shuffled = links[:]
        rnd.shuffle(shuffled)
        k = min(split, len(shuffled))
        assert sinr(_lg(3e-9), shuffled[k:], shuffled[:k], 1e-12) == pytest.approx(base, rel=1e-12)


class TestEmbbRate:
    def test_log2_four(self):
        assert embb_rb_rate(3.0, 0, PHY) == pytest.approx(360000.0)

    def test_fully_punctured(self):
        assert embb_rb_rate(123.0, 7, PHY) == 0.0

    def test_partial(self):
        assert embb_rb_rate(1.0, 2, PHY) == pytest.approx(180e3 * 5 / 7)

    def test_over_punctured_rejected(self):
        with pytest.raises(ValueError):
            embb_rb_rate(1.0, 8, PHY)

    @given(st.floats(0, 1e4), st.floats(0, 1e4), st.integers(0, 7), st.integers(0, 7))
    def test_monotone(self, s1, s2, p1, p2):
        lo_s, hi_s = sorted((s1, s2))
        lo_p, hi_p = sorted((p1, p2))
        assert embb_rb_rate(lo_s, lo_p, PHY) <= embb_rb_rate(hi_s, lo_p, PHY) + 1e-9
        assert embb_rb_rate(hi_s, hi_p, PHY) <= embb_rb_rate(hi_s, lo_p, PHY) + 1e-9


class TestEmbbUserRate:
    def test_zero_row(self):
        assert embb_user_rate([0, 0, 0], [5.0, 6.0, 7.0]) == 0.0

    def test_selection_and_additivity(self):
        assert embb_user_rate([1, 0], [100.0, 999.0]) == 100.0
        assert embb_user_rate([1, 1], [100.0, 200.0]) == 300.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            embb_user_rate([1, 0], [1.0])


class TestDispersion:
    def test_values(self):
        assert channel_dispersion(0.0) == 0.0
        assert channel_dispersion(1.0) == pytest.approx(0.75)
        assert channel_dispersion(1e6) == pytest.approx(1.0 - 1.0 / (1.0 + 1e6) ** 2, rel=1e-15)
        assert channel_dispersion(1e6) < 1.0

    def test_strictly_increasing_in_unit_interval(self):
        s = np.concatenate([[0.0], np.logspace(-6, 6, 2000)])
        d = channel_dispersion(s)
        assert np.all(np.diff(d) > 0)
        assert np.all((d >= 0) & (d < 1))


class TestQInv:
    def test_median(self):
        assert q_inv(0.5) == 0.0

    def test_outage_target(self):
        assert q_inv(1e-5) == pytest.approx(Q_INV_1E5, abs=1e-9)

    def test_inverts_q_of_two(self):
        assert q_inv(Q_OF_2) == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.parametrize("x", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            q_inv(x)

    @given(st.floats(1e-9, 1 - 1e-9))
    @settings(max_examples=500)
    def test_round_trip(self, x):
        assert q_function(q_inv(x)) == pytest.approx(x, abs=1e-8)

    def test_against_mpmath_grid(self):
        mp.mp.dps = 30
        for x in (1e-9, 3e-7, 1e-3, 0.1, 0.3, 0.7, 0.99):
            want = float(mp.sqrt(2) * mp.erfinv(1 - 2 * mp.mpf(x)))
            assert q_inv(x) == pytest.approx(want, abs=1e-9)


class TestUrllcRate:
    def test_shannon_limit_when_q_inv_zero(self):
        assert urllc_rate(1.0, [7], 24, HALF) == pytest.approx(180000.0, rel=1e-8)

    def test_no_puncturing_no_rate(self):
        assert urllc_rate(5.0, [0, 0, 0], 24, PHY) == 0.0

    def test_finite_blocklength_value(self):
        # the closed form evaluates to 208,273.85; see the decisions ledger
        assert urllc_rate(3.0, [7], 24, PHY) == pytest.approx(URLLC_OMEGA3, abs=0.5)

    def test_bracket_floored_at_zero(self):
        assert urllc_rb_bracket(1e-4, 24, 1e-5) == 0.0
        assert urllc_rate(1e-4, [7], 24, PHY) == 0.0

    def test_per_rb_sinr(self):
        two = urllc_rate([3.0, 1.0], [7, 2], 24, PHY)
        assert two == pytest.approx(urllc_rate(3.0, [7], 24, PHY) + urllc_rate(1.0, [2], 24, PHY))

    def test_domain(self):
        with pytest.raises(ValueError):
            urllc_rate(1.0, [8], 24, PHY)
        with pytest.raises(ValueError):
            urllc_rate(1.0, [1], 0, PHY)

    def test_penalty_nonnegative_random(self):
        rng = np.random.default_rng(0)
        n = 100_000
        omega = 10.0 ** rng.uniform(-3, 4, n)
        punct = rng.integers(0, 8, n)
        c = rng.integers(1, 200, n)
        x = 10.0 ** rng.uniform(-9, math.log10(0.49), n)
        shannon = 180e3 * punct / 7 * np.log2(1 + omega)
        got = np.array([
            urllc_rate(o, [p], int(ci), PhyConstants(urllc_error_target=float(xi)))
            for o, p, ci, xi in zip(omega[:5000], punct[:5000], c[:5000], x[:5000])
        ])
        assert np.all(got <= shannon[:5000] + 1e-9)
        # the vectorised bracket covers the full sample
        for xi in (1e-9, 1e-5, 0.01, 0.3):
            b = urllc_rb_bracket(omega, 24, xi)
            assert np.all(b <= np.log2(1 + omega) + 1e-12)
