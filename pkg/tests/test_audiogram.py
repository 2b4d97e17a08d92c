import numpy as np
import pytest
from hypothesis import given, strategies as st

from haaqinet.audiogram import (
    CATEGORIES, FREQUENCIES, AmbiguousShapeError, Audiogram, AudiogramError, NALR, apply_prescription,
    bank_to_csv, build_bank, classify_audiogram, generate_audiogram, matching_categories, nal_r_gains,
    read_bank, write_bank,
)
from haaqinet.dsp.levels import rms

from conftest import tone


def db(a, b):
    return 20 * np.log10(rms(a) / rms(b))


class TestAudiogramType:
    def test_needs_eight_thresholds(self):
        with pytest.raises(AudiogramError):
            Audiogram((10,) * 7)

    def test_threshold_range(self):
        with pytest.raises(AudiogramError):
            Audiogram((10,) * 7 + (130,))

    def test_normalized_is_db_over_100(self):
        a = Audiogram((50,) * 8)
        np.testing.assert_allclose(a.normalized(), 0.5)


class TestShapes:
    def test_constant_is_flat(self):
        assert classify_audiogram(Audiogram((40,) * 8)) == "flat"

    def test_increasing_is_sloping(self):
        assert classify_audiogram(Audiogram((20, 25, 35, 45, 55, 65, 70, 75))) == "sloping"

    def test_flat_seed_7(self):
        t = generate_audiogram("flat", 7).array
        assert t.max() - t.min() <= 10 and t.min() >= 25

    def test_sloping_seed_1(self):
        t = generate_audiogram("sloping", 1).array
        assert np.all(np.diff(t) >= 0) and t.max() - t.min() >= 20

    def test_noise_notch_at_4k(self):
        t = generate_audiogram("noise-notched", 3).array
        i4, i2, i8 = FREQUENCIES.index(4000), FREQUENCIES.index(2000), FREQUENCIES.index(8000)
        assert t[i4] >= t[i2] + 15 and t[i4] >= t[i8] + 15

    @pytest.mark.parametrize("category", CATEGORIES)
    def test_round_trip_1000_seeds(self, category):
        for seed in range(1000):
            a = generate_audiogram(category, seed)
            assert classify_audiogram(a) == category, (seed, a.thresholds)
            assert a.has_loss

    def test_generation_is_deterministic(self):
        assert generate_audiogram("rising", 11) == generate_audiogram("rising", 11)

    def test_ambiguous_shape_raises(self):
        # a single notch at 250 Hz fits no family
        with pytest.raises(AmbiguousShapeError):
            classify_audiogram(Audiogram((60, 10, 10, 10, 10, 10, 10, 40)))

    @given(st.lists(st.integers(0, 120), min_size=8, max_size=8))
    def test_predicates_never_overlap(self, t):
        assert len(matching_categories(t)) <= 1


class TestBank:
    def test_sizes_and_split(self):
        bank = build_bank(5)
        assert len(bank.all) == 300
        for c in CATEGORIES:
            assert sum(a.category == c for a in bank.train) == 40
            assert sum(a.category == c for a in bank.test) == 10
        assert all(classify_audiogram(a) == a.category for a in bank.all)

    def test_byte_reproducible(self):
        assert bank_to_csv(build_bank(9).all) == bank_to_csv(build_bank(9).all)
        assert bank_to_csv(build_bank(9).all) != bank_to_csv(build_bank(10).all)

    def test_csv_round_trip(self, tmp_path):
        bank = build_bank(2).all
        write_bank(tmp_path / "a.csv", bank)
        assert read_bank(tmp_path / "a.csv") == bank
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "id,category,t250,t500,t1000,t2000,t3000,t4000,t6000,t8000"


class TestNalR:
    def test_normal_hearing_gets_no_gain(self):
        np.testing.assert_array_equal(nal_r_gains(Audiogram((0,) * 8)), 0.0)

    def test_flat_60_at_1k(self):
        g = nal_r_gains(Audiogram((60,) * 8))
        c1k = NALR.correction_db[FREQUENCIES.index(1000)]
        assert g[FREQUENCIES.index(1000)] == pytest.approx(0.05 * 180 + 0.31 * 60 + c1k)

    def test_linearity_outside_three_frequency_average(self):
        base = np.full(8, 50.0)
        g0 = nal_r_gains(Audiogram(tuple(base)))
        i = FREQUENCIES.index(6000)
        bumped = base.copy()
        bumped[i] *= 2
        g1 = nal_r_gains(Audiogram(tuple(bumped)))
        expect = np.zeros(8)
        expect[i] = 0.31 * 50
        np.testing.assert_allclose(g1 - g0, expect, atol=1e-12)

    @given(st.lists(st.integers(0, 110), min_size=8, max_size=8), st.integers(0, 7), st.integers(1, 10))
    def test_monotone(self, t, i, bump):
        t2 = list(t)
        t2[i] = t2[i] + bump
        assert np.all(nal_r_gains(Audiogram(t2)) >= nal_r_gains(Audiogram(t)) - 1e-12)

    @given(st.lists(st.integers(0, 120), min_size=8, max_size=8))
    def test_clamped(self, t):
        g = nal_r_gains(Audiogram(t))
        assert np.all((g >= 0) & (g <= 80))


class TestPrescription:
    def test_zero_gain_is_identity(self, rng):
        x = rng.standard_normal(16000)
        y = apply_prescription(x, np.zeros(8))
        assert 20 * np.log10(rms(y - x) / rms(x)) < -80

    def test_20db_at_1k(self):
        x = tone(1000)
        g = np.zeros(8)
        g[FREQUENCIES.index(1000)] = 20
        # steady-state part only; the FIR transient spans its length at each end
        y = apply_prescription(x, g)
        assert db(y[2000:-2000], x[2000:-2000]) == pytest.approx(20, abs=0.5)

    def test_flat_6db_on_noise(self, rng):
        x = rng.standard_normal(32000)
        y = apply_prescription(x, np.full(8, 6.0))
        assert db(y, x) == pytest.approx(20 * np.log10(1.995), abs=0.2)

    def test_linear_in_amplitude(self, rng):
        x = rng.standard_normal(4000)
        g = nal_r_gains(generate_audiogram("sloping", 0))
        np.testing.assert_allclose(apply_prescription(3 * x, g), 3 * apply_prescription(x, g), atol=1e-10)

    def test_rejects_other_rates(self):
        with pytest.raises(ValueError):
            apply_prescription(np.ones(100), np.zeros(8), fs=32000)
