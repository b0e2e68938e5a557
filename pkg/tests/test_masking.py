import numpy as np
import pytest
from scipy import stats

from imupretrain.errors import ConfigError
from imupretrain.imu_io import SampleWindow
from imupretrain.masking import (
    MaskConfig,
    MaskSpec,
    apply_spec,
    mask_period,
    mask_point,
    mask_sensor,
    mask_subperiod,
    sample_span_length,
    span_length_pmf,
)
from imupretrain.semantics import KeyPointSet, MainPeriod


def make_window(l_win=120, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return SampleWindow(values=rng.normal(size=(l_win, d)))


def assert_exact_masking(masked):
    mask = masked.spec.bool_mask()
    assert np.all(masked.values[mask] == 0.0)
    np.testing.assert_array_equal(masked.values[~mask], masked.original.values[~mask])


class TestMaskSpec:
    def test_sensor_cells_cover_whole_columns(self):
        spec = MaskSpec(level="sensor", shape=(120, 6), columns=(0,))
        assert len(spec.cells) == 120
        assert spec.cells == frozenset((r, 0) for r in range(120))

    def test_row_span_cells(self):
        spec = MaskSpec(level="point", shape=(10, 3), row_start=4, row_stop=7)
        assert spec.cells == frozenset((r, c) for r in (4, 5, 6) for c in range(3))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ConfigError):
            MaskSpec(level="sensor", shape=(10, 3), columns=(3,))
        with pytest.raises(ConfigError):
            MaskSpec(level="point", shape=(10, 3), row_start=5, row_stop=11)


class TestMaskSensor:
    def test_forced_column_zero(self):
        window = make_window()
        spec = MaskSpec(level="sensor", shape=(120, 6), columns=(0,))
        masked = apply_spec(window, spec)
        assert np.all(masked.values[:, 0] == 0.0)
        np.testing.assert_array_equal(masked.values[:, 1:], window.values[:, 1:])
        assert spec.n_cells == 120

    def test_zero_axes_identity(self):
        window = make_window()
        masked = mask_sensor(window, MaskConfig(n_axes=0), rng_seed=0)
        np.testing.assert_array_equal(masked.values, window.values)
        assert len(masked.spec.cells) == 0

    def test_too_many_axes(self):
        window = make_window(d=4)
        # layout validation happens before drawing
        cfg = MaskConfig(n_axes=5)
        with pytest.raises(ConfigError):
            mask_sensor(window, cfg, rng_seed=0)

    def test_column_uniformity(self):
        window = make_window(l_win=2, d=6, seed=1)
        cfg = MaskConfig(n_axes=1)
        n = 100_000
        counts = np.zeros(6)
        for i in range(n):
            masked = mask_sensor(window, cfg, rng_seed=(77, i))
            counts[masked.spec.columns[0]] += 1
        p = 1.0 / 6.0
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 4 * sigma)

    def test_determinism(self):
        window = make_window()
        a = mask_sensor(window, MaskConfig(n_axes=2), rng_seed=123)
        b = mask_sensor(window, MaskConfig(n_axes=2), rng_seed=123)
        assert a.spec.columns == b.spec.columns
        np.testing.assert_array_equal(a.values, b.values)


class TestMaskPoint:
    def test_forced_span(self):
        window = make_window()
        spec = MaskSpec(level="point", shape=(120, 6), row_start=10, row_stop=15)
        masked = apply_spec(window, spec)
        assert np.all(masked.values[10:15, :] == 0.0)
        np.testing.assert_array_equal(masked.values[:10], window.values[:10])
        np.testing.assert_array_equal(masked.values[15:], window.values[15:])

    def test_span_bounds(self):
        window = make_window()
        cfg = MaskConfig(p_geo=0.2, l_max=10)
        for i in range(200):
            masked = mask_point(window, cfg, rng_seed=i)
            length = masked.spec.row_stop - masked.spec.row_start
            assert 1 <= length <= 10
            assert_exact_masking(masked)

    def test_pmf_sums_to_one(self):
        pmf = span_length_pmf(0.2, 12)
        assert abs(pmf.sum() - 1.0) < 1e-12

    def test_span_length_chi_square(self):
        # oracle pmf computed from the formula directly
        p, l_max, n = 0.2, 10, 100_000
        raw = np.array([(1 - p) ** (k - 1) * p for k in range(1, l_max + 1)])
        expected = raw / raw.sum() * n
        rng = np.random.default_rng(2024)
        draws = np.array([sample_span_length(rng, p, l_max) for _ in range(n)])
        observed = np.bincount(draws, minlength=l_max + 1)[1:]
        result = stats.chisquare(observed, expected)
        assert result.pvalue > 0.01


class TestMaskSubperiod:
    def test_segment_rows(self):
        window = make_window()
        spec = MaskSpec(level="subperiod", shape=(120, 6), row_start=40, row_stop=80)
        masked = apply_spec(window, spec)
        assert np.all(masked.values[40:80] == 0.0)
        np.testing.assert_array_equal(masked.values[:40], window.values[:40])

    def test_pick_matches_uniform_draw(self):
        window = make_window()
        kp = KeyPointSet(peaks=(40,), valleys=(80,), w=5, d=10)
        for seed in range(30):
            masked = mask_subperiod(window, kp, seed, MaskConfig())
            pick = int(np.random.default_rng(seed).integers(3))
            boundaries = [0, 40, 80, 120]
            assert masked.spec.row_start == boundaries[pick]
            assert masked.spec.row_stop == boundaries[pick + 1]
            assert_exact_masking(masked)

    def test_empty_keypoints_falls_back_to_point(self):
        window = make_window()
        cfg = MaskConfig()
        kp = KeyPointSet(peaks=(), valleys=(), w=5, d=10)
        fallback = mask_subperiod(window, kp, 99, cfg)
        point = mask_point(window, cfg, 99)
        assert fallback.spec == point.spec
        np.testing.assert_array_equal(fallback.values, point.values)

    def test_segment_uniformity(self):
        window = make_window(l_win=120, d=1)
        kp = KeyPointSet(peaks=(40,), valleys=(80,), w=5, d=10)
        n = 100_000
        counts = np.zeros(3)
        for i in range(n):
            masked = mask_subperiod(window, kp, (5, i), MaskConfig())
            counts[[0, 40, 80].index(masked.spec.row_start)] += 1
        p = 1.0 / 3.0
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 4 * sigma)


class TestMaskPeriod:
    def test_forced_last_segment(self):
        window = make_window()
        spec = MaskSpec(level="period", shape=(120, 6), row_start=80, row_stop=120)
        masked = apply_spec(window, spec)
        assert np.all(masked.values[80:] == 0.0)

    def test_pick_matches_uniform_draw(self):
        window = make_window()
        period = MainPeriod(t_main=40.0, f_index=3)
        for seed in range(30):
            masked = mask_period(window, period, seed, MaskConfig())
            pick = int(np.random.default_rng(seed).integers(3))
            assert masked.spec.row_start == 40 * pick
            assert masked.spec.row_stop == 40 * (pick + 1)

    def test_whole_window_for_period_equal_length(self):
        window = make_window()
        masked = mask_period(window, MainPeriod(t_main=120.0, f_index=1), 7, MaskConfig())
        assert masked.spec.row_start == 0 and masked.spec.row_stop == 120
        assert np.all(masked.values == 0.0)

    def test_remainder_attached_to_last_segment(self):
        window = make_window()
        period = MainPeriod(t_main=50.0, f_index=2)
        seen = set()
        for seed in range(40):
            masked = mask_period(window, period, seed, MaskConfig())
            seen.add((masked.spec.row_start, masked.spec.row_stop))
        assert seen == {(0, 50), (50, 120)}

    def test_no_period_falls_back_to_point(self):
        window = make_window()
        cfg = MaskConfig()
        fallback = mask_period(window, None, 31, cfg)
        point = mask_point(window, cfg, 31)
        assert fallback.spec == point.spec

    def test_t_main_below_two_rejected(self):
        window = make_window()
        with pytest.raises(ConfigError):
            mask_period(window, MainPeriod(t_main=1.0, f_index=120), 0, MaskConfig())


class TestMaskingProperties:
    def test_idempotence(self):
        window = make_window(seed=3)
        cfg = MaskConfig()
        masked = mask_point(window, cfg, 5)
        again = apply_spec(SampleWindow(values=masked.values, label=None), masked.spec)
        np.testing.assert_array_equal(again.values, masked.values)

    def test_different_seeds_decorrelate(self):
        window = make_window()
        cfg = MaskConfig()
        specs = {mask_point(window, cfg, s).spec for s in range(25)}
        assert len(specs) > 5

    def test_exactness_all_levels(self):
        rng = np.random.default_rng(0)
        cfg = MaskConfig()
        kp = KeyPointSet(peaks=(30, 70), valleys=(50,), w=5, d=10)
        period = MainPeriod(t_main=30.0, f_index=4)
        for i in range(50):
            window = SampleWindow(values=rng.normal(size=(120, 6)))
            for masked in (
                mask_sensor(window, cfg, (1, i)),
                mask_point(window, cfg, (2, i)),
                mask_subperiod(window, kp, (3, i), cfg),
                mask_period(window, period, (4, i), cfg),
            ):
                assert_exact_masking(masked)
