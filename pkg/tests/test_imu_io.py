import math

import numpy as np
import pytest

from imupretrain import imu_io
from imupretrain.errors import (
    ConfigError,
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    UpsamplingError,
)
from imupretrain.imu_io import (
    GRAVITY,
    RawRecording,
    SampleWindow,
    Schema,
    load_recordings,
    load_schema,
    normalize,
    read_windows,
    resample,
    slice_windows,
    split_dataset,
    subsample_labels,
    write_windows,
)

AG_LAYOUT = tuple(
    (kind, axis) for kind in ("accel", "gyro") for axis in ("x", "y", "z")
)
AGM_LAYOUT = tuple(
    (kind, axis) for kind in ("accel", "gyro", "mag") for axis in ("x", "y", "z")
)


def make_recording(samples, rate_hz=100.0, layout=AG_LAYOUT, label=None):
    return RawRecording(
        samples=np.asarray(samples, dtype=float),
        rate_hz=rate_hz,
        channel_layout=layout,
        label=label,
    )


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_ag_schema(path, rate_hz=100):
    path.write_text(
        "\n".join(
            [f"rate_hz = {rate_hz}"]
            + [f"channel.{c} = {k}.{a}" for c, k, a in
               [("ax", "accel", "x"), ("ay", "accel", "y"), ("az", "accel", "z"),
                ("gx", "gyro", "x"), ("gy", "gyro", "y"), ("gz", "gyro", "z")]]
        )
        + "\n"
    )


class TestLoadRecordings:
    def test_600_row_csv_single_recording(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(600, 6)).round(4)
        write_csv(csv_path, ["ax", "ay", "az", "gx", "gy", "gz"], rows)
        recs = load_recordings(csv_path, load_schema(schema_path))
        assert len(recs) == 1
        assert recs[0].samples.shape == (600, 6)
        assert recs[0].rate_hz == 100
        np.testing.assert_allclose(recs[0].samples, rows, atol=1e-12)

    def test_non_numeric_cell_cites_line(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        rows = [[0.1] * 6 for _ in range(30)]
        rows[15][2] = "oops"  # line 17 = header + 16 data rows
        write_csv(csv_path, ["ax", "ay", "az", "gx", "gy", "gz"], rows)
        with pytest.raises(ParseError, match="line 17"):
            load_recordings(csv_path, load_schema(schema_path))

    def test_empty_file(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        csv_path.write_text("")
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        with pytest.raises(EmptyInputError):
            load_recordings(csv_path, load_schema(schema_path))

    def test_header_only_is_empty(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        write_csv(csv_path, ["ax", "ay", "az", "gx", "gy", "gz"], [])
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        with pytest.raises(EmptyInputError):
            load_recordings(csv_path, load_schema(schema_path))

    def test_groups_by_subject_and_label_runs(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        schema_path.write_text(
            schema_path.read_text() + "label_column = label\nsubject_column = subject\n"
        )
        rows = []
        for subject, label, count in [("a", 0, 5), ("a", 1, 4), ("b", 0, 3)]:
            for _ in range(count):
                rows.append([0.1] * 6 + [label, subject])
        write_csv(csv_path, ["ax", "ay", "az", "gx", "gy", "gz", "label", "subject"], rows)
        recs = load_recordings(csv_path, load_schema(schema_path))
        assert [(r.subject, r.label, len(r.samples)) for r in recs] == [
            ("a", 0, 5),
            ("a", 1, 4),
            ("b", 0, 3),
        ]

    def test_missing_schema_column(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path)
        write_csv(csv_path, ["ax", "ay", "az"], [[0.1, 0.2, 0.3]])
        with pytest.raises(ConfigError, match="gx"):
            load_recordings(csv_path, load_schema(schema_path))


class TestSchema:
    def test_round_trip(self, tmp_path):
        schema_path = tmp_path / "schema.txt"
        write_ag_schema(schema_path, rate_hz=50)
        schema = load_schema(schema_path)
        assert schema.rate_hz == 50
        assert schema.layout == AG_LAYOUT

    def test_bad_sensor_kind(self, tmp_path):
        schema_path = tmp_path / "schema.txt"
        schema_path.write_text("rate_hz = 50\nchannel.c0 = sonar.x\n")
        with pytest.raises(ParseError, match="sonar"):
            load_schema(schema_path)

    def test_missing_rate(self, tmp_path):
        schema_path = tmp_path / "schema.txt"
        schema_path.write_text("channel.c0 = accel.x\n")
        with pytest.raises(ConfigError, match="rate_hz"):
            load_schema(schema_path)


class TestNormalize:
    def test_accel_divided_by_g(self):
        rec = make_recording([[GRAVITY, 0, 0, 1.7, 0, 0]])
        out = normalize(rec)
        assert out.samples[0, 0] == 1.0

    def test_gyro_unchanged(self):
        rec = make_recording([[GRAVITY, 0, 0, 1.7, -2.5, 0.3]])
        out = normalize(rec)
        np.testing.assert_array_equal(out.samples[0, 3:], [1.7, -2.5, 0.3])

    def test_mag_unit_norm(self):
        row = [0.0] * 6 + [3.0, 4.0, 0.0]
        rec = make_recording([row], layout=AGM_LAYOUT)
        out = normalize(rec)
        np.testing.assert_allclose(out.samples[0, 6:], [0.6, 0.8, 0.0], atol=1e-15)

    def test_zero_norm_mag_left_as_zeros(self):
        imu_io.WARNING_COUNTS.clear()
        row = [0.0] * 9
        rec = make_recording([row], layout=AGM_LAYOUT)
        out = normalize(rec)
        np.testing.assert_array_equal(out.samples[0, 6:], [0.0, 0.0, 0.0])
        assert imu_io.WARNING_COUNTS["zero_norm_mag"] == 1

    def test_shape_preserved_and_mag_norms(self):
        rng = np.random.default_rng(3)
        rec = make_recording(rng.normal(size=(50, 9)), layout=AGM_LAYOUT)
        out = normalize(rec)
        assert out.samples.shape == rec.samples.shape
        norms = np.linalg.norm(out.samples[:, 6:], axis=1)
        assert np.all((np.abs(norms - 1.0) < 1e-9) | (norms == 0.0))

    def test_input_not_mutated(self):
        rec = make_recording([[GRAVITY, 0, 0, 1.0, 0, 0]])
        before = rec.samples.copy()
        normalize(rec)
        np.testing.assert_array_equal(rec.samples, before)


class TestResample:
    def test_integer_decimation(self):
        rec = make_recording(np.arange(500 * 6).reshape(500, 6), rate_hz=100)
        out = resample(rec, 20.0)
        assert out.samples.shape[0] == 100
        assert out.rate_hz == 20.0
        np.testing.assert_array_equal(out.samples, rec.samples[::5])

    def test_nearest_time_matches_bruteforce_oracle(self):
        n = 123
        rec = make_recording(
            np.linspace(0, 1, n)[:, None] * np.ones((1, 6)), rate_hz=50
        )
        out = resample(rec, 20.0)
        assert out.samples.shape[0] == math.floor(n * 20 / 50)
        # oracle: argmin_i |i/source - j/target| = argmin_i |i*target - j*source|,
        # exact integer arithmetic, first (earlier) index on ties
        expected = []
        for j in range(out.samples.shape[0]):
            dists = [abs(i * 20 - j * 50) for i in range(n)]
            expected.append(dists.index(min(dists)))
        np.testing.assert_array_equal(out.samples, rec.samples[expected])

    def test_upsampling_rejected(self):
        rec = make_recording(np.zeros((10, 6)), rate_hz=100)
        with pytest.raises(UpsamplingError):
            resample(rec, 200.0)


class TestSliceWindows:
    def test_600_over_120(self):
        rec = make_recording(np.arange(600 * 6).reshape(600, 6), label=2)
        windows = slice_windows(rec, 120)
        assert len(windows) == 5
        assert all(w.label == 2 for w in windows)
        np.testing.assert_array_equal(windows[0].values, rec.samples[:120])

    def test_short_recording_gives_empty(self):
        rec = make_recording(np.zeros((119, 6)))
        assert slice_windows(rec, 120) == []

    def test_remainder_dropped(self):
        rec = make_recording(np.arange(125 * 6).reshape(125, 6))
        windows = slice_windows(rec, 120)
        assert len(windows) == 1
        np.testing.assert_array_equal(windows[0].values, rec.samples[:120])

    def test_concatenated_windows_prefix_input(self):
        rng = np.random.default_rng(1)
        rec = make_recording(rng.normal(size=(370, 6)))
        windows = slice_windows(rec, 100)
        stacked = np.concatenate([w.values for w in windows])
        np.testing.assert_array_equal(stacked, rec.samples[:300])


def _tiny_windows(n, label=None):
    return [SampleWindow(values=np.full((2, 1), float(i)), label=label) for i in range(n)]


class TestSplitDataset:
    def test_sizes_10(self):
        split = split_dataset(_tiny_windows(10), (0.6, 0.2, 0.2), seed=0)
        assert (len(split.train), len(split.valid), len(split.test)) == (6, 2, 2)

    def test_determinism(self):
        windows = _tiny_windows(50)
        one = split_dataset(windows, (0.6, 0.2, 0.2), seed=9)
        two = split_dataset(windows, (0.6, 0.2, 0.2), seed=9)
        for a, b in zip(one.train + one.valid + one.test, two.train + two.valid + two.test):
            assert a is b

    def test_sizes_9166(self):
        split = split_dataset(_tiny_windows(9166), (0.6, 0.2, 0.2), seed=1)
        assert (len(split.train), len(split.valid), len(split.test)) == (5499, 1833, 1834)

    def test_partition(self):
        windows = _tiny_windows(37)
        split = split_dataset(windows, (0.6, 0.2, 0.2), seed=3)
        recovered = split.train + split.valid + split.test
        assert len(recovered) == 37
        assert {id(w) for w in recovered} == {id(w) for w in windows}

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            split_dataset(_tiny_windows(10), (0.5, 0.2, 0.2), seed=0)

    def test_too_few_windows(self):
        with pytest.raises(InsufficientDataError):
            split_dataset(_tiny_windows(2), (0.6, 0.2, 0.2), seed=0)


class TestSubsampleLabels:
    def _labelled(self, per_class, n_classes):
        windows = []
        for cls in range(n_classes):
            for i in range(per_class):
                windows.append(SampleWindow(values=np.zeros((2, 1)), label=cls))
        return windows

    def test_stratified_counts(self):
        windows = self._labelled(100, 10)
        out = subsample_labels(windows, 0.1, seed=0)
        assert len(out) == 100
        counts = {}
        for w in out:
            counts[w.label] = counts.get(w.label, 0) + 1
        assert all(counts[c] == 10 for c in range(10))

    def test_rate_one_identity(self):
        windows = self._labelled(7, 3)
        out = subsample_labels(windows, 1.0, seed=5)
        assert out == windows

    def test_ceiling_rule(self):
        # single class of 95: ceil(0.05 * 95) = ceil(4.75) = 5
        out = subsample_labels(self._labelled(95, 1), 0.05, seed=2)
        assert len(out) == 5

    def test_monotone_under_same_seed(self):
        windows = self._labelled(40, 4)
        small = subsample_labels(windows, 0.1, seed=11)
        large = subsample_labels(windows, 0.3, seed=11)
        small_ids = {id(w) for w in small}
        large_ids = {id(w) for w in large}
        assert small_ids <= large_ids

    def test_unlabelled_rejected(self):
        windows = [SampleWindow(values=np.zeros((2, 1)), label=None)]
        with pytest.raises(ConfigError):
            subsample_labels(windows, 0.5, seed=0)


class TestContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        windows = [
            SampleWindow(values=rng.normal(size=(12, 4)).astype(np.float32).astype(float),
                         label=(i % 3 if i % 2 == 0 else None))
            for i in range(9)
        ]
        path = tmp_path / "w.bin"
        write_windows(path, windows)
        loaded = read_windows(path)
        assert len(loaded) == 9
        for a, b in zip(windows, loaded):
            np.testing.assert_array_equal(a.values, b.values)
            assert a.label == b.label

    def test_rewrite_byte_identical(self, tmp_path):
        rng = np.random.default_rng(8)
        windows = [SampleWindow(values=rng.normal(size=(5, 3))) for _ in range(4)]
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        write_windows(p1, windows)
        write_windows(p2, windows)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParseError):
            read_windows(path)
