import filecmp
import os

import numpy as np
import pytest

from occuhmm.errors import InputError
from occuhmm.movement import (
    EARTH_RADIUS_M,
    GriddedTrack,
    PreprocessConfig,
    RawTrack,
    _bearing,
    _haversine_m,
    impute_and_segment,
    preprocess_track,
    read_canonical_csv,
    regularize,
    remove_outliers,
    steps_and_turns,
    write_canonical_csv,
)

DATA = os.path.join(os.path.dirname(__file__), "data")


def grid(ts, x, y, covariates=None, interval=100.0, geographic=False):
    return GriddedTrack(
        grid_times=np.asarray(ts, dtype=float),
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        covariates=covariates or {},
        interval_s=interval,
        geographic=geographic,
    )


class TestHaversine:
    def test_equator_degree(self):
        # one degree of longitude on the equator is an exact great-circle arc
        d = _haversine_m(np.array([0.0]), np.array([0.0]),
                         np.array([1.0]), np.array([0.0]))
        assert d[0] == pytest.approx(EARTH_RADIUS_M * np.pi / 180, rel=1e-12)

    def test_london_paris(self):
        d = _haversine_m(np.array([-0.1278]), np.array([51.5074]),
                         np.array([2.3522]), np.array([48.8566]))
        assert d[0] == pytest.approx(343_556.5, abs=1.0)

    def test_bearing_due_east(self):
        b = _bearing(np.array([0.0]), np.array([0.0]),
                     np.array([1.0]), np.array([0.0]))
        assert b[0] == pytest.approx(np.pi / 2, abs=1e-12)


class TestRawTrack:
    def test_missing_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,x\n2024-01-01T00:00:00,1.0\n")
        with pytest.raises(InputError, match="y"):
            RawTrack.from_csv(p, time_col="time")

    def test_unsorted_input_is_sorted(self):
        track = RawTrack(
            timestamps=np.array([200.0, 100.0]),
            x=np.array([2.0, 1.0]),
            y=np.array([2.0, 1.0]),
            covariates={},
        )
        np.testing.assert_array_equal(track.timestamps, [100.0, 200.0])
        np.testing.assert_array_equal(track.x, [1.0, 2.0])

    def test_duplicate_timestamps_collapse(self):
        track = RawTrack(
            timestamps=np.array([100.0, 100.0, 200.0]),
            x=np.array([1.0, 9.0, 2.0]),
            y=np.zeros(3),
            covariates={},
        )
        assert len(track.timestamps) == 2

    def test_needs_two_records(self):
        with pytest.raises(InputError):
            RawTrack(np.array([1.0]), np.array([0.0]), np.array([0.0]), {})


class TestRegularize:
    def cfg(self, **kw):
        base = dict(interval_s=100.0, snap_tolerance_s=10.0,
                    max_covariate_gap=6, min_segment_length=2)
        base.update(kw)
        return PreprocessConfig(**base)

    def test_snap_and_gap(self):
        track = RawTrack(
            timestamps=np.array([0.0, 98.0, 205.0, 410.0]),
            x=np.array([1.0, 2.0, 3.0, 4.0]),
            y=np.zeros(4),
            covariates={},
        )
        g = regularize(track, self.cfg())
        np.testing.assert_array_equal(g.grid_times, [0, 100, 200, 300, 400])
        np.testing.assert_array_equal(g.x, [1.0, 2.0, 3.0, np.nan, 4.0])
        assert g.n_dropped == 0

    def test_nearest_record_wins(self):
        track = RawTrack(
            timestamps=np.array([0.0, 95.0, 102.0, 200.0]),
            x=np.array([0.0, 5.0, 2.0, 9.0]),
            y=np.zeros(4),
            covariates={},
        )
        g = regularize(track, self.cfg())
        assert g.x[1] == 2.0  # offset 2 beats offset 5

    def test_out_of_tolerance_dropped(self):
        track = RawTrack(
            timestamps=np.array([0.0, 160.0, 300.0]),
            x=np.array([1.0, 2.0, 3.0]),
            y=np.zeros(3),
            covariates={},
        )
        g = regularize(track, self.cfg())
        assert g.n_dropped == 1
        assert np.isnan(g.x[1]) and np.isnan(g.x[2])

    def test_all_dropped_is_an_error(self):
        track = RawTrack(
            timestamps=np.array([40.0, 150.0]),
            x=np.array([1.0, 2.0]),
            y=np.zeros(2),
            covariates={},
        )
        with pytest.raises(InputError):
            regularize(track, self.cfg())


class TestRemoveOutliers:
    def test_spike_removed(self):
        # in- and outbound displacements are both huge -> isolated spike
        g = grid([0, 100, 200], [0.0, 5000.0, 10.0], [0.0, 0.0, 0.0])
        cleaned = remove_outliers(g, PreprocessConfig(
            interval_s=100.0, speed_threshold=50.0, min_segment_length=2
        ))
        assert np.isnan(cleaned.x[1])
        assert not np.isnan(cleaned.x[[0, 2]]).any()

    def test_fast_but_consistent_point_survives(self):
        # only the inbound leg is fast; the outbound is slow -> keep it
        g = grid([0, 100, 200], [0.0, 5000.0, 5010.0], [0.0, 0.0, 0.0])
        cleaned = remove_outliers(g, PreprocessConfig(
            interval_s=100.0, speed_threshold=50.0, min_segment_length=2
        ))
        assert not np.isnan(cleaned.x[1])

    def test_disabled_by_default(self):
        g = grid([0, 100, 200], [0.0, 5000.0, 10.0], [0.0, 0.0, 0.0])
        cleaned = remove_outliers(g, PreprocessConfig(interval_s=100.0,
                                                      min_segment_length=2))
        assert not np.isnan(cleaned.x).any()


class TestStepsAndTurns:
    def test_planar_hand_values(self):
        g = grid([0, 100, 200], [0.0, 3.0, 3.0], [0.0, 0.0, 4.0])
        m = steps_and_turns(g)
        assert np.isnan(m[0]).all()
        assert m[1, 0] == pytest.approx(3.0)
        assert np.isnan(m[1, 1])
        assert m[2, 0] == pytest.approx(4.0)
        assert m[2, 1] == pytest.approx(np.pi / 2)  # left turn is positive

    def test_reversal_maps_to_pi(self):
        g = grid([0, 100, 200], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0])
        m = steps_and_turns(g)
        assert m[2, 1] == pytest.approx(np.pi)

    def test_straight_line_zero_turn(self):
        g = grid([0, 100, 200], [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
        m = steps_and_turns(g)
        assert m[2, 1] == pytest.approx(0.0, abs=1e-12)

    def test_missing_fix_breaks_pairs(self):
        g = grid([0, 100, 200, 300], [0.0, np.nan, 2.0, 3.0], np.zeros(4))
        m = steps_and_turns(g)
        assert np.isnan(m[1, 0]) and np.isnan(m[2, 0])
        assert m[3, 0] == pytest.approx(1.0)
        assert np.isnan(m[3, 1])  # turn needs three consecutive fixes

    def test_geographic_turn_sign(self):
        # east then north at the equator: a left turn, like the planar case
        g = grid([0, 100, 200], [0.0, 0.01, 0.01], [0.0, 0.0, 0.01],
                 geographic=True)
        m = steps_and_turns(g)
        assert m[2, 1] == pytest.approx(np.pi / 2, abs=1e-3)


class TestImputeAndSegment:
    def cfg(self, **kw):
        base = dict(interval_s=100.0, max_covariate_gap=2, min_segment_length=3)
        base.update(kw)
        return PreprocessConfig(**base)

    def make_grid(self, temp):
        n = len(temp)
        return grid(100.0 * np.arange(n), np.arange(n, dtype=float), np.zeros(n),
                    covariates={"temp": np.asarray(temp, dtype=float)})

    def test_short_gap_interpolated(self):
        g = self.make_grid([0.0, np.nan, np.nan, 3.0, 4.0])
        obs, cov, rows = impute_and_segment(g, steps_and_turns(g), self.cfg())
        np.testing.assert_allclose(cov.values[:, 0], [0, 1, 2, 3, 4], atol=1e-12)
        assert len(obs) == 5

    def test_long_gap_splits(self):
        temp = [1.0, 1.0, 1.0, np.nan, np.nan, np.nan, 2.0, 2.0, 2.0]
        g = self.make_grid(temp)
        obs, cov, rows = impute_and_segment(g, steps_and_turns(g), self.cfg())
        assert len(obs) == 6
        np.testing.assert_array_equal(obs.segment_ids, [0, 0, 0, 1, 1, 1])

    def test_short_fragment_discarded(self):
        temp = [1.0, 1.0, np.nan, np.nan, np.nan, 2.0, 2.0, 2.0, 2.0]
        g = self.make_grid(temp)
        obs, cov, rows = impute_and_segment(g, steps_and_turns(g), self.cfg())
        assert len(obs) == 4
        np.testing.assert_array_equal(rows, [5, 6, 7, 8])

    def test_nothing_usable(self):
        g = self.make_grid([np.nan] * 5)
        with pytest.raises(InputError):
            impute_and_segment(g, steps_and_turns(g), self.cfg())


class TestGoldenPipeline:
    def load(self):
        return RawTrack.from_csv(
            os.path.join(DATA, "raw_golden.csv"), time_col="time",
            x_col="easting", y_col="northing", covariate_cols=("temp",),
        )

    def cfg(self):
        return PreprocessConfig(interval_s=3600.0, snap_tolerance_s=300.0,
                                max_covariate_gap=6, min_segment_length=10)

    def test_canonical_output_is_stable(self, tmp_path):
        result = preprocess_track(self.load(), self.cfg())
        out = tmp_path / "canonical.csv"
        write_canonical_csv(result, out)
        assert filecmp.cmp(out, os.path.join(DATA, "canonical_golden.csv"),
                           shallow=False)

    def test_log_counts(self):
        result = preprocess_track(self.load(), self.cfg())
        assert result.log["records_in"] == 59  # one duplicate collapsed
        assert result.log["records_dropped_regularize"] == 1
        assert result.log["rows_out"] == 60
        assert result.log["n_segments"] == 1

    def test_round_trip_is_exact(self, tmp_path):
        result = preprocess_track(self.load(), self.cfg())
        out = tmp_path / "canonical.csv"
        write_canonical_csv(result, out)
        obs, cov, names, times = read_canonical_csv(out)
        assert names == ["temp"]
        np.testing.assert_array_equal(obs.values, result.obs.values)
        np.testing.assert_array_equal(cov.values, result.cov.values)
        np.testing.assert_array_equal(times, result.times)


class TestReadCanonical:
    def test_custom_columns(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text(
            "t,segment,x1,z\n0,0,1.5,0.2\n1,0,2.5,0.4\n"
        )
        obs, cov, names, times = read_canonical_csv(p, ("x1",), ("z",))
        np.testing.assert_array_equal(obs.values, [[1.5], [2.5]])
        np.testing.assert_array_equal(cov.values, [[0.2], [0.4]])
        np.testing.assert_array_equal(times, [0.0, 1.0])

    def test_missing_required_column(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("t,step,angle\n0,1.0,0.5\n")
        with pytest.raises(InputError, match="segment"):
            read_canonical_csv(p)
