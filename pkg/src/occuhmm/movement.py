"""Tracking-data preprocessing: from raw position fixes to aligned series.

Pipeline: regularize fixes onto an epoch-anchored time grid, drop
speed-implausible positions, derive step lengths and turning angles, then
impute short covariate gaps and split the record into segments at long
ones. Row t of the derived observation matrix holds the step INTO fix t
(distance from fix t-1) and the turn AT fix t-1 (between steps t-1 and t),
so the covariate driving the transition into t sits on the same row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InputError
from .model import CovariateSeries, ObservationSeries

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8  # mean Earth radius


def _wrap_angle(x):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class RawTrack:
    """Raw position records; timestamps strictly increasing after dedup.

    ``timestamps`` are seconds (unix epoch); duplicate timestamps keep the
    first record (logged). ``geographic=True`` means x/y are lon/lat
    degrees, otherwise planar metres.
    """

    timestamps: np.ndarray
    x: np.ndarray
    y: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    geographic: bool = False

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if not (ts.size == x.size == y.size) or ts.ndim != 1:
            raise InputError("timestamps/x/y must be equal-length 1-d arrays")
        if ts.size < 2:
            raise InputError("a track needs at least 2 records")
        if not np.all(np.isfinite(ts)):
            raise InputError("timestamps must be finite")
        order = np.argsort(ts, kind="stable")
        ts, x, y = ts[order], x[order], y[order]
        covs = {k: np.asarray(v, dtype=float)[order] for k, v in self.covariates.items()}
        keep = np.concatenate(([True], np.diff(ts) > 0))
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            logger.info("dropped %d duplicate-timestamp records", dropped)
        object.__setattr__(self, "timestamps", ts[keep])
        object.__setattr__(self, "x", x[keep])
        object.__setattr__(self, "y", y[keep])
        object.__setattr__(self, "covariates", {k: v[keep] for k, v in covs.items()})

    def __len__(self) -> int:
        return self.timestamps.size

    @classmethod
    def from_csv(
        cls,
        path,
        time_col: str = "timestamp",
        x_col: str = "x",
        y_col: str = "y",
        covariate_cols: tuple[str, ...] = (),
        geographic: bool = False,
    ) -> "RawTrack":
        """Read a delimited file with a header; timestamps ISO-8601."""
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except Exception as exc:
            raise InputError(f"cannot parse {path}: {exc}") from exc
        if frame.empty:
            raise InputError(f"{path} contains no records")
        for col in (time_col, x_col, y_col, *covariate_cols):
            if col not in frame.columns:
                raise InputError(
                    f"required column {col!r} missing from {path} "
                    f"(found: {list(frame.columns)})"
                )
        try:
            ts = pd.to_datetime(frame[time_col], format="ISO8601")
        except (ValueError, TypeError) as exc:
            raise InputError(f"column {time_col!r}: unparseable timestamp ({exc})") from exc
        seconds = ts.astype("int64").to_numpy() / 1e9
        return cls(
            timestamps=seconds,
            x=frame[x_col].to_numpy(dtype=float),
            y=frame[y_col].to_numpy(dtype=float),
            covariates={c: frame[c].to_numpy(dtype=float) for c in covariate_cols},
            geographic=geographic,
        )


@dataclass(frozen=True)
class PreprocessConfig:
    """Thresholds for the preprocessing pipeline.

    ``speed_threshold`` is a displacement per grid interval (same units as
    step lengths: metres for geographic tracks, coordinate units for planar
    ones); infinity disables the outlier filter.
    """

    interval_s: float = 3600.0
    snap_tolerance_s: float = 300.0
    max_covariate_gap: int = 6
    min_segment_length: int = 50
    speed_threshold: float = np.inf

    def __post_init__(self):
        if min(self.interval_s, self.snap_tolerance_s) <= 0:
            raise InputError("interval and snap tolerance must be positive")
        if self.max_covariate_gap < 0 or self.min_segment_length < 1:
            raise InputError("gap/segment thresholds out of range")
        if not self.speed_threshold > 0:
            raise InputError("speed threshold must be positive")


@dataclass
class GriddedTrack:
    """Track snapped onto a regular time grid; NaN coordinates mark missing."""

    grid_times: np.ndarray  # seconds, strictly increasing, equal spacing
    x: np.ndarray
    y: np.ndarray
    covariates: dict[str, np.ndarray]
    interval_s: float
    geographic: bool
    n_dropped: int = 0

    def __len__(self) -> int:
        return self.grid_times.size


def regularize(track: RawTrack, config: PreprocessConfig) -> GriddedTrack:
    """Snap records to the nearest epoch-anchored grid time.

    Records farther than the snap tolerance from any grid time are dropped;
    when several records snap to one slot the temporally closest wins. Grid
    slots with no surviving record become missing.
    """
    slot = np.round(track.timestamps / config.interval_s).astype(np.int64)
    offset = np.abs(track.timestamps - slot * config.interval_s)
    ok = offset <= config.snap_tolerance_s
    if not np.any(ok):
        raise InputError("no record lies within the snap tolerance of the grid")
    dropped = int(np.count_nonzero(~ok))

    lo, hi = slot[ok].min(), slot[ok].max()
    size = int(hi - lo + 1)
    x = np.full(size, np.nan)
    y = np.full(size, np.nan)
    covs = {k: np.full(size, np.nan) for k in track.covariates}
    best = np.full(size, np.inf)
    for i in np.flatnonzero(ok):
        g = int(slot[i] - lo)
        if offset[i] < best[g]:
            if np.isfinite(best[g]):
                dropped += 1
            best[g] = offset[i]
            x[g], y[g] = track.x[i], track.y[i]
            for k in track.covariates:
                covs[k][g] = track.covariates[k][i]
        else:
            dropped += 1
    if dropped:
        logger.info("regularize: dropped %d records (off-grid or duplicate slot)", dropped)
    grid_times = (np.arange(lo, hi + 1, dtype=np.int64)) * config.interval_s
    return GriddedTrack(grid_times.astype(float), x, y, covs,
                        config.interval_s, track.geographic, dropped)


def _haversine_m(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Great-circle distance in metres between lon/lat degree pairs."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _bearing(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Initial bearing (radians clockwise from north) from point 1 to 2."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(lon2) - np.radians(lon1)
    yy = np.sin(dl) * np.cos(p2)
    xx = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dl)
    return np.arctan2(yy, xx)


def remove_outliers(track: GriddedTrack, config: PreprocessConfig) -> GriddedTrack:
    """Blank positions that are speed-implausible from BOTH neighbours.

    A position is removed when its implied displacement per interval to the
    nearest defined position on each side both exceed the threshold —
    isolated spikes go, genuine fast transits (one big displacement) stay.
    Single pass: flags are computed on the input, then applied together.
    """
    if not np.isfinite(config.speed_threshold):
        return track
    defined = np.flatnonzero(~(np.isnan(track.x) | np.isnan(track.y)))
    if defined.size < 3:
        return track
    xs, ys = track.x[defined], track.y[defined]
    if track.geographic:
        dists = _haversine_m(xs[:-1], ys[:-1], xs[1:], ys[1:])
    else:
        dists = np.hypot(np.diff(xs), np.diff(ys))
    steps = np.diff(defined).astype(float)  # grid intervals between defined fixes
    speed = dists / steps
    bad_mid = (speed[:-1] > config.speed_threshold) & (speed[1:] > config.speed_threshold)
    bad_idx = defined[1:-1][bad_mid]
    if bad_idx.size:
        logger.info("outlier filter removed %d positions", bad_idx.size)
        x, y = track.x.copy(), track.y.copy()
        x[bad_idx] = np.nan
        y[bad_idx] = np.nan
        return GriddedTrack(track.grid_times, x, y, track.covariates,
                            track.interval_s, track.geographic, track.n_dropped)
    return track


def steps_and_turns(track: GriddedTrack) -> np.ndarray:
    """Per-grid-row (step, angle) matrix; NaN where underlying fixes miss.

    Steps need two consecutive defined positions, angles three. Turning
    angles are signed (counterclockwise positive) and wrapped to (-pi, pi];
    geographic tracks use haversine distances and initial bearings.
    """
    n = len(track)
    out = np.full((n, 2), np.nan)
    have = ~(np.isnan(track.x) | np.isnan(track.y))
    pair = have[:-1] & have[1:]  # step into row t+1 defined
    idx = np.flatnonzero(pair) + 1
    if idx.size == 0:
        return out
    x0, y0 = track.x[idx - 1], track.y[idx - 1]
    x1, y1 = track.x[idx], track.y[idx]
    if track.geographic:
        out[idx, 0] = _haversine_m(x0, y0, x1, y1)
        heading = np.full(n, np.nan)
        heading[idx] = _bearing(x0, y0, x1, y1)
    else:
        out[idx, 0] = np.hypot(x1 - x0, y1 - y0)

    triple = have[:-2] & have[1:-1] & have[2:]  # angle at row t+2 defined
    tix = np.flatnonzero(triple) + 2
    if tix.size:
        if track.geographic:
            b_prev, b_curr = heading[tix - 1], heading[tix]
            out[tix, 1] = _wrap_angle(b_prev - b_curr)
        else:
            v1x = track.x[tix - 1] - track.x[tix - 2]
            v1y = track.y[tix - 1] - track.y[tix - 2]
            v2x = track.x[tix] - track.x[tix - 1]
            v2y = track.y[tix] - track.y[tix - 1]
            cross = v1x * v2y - v1y * v2x
            dot = v1x * v2x + v1y * v2y
            ang = np.arctan2(cross, dot)
            out[tix, 1] = np.where(ang <= -np.pi, np.pi, ang)
    return out


def impute_and_segment(
    track: GriddedTrack,
    obs_values: np.ndarray,
    config: PreprocessConfig,
) -> tuple[ObservationSeries, CovariateSeries, np.ndarray]:
    """Impute short covariate gaps, break segments at long ones.

    Covariate runs of NaN no longer than ``max_covariate_gap`` and bounded
    by data on both sides are linearly interpolated; anything longer (or at
    the record's edges) splits the series. Observation gaps are never
    imputed — they stay NaN inside segments and the likelihood skips them.
    Segments shorter than ``min_segment_length`` are dropped with a log
    message. Returns the aligned series plus the grid-row index of each
    output row.

    Raises
    ------
    InputError
        No segment survives.
    """
    n = len(track)
    names = sorted(track.covariates)
    cov = np.column_stack([track.covariates[k] for k in names]) if names else np.empty((n, 0))
    cov = cov.astype(float).copy()
    usable = np.ones(n, dtype=bool)
    for c in range(cov.shape[1]):
        col = cov[:, c]
        miss = np.isnan(col)
        if not miss.any():
            continue
        defined = np.flatnonzero(~miss)
        if defined.size == 0:
            usable[:] = False
            break
        # interior runs short enough get linear interpolation
        run_start = None
        for i in range(n + 1):
            if i < n and miss[i]:
                if run_start is None:
                    run_start = i
                continue
            if run_start is None:
                continue
            run = np.arange(run_start, i)
            interior = run_start > 0 and i < n and not miss[run_start - 1] and not miss[i]
            if interior and run.size <= config.max_covariate_gap:
                col[run] = np.interp(run, [run_start - 1, i], [col[run_start - 1], col[i]])
            else:
                usable[run] = False
            run_start = None
        cov[:, c] = col

    segment_rows: list[np.ndarray] = []
    start = None
    n_short = 0
    for i in range(n + 1):
        if i < n and usable[i]:
            if start is None:
                start = i
            continue
        if start is not None:
            rows = np.arange(start, i)
            if rows.size >= config.min_segment_length:
                segment_rows.append(rows)
            else:
                n_short += 1
            start = None
    if n_short:
        logger.info("dropped %d segments shorter than %d",
                    n_short, config.min_segment_length)
    if not segment_rows:
        raise InputError("no segment survives the gap/length thresholds")

    row_index = np.concatenate(segment_rows)
    seg_ids = np.concatenate(
        [np.full(rows.size, k, dtype=np.int64) for k, rows in enumerate(segment_rows)]
    )
    obs = ObservationSeries(np.asarray(obs_values, dtype=float)[row_index], seg_ids)
    covariates = CovariateSeries(cov[row_index], seg_ids)
    return obs, covariates, row_index


@dataclass
class PreprocessResult:
    """Everything the downstream commands need from one preprocessing run."""

    obs: ObservationSeries
    cov: CovariateSeries
    covariate_names: list[str]
    times: np.ndarray      # seconds per output row
    positions: np.ndarray  # (rows, 2) x/y per output row (NaN where missing)
    log: dict


def preprocess_track(track: RawTrack, config: PreprocessConfig) -> PreprocessResult:
    """Full pipeline: regularize, de-spike, derive steps/turns, segment."""
    gridded = regularize(track, config)
    cleaned = remove_outliers(gridded, config)
    obs_values = steps_and_turns(cleaned)
    obs, cov, rows = impute_and_segment(cleaned, obs_values, config)
    names = sorted(cleaned.covariates)
    log = {
        "records_in": len(track),
        "grid_slots": len(cleaned),
        "records_dropped_regularize": gridded.n_dropped,
        "outliers_removed": int(np.count_nonzero(
            ~np.isnan(gridded.x) & np.isnan(cleaned.x))),
        "rows_out": len(obs),
        "n_segments": int(cov.segment_ids.max()) + 1,
        "covariates": names,
        "interval_s": config.interval_s,
    }
    return PreprocessResult(
        obs=obs,
        cov=cov,
        covariate_names=names,
        times=cleaned.grid_times[rows],
        positions=np.column_stack([cleaned.x[rows], cleaned.y[rows]]),
        log=log,
    )


def write_canonical_csv(result: PreprocessResult, path) -> None:
    """Write the aligned-series CSV: t, segment, step, angle, covariates."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t", "segment", "step", "angle"] + result.covariate_names)
        for r in range(len(result.obs)):
            stamp = pd.Timestamp(result.times[r], unit="s").isoformat()
            row = [stamp, int(result.obs.segment_ids[r])]
            for v in result.obs.values[r]:
                row.append("" if np.isnan(v) else repr(float(v)))
            for v in result.cov.values[r]:
                row.append(repr(float(v)))
            writer.writerow(row)


def read_canonical_csv(
    path,
    observation_columns: tuple[str, ...] = ("step", "angle"),
    covariate_columns: tuple[str, ...] | None = None,
) -> tuple[ObservationSeries, CovariateSeries, list[str], np.ndarray]:
    """Read an aligned-series CSV back into aligned series.

    ``covariate_columns=None`` takes every column that is not ``t``,
    ``segment`` or an observation channel. Returns
    (obs, cov, covariate_names, times_seconds); an integer-indexed ``t``
    column is passed through as-is.
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except Exception as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if frame.empty:
        raise InputError(f"canonical CSV {path} has no rows")
    required = ["t", "segment", *observation_columns]
    for col in required:
        if col not in frame.columns:
            raise InputError(f"canonical CSV {path} lacks required column {col!r}")
    if covariate_columns is None:
        names = [c for c in frame.columns if c not in required]
    else:
        names = list(covariate_columns)
        for col in names:
            if col not in frame.columns:
                raise InputError(f"canonical CSV {path} lacks covariate column {col!r}")
    obs_values = frame[list(observation_columns)].to_numpy(dtype=float)
    cov_values = (
        frame[names].to_numpy(dtype=float) if names else np.empty((len(frame), 0))
    )
    seg = frame["segment"].to_numpy(dtype=np.int64)
    try:
        times = pd.to_datetime(frame["t"], format="ISO8601").astype("int64").to_numpy() / 1e9
    except (ValueError, TypeError):
        times = frame["t"].to_numpy(dtype=float)
    obs = ObservationSeries(obs_values, seg)
    cov = CovariateSeries(cov_values, seg)
    return obs, cov, names, times
