"""Ingestion of the household power CSV layout into immutable frames.

Frames are never mutated in place; every operation returns a new frame.
Timestamps are kept as integer seconds since the first sample, so four
years of one-minute data stay exact.
"""

import io
import warnings
from dataclasses import dataclass, field, replace
from datetime import date

import numpy as np

from .errors import ConfigError, DataError

ELAPSED_COLUMN = "elapsed_hours"

POWER_SCHEMA = [
    "Global_active_power",
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
]


class ParseError(DataError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrderingError(DataError):
    pass


class BoundaryError(DataError):
    def __init__(self, column):
        super().__init__(
            f"column {column!r} has missing values at the boundary; "
            "interpolation cannot extrapolate (trim the affected rows)"
        )
        self.column = column


@dataclass(frozen=True)
class TimeSeriesFrame:
    names: tuple  # value-column names, ordered
    values: np.ndarray  # (n, len(names)) float64, nan where missing
    missing: np.ndarray  # (n, len(names)) bool
    base_seconds: int  # absolute seconds (proleptic day ordinal * 86400 + time)
    offsets: np.ndarray  # (n,) int64 seconds since row 0

    def __post_init__(self):
        if self.values.shape != self.missing.shape:
            raise DataError("values and missing mask shapes differ")
        if self.values.shape[0] != self.offsets.shape[0]:
            raise DataError("offsets length does not match row count")
        if self.values.shape[1] != len(self.names):
            raise DataError("column count does not match names")

    @property
    def n(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def column_missing(self, name):
        return self.missing[:, self.names.index(name)]

    def elapsed_hours(self):
        return self.offsets.astype(np.float64) / 3600.0

    def with_column(self, name, values, missing=None, front=False):
        values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        if values.shape[0] != self.n:
            raise DataError(f"new column {name!r} has {values.shape[0]} rows, frame has {self.n}")
        if name in self.names:
            raise DataError(f"column {name!r} already exists")
        miss = (
            np.zeros((self.n, 1), dtype=bool)
            if missing is None
            else np.asarray(missing, dtype=bool).reshape(-1, 1)
        )
        if front:
            return replace(
                self,
                names=(name,) + self.names,
                values=np.hstack([values, self.values]),
                missing=np.hstack([miss, self.missing]),
            )
        return replace(
            self,
            names=self.names + (name,),
            values=np.hstack([self.values, values]),
            missing=np.hstack([self.missing, miss]),
        )

    def drop_columns(self, names):
        keep = [k for k, nm in enumerate(self.names) if nm not in set(names)]
        return replace(
            self,
            names=tuple(self.names[k] for k in keep),
            values=self.values[:, keep],
            missing=self.missing[:, keep],
        )

    def slice_rows(self, start, stop):
        return replace(
            self,
            values=self.values[start:stop],
            missing=self.missing[start:stop],
            offsets=self.offsets[start:stop] - self.offsets[start],
            base_seconds=self.base_seconds + int(self.offsets[start]),
        )


def _parse_stamp(date_tok, time_tok, lineno):
    try:
        d, m, y = date_tok.split("/")
        day = date(int(y), int(m), int(d)).toordinal()
        hh, mm, ss = time_tok.split(":")
        hh, mm, ss = int(hh), int(mm), int(ss)
        if not (0 <= hh < 24 and 0 <= mm < 60 and 0 <= ss < 60):
            raise ValueError
    except ValueError:
        raise ParseError(f"malformed timestamp {date_tok!r} {time_tok!r}", lineno) from None
    return day * 86400 + hh * 3600 + mm * 60 + ss


def parse_power_csv(source, schema=None):
    """Parse ';'-separated rows of Date;Time;values into a frame.

    '?' or empty cells are flagged missing, never zero-filled. Timestamps
    must strictly increase.
    """
    if isinstance(source, (str, bytes)) and not (isinstance(source, str) and "\n" in source):
        # a path
        fh = open(source, "r", encoding="utf-8")
        close = True
    elif isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
        close = False
    elif isinstance(source, str):
        fh = io.StringIO(source)
        close = False
    else:
        raw = source.read()
        fh = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw)
        close = False

    try:
        header = fh.readline()
        if not header.strip():
            raise ParseError("empty input: no header row", 1)
        head = [h.strip() for h in header.strip().split(";")]
        if len(head) < 3 or head[0] != "Date" or head[1] != "Time":
            raise ParseError("header must start with 'Date;Time;...'", 1)
        names = tuple(head[2:]) if schema is None else tuple(schema)
        if schema is not None and list(head[2:]) != list(schema):
            raise ParseError(f"header columns {head[2:]} do not match schema {list(schema)}", 1)

        ncol = len(names)
        stamps, rows, miss_rows = [], [], []
        prev = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(";")
            if len(parts) != ncol + 2:
                raise ParseError(f"expected {ncol + 2} fields, got {len(parts)}", lineno)
            stamp = _parse_stamp(parts[0], parts[1], lineno)
            if prev is not None and stamp <= prev:
                raise OrderingError(f"line {lineno}: timestamps must strictly increase")
            prev = stamp
            stamps.append(stamp)
            vals = np.empty(ncol)
            miss = np.zeros(ncol, dtype=bool)
            for k, tok in enumerate(parts[2:]):
                tok = tok.strip()
                if tok == "?" or tok == "":
                    vals[k] = np.nan
                    miss[k] = True
                else:
                    try:
                        vals[k] = float(tok)
                    except ValueError:
                        raise ParseError(f"bad numeric value {tok!r}", lineno) from None
            rows.append(vals)
            miss_rows.append(miss)
    finally:
        if close:
            fh.close()

    n = len(rows)
    base = stamps[0] if n else 0
    offsets = np.asarray([s - base for s in stamps], dtype=np.int64)
    values = np.vstack(rows) if n else np.empty((0, ncol))
    missing = np.vstack(miss_rows) if n else np.empty((0, ncol), dtype=bool)
    return TimeSeriesFrame(
        names=names, values=values, missing=missing, base_seconds=base, offsets=offsets
    )


def write_frame_csv(frame, path_or_fh):
    """Serialize back to the input layout; floats use 17 significant digits
    so a reparse reproduces the frame bitwise."""
    fh = open(path_or_fh, "w", encoding="utf-8") if isinstance(path_or_fh, str) else path_or_fh
    try:
        fh.write("Date;Time;" + ";".join(frame.names) + "\n")
        for r in range(frame.n):
            total = frame.base_seconds + int(frame.offsets[r])
            day, rem = divmod(total, 86400)
            dt = date.fromordinal(day)
            hh, rem = divmod(rem, 3600)
            mm, ss = divmod(rem, 60)
            cells = [f"{dt.day:02d}/{dt.month:02d}/{dt.year:04d}", f"{hh:02d}:{mm:02d}:{ss:02d}"]
            for k in range(len(frame.names)):
                if frame.missing[r, k]:
                    cells.append("?")
                else:
                    cells.append(format(frame.values[r, k], ".17g"))
            fh.write(";".join(cells) + "\n")
    finally:
        if isinstance(path_or_fh, str):
            fh.close()


def compute_elapsed_hours(frame):
    """Add the dynamic variable: hours since the first sample (0 at row 0)."""
    return frame.with_column(ELAPSED_COLUMN, frame.elapsed_hours(), front=True)


def interpolate_missing(frame):
    """Fill missing runs linearly against elapsed time.

    Non-missing cells are preserved exactly; a missing run touching either
    end of a column raises BoundaryError. Returns the filled frame and the
    per-column fill fractions.
    """
    values = frame.values.copy()
    t = frame.offsets.astype(np.float64)
    report = {}
    for k, name in enumerate(frame.names):
        miss = frame.missing[:, k]
        report[name] = float(miss.mean()) if frame.n else 0.0
        if not miss.any():
            continue
        if miss[0] or miss[-1]:
            raise BoundaryError(name)
        values[miss, k] = np.interp(t[miss], t[~miss], values[~miss, k])
    out = replace(frame, values=values, missing=np.zeros_like(frame.missing))
    return out, report


@dataclass
class DropReport:
    pairs: list  # (name_a, name_b, r) with |r| >= threshold
    dropped: list  # later column of each flagged pair
    correlations: dict = field(default_factory=dict)  # (name_a, name_b) -> r


def correlation_screen(frame, threshold):
    """Pearson-correlate all column pairs on rows where both are present.

    Pairs at or above ``threshold`` in |r| are reported and the later
    column of each is marked for dropping.
    """
    if frame.n < 2:
        raise DataError("need at least 2 rows to correlate")
    names = frame.names
    pairs, dropped, corr = [], [], {}
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ok = ~(frame.missing[:, a] | frame.missing[:, b])
            if ok.sum() < 2:
                warnings.warn(f"too few joint observations for {names[a]}/{names[b]}")
                continue
            xa, xb = frame.values[ok, a], frame.values[ok, b]
            sa, sb = xa.std(), xb.std()
            if sa == 0.0 or sb == 0.0:
                warnings.warn(
                    f"zero-variance column in pair {names[a]}/{names[b]}; excluded from screen"
                )
                continue
            r = float(np.mean((xa - xa.mean()) * (xb - xb.mean())) / (sa * sb))
            corr[(names[a], names[b])] = r
            if abs(r) >= threshold:
                pairs.append((names[a], names[b], r))
                if names[b] not in dropped:
                    dropped.append(names[b])
    return DropReport(pairs=pairs, dropped=dropped, correlations=corr)


def derive_active_energy(
    frame,
    power="Global_active_power",
    submeters=("Sub_metering_1", "Sub_metering_2", "Sub_metering_3"),
):
    """Energy not covered by the sub-meters: power * 1000/60 minus all three.

    Missing inputs propagate to a missing output cell.
    """
    vals = frame.column(power) * (1000.0 / 60.0)
    miss = frame.column_missing(power).copy()
    for name in submeters:
        vals = vals - frame.column(name)
        miss |= frame.column_missing(name)
    vals = np.where(miss, np.nan, vals)
    return vals, miss


@dataclass(frozen=True)
class NormalizationStats:
    names: tuple
    means: np.ndarray
    stds: np.ndarray  # population (1/n) standard deviations

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("column,mean,std\n")
            for k, name in enumerate(self.names):
                fh.write(f"{name},{self.means[k]!r},{self.stds[k]!r}\n")

    @classmethod
    def read_csv(cls, path):
        names, means, stds = [], [], []
        with open(path) as fh:
            next(fh)
            for line in fh:
                name, m, s = line.strip().split(",")
                names.append(name)
                means.append(float(m))
                stds.append(float(s))
        return cls(names=tuple(names), means=np.asarray(means), stds=np.asarray(stds))


def normalize(frame, stats=None, fit_rows=None):
    """Z-score every column; population std.

    Without ``stats`` the moments come from ``fit_rows`` (default: all rows,
    callers pass the training range) and are returned for reuse on the
    other splits.
    """
    if frame.missing.any():
        raise DataError("normalize requires a fully observed frame (interpolate first)")
    if stats is None:
        rows = slice(None) if fit_rows is None else fit_rows
        sub = frame.values[rows]
        means = sub.mean(axis=0)
        stds = sub.std(axis=0)  # ddof=0
        for k, s in enumerate(stds):
            if s == 0.0:
                raise DataError(f"column {frame.names[k]!r} is constant; cannot normalize")
        stats = NormalizationStats(names=frame.names, means=means, stds=stds)
    else:
        if tuple(stats.names) != tuple(frame.names):
            raise ConfigError(
                f"stats columns {stats.names} do not match frame columns {frame.names}"
            )
    values = (frame.values - stats.means) / stats.stds
    return replace(frame, values=values), stats


def denormalize(values, stats, names=None):
    """Invert z-scoring for the given (n, p) array of columns ``names``."""
    if names is None:
        names = stats.names
    idx = [stats.names.index(nm) for nm in names]
    return values * stats.stds[idx] + stats.means[idx]


@dataclass(frozen=True)
class LagWindowSet:
    X: np.ndarray  # (n, T, d)
    Y: np.ndarray  # (n, p)
    feature_names: tuple
    target_names: tuple

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def lag(self):
        return self.X.shape[1]

    def rows(self, start, stop):
        return replace(self, X=self.X[start:stop], Y=self.Y[start:stop])


def make_lag_windows(frame, lag, inputs, targets):
    """Supervised pairs: X[i] = rows i..i+lag-1 of inputs, Y[i] = row i+lag
    of targets."""
    if frame.n <= lag:
        raise DataError(f"need more than lag={lag} rows, have {frame.n}")
    xi = [frame.names.index(nm) for nm in inputs]
    yi = [frame.names.index(nm) for nm in targets]
    n = frame.n - lag
    X = np.empty((n, lag, len(xi)))
    for t in range(lag):
        X[:, t, :] = frame.values[t : t + n][:, xi]
    Y = frame.values[lag:][:, yi]
    return LagWindowSet(X=X, Y=Y, feature_names=tuple(inputs), target_names=tuple(targets))


@dataclass(frozen=True)
class SplitSpec:
    train: tuple  # (start, stop) half-open
    validation: tuple
    test: tuple

    @classmethod
    def from_sizes(cls, n_train, n_val, n_test, offset=0):
        a = offset
        b = a + n_train
        c = b + n_val
        return cls(train=(a, b), validation=(b, c), test=(c, c + n_test))

    def ranges(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def split(windows, spec):
    """Chronological, non-overlapping train/validation/test subsets."""
    order = [spec.train, spec.validation, spec.test]
    prev_stop = None
    for name, (start, stop) in zip(("train", "validation", "test"), order):
        if not (0 <= start < stop <= windows.n):
            raise ConfigError(
                f"{name} range [{start}, {stop}) out of bounds for {windows.n} windows"
            )
        if prev_stop is not None and start < prev_stop:
            raise ConfigError(f"{name} range overlaps or precedes the previous split")
        prev_stop = stop
    return tuple(windows.rows(start, stop) for start, stop in order)
