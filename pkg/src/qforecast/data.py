"""Series generation, CSV ingestion, normalization and windowing."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LORENZ_CHANNELS = ["x", "y", "z"]

# seven model channels of the wind-turbine dataset, target last
ITER_CHANNELS = [
    "total_energy_demand",
    "renewable_production",
    "renewable_percentage",
    "normalized_power",
    "wind_speed",
    "wind_direction",
    "curtailment_setpoint",
]
ITER_TARGET = "curtailment_setpoint"
OPERATING_STATE = "operating_state"
TIMESTAMP_NAMES = ("timestamp", "time", "date", "datetime")

SHUTDOWN_THRESHOLD = 100.0
MAX_WIND_SPEED = 25.0
MAX_GAP = 8


class DataError(ValueError):
    pass


@dataclass
class RawSeries:
    """Equidistant multichannel series, possibly split into segments.

    ``mask`` marks observed cells (False = interpolated).  ``segments`` are
    half-open row ranges; windows never cross a segment boundary.
    """

    values: np.ndarray
    channel_names: list[str]
    mask: np.ndarray | None = None
    segments: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channel_names):
            raise DataError(f"values {self.values.shape} vs {len(self.channel_names)} channel names")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        if self.segments is None:
            self.segments = [(0, len(self.values))]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# generators

def lorenz_generate(n_points: int = 1000, dt: float = 0.01, sigma: float = 10.0, rho: float = 28.0,
                    beta: float = 8.0 / 3.0, x0=(0.0, -0.01, 9.0)) -> RawSeries:
    """Forward-Euler trajectory of the Lorenz system, initial point included."""
    if n_points < 2:
        raise DataError("n_points must be >= 2")
    if not dt > 0:
        raise DataError("dt must be positive")
    out = np.empty((n_points, 3))
    x, y, z = (float(v) for v in x0)
    out[0] = x, y, z
    for i in range(1, n_points):
        dx = sigma * (y - x)
        dy = -y - z * x + rho * x
        dz = -beta * z + x * y
        x, y, z = x + dt * dx, y + dt * dy, z + dt * dz
        if not np.isfinite((x, y, z)).all():
            raise DataError(f"non-finite state at step {i}; dt={dt} is too large")
        out[i] = x, y, z
    return RawSeries(out, list(LORENZ_CHANNELS))


def surrogate_generate(n_points: int = 4000, seed: int = 0, missing_rate: float = 0.002,
                       shutdown_rate: float = 0.002) -> dict[str, np.ndarray]:
    """Seven correlated wind-farm-like channels plus an operating state.

    Stands in for real wind-farm telemetry in pipeline tests.  Values are in
    raw units; a few cells are NaN and a few rows flag shutdown (state 150)
    or spurious wind speed (> 25 m/s) so ingestion rules get exercised.
    Returns ordered column -> array.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_points)
    day = 96  # 15-minute sampling
    wind = np.empty(n_points)
    wind[0] = 8.0
    for i in range(1, n_points):
        wind[i] = wind[i - 1] + 0.05 * (8.0 - wind[i - 1]) + rng.normal(0, 0.6)
    wind = np.clip(wind, 0.0, 24.5)
    direction = np.mod(30.0 + np.cumsum(rng.normal(0, 4.0, n_points)), 360.0)
    power = np.clip(((wind - 3.0) / 9.0), 0, 1) ** 3
    demand = 450 + 80 * np.sin(2 * np.pi * (t % day) / day - np.pi / 2) + rng.normal(0, 8, n_points)
    renewable = 120 * power + 60 + 40 * np.clip(np.sin(2 * np.pi * (t % day) / day - np.pi / 2), 0, None)
    renewable += rng.normal(0, 4, n_points)
    pct = 100 * renewable / demand
    curtail = np.where(pct > np.percentile(pct, 70), 1.0 - 0.02 * (pct - np.percentile(pct, 70)), 1.0)
    curtail = np.clip(curtail + rng.normal(0, 0.01, n_points), 0.0, 1.0)
    state = np.zeros(n_points)
    state[rng.random(n_points) < shutdown_rate] = 150.0
    cols = {
        "timestamp": t.astype(np.float64),
        OPERATING_STATE: state,
        "total_energy_demand": demand,
        "renewable_production": renewable,
        "renewable_percentage": pct,
        "normalized_power": power,
        "wind_speed": wind,
        "wind_direction": direction,
        "curtailment_setpoint": curtail,
    }
    spurious = rng.random(n_points) < shutdown_rate
    cols["wind_speed"] = np.where(spurious, 40.0, cols["wind_speed"])
    for name in ITER_CHANNELS:
        holes = rng.random(n_points) < missing_rate
        cols[name] = np.where(holes, np.nan, cols[name])
    return cols


def write_csv(path: str | Path, columns: dict[str, np.ndarray], fmt: str = "%.10g"):
    """Comma-separated, header row, empty cell for NaN."""
    path = Path(path)
    names = list(columns)
    n = len(next(iter(columns.values())))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(n):
            w.writerow(["" if np.isnan(columns[k][i]) else fmt % columns[k][i] for k in names])


def series_to_columns(series: RawSeries) -> dict[str, np.ndarray]:
    return {name: series.values[:, j] for j, name in enumerate(series.channel_names)}


# ---------------------------------------------------------------------------
# CSV ingestion

def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"duplicate column names in {path}")
    cols: dict[str, list[float]] = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        for name, cell in zip(header, row):
            cell = cell.strip()
            if name.lower() in TIMESTAMP_NAMES:
                cols[name].append(np.nan)
                continue
            if cell == "":
                cols[name].append(np.nan)
                continue
            try:
                cols[name].append(float(cell))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell {cell!r} in column {name!r}") from None
    return {k: np.asarray(v, dtype=np.float64) for k, v in cols.items()}


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ranges where ``flags`` is True."""
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def unwrap_degrees(angles: np.ndarray) -> np.ndarray:
    """Shortest-arc unwrapping of a degree sequence (NaNs kept in place)."""
    out = angles.copy()
    ok = ~np.isnan(angles)
    out[ok] = np.unwrap(angles[ok], period=360.0)
    return out


def ingest_csv(path: str | Path, schema: list[str] | None = None, target: str | None = None,
               max_gap: int = MAX_GAP, angle_channels: tuple[str, ...] = ("wind_direction",)) -> RawSeries:
    """Load a CSV and apply the filtering / gap rules.

    * timestamp column (any of ``TIMESTAMP_NAMES``) is ignored;
    * rows with ``operating_state > 100`` or ``wind_speed > 25`` are dropped
      and act as hard segment breaks;
    * angle channels are unwrapped across the 0/360 boundary;
    * per-channel gaps of at most ``max_gap`` samples are linearly
      interpolated; longer gaps remove those rows and split the series.
    """
    cols = read_csv(path)
    schema = list(schema or [c for c in cols if c.lower() not in TIMESTAMP_NAMES and c != OPERATING_STATE])
    allowed = set(schema) | {OPERATING_STATE} | {c for c in cols if c.lower() in TIMESTAMP_NAMES}
    unknown = [c for c in cols if c not in allowed]
    if unknown:
        raise DataError(f"unknown columns {unknown}; schema is {schema}")
    missing = [c for c in schema if c not in cols]
    if missing:
        raise DataError(f"columns {missing} missing from {path}")
    if target is not None and target not in schema:
        raise DataError(f"target {target!r} not in schema")

    values = np.column_stack([cols[c] for c in schema])
    n = values.shape[0]
    if n == 0:
        raise DataError(f"{path} has no data rows")

    excluded = np.zeros(n, dtype=bool)
    if OPERATING_STATE in cols:
        excluded |= np.nan_to_num(cols[OPERATING_STATE], nan=0.0) > SHUTDOWN_THRESHOLD
    if "wind_speed" in schema:
        excluded |= np.nan_to_num(values[:, schema.index("wind_speed")], nan=0.0) > MAX_WIND_SPEED
    if excluded.any():
        log.info("excluding %d shutdown / invalid rows", int(excluded.sum()))

    mask = ~np.isnan(values)
    keep = ~excluded
    # long gaps drop their rows as well
    for j in range(values.shape[1]):
        for a, b in _runs(~mask[:, j] & keep):
            if b - a > max_gap:
                keep[a:b] = False

    segments = []
    out = values.copy()
    for a, b in _runs(keep):
        seg = out[a:b]
        for j, name in enumerate(schema):
            col = seg[:, j]
            if name in angle_channels:
                col[:] = unwrap_degrees(col)
            bad = np.isnan(col)
            if bad.all():
                break
            if bad.any():
                idx = np.arange(len(col))
                col[bad] = np.interp(idx[bad], idx[~bad], col[~bad])
        else:
            segments.append((a, b))
    if not segments:
        raise DataError(f"no usable rows left in {path} after filtering")
    # compact: keep only segment rows, re-index segments
    rows = np.concatenate([np.arange(a, b) for a, b in segments])
    new_segments, start = [], 0
    for a, b in segments:
        new_segments.append((start, start + b - a))
        start += b - a
    return RawSeries(out[rows], schema, mask[rows], new_segments)


# ---------------------------------------------------------------------------
# normalization

@dataclass
class Normalizer:
    mode: str
    offset: np.ndarray
    scale: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.offset) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"mode": self.mode, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["mode"], np.asarray(d["offset"], float), np.asarray(d["scale"], float))


def normalize(values: np.ndarray, mode: str = "minmax_01", fit_rows: np.ndarray | slice | None = None) -> Normalizer:
    """Fit per-channel normalization on ``values[fit_rows]`` only."""
    fit = values if fit_rows is None else values[fit_rows]
    if fit.size == 0:
        raise DataError("empty fit range")
    if mode == "minmax_01":
        lo, hi = fit.min(axis=0), fit.max(axis=0)
        span = hi - lo
        if np.any(span == 0):
            raise DataError(f"constant channel(s) {np.flatnonzero(span == 0).tolist()} in min-max fit range")
        return Normalizer(mode, lo, span)
    if mode == "standardize":
        mu, sd = fit.mean(axis=0), fit.std(axis=0)
        if np.any(sd == 0):
            raise DataError("constant channel in standardize fit range")
        return Normalizer(mode, mu, sd)
    raise DataError(f"unknown normalization mode {mode!r}")


# ---------------------------------------------------------------------------
# windowing

@dataclass
class Dataset:
    X: np.ndarray  # (N, T, C)
    Y: np.ndarray  # (N, S, C) or (N, S, 1)
    starts: np.ndarray  # row index of each window's first step
    n_train: int
    normalizer: Normalizer
    channel_names: list[str]
    T: int
    S: int
    target_channel: int | None = None
    n_clamped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[: self.n_train], self.Y[: self.n_train]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.n_train:], self.Y[self.n_train:]

    @property
    def n_windows(self) -> int:
        return len(self.X)


def window_starts(segments: list[tuple[int, int]], T: int, S: int) -> np.ndarray:
    """Stride-1 window start rows; ``b - a - T - S + 1`` per segment."""
    starts = [np.arange(a, b - T - S + 1) for a, b in segments if b - a >= T + S]
    return np.concatenate(starts) if starts else np.zeros(0, dtype=int)


def make_windows(series: RawSeries, T: int, S: int, target: str | int | None = None,
                 split_frac: float = 0.75, mode: str = "minmax_01", clamp: bool = True,
                 normalizer: Normalizer | None = None) -> Dataset:
    """Windows in chronological order; the first ``floor(split_frac * N)``
    are training windows.  Normalization is fit on rows that training
    windows touch, then applied everywhere.  Pass ``normalizer`` to reuse
    an existing fit instead (e.g. one stored with a checkpoint)."""
    if T < 1 or S < 1:
        raise DataError("T and S must be >= 1")
    if not 0 < split_frac < 1:
        raise DataError("split_frac must be in (0, 1)")
    starts = window_starts(series.segments, T, S)
    if len(starts) == 0:
        raise DataError(f"no segment is long enough for T={T}, S={S}")
    n_train = int(np.floor(split_frac * len(starts)))
    if n_train == 0 or n_train == len(starts):
        raise DataError(f"split {split_frac} of {len(starts)} windows leaves an empty side")

    train_rows = np.zeros(series.n_rows, dtype=bool)
    for s in starts[:n_train]:
        train_rows[s:s + T + S] = True
    if normalizer is None:
        norm = normalize(series.values, mode, train_rows)
    else:
        norm = normalizer
        if norm.offset.shape != (series.n_channels,):
            raise DataError(f"normalizer covers {norm.offset.shape[0]} channels, series has {series.n_channels}")
    scaled = norm.transform(series.values)
    n_clamped = 0
    if clamp and norm.mode == "minmax_01":
        outside = (scaled < 0) | (scaled > 1)
        n_clamped = int(outside.sum())
        if n_clamped:
            log.info("clamped %d normalized values outside the training range", n_clamped)
        scaled = np.clip(scaled, 0.0, 1.0)

    tidx = None
    if target is not None:
        if isinstance(target, str):
            if target not in series.channel_names:
                raise DataError(f"target channel {target!r} not among {series.channel_names}")
            tidx = series.channel_names.index(target)
        else:
            tidx = int(target)
        if not 0 <= tidx < series.n_channels:
            raise DataError(f"target channel {target!r} out of range")
    offs = np.arange(T)
    X = scaled[starts[:, None] + offs]
    Y = scaled[starts[:, None] + T + np.arange(S)]
    if tidx is not None:
        Y = Y[:, :, tidx:tidx + 1]
    return Dataset(X, Y, starts, n_train, norm, list(series.channel_names), T, S, tidx, n_clamped)


# ---------------------------------------------------------------------------
# config-driven loading

@dataclass
class DataConfig:
    source: str = "lorenz"
    T: int = 5
    S: int = 1
    split: float = 0.75
    target: str | None = None
    path: str | None = None
    points: int = 1000
    dt: float = 0.01
    mode: str = "minmax_01"
    schema: list[str] | None = None
    surrogate_seed: int = 0

    def __post_init__(self):
        if self.source not in ("lorenz", "csv", "surrogate"):
            raise DataError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.path:
            raise DataError("csv source needs a path")
        if self.T < 1 or self.S < 1:
            raise DataError("T and S must be >= 1")
        if not 0 < self.split < 1:
            raise DataError("split must be in (0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)


def load_series(cfg: DataConfig) -> RawSeries:
    if cfg.source == "lorenz":
        return lorenz_generate(cfg.points, cfg.dt)
    if cfg.source == "surrogate":
        import tempfile

        cols = surrogate_generate(cfg.points, cfg.surrogate_seed)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "surrogate.csv"
            write_csv(path, cols)
            return ingest_csv(path, cfg.schema or ITER_CHANNELS, cfg.target)
    return ingest_csv(cfg.path, cfg.schema, cfg.target)


def load_dataset(cfg: DataConfig) -> Dataset:
    series = load_series(cfg)
    return make_windows(series, cfg.T, cfg.S, cfg.target, cfg.split, cfg.mode)
