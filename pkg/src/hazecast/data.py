"""Dataset ingestion, scaling, windowing and the synthetic hazy-weather generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyFile, EmptyInput, MissingColumn, ParseError, SeriesTooShort, ValidationError

TARGET_COLUMN = "PV Power Generation"

SCHEMAS = {
    "jiangsu2015": (
        "Direct Normal Irradiance",
        "Global Horizontal Irradiance",
        "Diffuse Horizontal Irradiance",
        "Temperature of Component",
        "Ambient Temperature",
        "Atmospheric Pressure",
        "Relative Humidity",
        TARGET_COLUMN,
    ),
    "beijing2019": (
        "Air Temperature",
        "Precipitation",
        "Snowfall",
        "Snow Mass",
        "Air Density",
        "Ground-level Solar Irradiance",
        "Top of Atmosphere Solar Irradiance",
        "Cloud Cover Fraction",
        TARGET_COLUMN,
    ),
}

UNITS = {
    "Direct Normal Irradiance": "W/m2",
    "Global Horizontal Irradiance": "W/m2",
    "Diffuse Horizontal Irradiance": "W/m2",
    "Temperature of Component": "degC",
    "Ambient Temperature": "degC",
    "Atmospheric Pressure": "hPa",
    "Relative Humidity": "%",
    "Air Temperature": "degC",
    "Precipitation": "mm/hour",
    "Snowfall": "mm/hour",
    "Snow Mass": "kg/m2",
    "Air Density": "kg/m3",
    "Ground-level Solar Irradiance": "W/m2",
    "Top of Atmosphere Solar Irradiance": "W/m2",
    "Cloud Cover Fraction": "fraction",
    "Haze Indicator": "flag",
    TARGET_COLUMN: "MW",
}


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Series:
    name: str
    unit: str
    values: np.ndarray
    timestamps: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values).reshape(-1))
        if self.values.size == 0:
            raise EmptyInput(f"series {self.name!r} is empty")
        if self.timestamps is not None:
            ts = tuple(self.timestamps)
            if len(ts) != self.values.size:
                raise ValidationError("timestamps and values differ in length")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValidationError("timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Dataset:
    features: tuple
    target: Series
    schema_id: str = "generic"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        n = len(self.target)
        for s in self.features:
            if len(s) != n:
                raise ValidationError(f"series {s.name!r} has length {len(s)}, expected {n}")

    def __len__(self):
        return len(self.target)

    @property
    def columns(self) -> list:
        """All series, features first and the target last."""
        return [*self.features, self.target]

    @property
    def names(self) -> list:
        return [s.name for s in self.columns]

    def matrix(self) -> np.ndarray:
        """Values as a [length x n_vars] array; the target is the last column."""
        return np.column_stack([s.values for s in self.columns])


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    def __post_init__(self):
        if self.max < self.min:
            raise ValidationError("scaler max must be >= min")


@dataclass(frozen=True)
class WindowedSample:
    inputs: np.ndarray
    target_future: np.ndarray
    origin_index: int

    def __post_init__(self):
        inputs = _frozen(self.inputs)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "target_future", _frozen(self.target_future).reshape(-1))
        if inputs.shape[0] < 1 or self.target_future.size < 1:
            raise ValidationError("input_len and horizon must be >= 1")

    @property
    def target_history(self) -> np.ndarray:
        """Target channel (last column) of the input window."""
        return self.inputs[:, -1]


def load_dataset(path, schema_id: str, target: Optional[str] = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Named schemas require their exact column set (extra columns are ignored).
    ``schema_id="generic"`` accepts any header and takes ``target`` as the
    target column (default ``"PV Power Generation"``).
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path} has a header but no data rows")

    if schema_id in SCHEMAS:
        wanted = list(SCHEMAS[schema_id])
        target = TARGET_COLUMN
    elif schema_id == "generic":
        target = target or TARGET_COLUMN
        wanted = [h for h in header if h != target] + [target]
    else:
        raise ValidationError(f"unknown schema {schema_id!r}")
    missing = [c for c in wanted if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s) for schema {schema_id}: {', '.join(missing)}")

    index = {name: header.index(name) for name in wanted}
    columns = {name: [] for name in wanted}
    for r, row in enumerate(body, start=2):
        for name, j in index.items():
            cell = row[j].strip() if j < len(row) else ""
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(
                    f"non-numeric cell {cell!r} at row {r}, column {name!r}", row=r, column=name
                ) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite cell {cell!r} at row {r}, column {name!r}", row=r, column=name)
            columns[name].append(value)

    series = [Series(name, UNITS.get(name, ""), columns[name]) for name in wanted]
    return Dataset(features=series[:-1], target=series[-1], schema_id=schema_id)


def write_dataset(d: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.names)
        for row in d.matrix():
            w.writerow([repr(float(v)) for v in row])


def fit_scaler(values) -> ScalerParams:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("cannot fit a scaler on no values")
    return ScalerParams(float(values.min()), float(values.max()))


def apply_scaler(values, p: ScalerParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    span = p.max - p.min
    if span == 0:
        return np.zeros_like(values)
    return (values - p.min) / span


def invert_scaler(values, p: ScalerParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    span = p.max - p.min
    if span == 0:
        return np.full_like(values, p.min)
    return values * span + p.min


def minmax_normalize(s: Series) -> tuple:
    p = fit_scaler(s.values)
    return Series(s.name, s.unit, apply_scaler(s.values, p), s.timestamps), p


def denormalize(s: Series, p: ScalerParams) -> Series:
    return Series(s.name, s.unit, invert_scaler(s.values, p), s.timestamps)


def normalize_dataset(d: Dataset, fit_rows: Optional[int] = None) -> tuple:
    """Scale every variable independently; scalers are fit on the first ``fit_rows`` rows."""
    n = len(d) if fit_rows is None else fit_rows
    if n < 1:
        raise EmptyInput("no rows to fit scalers on")
    scalers = [fit_scaler(s.values[:n]) for s in d.columns]
    scaled = [Series(s.name, s.unit, apply_scaler(s.values, p), s.timestamps) for s, p in zip(d.columns, scalers)]
    return Dataset(scaled[:-1], scaled[-1], d.schema_id), scalers


def make_windows(d: Dataset, input_len: int, horizon: int) -> list:
    if input_len < 1 or horizon < 1:
        raise ValidationError("input_len and horizon must be >= 1")
    L = len(d)
    if L < input_len + horizon:
        raise SeriesTooShort(f"series length {L} < input_len + horizon = {input_len + horizon}")
    mat = d.matrix()
    y = d.target.values
    return [
        WindowedSample(mat[t:t + input_len], y[t + input_len:t + input_len + horizon], t)
        for t in range(L - input_len - horizon + 1)
    ]


def chronological_split(samples: Sequence, train_frac: float, val_frac: float) -> tuple:
    if not samples:
        raise EmptyInput("no samples to split")
    if not (train_frac > 0 and val_frac >= 0 and train_frac + val_frac < 1):
        raise ValidationError("need 0 < train_frac, 0 <= val_frac, train_frac + val_frac < 1")
    n = len(samples)
    n_train = math.floor(n * train_frac)
    n_val = math.floor(n * val_frac)
    samples = list(samples)
    return samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:]


def stack_samples(samples: Sequence) -> tuple:
    """(inputs [n, input_len, n_vars], targets [n, horizon]) arrays."""
    if not samples:
        raise EmptyInput("no samples")
    X = np.stack([s.inputs for s in samples])
    Y = np.stack([s.target_future for s in samples])
    return X, Y


def generate_synthetic(n_days: int, seed: int, haze_fraction: float, peak_power: float = 50.0) -> Dataset:
    """Hourly PV-like data with clear and hazy days.

    Clear days follow a half-sine between 06:00 and 18:00 with 2% multiplicative
    noise; hazy days are attenuated by a factor drawn from U[0.2, 0.6] and carry
    10% multiplicative noise. Nights are exactly zero.
    """
    if n_days < 1:
        raise ValidationError("n_days must be >= 1")
    if not 0.0 <= haze_fraction <= 1.0:
        raise ValidationError("haze_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    hours = np.arange(24, dtype=np.float64)
    clear = np.where((hours > 6) & (hours < 18), np.sin(np.pi * (hours - 6) / 12), 0.0)
    clear = np.clip(clear, 0.0, None)

    # draw every day's random numbers up front so haze_fraction never shifts the stream
    u = rng.random(n_days)
    atten_draw = rng.uniform(0.2, 0.6, n_days)
    noise = rng.standard_normal((n_days, 24))
    temp_noise = rng.standard_normal((n_days, 24))
    day_temp = rng.normal(0.0, 2.0, n_days)

    hazy = u < haze_fraction
    atten = np.where(hazy, atten_draw, 1.0)
    sigma = np.where(hazy, 0.10, 0.02)

    profile = clear[None, :] * atten[:, None]
    power = peak_power * profile * np.clip(1.0 + sigma[:, None] * noise, 0.0, None)
    irradiance = 1000.0 * profile
    temperature = 15.0 + day_temp[:, None] + 8.0 * np.sin(2 * np.pi * (hours - 9) / 24)[None, :] - 3.0 * hazy[:, None]
    temperature = temperature + 0.3 * temp_noise
    haze_flag = np.repeat(hazy.astype(np.float64)[:, None], 24, axis=1)

    start = datetime(2019, 1, 1)
    stamps = tuple((start + timedelta(hours=i)).isoformat() for i in range(24 * n_days))
    feats = [
        Series("Global Horizontal Irradiance", "W/m2", irradiance.ravel(), stamps),
        Series("Ambient Temperature", "degC", temperature.ravel(), stamps),
        Series("Haze Indicator", "flag", haze_flag.ravel(), stamps),
    ]
    target = Series(TARGET_COLUMN, "MW", power.ravel(), stamps)
    return Dataset(feats, target, "generic")
