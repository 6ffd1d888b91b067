"""Dataset ingestion, sliding windows, chronological splits, synthesis.

CSV files are ETT-style: a header row, an optional leading "date"
column, and float64 values everywhere else. Exports use 17 significant
digits so a save/load round trip is bit-exact.

Windows are stride-1 (input_len rows in, horizon rows out). Splits are
chronological by row count; a window belongs to a split only when every
row it touches lies inside that split's range, so train windows can
never peek at validation or test rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class SeriesTable:
    """A dense multivariate series: (rows, n_vars) values plus names."""

    values: np.ndarray
    names: list[str]
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-d, got shape {self.values.shape}")
        if len(self.names) != self.values.shape[1]:
            raise DataError(
                f"{len(self.names)} names for {self.values.shape[1]} variables"
            )
        if self.timestamps is not None:
            if len(self.timestamps) != self.values.shape[0]:
                raise DataError(
                    f"{len(self.timestamps)} timestamps for {self.values.shape[0]} rows"
                )
            for i in range(1, len(self.timestamps)):
                if self.timestamps[i] <= self.timestamps[i - 1]:
                    raise DataError(
                        f"timestamps not strictly increasing at row {i + 1}:"
                        f" {self.timestamps[i]!r} after {self.timestamps[i - 1]!r}"
                    )

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


def load_csv(path: str) -> SeriesTable:
    """Parse a header + float rows; the first column may be dates."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    if not header:
        raise DataError(f"{path} has an empty header row")
    has_dates = header[0].lower() == "date"
    names = header[1:] if has_dates else header
    if not names:
        raise DataError(f"{path} has no value columns")
    data_rows = rows[1:]
    if not data_rows:
        raise DataError(f"{path} has a header but no data rows")

    values = np.empty((len(data_rows), len(names)))
    timestamps: list[str] | None = [] if has_dates else None
    for r, row in enumerate(data_rows, start=1):
        if len(row) != len(header):
            raise DataError(
                f"row {r} has {len(row)} cells, header has {len(header)} columns"
            )
        cells = row[1:] if has_dates else row
        if has_dates:
            timestamps.append(row[0].strip())
        for c, cell in enumerate(cells):
            text = cell.strip()
            if not text:
                raise DataError(f"missing value at row {r}, column {names[c]!r}")
            try:
                values[r - 1, c] = float(text)
            except ValueError:
                raise DataError(
                    f"non-numeric value {text!r} at row {r}, column {names[c]!r}"
                ) from None
    return SeriesTable(values=values, names=names, timestamps=timestamps)


def save_csv(table: SeriesTable, path: str) -> None:
    """Write a table back out; 17 significant digits round-trip float64."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if table.timestamps is not None:
            writer.writerow(["date", *table.names])
            for stamp, row in zip(table.timestamps, table.values):
                writer.writerow([stamp, *(f"{v:.17g}" for v in row)])
        else:
            writer.writerow(table.names)
            for row in table.values:
                writer.writerow([f"{v:.17g}" for v in row])


@dataclass
class Scaler:
    """Per-variable standardization statistics from the training rows."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DataError(f"cannot fit a scaler on shape {values.shape}")
        std = values.std(axis=0)
        # Constant columns scale by 1 so transform stays defined.
        return cls(mean=values.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))


SPLITS = ("train", "val", "test")


@dataclass
class WindowDataset:
    """All stride-1 windows over a series plus per-split index lists."""

    values: np.ndarray
    input_len: int
    horizon: int
    train_end: int
    val_end: int
    splits: dict = field(default_factory=dict)

    @property
    def window_count(self) -> int:
        return self.values.shape[0] - self.input_len - self.horizon + 1

    def split_starts(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; available: {SPLITS}")
        return self.splits[split]

    def batch(self, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Materialize (inputs, targets) for the given window starts."""
        starts = np.asarray(starts, dtype=np.intp)
        steps = np.arange(self.input_len + self.horizon)
        windows = self.values[starts[:, None] + steps[None, :]]
        return windows[:, : self.input_len], windows[:, self.input_len :]


def make_windows(
    values: np.ndarray,
    input_len: int,
    horizon: int,
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
) -> WindowDataset:
    """Enumerate windows and assign them to chronological splits.

    A window starting at row i covers rows [i, i + input_len + horizon);
    it joins a split only if that whole range lies inside the split.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"series values must be 2-d, got shape {values.shape}")
    if input_len < 1 or horizon < 1:
        raise ConfigError(f"input_len and horizon must be >= 1, got {input_len}, {horizon}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1: {ratios}")
    rows = values.shape[0]
    span = input_len + horizon
    if rows < span:
        raise DataError(f"need at least {span} rows for one window, got {rows}")
    # The nudge keeps exact products exact: 0.7 + 0.2 rounds below 0.9,
    # and 100 * that would otherwise truncate to 89.
    train_end = int(rows * ratios[0] + 1e-6)
    val_end = int(rows * (ratios[0] + ratios[1]) + 1e-6)

    def contained(lo, hi):
        starts = np.arange(lo, max(lo, hi - span + 1), dtype=np.intp)
        return starts

    splits = {
        "train": contained(0, train_end),
        "val": contained(train_end, val_end),
        "test": contained(val_end, rows),
    }
    return WindowDataset(
        values=values,
        input_len=input_len,
        horizon=horizon,
        train_end=train_end,
        val_end=val_end,
        splits=splits,
    )


@dataclass
class SynthSpec:
    """Recipe for a sinusoid series with known cross-variable structure.

    ``lag_pairs`` entries (src, dst, lag) overwrite variable ``dst`` with
    variable ``src`` delayed by ``lag`` rows (noise included, so the
    dependency is genuinely informative) plus dst's own noise.
    """

    n_vars: int
    rows: int
    periods: list[float]
    lag_pairs: list[tuple[int, int, int]] = field(default_factory=list)
    noise: float = 0.0
    amplitude: float = 1.0
    seed: int = 0


def synthesize(spec: SynthSpec) -> SeriesTable:
    """Generate the series described by ``spec``, deterministic in seed."""
    if spec.n_vars < 1 or spec.rows < 1:
        raise ConfigError(f"need n_vars >= 1 and rows >= 1, got {spec.n_vars}, {spec.rows}")
    if len(spec.periods) != spec.n_vars:
        raise ConfigError(f"{len(spec.periods)} periods for {spec.n_vars} variables")
    if any(p <= 0 for p in spec.periods):
        raise ConfigError(f"periods must be positive: {spec.periods}")
    if spec.noise < 0:
        raise ConfigError(f"noise must be >= 0, got {spec.noise}")
    targets = set()
    max_lag = 0
    for src, dst, lag in spec.lag_pairs:
        if not (0 <= src < spec.n_vars and 0 <= dst < spec.n_vars):
            raise ConfigError(f"lag pair ({src}, {dst}, {lag}) names a missing variable")
        if src == dst:
            raise ConfigError(f"lag pair ({src}, {dst}, {lag}) copies a variable onto itself")
        if dst in targets:
            raise ConfigError(f"variable {dst} is the target of two lag pairs")
        if lag < 1 or lag >= spec.rows:
            raise ConfigError(f"lag must lie in [1, rows), got {lag} for {spec.rows} rows")
        targets.add(dst)
        max_lag = max(max_lag, lag)

    rng = np.random.default_rng(spec.seed)
    # Noise for a virtual prehistory of max_lag rows keeps lagged copies
    # stationary from row 0 (no startup transient).
    noise = spec.noise * rng.standard_normal((max_lag + spec.rows, spec.n_vars))
    t = np.arange(spec.rows, dtype=np.float64)
    values = np.empty((spec.rows, spec.n_vars))
    for j in range(spec.n_vars):
        values[:, j] = (
            spec.amplitude * np.sin(2.0 * np.pi * t / spec.periods[j])
            + noise[max_lag:, j]
        )
    for src, dst, lag in spec.lag_pairs:
        delayed = t - lag
        values[:, dst] = (
            spec.amplitude * np.sin(2.0 * np.pi * delayed / spec.periods[src])
            + noise[max_lag - lag : max_lag - lag + spec.rows, src]
            + noise[max_lag:, dst]
        )
    names = [f"v{j}" for j in range(spec.n_vars)]
    return SeriesTable(values=values, names=names)
