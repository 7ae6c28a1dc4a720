"""Session telemetry: records, CSV ingestion, validation, splits and a synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import radio_metrics as rm
from .kvconfig import ConfigError, format_kv, parse_kv, read_kv

CANONICAL_FIELDS = (
    "timestamp",
    "cell_id",
    "speed_kmh",
    "rssi_dbm",
    "rsrp_dbm",
    "rsrq_db",
    "sinr_db",
    "cqi",
    "dl_mbps",
    "ul_mbps",
    "pos_x",
    "pos_y",
)
REQUIRED_FIELDS = (
    "cell_id",
    "speed_kmh",
    "rssi_dbm",
    "rsrp_dbm",
    "rsrq_db",
    "sinr_db",
    "cqi",
    "dl_mbps",
    "ul_mbps",
)
OPTIONAL_FIELDS = ("timestamp", "pos_x", "pos_y")
# Contextual features used by the regressors, in column order.
MODEL_FEATURES = (
    "speed_kmh",
    "rssi_dbm",
    "rsrp_dbm",
    "rsrq_db",
    "sinr_db",
    "cqi",
    "dl_mbps",
    "ul_mbps",
    "cell_id",
)
INTEGER_FIELDS = ("cell_id", "cqi")
DEFAULT_MISSING = ("", "-", "NA", "N/A", "nan", "NaN", "null")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SessionRecord:
    """One IoE service session. Missing measurements are ``None``."""

    timestamp: float | None
    cell_id: int | None
    speed_kmh: float | None
    rssi_dbm: float | None
    rsrp_dbm: float | None
    rsrq_db: float | None
    sinr_db: float | None
    cqi: int | None
    dl_mbps: float | None
    ul_mbps: float | None
    pos_x: float | None = None
    pos_y: float | None = None

    @property
    def position(self) -> tuple[float, float] | None:
        if self.pos_x is None or self.pos_y is None:
            return None
        return (self.pos_x, self.pos_y)

    def missing_fields(self, names: Iterable[str] = REQUIRED_FIELDS) -> list[str]:
        return [name for name in names if getattr(self, name) is None]


@dataclass(frozen=True)
class GnbSite:
    cell_id: int
    position: tuple[float, float]
    tx_power_dbm: float = 46.0
    coverage_radius_m: float = 1000.0

    def __post_init__(self) -> None:
        if not self.coverage_radius_m > 0:
            raise DatasetError(f"site {self.cell_id}: coverage radius must be > 0")


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss ``PL0 + 10 n log10(d / d0)``; distances below d0 clamp to d0."""

    pl0_db: float = 40.0
    exponent: float = 3.0
    d0_m: float = 1.0

    def loss_db(self, distance_m):
        d = np.maximum(np.asarray(distance_m, dtype=float), self.d0_m)
        return self.pl0_db + 10.0 * self.exponent * np.log10(d / self.d0_m)


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    rows_dropped: int
    dropped: tuple[tuple[int, str], ...]
    flagged: tuple[tuple[int, tuple[str, ...]], ...]

    @property
    def rows_flagged(self) -> int:
        return len(self.flagged)


@dataclass(frozen=True)
class Dataset:
    records: tuple[SessionRecord, ...]
    feature_names: tuple[str, ...] = MODEL_FEATURES
    split: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    topology: tuple[GnbSite, ...] | None = None
    channel: PathLossModel | None = None
    ingest_report: IngestReport | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DatasetError(f"duplicate feature names in {self.feature_names}")
        if self.topology is not None:
            object.__setattr__(self, "topology", tuple(self.topology))
            ids = [s.cell_id for s in self.topology]
            if len(set(ids)) != len(ids):
                raise DatasetError("duplicate cell ids in topology")
        if self.split is not None:
            train, test = (tuple(int(i) for i in part) for part in self.split)
            n = len(self.records)
            if set(train) & set(test):
                raise DatasetError("train and test indices overlap")
            bad = [i for i in train + test if not 0 <= i < n]
            if bad:
                raise DatasetError(f"split index out of range: {bad[0]}")
            object.__setattr__(self, "split", (train, test))

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """Field values as float64; missing entries are NaN."""
        return np.array(
            [np.nan if (v := getattr(r, name)) is None else float(v) for r in self.records],
            dtype=float,
        )

    def matrix(self, names: Sequence[str], rows: Sequence[int] | None = None) -> np.ndarray:
        cols = [self.column(name) for name in names]
        X = np.column_stack(cols) if cols else np.empty((len(self), 0))
        if rows is not None:
            X = X[np.asarray(rows, dtype=int)]
        return X

    def complete_rows(self, names: Sequence[str], rows: Sequence[int] | None = None) -> np.ndarray:
        idx = np.arange(len(self)) if rows is None else np.asarray(rows, dtype=int)
        X = self.matrix(names, idx)
        return idx[np.all(np.isfinite(X), axis=1)] if len(idx) else idx

    @property
    def train_indices(self) -> tuple[int, ...]:
        return self._require_split()[0]

    @property
    def test_indices(self) -> tuple[int, ...]:
        return self._require_split()[1]

    def _require_split(self):
        if self.split is None:
            raise DatasetError("dataset has no train/test split; run train_test_split first")
        return self.split

    def site(self, cell_id: int) -> GnbSite:
        for s in self.topology or ():
            if s.cell_id == cell_id:
                return s
        raise KeyError(cell_id)


# --------------------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class ColumnMapping:
    """Source column -> canonical field, with a scale factor per column.

    For ``timestamp`` the scale slot may instead hold a ``strptime`` format.
    """

    columns: dict[str, tuple[str, float | str]]  # canonical -> (source, scale|format)
    missing_values: tuple[str, ...] = DEFAULT_MISSING

    def __post_init__(self) -> None:
        unknown = set(self.columns) - set(CANONICAL_FIELDS)
        if unknown:
            raise ConfigError(f"unknown canonical fields: {sorted(unknown)}")
        absent = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if absent:
            raise ConfigError(f"mapping does not cover required fields: {absent}")

    @classmethod
    def identity(cls) -> "ColumnMapping":
        return cls({name: (name, 1.0) for name in CANONICAL_FIELDS})

    @classmethod
    def parse(cls, text: str, source: str = "<mapping>") -> "ColumnMapping":
        columns: dict[str, tuple[str, float | str]] = {}
        missing = DEFAULT_MISSING
        for lineno, key, value in parse_kv(text, source):
            if key == "missing_values":
                missing = tuple(v.strip() for v in value.split(",")) + ("",)
                continue
            target, _, scale_text = value.partition(":")
            target = target.strip()
            if target not in CANONICAL_FIELDS:
                raise ConfigError(f"unknown canonical field {target!r}", source, lineno)
            if target in columns:
                raise ConfigError(f"canonical field {target!r} mapped twice", source, lineno)
            scale: float | str = 1.0
            if scale_text:
                try:
                    scale = float(scale_text)
                except ValueError:
                    if target != "timestamp":
                        raise ConfigError(f"bad scale {scale_text!r}", source, lineno) from None
                    scale = scale_text
            columns[target] = (key, scale)
        try:
            return cls(columns, missing)
        except ConfigError as exc:
            raise ConfigError(str(exc), source) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnMapping":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read mapping: {exc}", str(path)) from exc
        return cls.parse(text, str(path))


def _parse_value(name: str, raw: str, scale: float | str):
    if name == "timestamp" and isinstance(scale, str):
        stamp = datetime.strptime(raw, scale).replace(tzinfo=timezone.utc)
        return stamp.timestamp()
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {raw!r}")
    value *= scale
    if name in INTEGER_FIELDS:
        if value != int(value):
            raise ValueError(f"{name} must be an integer, got {raw!r}")
        return int(value)
    return value


def ingest_csv(path: str | Path, mapping: ColumnMapping | None = None) -> Dataset:
    """Read a delimited trace into a :class:`Dataset`.

    Rows with unparseable values are dropped; rows with missing-value
    sentinels are kept (the field becomes ``None``) and flagged. Both are
    listed in ``Dataset.ingest_report``.
    """
    explicit = mapping is not None
    mapping = mapping or ColumnMapping.identity()
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row expected") from None
        positions = {}
        for canonical, (source, _) in mapping.columns.items():
            if source not in header:
                if canonical in OPTIONAL_FIELDS and not explicit:
                    continue
                raise DatasetError(f"{path}: mapped column {source!r} not in header")
            positions[canonical] = header.index(source)
        missing = set(mapping.missing_values)
        records, dropped, flagged = [], [], []
        rows_read = 0
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            rows_read += 1
            if len(row) != len(header):
                dropped.append((rowno, f"expected {len(header)} fields, got {len(row)}"))
                continue
            values: dict[str, object] = {name: None for name in CANONICAL_FIELDS}
            absent = []
            try:
                for canonical, col in positions.items():
                    raw = row[col].strip()
                    if raw in missing:
                        absent.append(canonical)
                        continue
                    values[canonical] = _parse_value(canonical, raw, mapping.columns[canonical][1])
            except ValueError as exc:
                dropped.append((rowno, f"{canonical}: {exc}"))
                continue
            if values["timestamp"] is None and "timestamp" not in positions:
                values["timestamp"] = float(len(records))
            flagged_fields = tuple(f for f in absent if f in REQUIRED_FIELDS or f == "timestamp")
            if flagged_fields:
                flagged.append((len(records), flagged_fields))
            records.append(SessionRecord(**values))
    if not records:
        raise DatasetError(f"{path}: no rows survived ingestion ({len(dropped)} dropped)")
    report = IngestReport(rows_read, len(dropped), tuple(dropped), tuple(flagged))
    return Dataset(records, ingest_report=report)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write records in the canonical column order; floats use shortest round-trip repr."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CANONICAL_FIELDS)
        for rec in ds.records:
            writer.writerow([_fmt(getattr(rec, name)) for name in CANONICAL_FIELDS])


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    row: int
    field: str
    value: object
    reason: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    missing: tuple[tuple[int, tuple[str, ...]], ...]
    duplicate_timestamps: tuple[tuple[int, float, tuple[int, ...]], ...]

    @property
    def ok(self) -> bool:
        return not self.violations and not self.duplicate_timestamps

    def lines(self) -> list[str]:
        out = [f"row {v.row}: {v.field}={v.value!r} {v.reason}" for v in self.violations]
        out += [f"row {row}: missing {', '.join(fields)}" for row, fields in self.missing]
        out += [
            f"cell {cell}: timestamp {ts!r} repeated in rows {list(rows)}"
            for cell, ts, rows in self.duplicate_timestamps
        ]
        return out


def validate(ds: Dataset) -> ValidationReport:
    violations = []
    missing = []
    known_cells = {s.cell_id for s in ds.topology} if ds.topology is not None else None
    seen: dict[tuple[int, float], list[int]] = {}
    for i, rec in enumerate(ds.records):
        absent = tuple(rec.missing_fields())
        if absent:
            missing.append((i, absent))
        for name in ("speed_kmh", "dl_mbps", "ul_mbps"):
            value = getattr(rec, name)
            if value is not None and value < 0:
                violations.append(Violation(i, name, value, "must be >= 0"))
        if rec.cqi is not None and not rm.CQI_MIN <= rec.cqi <= rm.CQI_MAX:
            violations.append(Violation(i, "cqi", rec.cqi, "outside [0, 15]"))
        if known_cells is not None and rec.cell_id is not None and rec.cell_id not in known_cells:
            violations.append(Violation(i, "cell_id", rec.cell_id, "not a declared gNB"))
        if rec.timestamp is not None and rec.cell_id is not None:
            seen.setdefault((rec.cell_id, rec.timestamp), []).append(i)
    duplicates = tuple(
        (cell, ts, tuple(rows)) for (cell, ts), rows in sorted(seen.items()) if len(rows) > 1
    )
    return ValidationReport(tuple(violations), tuple(missing), duplicates)


# --------------------------------------------------------------------------- split


def train_test_split(ds: Dataset, n_train: int, n_test: int, seed: int) -> Dataset:
    if n_train < 0 or n_test < 0:
        raise DatasetError("partition sizes must be non-negative")
    if n_train + n_test > len(ds):
        raise DatasetError(f"requested {n_train} + {n_test} rows but dataset has {len(ds)}")
    order = np.random.default_rng(seed).permutation(len(ds))
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(sorted(int(i) for i in order[n_train : n_train + n_test]))
    return replace(ds, split=(train, test))


# --------------------------------------------------------------------------- summary


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return float(sorted_values[rank - 1])


def describe(values: Sequence[float]) -> dict[str, float]:
    """min, p25, p50, p75, max (nearest rank) and mean of a non-empty vector."""
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size == 0:
        raise DatasetError("cannot summarise an empty vector")
    return {
        "count": float(arr.size),
        "min": float(arr[0]),
        "p25": nearest_rank(arr, 25),
        "p50": nearest_rank(arr, 50),
        "p75": nearest_rank(arr, 75),
        "max": float(arr[-1]),
        "mean": float(math.fsum(arr) / arr.size),
    }


def summary_stats(ds: Dataset, fields: Sequence[str] = MODEL_FEATURES) -> dict[str, dict[str, float]]:
    if len(ds) == 0:
        raise DatasetError("empty dataset")
    out = {}
    for name in fields:
        col = ds.column(name)
        col = col[np.isfinite(col)]
        if col.size:
            out[name] = describe(col)
    return out


def write_summary(stats: dict[str, dict[str, float]], path: str | Path) -> None:
    keys = ("count", "min", "p25", "p50", "p75", "max", "mean")
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("field",) + keys)
        for name, row in stats.items():
            writer.writerow([name] + [repr(row[k]) for k in keys])


# --------------------------------------------------------------------------- synthetic generator


@dataclass(frozen=True)
class ScenarioConfig:
    sites: tuple[GnbSite, ...]
    n_sessions: int = 2206
    max_speed_kmh: float = 88.0
    pathloss: PathLossModel = PathLossModel()
    shadowing_db: float = 4.0
    seed: int = 0
    num_rbs: int = 100
    bandwidth_hz: float = 20e6
    dl_cap_mbps: float = 170.06
    ul_cap_mbps: float = 0.825
    rate_slope: float = 0.6
    rate_center: float = 8.0
    rate_noise: float = 0.25
    area_margin_m: float = 100.0
    start_time: float = 1581599004.0
    interval_s: float = 1.0
    n_train: int | None = None
    n_test: int | None = None
    positions: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        problems = []
        if not self.sites:
            problems.append("at least one gNB site is required")
        if self.n_sessions < 1:
            problems.append("n_sessions must be >= 1")
        if self.max_speed_kmh < 0:
            problems.append("max_speed_kmh must be >= 0")
        if self.shadowing_db < 0:
            problems.append("shadowing_db must be >= 0")
        if self.pathloss.exponent <= 0 or self.pathloss.d0_m <= 0:
            problems.append("path-loss exponent and d0 must be > 0")
        if self.num_rbs < 1 or self.bandwidth_hz <= 0:
            problems.append("num_rbs >= 1 and bandwidth_hz > 0 required")
        if self.dl_cap_mbps < 0 or self.ul_cap_mbps < 0 or self.rate_noise < 0:
            problems.append("rate caps and rate noise must be >= 0")
        if self.positions is not None and len(self.positions) != self.n_sessions:
            problems.append("positions must list one point per session")
        if (self.n_train is None) != (self.n_test is None):
            problems.append("n_train and n_test must be given together")
        elif self.n_train is not None and self.n_train + self.n_test > self.n_sessions:
            problems.append("n_train + n_test exceeds n_sessions")
        if problems:
            raise ConfigError("; ".join(problems))


def grid_sites(
    rows: int, cols: int, spacing_m: float, tx_power_dbm: float = 46.0, coverage_radius_m: float = 1000.0
) -> tuple[GnbSite, ...]:
    return tuple(
        GnbSite(r * cols + c + 1, (c * spacing_m, r * spacing_m), tx_power_dbm, coverage_radius_m)
        for r in range(rows)
        for c in range(cols)
    )


_SCENARIO_FLOATS = {
    "max_speed_kmh", "shadowing_db", "bandwidth_hz", "dl_cap_mbps", "ul_cap_mbps",
    "rate_slope", "rate_center", "rate_noise", "area_margin_m", "start_time", "interval_s",
}
_SCENARIO_INTS = {"n_sessions", "seed", "num_rbs", "n_train", "n_test"}
_PATHLOSS_KEYS = {"pl0_db": "pl0_db", "pathloss_exponent": "exponent", "d0_m": "d0_m"}


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    """Scenario from key-value text.

    Sites come either from repeated ``site = id, x, y[, tx_dbm[, radius_m]]``
    lines or from ``layout = grid ROWSxCOLS SPACING`` together with
    ``tx_power_dbm`` / ``coverage_radius_m``.
    """
    kwargs: dict[str, object] = {}
    pathloss: dict[str, float] = {}
    site_lines = []
    sites: list[GnbSite] = []
    layout = None
    tx_power, radius = 46.0, 1000.0
    for lineno, key, value in parse_kv(text, source):
        try:
            if key == "site":
                parts = [p.strip() for p in value.split(",")]
                if not 3 <= len(parts) <= 5:
                    raise ValueError("site needs 'id, x, y[, tx_dbm[, radius_m]]'")
                site_lines.append((lineno, int(parts[0]), float(parts[1]), float(parts[2]), [float(p) for p in parts[3:]]))
            elif key == "layout":
                kind, dims, spacing = value.split()
                if kind != "grid":
                    raise ValueError(f"unknown layout {kind!r}")
                r, c = (int(v) for v in dims.lower().split("x"))
                layout = (lineno, r, c, float(spacing))
            elif key == "tx_power_dbm":
                tx_power = float(value)
            elif key == "coverage_radius_m":
                radius = float(value)
            elif key in _PATHLOSS_KEYS:
                pathloss[_PATHLOSS_KEYS[key]] = float(value)
            elif key in _SCENARIO_FLOATS:
                kwargs[key] = float(value)
            elif key in _SCENARIO_INTS:
                kwargs[key] = int(value)
            else:
                raise ValueError(f"unknown scenario key {key!r}")
        except (ValueError, DatasetError) as exc:
            raise ConfigError(str(exc), source, lineno) from None
    for lineno, cell_id, x, y, extra in site_lines:
        try:
            sites.append(
                GnbSite(
                    cell_id,
                    (x, y),
                    extra[0] if len(extra) > 0 else tx_power,
                    extra[1] if len(extra) > 1 else radius,
                )
            )
        except DatasetError as exc:
            raise ConfigError(str(exc), source, lineno) from None
    if layout is not None:
        lineno, r, c, spacing = layout
        if sites:
            raise ConfigError("use either 'layout' or 'site' lines, not both", source, lineno)
        try:
            sites = list(grid_sites(r, c, spacing, tx_power, radius))
        except DatasetError as exc:
            raise ConfigError(str(exc), source, lineno) from None
    try:
        return ScenarioConfig(sites=tuple(sites), pathloss=PathLossModel(**pathloss), **kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), source) from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}", str(path)) from exc
    return parse_scenario(text, str(path))


def builtin_scenario(name: str) -> ScenarioConfig:
    from importlib import resources

    resource = resources.files("ioexai.scenarios").joinpath(f"{name}.conf")
    if not resource.is_file():
        raise ConfigError(f"no built-in scenario named {name!r}")
    return parse_scenario(resource.read_text(encoding="utf-8"), f"scenarios/{name}.conf")


def site_arrays(sites: Sequence[GnbSite]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.array([s.cell_id for s in sites], dtype=int)
    xy = np.array([s.position for s in sites], dtype=float).reshape(-1, 2)
    tx = np.array([s.tx_power_dbm for s in sites], dtype=float)
    return ids, xy, tx


def link_rssi_dbm(
    sites: Sequence[GnbSite], pathloss: PathLossModel, positions: np.ndarray
) -> np.ndarray:
    """Median received power (no shadowing) from every site at every position: (users, sites)."""
    _, xy, tx = site_arrays(sites)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    distance = np.hypot(positions[:, None, 0] - xy[None, :, 0], positions[:, None, 1] - xy[None, :, 1])
    return tx[None, :] - pathloss.loss_db(distance)


def serving_metrics(
    link_rssi: np.ndarray, serving: int, num_rbs: int, noise_dbm: float
) -> tuple[float, float, float, float, int]:
    """Metrics of one user towards site column ``serving``.

    Interferers enter the SINR through their per-element power (RSRP), and
    RSRQ is taken against the total wideband power the device sees.
    """
    rssi = float(link_rssi[serving])
    rsrp = rm.rsrp_from_rssi(rssi, num_rbs)
    others = [rm.dbm_to_mw(rm.rsrp_from_rssi(float(p), num_rbs)) for j, p in enumerate(link_rssi) if j != serving]
    sinr_db = rm.sinr(rsrp, noise_dbm, others)
    total_mw = math.fsum(rm.dbm_to_mw(float(p)) for p in link_rssi) + rm.dbm_to_mw(noise_dbm)
    rsrq_db = rm.rsrq(rm.mw_to_dbm(total_mw), rsrp, num_rbs)
    _, cqi = rm.cqi_from_sinr(sinr_db)
    return rssi, rsrp, rsrq_db, sinr_db, cqi


def rate_curve(cqi: np.ndarray, cap: float, slope: float, center: float) -> np.ndarray:
    return cap / (1.0 + np.exp(-slope * (np.asarray(cqi, dtype=float) - center)))


def synth_generate(cfg: ScenarioConfig) -> Dataset:
    """Draw a reproducible session dataset from a path-loss + mobility scenario."""
    rng = np.random.default_rng(cfg.seed)
    sites = cfg.sites
    ids, xy, _ = site_arrays(sites)
    n = cfg.n_sessions
    if cfg.positions is not None:
        positions = np.asarray(cfg.positions, dtype=float).reshape(n, 2)
    else:
        lo = xy.min(axis=0) - cfg.area_margin_m
        hi = xy.max(axis=0) + cfg.area_margin_m
        positions = rng.uniform(lo, hi, size=(n, 2))
    speeds = rng.uniform(0.0, cfg.max_speed_kmh, size=n)
    shadow = rng.normal(0.0, cfg.shadowing_db, size=(n, len(sites))) if cfg.shadowing_db > 0 else np.zeros((n, len(sites)))
    rssi = link_rssi_dbm(sites, cfg.pathloss, positions) - shadow
    noise_dbm = rm.noise_power_dbm(cfg.bandwidth_hz)
    rate_jitter = rng.normal(0.0, cfg.rate_noise, size=(n, 2)) if cfg.rate_noise > 0 else np.zeros((n, 2))

    records = []
    for k in range(n):
        # argmax keeps the first (lowest-index) site on ties; sites are listed by id
        serving = int(np.argmax(rssi[k]))
        mu, rsrp, rsrq_db, sinr_db, cqi = serving_metrics(rssi[k], serving, cfg.num_rbs, noise_dbm)
        dl = min(cfg.dl_cap_mbps, float(rate_curve(cqi, cfg.dl_cap_mbps, cfg.rate_slope, cfg.rate_center)) * math.exp(rate_jitter[k, 0]))
        ul = min(cfg.ul_cap_mbps, float(rate_curve(cqi, cfg.ul_cap_mbps, cfg.rate_slope, cfg.rate_center)) * math.exp(rate_jitter[k, 1]))
        records.append(
            SessionRecord(
                timestamp=cfg.start_time + k * cfg.interval_s,
                cell_id=int(ids[serving]),
                speed_kmh=float(speeds[k]),
                rssi_dbm=mu,
                rsrp_dbm=rsrp,
                rsrq_db=rsrq_db,
                sinr_db=sinr_db,
                cqi=cqi,
                dl_mbps=dl,
                ul_mbps=ul,
                pos_x=float(positions[k, 0]),
                pos_y=float(positions[k, 1]),
            )
        )
    ds = Dataset(records, topology=sites, channel=cfg.pathloss)
    if cfg.n_train is not None:
        ds = train_test_split(ds, cfg.n_train, cfg.n_test, cfg.seed)
    return ds


# --------------------------------------------------------------------------- dataset directories

SESSIONS_FILE = "sessions.csv"
SITES_FILE = "sites.csv"
SPLIT_FILE = "split.csv"
CHANNEL_FILE = "channel.txt"


def save_dataset(ds: Dataset, directory: str | Path) -> list[Path]:
    """Write sessions plus optional topology, channel and split side files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / SESSIONS_FILE]
    write_csv(ds, written[0])
    if ds.topology is not None:
        path = directory / SITES_FILE
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(("cell_id", "pos_x", "pos_y", "tx_power_dbm", "coverage_radius_m"))
            for s in ds.topology:
                writer.writerow((s.cell_id, repr(s.position[0]), repr(s.position[1]), repr(s.tx_power_dbm), repr(s.coverage_radius_m)))
        written.append(path)
    if ds.channel is not None:
        path = directory / CHANNEL_FILE
        path.write_text(
            format_kv({"pl0_db": repr(ds.channel.pl0_db), "pathloss_exponent": repr(ds.channel.exponent), "d0_m": repr(ds.channel.d0_m)}),
            encoding="utf-8",
        )
        written.append(path)
    if ds.split is not None:
        path = directory / SPLIT_FILE
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(("row", "partition"))
            rows = [(i, "train") for i in ds.split[0]] + [(i, "test") for i in ds.split[1]]
            for i, part in sorted(rows):
                writer.writerow((i, part))
        written.append(path)
    return written


def load_dataset(location: str | Path, mapping: ColumnMapping | None = None) -> Dataset:
    """Load a dataset directory written by :func:`save_dataset`, or a bare CSV file."""
    location = Path(location)
    if not location.is_dir():
        return ingest_csv(location, mapping)
    ds = ingest_csv(location / SESSIONS_FILE, mapping)
    topology = None
    if (location / SITES_FILE).exists():
        with (location / SITES_FILE).open(newline="", encoding="utf-8") as handle:
            topology = tuple(
                GnbSite(int(row["cell_id"]), (float(row["pos_x"]), float(row["pos_y"])), float(row["tx_power_dbm"]), float(row["coverage_radius_m"]))
                for row in csv.DictReader(handle)
            )
    channel = None
    if (location / CHANNEL_FILE).exists():
        values = {key: float(value) for _, key, value in read_kv(location / CHANNEL_FILE)}
        channel = PathLossModel(values["pl0_db"], values["pathloss_exponent"], values["d0_m"])
    split = None
    if (location / SPLIT_FILE).exists():
        train, test = [], []
        with (location / SPLIT_FILE).open(newline="", encoding="utf-8") as handle:
            for row in csv.DictReader(handle):
                (train if row["partition"] == "train" else test).append(int(row["row"]))
        split = (tuple(train), tuple(test))
    return replace(ds, topology=topology, channel=channel, split=split)
