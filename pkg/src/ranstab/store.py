"""Telemetry persistence: lossless CSV round-trip of per-RU load time
series, plus windowing for identification."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

HEADER = [
    "step",
    "time",
    "ru_id",
    "demand_prbs",
    "allocated_prbs",
    "provisioned_prbs",
    "load",
    "ue_count",
]


class TelemetryFormatError(ValueError):
    """Malformed telemetry file (schema, ordering, or missing cells)."""


@dataclass
class TelemetryRow:
    step: int
    time: float
    ru_id: int
    demand_prbs: float
    allocated_prbs: float
    provisioned_prbs: int
    load: float
    ue_count: int


@dataclass
class TelemetrySeries:
    """Dense per-RU time series: one row per sample instant, one column per RU."""

    times: np.ndarray  # (m,)
    loads: np.ndarray  # (m, n)
    demand: Optional[np.ndarray] = None
    allocated: Optional[np.ndarray] = None
    provisioned: Optional[np.ndarray] = None
    ue_count: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        if self.times.shape[0] != self.loads.shape[0]:
            raise ValueError("times and loads row counts differ")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.steps is None:
            self.steps = np.arange(len(self.times))

    @property
    def n_samples(self):
        return self.loads.shape[0]

    @property
    def n_rus(self):
        return self.loads.shape[1]

    def to_rows(self):
        rows = []
        for k in range(self.n_samples):
            for i in range(self.n_rus):
                rows.append(
                    TelemetryRow(
                        step=int(self.steps[k]),
                        time=float(self.times[k]),
                        ru_id=i,
                        demand_prbs=float(self.demand[k, i]) if self.demand is not None else 0.0,
                        allocated_prbs=float(self.allocated[k, i]) if self.allocated is not None else 0.0,
                        provisioned_prbs=int(self.provisioned[k, i]) if self.provisioned is not None else 0,
                        load=float(self.loads[k, i]),
                        ue_count=int(self.ue_count[k, i]) if self.ue_count is not None else 0,
                    )
                )
        return rows


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_telemetry(rows, destination) -> int:
    """Write telemetry rows as CSV; reals carry 17 significant digits so the
    round trip is lossless. Returns the byte count written."""
    if isinstance(rows, TelemetrySeries):
        rows = rows.to_rows()
    try:
        with open(destination, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HEADER)
            for r in rows:
                writer.writerow(
                    [
                        r.step,
                        _fmt(r.time),
                        r.ru_id,
                        _fmt(r.demand_prbs),
                        _fmt(r.allocated_prbs),
                        r.provisioned_prbs,
                        _fmt(r.load),
                        r.ue_count,
                    ]
                )
            fh.flush()
            return fh.tell()
    except OSError as exc:
        raise OSError(f"failed writing telemetry to {destination}: {exc}") from exc


def read_telemetry(source) -> TelemetrySeries:
    """Parse a telemetry CSV back into a dense series, validating the schema,
    step monotonicity, and grid completeness."""
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TelemetryFormatError(f"{source}: empty file") from None
        if header != HEADER:
            raise TelemetryFormatError(f"{source}: unexpected header {header}")
        raw = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(HEADER):
                raise TelemetryFormatError(f"{source}:{lineno}: wrong field count")
            raw.append(
                TelemetryRow(
                    step=int(rec[0]),
                    time=float(rec[1]),
                    ru_id=int(rec[2]),
                    demand_prbs=float(rec[3]),
                    allocated_prbs=float(rec[4]),
                    provisioned_prbs=int(rec[5]),
                    load=float(rec[6]),
                    ue_count=int(rec[7]),
                )
            )
    return rows_to_series(raw, source=str(source))


def rows_to_series(raw, source="telemetry") -> TelemetrySeries:
    if not raw:
        return TelemetrySeries(times=np.zeros(0), loads=np.zeros((0, 0)))
    steps = sorted({r.step for r in raw})
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise TelemetryFormatError(f"{source}: non-monotone steps")
    rus = sorted({r.ru_id for r in raw})
    if rus != list(range(len(rus))):
        raise TelemetryFormatError(f"{source}: RU ids are not contiguous from 0")
    step_index = {s: k for k, s in enumerate(steps)}
    m, n = len(steps), len(rus)
    times = np.full(m, np.nan)
    arrays = {
        name: np.full((m, n), np.nan)
        for name in ("loads", "demand", "allocated", "provisioned", "ue_count")
    }
    for r in raw:
        k = step_index[r.step]
        if not np.isnan(arrays["loads"][k, r.ru_id]):
            raise TelemetryFormatError(
                f"{source}: duplicate cell (step {r.step}, ru {r.ru_id})"
            )
        times[k] = r.time
        arrays["loads"][k, r.ru_id] = r.load
        arrays["demand"][k, r.ru_id] = r.demand_prbs
        arrays["allocated"][k, r.ru_id] = r.allocated_prbs
        arrays["provisioned"][k, r.ru_id] = r.provisioned_prbs
        arrays["ue_count"][k, r.ru_id] = r.ue_count
        if r.provisioned_prbs > 0:
            expected = r.demand_prbs / r.provisioned_prbs
            if abs(r.load - expected) > 1e-9:
                raise TelemetryFormatError(
                    f"{source}: load {r.load} inconsistent with demand/provisioned "
                    f"at (step {r.step}, ru {r.ru_id})"
                )
    missing = np.argwhere(np.isnan(arrays["loads"]))
    if missing.size:
        k, i = missing[0]
        raise TelemetryFormatError(
            f"{source}: missing cell (step {steps[int(k)]}, ru {int(i)})"
        )
    return TelemetrySeries(
        times=times,
        loads=arrays["loads"],
        demand=arrays["demand"],
        allocated=arrays["allocated"],
        provisioned=arrays["provisioned"].astype(int),
        ue_count=arrays["ue_count"].astype(int),
        steps=np.array(steps),
    )


def window(series: TelemetrySeries, start_step: int, end_step: int) -> TelemetrySeries:
    """Contiguous slice [start_step, end_step) by sample index; times preserved."""
    m = series.n_samples
    if not (0 <= start_step < end_step <= m):
        raise ValueError(f"window [{start_step}, {end_step}) out of range for {m} samples")
    sl = slice(start_step, end_step)
    pick = lambda a: None if a is None else a[sl]
    return TelemetrySeries(
        times=series.times[sl],
        loads=series.loads[sl],
        demand=pick(series.demand),
        allocated=pick(series.allocated),
        provisioned=pick(series.provisioned),
        ue_count=pick(series.ue_count),
        steps=series.steps[sl],
    )
