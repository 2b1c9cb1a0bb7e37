"""Agreement metrics between simulated and measured dwell-temperature series."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class DwellSeries:
    layers: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=int)
        T = np.asarray(self.T, dtype=float)
        if layers.shape != T.shape or layers.ndim != 1:
            raise MetricsError("layers and temperatures must be 1-D and equally long")
        if len(layers) and not np.array_equal(layers, np.arange(1, len(layers) + 1)):
            raise MetricsError("layer indices must run contiguously from 1")
        if not np.all(np.isfinite(T)):
            raise MetricsError("temperatures must be finite")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "T", T)

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(np.arange(1, len(values) + 1), values)

    def __len__(self):
        return len(self.T)


def _aligned(sim, meas):
    if len(sim) != len(meas):
        raise MetricsError(f"series lengths differ ({len(sim)} vs {len(meas)})")
    return sim.T, meas.T


def max_relative_error(sim: DwellSeries, meas: DwellSeries):
    """Largest |sim - meas| / |meas| in percent, and the layer where it occurs."""
    s, m = _aligned(sim, meas)
    if len(m) == 0:
        raise MetricsError("empty series")
    if np.any(m == 0):
        raise MetricsError("measured temperature of zero")
    rel = np.abs(s - m) / np.abs(m) * 100.0
    i = int(np.argmax(rel))
    return float(rel[i]), int(meas.layers[i])


def pearson(sim: DwellSeries, meas: DwellSeries):
    """Sample Pearson correlation in percent."""
    s, m = _aligned(sim, meas)
    if len(s) < 2:
        raise MetricsError("correlation needs at least two points")
    ds, dm = s - s.mean(), m - m.mean()
    den = np.sqrt(np.sum(ds**2) * np.sum(dm**2))
    if den == 0:
        raise MetricsError("correlation undefined for a constant series")
    return float(np.sum(ds * dm) / den * 100.0)


def read_measured_csv(path, kelvin_offset=273.15) -> DwellSeries | None:
    """Two columns (layer_index, T_degC). Returns None for a header-only file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip() == "layer_index":
        rows = rows[1:]
    if not rows:
        return None
    try:
        layers = [int(r[0]) for r in rows]
        temps = [float(r[1]) + kelvin_offset for r in rows]
    except (ValueError, IndexError) as exc:
        raise MetricsError(f"{path}: {exc}") from None
    return DwellSeries(layers, temps)


def metrics_report(sim: DwellSeries, meas: DwellSeries) -> dict:
    n = min(len(sim), len(meas))
    s, m = DwellSeries.of(sim.T[:n]), DwellSeries.of(meas.T[:n])
    eps, at = max_relative_error(s, m)
    out = {"n_layers": n, "max_relative_error_pct": eps, "max_error_layer": at}
    try:
        out["pearson_pct"] = pearson(s, m)
    except MetricsError as exc:
        out["pearson_pct"] = f"undefined ({exc})"
    return out


def write_report(path, report: dict):
    with open(path, "w") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {v}\n")
