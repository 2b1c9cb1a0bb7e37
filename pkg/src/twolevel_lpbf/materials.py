"""Temperature-dependent SS-316L solid and powder properties.

Solid properties come from a tabulated CSV (degrees Celsius). Powder density
and heat capacity follow from porosity; powder conductivity follows the
spherical-particle model of Sih and Barlow with a radiative contribution,
which needs absolute temperature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

SIGMA_SB = 5.670374419e-8
# value printed in the source publication; selectable through the config
SIGMA_SB_PRINTED = 5.87e-8
KELVIN = 273.15

CSV_COLUMNS = ("T_degC", "k_W_mK", "c_J_kgK", "rho_kg_m3")


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialTable:
    """Rows of (T [degC], k [W/m/K], c [J/kg/K], rho [kg/m3])."""

    T: np.ndarray
    k: np.ndarray
    c: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.T, self.k, self.c, self.rho)]
        n = len(arrs[0])
        if n < 2 or any(len(a) != n for a in arrs):
            raise MaterialError("material table needs at least two complete rows")
        if np.any(np.diff(arrs[0]) <= 0):
            raise MaterialError("table temperatures must be strictly increasing")
        if any(np.any(a <= 0) for a in arrs[1:]):
            raise MaterialError("material properties must be positive")
        for name, a in zip(("T", "k", "c", "rho"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_csv(cls, path) -> "MaterialTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
                raise MaterialError(
                    f"{path}: expected header {','.join(CSV_COLUMNS)}, got {reader.fieldnames}"
                )
            rows = [[float(r[c]) for c in CSV_COLUMNS] for r in reader]
        data = np.array(rows, dtype=float)
        if data.ndim != 2 or len(data) < 2:
            raise MaterialError(f"{path}: too few rows")
        return cls(*data.T)

    @classmethod
    def ss316l(cls) -> "MaterialTable":
        """The bundled SS-316L table."""
        with resources.as_file(resources.files("twolevel_lpbf") / "data" / "SS316L.csv") as p:
            return cls.from_csv(Path(p))


def _interp_column(T, xs, ys):
    T = np.asarray(T, dtype=float)
    out = np.interp(T, xs, ys)  # clamps on both ends
    above = T > xs[-1]
    if np.any(above):
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.where(above, ys[-1] + slope * (T - xs[-1]), out)
    return out


def interpolate_solid(table: MaterialTable, T_degC):
    """Piecewise-linear (k, c, rho) at ``T_degC``.

    Below the first row the first row is returned; above the last row the
    last segment is extended linearly.
    """
    return (
        _interp_column(T_degC, table.T, table.k),
        _interp_column(T_degC, table.T, table.c),
        _interp_column(T_degC, table.T, table.rho),
    )


@dataclass(frozen=True)
class PowderModel:
    porosity: float = 0.35
    k_gas: float = 0.0172
    d_pow: float = 30e-6
    sigma_sb: float = SIGMA_SB

    def __post_init__(self):
        if not 0.0 < self.porosity < 1.0:
            raise MaterialError(f"porosity must lie in (0, 1), got {self.porosity}")
        if self.k_gas <= 0:
            raise MaterialError("gas conductivity must be positive")
        if self.d_pow <= 0:
            raise MaterialError("powder diameter must be positive")


def powder_density(rho_sol, porosity):
    return (1.0 - porosity) * np.asarray(rho_sol, dtype=float)


def powder_heat_capacity(c_sol):
    return np.asarray(c_sol, dtype=float)


def powder_conductivity(model: PowderModel, k_sol, T_K):
    """Effective conductivity of a bed of spherical particles in gas.

    ``T_K`` enters the radiative terms and must be absolute.
    """
    k_sol = np.asarray(k_sol, dtype=float)
    T_K = np.asarray(T_K, dtype=float)
    kg = model.k_gas
    if np.any(k_sol <= kg):
        raise MaterialError("powder model requires k_sol > k_gas")
    if np.any(T_K <= 0):
        raise MaterialError("temperature must be positive kelvin")
    sq = np.sqrt(1.0 - model.porosity)
    rad = 4.0 / 3.0 * model.sigma_sb * T_K**3 * model.d_pow / kg
    ratio = 1.0 - kg / k_sol
    conduction = 2.0 / ratio * (2.0 / ratio * np.log(k_sol / kg) - 1.0)
    return kg * ((1.0 - sq) * (1.0 + rad) + sq * conduction + sq * rad)


@dataclass(frozen=True)
class SmoothingParams:
    delta: float = 0.2  # 1/K
    h_el: float = 1e-3  # m
    s_min: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.s_min <= 1.0:
            raise MaterialError("s_min must lie in (0, 1]")
        if self.delta < 0 or self.h_el <= 0:
            raise MaterialError("delta must be >= 0 and h_el > 0")


def smoothing_factor(params: SmoothingParams, gradT):
    """S = max(s_min, 1 - |grad T| h_el delta); works on (..., 3) arrays."""
    g = np.linalg.norm(np.asarray(gradT, dtype=float), axis=-1)
    return np.maximum(params.s_min, 1.0 - g * params.h_el * params.delta)


class SolidPowderMaterial:
    """Tabulated solid plus derived powder, evaluated pointwise in kelvin.

    The smoothing factor divides the powder conductivity (it multiplies the
    k_pow/k_gas side of the powder relation), so S < 1 softens the
    solid/powder contrast in cut elements.
    """

    def __init__(self, table: MaterialTable, powder: PowderModel, delta=0.2, s_min=0.05):
        self.table = table
        self.powder = powder
        self.delta = delta
        self.s_min = s_min

    def smoothing(self, h_el) -> SmoothingParams:
        return SmoothingParams(self.delta, h_el, self.s_min)

    def evaluate(self, T_K, solid, S=None):
        T_K = np.asarray(T_K, dtype=float)
        solid = np.broadcast_to(np.asarray(solid, dtype=bool), T_K.shape)
        k_s, c_s, rho_s = interpolate_solid(self.table, T_K - KELVIN)
        k_p = powder_conductivity(self.powder, k_s, T_K)
        if S is not None:
            k_p = k_p / S
        k = np.where(solid, k_s, k_p)
        rho = np.where(solid, rho_s, powder_density(rho_s, self.powder.porosity))
        return k, powder_heat_capacity(c_s), rho


class ConstantMaterial:
    """Label-independent constant coefficients, for verification problems."""

    delta = 0.0
    s_min = 1.0

    def __init__(self, k=1.0, c=1.0, rho=1.0):
        self.k, self.c, self.rho = float(k), float(c), float(rho)

    def smoothing(self, h_el) -> SmoothingParams:
        return SmoothingParams(0.0, h_el, 1.0)

    def evaluate(self, T_K, solid=None, S=None):
        shape = np.shape(T_K)
        return np.full(shape, self.k), np.full(shape, self.c), np.full(shape, self.rho)
