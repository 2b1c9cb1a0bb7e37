"""Flat INI run configuration with a provenance tag on every value.

Every key has a default tagged ``paper`` (reported process or model value)
or ``assumed`` (a modelling choice); values read from a file are tagged
``user``. Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from . import fem, materials, process, twolevel

PAPER, ASSUMED, USER = "paper", "assumed", "user"


class ConfigError(ValueError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none", "auto") else int(s)


def _opt_str(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none") else s


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit(x):
    return 0 <= x <= 1


# (section, key): (parser, default, provenance, check)
SCHEMA = {
    ("paths", "stl"): (str, None, USER, None),
    ("paths", "material_csv"): (_opt_str, None, ASSUMED, None),
    ("paths", "measured_csv"): (_opt_str, None, ASSUMED, None),
    ("process", "laser_power_W"): (float, 200.0, PAPER, _pos),
    ("process", "spot_size_um"): (float, 65.0, PAPER, _pos),
    ("process", "laser_velocity_mm_s"): (float, 800.0, PAPER, _pos),
    ("process", "layer_thickness_um"): (float, 50.0, PAPER, _pos),
    ("process", "layers_per_agglomeration"): (int, 20, PAPER, lambda n: n >= 1),
    ("process", "chamber_temperature_C"): (float, 25.0, PAPER, lambda t: t > -273.15),
    ("process", "plate_temperature_C"): (float, 80.0, PAPER, lambda t: t > -273.15),
    ("process", "absorptivity"): (float, 0.7, PAPER, _unit),
    ("process", "ilct_s"): (float, 11.0, PAPER, _pos),
    ("process", "recoat_time_s"): (float, 9.0, ASSUMED, _pos),
    ("process", "dt_diffuse_s"): (float, 1.0, ASSUMED, _pos),
    ("process", "dt_cool_s"): (float, 1.0, ASSUMED, _pos),
    ("material", "k_gas_W_mK"): (float, 0.0172, PAPER, _pos),
    ("material", "porosity"): (float, 0.35, PAPER, lambda p: 0 < p < 1),
    ("material", "d_pow_um"): (float, 30.0, ASSUMED, _pos),
    ("material", "sigma_sb"): (float, materials.SIGMA_SB, ASSUMED, _pos),
    ("material", "smoothing_delta_per_K"): (float, 0.2, PAPER, _nonneg),
    ("material", "smoothing_s_min"): (float, 0.05, ASSUMED, lambda s: 0 < s <= 1),
    ("boundary", "h_pow_W_m2K"): (float, 25.0, PAPER, _nonneg),
    ("boundary", "h_conv_W_m2K"): (float, 0.1, PAPER, _nonneg),
    ("boundary", "emissivity"): (float, 0.25, PAPER, _unit),
    ("mesh", "plate_x_mm"): (float, 30.0, ASSUMED, _pos),
    ("mesh", "plate_y_mm"): (float, 30.0, ASSUMED, _pos),
    ("mesh", "plate_z_mm"): (float, 12.0, ASSUMED, _pos),
    ("mesh", "h_global_mm"): (float, 4.0, PAPER, _pos),
    ("mesh", "h_plate_z_mm"): (float, 4.0, ASSUMED, _pos),
    ("mesh", "h_local_mm"): (float, 1.0, PAPER, _pos),
    ("mesh", "local_margin_mm"): (float, 5.0, ASSUMED, _nonneg),
    ("mesh", "local_depth_mm"): (float, 5.0, ASSUMED, _pos),
    ("mesh", "local_full_bed"): (_bool, False, ASSUMED, None),
    ("mesh", "n_layers"): (_opt_int, None, ASSUMED, lambda n: n is None or n >= 0),
    ("coupling", "mode"): (str.upper, twolevel.SEQUENTIAL, PAPER,
                           lambda m: m in (twolevel.SEQUENTIAL, twolevel.PARALLEL)),
    ("coupling", "theta"): (float, 1.0, PAPER, lambda t: 0 < t <= 1),
    ("coupling", "tol"): (float, 1e-4, ASSUMED, _pos),
    ("coupling", "max_iter"): (int, 20, ASSUMED, lambda n: n >= 1),
    ("coupling", "solver_tol"): (float, 1e-8, ASSUMED, _pos),
    ("coupling", "freeze_smoothing"): (_bool, True, ASSUMED, None),
    ("output", "dwell_mode"): (str.upper, process.PART_FOOTPRINT, ASSUMED,
                               lambda m: m in (process.PART_FOOTPRINT, process.FULL_BED)),
    ("output", "snapshot_every"): (int, 0, ASSUMED, _nonneg),
    ("output", "audit"): (_bool, True, ASSUMED, None),
    ("output", "plots"): (_bool, True, ASSUMED, None),
    ("run", "workers"): (int, 1, ASSUMED, lambda n: n >= 1),
}


@dataclass
class RunConfig:
    values: dict
    provenance: dict
    base_dir: Path = field(default_factory=Path.cwd)
    source: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, section, key):
        return self.values[(section, key)]

    def path(self, key):
        v = self.values[("paths", key)]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def with_values(self, **updates):
        """Copy with overrides given as section__key=value."""
        vals, prov = dict(self.values), dict(self.provenance)
        for name, v in updates.items():
            sec, key = name.split("__", 1)
            if (sec, key) not in SCHEMA:
                raise ConfigError(f"unknown key [{sec}] {key}")
            vals[(sec, key)] = v
            prov[(sec, key)] = USER
        cfg = RunConfig(vals, prov, self.base_dir, self.source)
        cfg.validate()
        return cfg

    def resolved(self):
        """Values with paths made absolute; equal for a config and its manifest."""
        out = dict(self.values)
        for (sec, key) in SCHEMA:
            if sec == "paths":
                out[(sec, key)] = self.path(key)
        return out

    def validate(self):
        if self.values.get(("paths", "stl")) is None:
            raise ConfigError("missing required key [paths] stl")
        for (sec, key), (_, _, _, check) in SCHEMA.items():
            v = self.values.get((sec, key))
            if check is not None and v is not None and not check(v):
                raise ConfigError(f"[{sec}] {key} = {v!r} is out of range")

    # --- builders for the solver-side objects -----------------------------

    def process_params(self) -> process.ProcessParams:
        g = self.get
        return process.ProcessParams(
            power=g("process", "laser_power_W"),
            absorptivity=g("process", "absorptivity"),
            spot_size=g("process", "spot_size_um") * 1e-6,
            velocity=g("process", "laser_velocity_mm_s") * 1e-3,
            layer_thickness=g("process", "layer_thickness_um") * 1e-6,
            n_phys=g("process", "layers_per_agglomeration"),
            ilct=g("process", "ilct_s"),
            recoat_time=g("process", "recoat_time_s"),
            dt_diffuse=g("process", "dt_diffuse_s"),
            dt_cool=g("process", "dt_cool_s"),
            T_amb=g("process", "chamber_temperature_C") + materials.KELVIN,
            T_bp=g("process", "plate_temperature_C") + materials.KELVIN,
        )

    def boundary(self) -> fem.BoundaryConditionSet:
        p = self.process_params()
        return fem.BoundaryConditionSet(
            h_conv=self.get("boundary", "h_conv_W_m2K"),
            h_pow=self.get("boundary", "h_pow_W_m2K"),
            T_amb=p.T_amb,
            emissivity=self.get("boundary", "emissivity"),
            sigma_sb=self.get("material", "sigma_sb"),
            T_bp=p.T_bp,
        )

    def material(self) -> materials.SolidPowderMaterial:
        csv_path = self.path("material_csv")
        table = materials.MaterialTable.from_csv(csv_path) if csv_path else materials.MaterialTable.ss316l()
        powder = materials.PowderModel(
            porosity=self.get("material", "porosity"),
            k_gas=self.get("material", "k_gas_W_mK"),
            d_pow=self.get("material", "d_pow_um") * 1e-6,
            sigma_sb=self.get("material", "sigma_sb"),
        )
        return materials.SolidPowderMaterial(
            table, powder, self.get("material", "smoothing_delta_per_K"),
            self.get("material", "smoothing_s_min"),
        )

    def setup(self) -> process.ModelSetup:
        g = lambda k: self.get("mesh", k)
        return process.ModelSetup(
            plate_size=(g("plate_x_mm") * 1e-3, g("plate_y_mm") * 1e-3, g("plate_z_mm") * 1e-3),
            h_plane=g("h_global_mm") * 1e-3,
            h_plate_z=g("h_plate_z_mm") * 1e-3,
            h_local=g("h_local_mm") * 1e-3,
            local_margin=g("local_margin_mm") * 1e-3,
            local_depth=g("local_depth_mm") * 1e-3,
            local_full_bed=g("local_full_bed"),
            n_layers=g("n_layers"),
            dwell_mode=self.get("output", "dwell_mode"),
            audit=self.get("output", "audit"),
            snapshot_every=self.get("output", "snapshot_every"),
        )

    def coupling(self, workers=None) -> twolevel.CouplingConfig:
        g = lambda k: self.get("coupling", k)
        return twolevel.CouplingConfig(
            mode=g("mode"), theta=g("theta"), tol=g("tol"), max_iter=g("max_iter"),
            solver_tol=g("solver_tol"), workers=workers or self.get("run", "workers"),
            freeze_smoothing=g("freeze_smoothing"),
        )


def default_config(stl=None, base_dir=None) -> RunConfig:
    vals = {k: spec[1] for k, spec in SCHEMA.items()}
    prov = {k: spec[2] for k, spec in SCHEMA.items()}
    vals[("paths", "stl")] = stl
    return RunConfig(vals, prov, Path(base_dir) if base_dir else Path.cwd())


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = default_config(base_dir=path.parent.resolve())
    cfg.source = path.resolve()
    cfg.values[("paths", "stl")] = None
    known_sections = {s for s, _ in SCHEMA}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if (sec, key) not in SCHEMA:
                raise ConfigError(f"{path}: unknown key [{sec}] {key}")
            raw, _, note = raw.partition("#")
            raw, note = raw.strip(), note.strip()
            conv = SCHEMA[(sec, key)][0]
            try:
                cfg.values[(sec, key)] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{sec}] {key}: {exc}") from None
            # a manifest carries the original provenance as a trailing comment
            cfg.provenance[(sec, key)] = note if note in (PAPER, ASSUMED, USER) else USER
    if cfg.values[("paths", "stl")] is None:
        raise ConfigError(f"{path}: missing required key [paths] stl")
    cfg.validate()
    return cfg


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path, cfg: RunConfig, extra=None):
    """Fully resolved config, loadable by :func:`load_config`, paths made absolute."""
    lines = ["# resolved run configuration; provenance after each value"]
    if extra:
        lines += [f"# {k}: {v}" for k, v in extra.items()]
    sections = []
    for sec, _ in SCHEMA:
        if sec not in sections:
            sections.append(sec)
    for sec in sections:
        lines.append(f"\n[{sec}]")
        for (s, key) in SCHEMA:
            if s != sec:
                continue
            v = cfg.values[(s, key)]
            if s == "paths" and v is not None:
                v = str(cfg.path(key))
            lines.append(f"{key} = {_fmt(v)}  # {cfg.provenance[(s, key)]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
