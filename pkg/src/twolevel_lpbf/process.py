"""Layer-by-layer build driver: steady plate, then activate, diffuse, heat, cool."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, geometry, grid, twolevel

log = logging.getLogger(__name__)

ACTIVATE, DIFFUSE, HEAT, COOL = "ACTIVATE", "DIFFUSE", "HEAT", "COOL"
PART_FOOTPRINT, FULL_BED = "PART_FOOTPRINT", "FULL_BED"


class BuildError(RuntimeError):
    def __init__(self, msg, layer=None, phase=None):
        super().__init__(f"layer {layer}, {phase}: {msg}" if layer is not None else msg)
        self.layer, self.phase = layer, phase


@dataclass(frozen=True)
class ProcessParams:
    power: float = 200.0  # W
    absorptivity: float = 0.7
    spot_size: float = 65e-6  # m, diameter
    velocity: float = 0.8  # m/s
    layer_thickness: float = 50e-6  # m
    n_phys: int = 20
    ilct: float = 11.0  # s
    recoat_time: float = 9.0  # s
    dt_diffuse: float = 1.0
    dt_cool: float = 1.0
    T_amb: float = 298.15
    T_bp: float = 353.15

    def __post_init__(self):
        positive = ("power", "spot_size", "velocity", "layer_thickness", "ilct",
                    "recoat_time", "dt_diffuse", "dt_cool", "T_amb", "T_bp")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.absorptivity <= 1:
            raise ValueError("absorptivity must lie in [0, 1]")
        if self.n_phys < 1:
            raise ValueError("n_phys must be at least 1")

    @property
    def t_a(self):
        return self.n_phys * self.layer_thickness


def equivalent_heat_source(params: ProcessParams, t_a=None):
    """Q = 4 eta P / (pi l_d^2 t_a), with l_d the spot size as given."""
    t_a = params.t_a if t_a is None else t_a
    return 4.0 * params.absorptivity * params.power / (np.pi * params.spot_size**2 * t_a)


def heating_time_step(params: ProcessParams):
    """2 l_d / v with l_d read as the spot radius, i.e. spot_size / v."""
    return 2.0 * (0.5 * params.spot_size) / params.velocity


@dataclass(frozen=True)
class ScheduleEvent:
    kind: str
    duration: float
    dt: float
    layer: int

    @property
    def n_steps(self):
        return max(1, int(round(self.duration / self.dt))) if self.duration > 0 else 0


def layer_schedule(params: ProcessParams, layer):
    het = heating_time_step(params)
    return [
        ScheduleEvent(ACTIVATE, 0.0, 0.0, layer),
        ScheduleEvent(DIFFUSE, params.recoat_time, params.dt_diffuse, layer),
        ScheduleEvent(HEAT, het, het, layer),
        ScheduleEvent(COOL, params.ilct, params.dt_cool, layer),
    ]


@dataclass(frozen=True)
class ModelSetup:
    """Discretization and placement, all lengths in meters."""

    plate_size: tuple = (0.03, 0.03, 0.012)
    h_plane: float = 4e-3
    h_plate_z: float = 4e-3
    h_local: float = 1e-3
    local_margin: float = 5e-3
    local_depth: float = 5e-3
    local_full_bed: bool = False
    n_layers: int | None = None  # default: part height / t_a
    dwell_mode: str = PART_FOOTPRINT
    audit: bool = True
    snapshot_every: int = 0


@dataclass
class DwellRecord:
    layer: int
    time: float
    T: float
    mode: str


@dataclass
class BuildResult:
    dwell: list = field(default_factory=list)
    initial: fem.DomainState | None = None
    state: twolevel.CoupledState | None = None
    audits: list = field(default_factory=list)  # (layer, {check: bool})
    heat_log: list = field(default_factory=list)
    iterations: list = field(default_factory=list)  # (layer, phase, k)
    traces: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    time: float = 0.0
    active_elements: list = field(default_factory=list)
    wall: float = 0.0


def place_part(soup: geometry.TriangleSoup, plate_size):
    """Center the part footprint on the plate with its bottom on the plate top."""
    lo, hi = soup.bbox
    px, py, pz = (1e3 * np.asarray(plate_size)).tolist()
    shift = np.array([0.5 * px - 0.5 * (lo[0] + hi[0]), 0.5 * py - 0.5 * (lo[1] + hi[1]), pz - lo[2]])
    return soup.translated(shift)


def quadrature_points(mesh, elems=None):
    tets = mesh.tets if elems is None else mesh.tets[elems]
    return np.einsum("qi,eij->eqj", fem.QP_BARY, mesh.nodes[tets])


def classify_elements(part, mesh, elems, t_a, z_floor):
    """SOLID labels (len(elems), 4), classified one agglomerated layer band at a time."""
    qp = quadrature_points(mesh, elems).reshape(-1, 3)
    out = np.zeros(len(qp), dtype=bool)
    band = np.floor((qp[:, 2] - z_floor) / t_a + 1e-9).astype(int)
    for b in np.unique(band):
        sel = band == b
        z_band = (1e3 * (z_floor + b * t_a), 1e3 * (z_floor + (b + 1) * t_a))
        pts = geometry.check_band(1e3 * qp[sel], z_band, tol=1e-6)
        out[sel] = geometry.inside_mask(part, pts)
    return out.reshape(-1, 4)


def layer_source(mesh, solid, z_top, t_a, Q):
    """Q on SOLID quadrature points of the newest layer, zero elsewhere."""
    z = quadrature_points(mesh)[..., 2]
    return np.where(solid & (z > z_top - t_a), Q, 0.0)


def _top_quadrature(mesh):
    f = mesh.faces[grid.TOP_SURFACE]
    area, _ = mesh.face_geometry(grid.TOP_SURFACE)
    pts = np.einsum("qi,fij->fqj", fem.TRI_QP_BARY, mesh.nodes[f]).reshape(-1, 3)
    return pts, np.repeat(area / 3.0, 3)


def _composite_values(state: twolevel.CoupledState, pts):
    """Local solution inside the local box, global elsewhere."""
    lm, gm = state.loc.mesh, state.glob.mesh
    lo, hi = lm.extent
    inside = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
    vals = np.empty(len(pts))
    if np.any(inside):
        e, b = grid.locate_points(lm, pts[inside])
        vals[inside] = grid.interpolate(lm, state.loc.T, e, b)
    if np.any(~inside):
        e, b = grid.locate_points(gm, pts[~inside])
        vals[~inside] = grid.interpolate(gm, state.glob.T, e, b)
    return vals


def dwell_temperature(state: twolevel.CoupledState, part, mode=PART_FOOTPRINT, t_a=1e-3):
    """Area-weighted mean top-surface temperature.

    PART_FOOTPRINT averages over local top-surface quadrature points whose
    (x, y) lies in the part section of the newest layer; FULL_BED averages the
    whole global top surface.
    """
    if mode == PART_FOOTPRINT:
        pts, w = _top_quadrature(state.loc.mesh)
        probe = pts.copy()
        probe[:, 2] -= 0.5 * t_a
        sel = geometry.inside_mask(part, 1e3 * probe) if part is not None else np.zeros(len(pts), bool)
        if np.any(sel):
            vals = grid.interpolate(state.loc.mesh, state.loc.T,
                                    *grid.locate_points(state.loc.mesh, pts[sel]))
            return float(np.sum(vals * w[sel]) / np.sum(w[sel]))
        log.warning("part absent from top layer; dwell falls back to FULL_BED")
    elif mode != FULL_BED:
        raise ValueError(f"unknown dwell mode {mode!r}")
    pts, w = _top_quadrature(state.glob.mesh)
    return float(np.sum(_composite_values(state, pts) * w) / np.sum(w))


def _init_local(part, gm, g_T, box, old: fem.DomainState | None, t_a, z_floor):
    lm = grid.build_local_mesh(box, gm)
    T = np.empty(lm.n_nodes)
    use_old = np.zeros(lm.n_nodes, dtype=bool)
    if old is not None:
        lo, hi = old.mesh.extent
        use_old = np.all((lm.nodes >= lo - 1e-12) & (lm.nodes <= hi + 1e-12), axis=1)
        if np.any(use_old):
            e, b = grid.locate_points(old.mesh, lm.nodes[use_old])
            T[use_old] = grid.interpolate(old.mesh, old.T, e, b)
    e, b = grid.locate_points(gm, lm.nodes[~use_old])
    T[~use_old] = grid.interpolate(gm, g_T, e, b)
    solid = classify_elements(part, lm, None, t_a, z_floor)
    return fem.DomainState(lm, T, solid, fem.LOCAL)


def _extend_global(gm_old, gm_new, T_old, solid_old, new_solid, T_amb):
    T = np.concatenate([T_old, np.full(gm_new.n_nodes - gm_old.n_nodes, T_amb)])
    solid = np.concatenate([solid_old, new_solid])
    return T, solid


def run_build(part, setup: ModelSetup, material, bc: fem.BoundaryConditionSet,
              params: ProcessParams, cfg: twolevel.CouplingConfig, out_dir=None, verbose=False):
    """Drive the full build; ``part`` is already placed in bed coordinates (mm)."""
    t_wall = time.perf_counter()
    t_a = params.t_a
    px, py, pz = setup.plate_size
    gm = grid.build_global_mesh(((0, 0, 0), (px, py, pz)), setup.h_plane, setup.h_plate_z)
    lo_mm, hi_mm = part.bbox if part is not None else (np.zeros(3), np.zeros(3))
    if setup.n_layers is not None:
        n_layers = setup.n_layers
    else:
        n_layers = int(np.ceil((hi_mm[2] * 1e-3 - pz) / t_a - 1e-9))
    growth = grid.start_growth(gm, t_a, n_layers)
    res = BuildResult()

    try:
        g_state = fem.steady_plate_solve(gm, bc, material)
    except fem.SolverError as exc:
        raise BuildError(str(exc), 0, "STEADY") from exc
    res.initial = g_state
    res.active_elements.append(gm.n_elements)
    if setup.audit:
        res.audits.append((0, grid.audit_mesh(gm)))
    Q = equivalent_heat_source(params, t_a)
    box = None
    coupled = None
    sim_time = 0.0

    for layer in range(1, n_layers + 1):
        phase = ACTIVATE
        try:
            gm_new, growth, born = grid.activate_layer(gm, growth)
            new_solid = classify_elements(part, gm_new, born, t_a, pz)
            T_g, solid_g = _extend_global(gm, gm_new, g_state.T, g_state.solid, new_solid, params.T_amb)
            gm = gm_new
            g_state = fem.DomainState(gm, T_g, solid_g, fem.GLOBAL)
            if box is None:
                box = grid.default_local_box(1e-3 * lo_mm, 1e-3 * hi_mm, gm, growth,
                                             setup.local_margin, setup.local_depth,
                                             setup.h_local, setup.local_full_bed)
            else:
                box = grid.shift_local_box(box, growth)
            old_loc = coupled.loc if coupled is not None else None
            l_state = _init_local(part, gm, g_state.T, box, old_loc, t_a, pz)
            imap = twolevel.build_interface_map(gm, l_state.mesh)
            coupled = twolevel.CoupledState(g_state, l_state, imap)
            res.active_elements.append(gm.n_elements)
            if setup.audit:
                checks = {f"global_{k}": v for k, v in grid.audit_mesh(gm).items()}
                checks.update({f"local_{k}": v for k, v in grid.audit_mesh(l_state.mesh).items()})
                res.audits.append((layer, checks))
                if not all(checks.values()):
                    raise BuildError(f"mesh audit failed: {checks}", layer, phase)

            for ev in layer_schedule(params, layer)[1:]:
                phase = ev.kind
                if ev.kind == HEAT:
                    src_g = layer_source(gm, coupled.glob.solid, gm.z_top, t_a, Q)
                    src_l = layer_source(coupled.loc.mesh, coupled.loc.solid, gm.z_top, t_a, Q)
                else:
                    src_g = src_l = None
                dt = ev.duration / ev.n_steps
                for _ in range(ev.n_steps):
                    before = coupled
                    coupled = twolevel.coupled_step(coupled, cfg, dt, bc, material, src_g, src_l)
                    sim_time += dt
                    res.iterations.append((layer, ev.kind, coupled.k))
                    if verbose:
                        res.traces += [(layer, ev.kind, sim_time) + t for t in coupled.trace]
                    if ev.kind == HEAT:
                        res.heat_log.append(_energy_balance(before, coupled, bc, material, dt, src_g, layer,
                                                            cfg.freeze_smoothing))
                if ev.kind == DIFFUSE:
                    Td = dwell_temperature(coupled, part, setup.dwell_mode, t_a)
                    res.dwell.append(DwellRecord(layer, sim_time, Td, setup.dwell_mode))
                    log.info("layer %d dwell %.2f degC", layer, Td - 273.15)
            g_state = coupled.glob
            if out_dir is not None and setup.snapshot_every and layer % setup.snapshot_every == 0:
                res.snapshots += write_snapshot(out_dir, layer, coupled)
        except (fem.SolverError, twolevel.CouplingError, grid.MeshError, ValueError) as exc:
            if isinstance(exc, BuildError):
                raise
            raise BuildError(str(exc), layer, phase) from exc

    res.state = coupled
    res.time = sim_time
    res.wall = time.perf_counter() - t_wall
    return res


def _energy_balance(before, after, bc, material, dt, src_g, layer, freeze_smoothing=False):
    """Discrete energy audit of a global HEAT step from the assembled operators.

    ``energy_in`` is dt * int Q, ``jump_in`` the conductivity-jump flux on gamma,
    ``boundary_in`` the net energy through Robin, radiation and plate (Dirichlet
    reaction) boundaries. Their sum should match ``enthalpy_gain``.
    """
    gm, g = after.glob.mesh, after.glob
    smooth = before.glob.T if freeze_smoothing else None
    _, c, rho = fem.coefficients(gm, g.T, g.solid, material)
    gained = fem.enthalpy(gm, g.T, c * rho) - fem.enthalpy(gm, before.glob.T, c * rho)
    injected = dt * float(fem.load_vector(gm, src_g).sum())
    imap = after.imap
    kp, km = twolevel.gamma_conductivities(imap, before.glob, before.loc, material,
                                           g.T, after.loc.T, freeze_smoothing)
    F = twolevel.assemble_flux_functional(imap, gm, after.loc.mesh, after.loc.T, kp, km)
    start = fem.DomainState(gm, before.glob.T, g.solid, fem.GLOBAL)
    full = fem.assemble_step(gm, start, bc, dt, material, source=src_g, flux=F, lag=g.T, smooth_lag=smooth)
    plate = float((full.A @ g.T - full.b)[full.dirichlet_ids].sum())
    bare = fem.assemble_step(gm, start, bc, dt, material, lag=g.T, smooth_lag=smooth)
    _, c0, rho0 = fem.coefficients(gm, g.T, g.solid, material, smooth)
    M = fem.mass_matrix(gm, c0 * rho0)
    faces = float((bare.b - bare.A @ g.T).sum() + (M @ (g.T - before.glob.T)).sum())
    return {"layer": layer, "enthalpy_gain": gained, "energy_in": injected,
            "jump_in": dt * float(F.sum()), "boundary_in": faces + plate}


def write_snapshot(out_dir, layer, coupled):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, st in (("global", coupled.glob), ("local", coupled.loc)):
        p = out_dir / f"{name}_layer{layer:04d}.vtk"
        grid.write_vtk(p, st.mesh, {"temperature": st.T})
        paths.append(p)
    return paths
