"""Built-in verification suites: mesh audits, a geometry oracle, two-level
consistency, coupling-mode equivalence, manufactured-solution convergence
and an enthalpy audit. Each suite returns a :class:`SuiteResult`; failures are
report content, not exceptions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fem, geometry, grid, twolevel
from .materials import ConstantMaterial, MaterialTable, PowderModel, SolidPowderMaterial


@dataclass
class SuiteResult:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    wall: float = 0.0

    def line(self):
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {vals} ({self.wall:.1f} s)"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# --- shared desk problem ---------------------------------------------------

DESK_PLATE = ((0.0, 0.0, 0.0), (0.02, 0.02, 0.004))
DESK_POWDER = ((0.0, 0.0, 0.004), (0.02, 0.02, 0.010))
DESK_BOX = grid.LocalBox(0.005, 0.015, 0.005, 0.015, 0.010, 0.005, 1e-3, 0.004)
HEAT_DT = 81.25e-6
HEAT_Q = 4.22e13


@dataclass
class DeskProblem:
    gm: grid.Mesh
    lm: grid.Mesh
    imap: twolevel.InterfaceMap
    g_solid: np.ndarray
    l_solid: np.ndarray

    def state(self, T0=353.15):
        g = fem.DomainState(self.gm, np.full(self.gm.n_nodes, T0), self.g_solid, fem.GLOBAL)
        loc = fem.DomainState(self.lm, np.full(self.lm.n_nodes, T0), self.l_solid, fem.LOCAL)
        return twolevel.CoupledState(g, loc, self.imap)

    def sources(self, z_lo=0.009):
        return _top_source(self.gm, self.g_solid, z_lo), _top_source(self.lm, self.l_solid, z_lo)


def _top_source(mesh, solid, z_lo):
    zc = mesh.nodes[mesh.tets][:, :, 2].mean(axis=1)
    return np.where(solid & (zc > z_lo)[:, None], HEAT_Q, 0.0)


def desk_problem() -> DeskProblem:
    """20 x 20 x 10 mm: 4 mm plate, 6 mm of powder with a 3 mm radius cylinder."""
    gm = grid.build_global_mesh(DESK_PLATE, 4e-3, 4e-3, powder_extent=DESK_POWDER, t_a=1e-3)
    lm = grid.build_local_mesh(DESK_BOX, gm)
    cyl = geometry.TriangleSoup(geometry.cylinder_triangles(3.0, 6.0, 48, center=(10.0, 10.0), z0=4.0))

    def labels(m):
        qp = np.einsum("qi,eij->eqj", fem.QP_BARY, m.nodes[m.tets])
        s = geometry.inside_mask(cyl, 1e3 * qp.reshape(-1, 3)).reshape(-1, 4)
        return s | (qp[..., 2] < DESK_PLATE[1][2])

    return DeskProblem(gm, lm, twolevel.build_interface_map(gm, lm), labels(gm), labels(lm))


def _outside_box_l2(mesh, diff, box):
    c = mesh.nodes[mesh.tets].mean(axis=1)
    out = ~((c[:, 0] > box.x_lo) & (c[:, 0] < box.x_hi) & (c[:, 1] > box.y_lo)
            & (c[:, 1] < box.y_hi) & (c[:, 2] > box.z_bottom))
    q = fem.quad_values(mesh, diff)[out]
    return float(np.sqrt(np.sum(mesh.volumes[out, None] * fem.QP_WEIGHT * q**2)))


# --- suites ----------------------------------------------------------------

def mesh_audit_suite(n_activations=3):
    t0 = time.perf_counter()
    gm = grid.build_global_mesh(((0, 0, 0), (0.03, 0.03, 0.012)), 4e-3, 4e-3)
    growth = grid.start_growth(gm, 1e-3, n_activations)
    ok = all(grid.audit_mesh(gm).values())
    for _ in range(n_activations):
        gm, growth, _ = grid.activate_layer(gm, growth)
        ok &= all(grid.audit_mesh(gm).values())
    lm = grid.build_local_mesh(grid.LocalBox(0.01, 0.02, 0.01, 0.02, gm.z_top, 5e-3, 1e-3, 0.012), gm)
    checks = grid.audit_mesh(lm)
    ok &= all(checks.values())
    vals = {"activations": n_activations, "global_elements": gm.n_elements,
            "local_elements": lm.n_elements}
    return SuiteResult("mesh audits", bool(ok), vals, time.perf_counter() - t0)


def consistency_suite(tol_cpl=1e-6, problem=None, threshold=1e-3):
    """Equal conductivities on both levels: the two-level global field must match
    the single-mesh solve outside the local box."""
    t0 = time.perf_counter()
    p = problem or desk_problem()
    mat = ConstantMaterial(16.0, 500.0, 8000.0)
    bc = fem.BoundaryConditionSet()
    cfg = twolevel.CouplingConfig(twolevel.SEQUENTIAL, tol=tol_cpl, max_iter=60, solver_tol=1e-10)
    st = p.state()
    src_g, src_l = p.sources()
    single = st.glob
    worst, ks = 0.0, []
    for dt, sg, sl in ((HEAT_DT, src_g, src_l), (1.0, None, None)):
        st = twolevel.coupled_step(st, cfg, dt, bc, mat, sg, sl)
        sys = fem.assemble_step(p.gm, single, bc, dt, mat, source=sg)
        T = fem.solve(sys, 1e-10, x0=single.T)
        single = fem.DomainState(p.gm, T, single.solid, fem.GLOBAL, single.T)
        err = _outside_box_l2(p.gm, st.glob.T - T, DESK_BOX) / _outside_box_l2(p.gm, T, DESK_BOX)
        worst = max(worst, err)
        ks.append(st.k)
    # how well the local field follows the global one it is driven by
    e, b = grid.locate_points(p.gm, p.lm.nodes)
    gap = float(np.max(np.abs(st.loc.T - grid.interpolate(p.gm, st.glob.T, e, b))))
    vals = {"tol_cpl": tol_cpl, "rel_l2_outside": worst, "threshold": threshold,
            "iterations": ks, "local_global_gap_K": gap}
    return SuiteResult("two-level consistency", worst < threshold, vals, time.perf_counter() - t0)


def mode_equivalence_suite(tol_cpl=1e-6, problem=None, workers=1):
    """SEQUENTIAL and PARALLEL fixed points on the desk problem; PARALLEL must not
    need fewer outer iterations."""
    t0 = time.perf_counter()
    p = problem or desk_problem()
    mat = SolidPowderMaterial(MaterialTable.ss316l(), PowderModel())
    bc = fem.BoundaryConditionSet()
    src_g, src_l = p.sources()
    out = {}
    for mode in (twolevel.SEQUENTIAL, twolevel.PARALLEL):
        cfg = twolevel.CouplingConfig(mode, tol=tol_cpl, max_iter=80, solver_tol=1e-10, workers=workers)
        st = p.state()
        ks = []
        for dt, sg, sl in ((HEAT_DT, src_g, src_l), (1.0, None, None)):
            st = twolevel.coupled_step(st, cfg, dt, bc, mat, sg, sl)
            ks.append(st.k)
        out[mode] = (st, ks)
    (s, ks_s), (q, ks_p) = out[twolevel.SEQUENTIAL], out[twolevel.PARALLEL]
    dg = np.max(np.abs(s.glob.T - q.glob.T))
    dl = np.max(np.abs(s.loc.T - q.loc.T))
    rel = float(max(dg / np.max(np.abs(s.glob.T)), dl / np.max(np.abs(s.loc.T))))
    passed = rel <= 10 * tol_cpl and sum(ks_p) >= sum(ks_s)
    vals = {"tol_cpl": tol_cpl, "rel_max_diff": rel, "abs_max_diff_K": float(max(dg, dl)),
            "iters_sequential": ks_s, "iters_parallel": ks_p}
    return SuiteResult("mode equivalence", bool(passed), vals, time.perf_counter() - t0)


def manufactured_solution(n, dt=0.1, material=None, T0=300.0):
    """One backward-Euler step on the unit cube for T = T0 + (1 + t) sin sin sin.

    Returns (h, L2 error at t = dt)."""
    mat = material or ConstantMaterial(2.0, 3.0, 1.5)
    m = grid.Mesh(*(np.linspace(0.0, 1.0, n + 1),) * 3)

    def u(x):
        return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) * np.sin(np.pi * x[..., 2])

    qp = np.einsum("qi,eij->eqj", fem.QP_BARY, m.nodes[m.tets])
    # discrete-in-time source: (T1 - T0)/dt - k lap T1 with T1 = T0 + (1 + dt) u
    Q = mat.c * mat.rho * u(qp) + 3 * np.pi**2 * mat.k * (1 + dt) * u(qp)
    st = fem.DomainState(m, T0 + u(m.nodes), np.ones((m.n_elements, 4), bool))
    bn = fem.boundary_nodes(m)
    sys = fem.assemble_step(m, st, fem.BoundaryConditionSet.adiabatic(), dt, mat, source=Q,
                            dirichlet=(bn, T0 + (1 + dt) * u(m.nodes[bn])))
    T = fem.solve(sys, 1e-12)
    err = fem.quad_values(m, T) - T0 - (1 + dt) * u(qp)
    return 1.0 / n, float(np.sqrt(np.sum(m.volumes[:, None] * fem.QP_WEIGHT * err**2)))


def mms_suite(levels=(6, 12, 24), min_ratio=3.5):
    t0 = time.perf_counter()
    hs, errs = zip(*(manufactured_solution(n) for n in levels))
    ratios = [float(a / b) for a, b in zip(errs[:-1], errs[1:])]
    vals = {"h": list(hs), "l2_error": list(errs), "ratios": ratios, "min_ratio": min_ratio}
    return SuiteResult("MMS convergence", min(ratios) >= min_ratio, vals, time.perf_counter() - t0)


def energy_suite(n_steps=100, dt=0.5, tol=1e-8, seed=0):
    """Adiabatic, source-free, constant coefficients: enthalpy conserved every step."""
    t0 = time.perf_counter()
    mat = ConstantMaterial(16.0, 500.0, 8000.0)
    m = grid.build_global_mesh(((0, 0, 0), (0.02, 0.02, 0.010)), 2e-3, 2e-3)
    rng = np.random.default_rng(seed)
    T = 300.0 + 200.0 * rng.random(m.n_nodes)
    solid = np.ones((m.n_elements, 4), bool)
    bc = fem.BoundaryConditionSet.adiabatic()
    c_rho = np.full((m.n_elements, 4), mat.c * mat.rho)
    H0 = fem.enthalpy(m, T, c_rho)
    worst = 0.0
    for _ in range(n_steps):
        st = fem.DomainState(m, T, solid)
        T = fem.solve(fem.assemble_step(m, st, bc, dt, mat), 1e-13, x0=T)
        H1 = fem.enthalpy(m, T, c_rho)
        worst = max(worst, abs(H1 - H0) / abs(H0))
        H0 = H1
    vals = {"steps": n_steps, "max_rel_change_per_step": worst, "tol": tol,
            "final_spread_K": float(T.max() - T.min())}
    return SuiteResult("energy audit", worst <= tol, vals, time.perf_counter() - t0)


def polygon_prism_inside(points, radius, height, n_seg, center=(0.0, 0.0), z0=0.0):
    """Analytic membership test for the faceted cylinder (a regular prism)."""
    p = np.asarray(points, dtype=float)
    th = 2 * np.pi * (np.arange(n_seg) + 0.5) / n_seg
    apothem = radius * np.cos(np.pi / n_seg)
    xy = p[:, :2] - np.asarray(center)
    proj = xy @ np.stack([np.cos(th), np.sin(th)])
    signed = np.maximum((proj - apothem).max(axis=1),
                        np.maximum(z0 - p[:, 2], p[:, 2] - z0 - height))
    return signed < 0, np.abs(signed)


def geometry_oracle_suite(n_points=10_000, band=geometry.BAND_TOL, seed=0, soup=None):
    """Ray-cast classification of the bundled cylinder against the analytic prism
    test, on random points in a padded bounding box (mm)."""
    from . import scenarios

    t0 = time.perf_counter()
    r, h, n = scenarios.CYLINDER_RADIUS, scenarios.CYLINDER_HEIGHT, scenarios.CYLINDER_SEGMENTS
    soup = soup or geometry.TriangleSoup(scenarios.cylinder_triangles())
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-1.2 * r, -1.2 * r, -0.1 * h], [1.2 * r, 1.2 * r, 1.1 * h], (n_points, 3))
    truth, dist = polygon_prism_inside(pts, r, h, n)
    got = geometry.inside_mask(soup, pts)
    keep = dist > band
    mismatches = int(np.sum(got[keep] != truth[keep]))
    # the round cylinder differs from its facets by at most the sagitta
    sagitta = r * (1 - np.cos(np.pi / n))
    rho = np.hypot(pts[:, 0], pts[:, 1])
    round_d = np.maximum(rho - r, np.maximum(-pts[:, 2], pts[:, 2] - h))
    round_keep = np.abs(round_d) > sagitta + band
    round_miss = int(np.sum(got[round_keep] != (round_d[round_keep] < 0)))
    vals = {"points": n_points, "outside_band": int(keep.sum()), "mismatches": mismatches,
            "agreement_pct": 100.0 * (1 - mismatches / max(int(keep.sum()), 1)),
            "round_outside_band": int(round_keep.sum()), "round_mismatches": round_miss}
    passed = mismatches == 0 and round_miss == 0
    return SuiteResult("geometry oracle", passed, vals, time.perf_counter() - t0)


def run_all(tol_cpl=1e-6, workers=1):
    p = desk_problem()
    return [
        mesh_audit_suite(),
        geometry_oracle_suite(),
        consistency_suite(tol_cpl, p),
        mode_equivalence_suite(tol_cpl, p, workers),
        mms_suite(),
        energy_suite(),
    ]
