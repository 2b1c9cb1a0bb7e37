"""Local/global coupling across the immersed interface gamma.

The local problem takes Dirichlet data on gamma from the global solution.
The global problem receives the surface load

    int_gamma (kappa_plus - kappa_minus) (grad T_minus . n) w  dA

for every global test function w, with n the outward normal of the local box.
SEQUENTIAL builds that load from the fresh local iterate (Gauss-Seidel);
PARALLEL uses the previous local iterate, so the two solves are independent
(Jacobi) and may run concurrently.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem, grid

SEQUENTIAL = "SEQUENTIAL"
PARALLEL = "PARALLEL"


class CouplingError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class CouplingConfig:
    mode: str = SEQUENTIAL
    theta: float = 1.0
    tol: float = 1e-4
    max_iter: int = 20
    solver_tol: float = 1e-8
    workers: int = 1
    freeze_smoothing: bool = True  # take S from T_{n-1} instead of each iterate

    def __post_init__(self):
        if self.mode not in (SEQUENTIAL, PARALLEL):
            raise ValueError(f"unknown coupling mode {self.mode!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("relaxation theta must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("coupling tolerance and iteration cap must be positive")


@dataclass
class InterfaceMap:
    gamma_nodes: np.ndarray  # local node ids on gamma
    node_elems: np.ndarray  # containing global elements
    node_bary: np.ndarray  # (n, 4)
    q_points: np.ndarray  # (nq, 3)
    q_normals: np.ndarray  # (nq, 3) outward from the local box
    q_weights: np.ndarray  # (nq,) area weights
    q_local_elems: np.ndarray
    q_local_bary: np.ndarray
    q_global_elems: np.ndarray
    q_global_bary: np.ndarray

    @property
    def area(self):
        return float(self.q_weights.sum())


def _gamma_faces(local_mesh):
    tags = (grid.GAMMA_LATERAL, grid.GAMMA_BOTTOM)
    faces = np.concatenate([local_mesh.faces[t] for t in tags])
    owners = np.concatenate([local_mesh.face_owner[t] for t in tags])
    return faces, owners


def build_interface_map(global_mesh, local_mesh) -> InterfaceMap:
    faces, owners = _gamma_faces(local_mesh)
    nodes = np.unique(faces)
    try:
        ne, nb = grid.locate_points(global_mesh, local_mesh.nodes[nodes])
        x = local_mesh.nodes[faces]  # (F, 3, 3)
        cr = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        area = 0.5 * np.linalg.norm(cr, axis=1)
        normal = cr / (2 * area[:, None])
        qp = np.einsum("qi,fij->fqj", fem.TRI_QP_BARY, x).reshape(-1, 3)
        qe, qb = grid.locate_points(global_mesh, qp)
    except grid.MeshError as exc:
        raise grid.MeshError(f"local domain is not immersed in the global mesh: {exc}") from None
    q_local = np.repeat(owners, 3)
    x0 = local_mesh.nodes[local_mesh.tets[q_local, 0]]
    lam = np.einsum("mij,mj->mi", local_mesh.inv_jacobians[q_local], qp - x0)
    lb = np.column_stack([1.0 - lam.sum(axis=1), lam])
    return InterfaceMap(
        gamma_nodes=nodes,
        node_elems=ne,
        node_bary=nb,
        q_points=qp,
        q_normals=np.repeat(normal, 3, axis=0),
        q_weights=np.repeat(area * fem.TRI_QP_WEIGHT[0], 3),
        q_local_elems=q_local,
        q_local_bary=lb,
        q_global_elems=qe,
        q_global_bary=qb,
    )


def transfer_dirichlet(imap: InterfaceMap, global_mesh, T_plus):
    """Global field interpolated at the gamma nodes."""
    return grid.interpolate(global_mesh, T_plus, imap.node_elems, imap.node_bary)


def assemble_flux_functional(imap: InterfaceMap, global_mesh, local_mesh, T_minus,
                             kappa_plus, kappa_minus):
    """Global load vector of the conductivity-jump flux on gamma (not yet times dt)."""
    grad = fem.element_gradients(local_mesh, T_minus)[imap.q_local_elems]
    eta = (np.asarray(kappa_plus) - np.asarray(kappa_minus)) * np.einsum("qj,qj->q", grad, imap.q_normals)
    contrib = (eta * imap.q_weights)[:, None] * imap.q_global_bary
    return np.bincount(global_mesh.tets[imap.q_global_elems].ravel(), contrib.ravel(),
                       minlength=global_mesh.n_nodes)


def _nearest_qp(bary):
    d = ((bary[:, None, :] - fem.QP_BARY[None]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def _conductivity_at(mesh, lag, solid, material, elems, bary, smooth_lag=None):
    T = grid.interpolate(mesh, lag, elems, bary)
    q = _nearest_qp(bary)
    S = fem.smoothing_field(mesh, lag if smooth_lag is None else smooth_lag, solid, material)[elems, q]
    k, _, _ = material.evaluate(T, solid[elems, q], S)
    return k


def gamma_conductivities(imap, glob: fem.DomainState, loc: fem.DomainState, material,
                         lag_plus, lag_minus, smooth=False):
    """(kappa_plus, kappa_minus) at the gamma quadrature points.

    ``smooth=True`` takes the smoothing factor from the step's start fields.
    """
    sp, sm = (glob.T, loc.T) if smooth else (None, None)
    kp = _conductivity_at(glob.mesh, lag_plus, glob.solid, material, imap.q_global_elems,
                          imap.q_global_bary, sp)
    km = _conductivity_at(loc.mesh, lag_minus, loc.solid, material, imap.q_local_elems,
                          imap.q_local_bary, sm)
    return kp, km


@dataclass
class CoupledState:
    glob: fem.DomainState
    loc: fem.DomainState
    imap: InterfaceMap
    k: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (k, residual, mode, wall seconds)


def coupled_step(state: CoupledState, cfg: CouplingConfig, dt, bc, material,
                 source_global=None, source_local=None, initial=None) -> CoupledState:
    """Advance both levels by one time step; ``state`` holds T_{n-1}.

    ``initial`` optionally gives the starting iterates (T_plus, T_minus);
    by default the outer iteration starts from T_{n-1}.
    """
    glob, loc, imap = state.glob, state.loc, state.imap
    gm, lm = glob.mesh, loc.mesh
    if initial is None:
        Tp, Tm = glob.T.copy(), loc.T.copy()
    else:
        Tp, Tm = (np.array(a, dtype=float) for a in initial)
    history, trace = [], []
    pool = ThreadPoolExecutor(max_workers=2) if cfg.mode == PARALLEL and cfg.workers > 1 else None
    t0 = time.perf_counter()

    def local_solve(Tp_k, Tm_k):
        sys = fem.assemble_step(lm, loc, bc, dt, material, source=source_local, lag=Tm_k,
                                smooth_lag=loc.T if cfg.freeze_smoothing else None,
                                gamma=(imap.gamma_nodes, transfer_dirichlet(imap, gm, Tp_k)))
        return fem.solve(sys, cfg.solver_tol, x0=Tm_k)

    def global_solve(Tp_k, Tm_flux):
        kp, km = gamma_conductivities(imap, glob, loc, material, Tp_k, Tm_flux, cfg.freeze_smoothing)
        F = assemble_flux_functional(imap, gm, lm, Tm_flux, kp, km)
        sys = fem.assemble_step(gm, glob, bc, dt, material, source=source_global,
                                flux=F, lag=Tp_k, smooth_lag=glob.T if cfg.freeze_smoothing else None)
        return fem.solve(sys, cfg.solver_tol, x0=Tp_k)

    try:
        for k in range(1, cfg.max_iter + 1):
            if cfg.mode == SEQUENTIAL:
                Tm_new = local_solve(Tp, Tm)
                Tp_new = global_solve(Tp, Tm_new)
            elif pool is not None:
                # both read only the snapshots (Tp, Tm) of the previous iterate
                fut_l = pool.submit(local_solve, Tp, Tm)
                fut_g = pool.submit(global_solve, Tp, Tm)
                Tm_new, Tp_new = fut_l.result(), fut_g.result()
            else:
                Tp_new = global_solve(Tp, Tm)
                Tm_new = local_solve(Tp, Tm)
            if cfg.theta != 1.0:
                Tp_new = cfg.theta * Tp_new + (1.0 - cfg.theta) * Tp
            res = float(np.linalg.norm(Tp_new - Tp) / np.linalg.norm(Tp_new))
            history.append(res)
            trace.append((k, res, cfg.mode, time.perf_counter() - t0))
            Tp, Tm = Tp_new, Tm_new
            if res < cfg.tol:
                break
        else:
            raise CouplingError(
                f"coupling did not converge in {cfg.max_iter} iterations (last residual {res:.3e})",
                history,
            )
    finally:
        if pool is not None:
            pool.shutdown()
    new_glob = replace(glob, T=Tp, T_prev=glob.T)
    new_loc = replace(loc, T=Tm, T_prev=loc.T)
    return CoupledState(new_glob, new_loc, imap, k, res, history, trace)
