"""Backward-Euler, lagged-coefficient heat conduction on linear tetrahedra.

One call to :func:`assemble_step` builds

    M(c rho) T + dt (K(kappa) + R) T = dt (F_Q + F_robin + F_rad + F_gamma) + M(c rho) T_prev

with all coefficients evaluated at a lagged temperature. Radiation is an
explicit right-hand-side flux so the matrix stays symmetric positive definite.
``dt=None`` drops the mass terms and gives the steady problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from . import grid
from .materials import SIGMA_SB, smoothing_factor

GLOBAL = "GLOBAL"
LOCAL = "LOCAL"

_A, _B = 0.5854101966249685, 0.1381966011250105
QP_BARY = np.array([[_A, _B, _B, _B], [_B, _A, _B, _B], [_B, _B, _A, _B], [_B, _B, _B, _A]])
QP_WEIGHT = np.full(4, 0.25)  # fractions of the element volume
TRI_QP_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI_QP_WEIGHT = np.full(3, 1 / 3)


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# --- boundary conditions ---------------------------------------------------

@dataclass(frozen=True)
class Dirichlet:
    value: float


@dataclass(frozen=True)
class Robin:
    h: float
    T_ref: float | None = None  # defaults to T_amb
    radiation: bool = False


@dataclass(frozen=True)
class Adiabatic:
    pass


@dataclass(frozen=True)
class GammaDirichlet:
    """Values supplied per node by the global solution."""


@dataclass
class BoundaryConditionSet:
    h_conv: float = 0.1
    h_pow: float = 25.0
    T_amb: float = 298.15
    emissivity: float = 0.25
    sigma_sb: float = SIGMA_SB
    T_bp: float = 353.15
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("h_conv", "h_pow", "T_amb", "emissivity", "sigma_sb", "T_bp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def condition(self, tag, domain):
        if tag in self.overrides:
            return self.overrides[tag]
        if tag == grid.BOTTOM_PLATE:
            return Dirichlet(self.T_bp)
        if tag == grid.PLATE_LATERAL:
            return Adiabatic()
        if tag == grid.POWDER_LATERAL:
            return Robin(self.h_pow)
        if tag == grid.TOP_SURFACE:
            return Robin(self.h_conv, radiation=domain == LOCAL)
        if tag in (grid.GAMMA_LATERAL, grid.GAMMA_BOTTOM):
            return GammaDirichlet()
        raise KeyError(tag)

    @classmethod
    def adiabatic(cls, **kw):
        tags = grid.GLOBAL_TAGS + grid.LOCAL_TAGS
        return cls(overrides={t: Adiabatic() for t in tags}, **kw)


# --- state -----------------------------------------------------------------

@dataclass
class DomainState:
    mesh: grid.Mesh
    T: np.ndarray
    solid: np.ndarray  # (E, 4) quadrature-point labels
    domain: str = GLOBAL
    T_prev: np.ndarray | None = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        if self.T_prev is None:
            self.T_prev = self.T.copy()
        if len(self.T) != self.mesh.n_nodes or len(self.T_prev) != self.mesh.n_nodes:
            raise ValueError("temperature vector length does not match node count")
        if self.solid.shape != (self.mesh.n_elements, 4):
            raise ValueError("quadrature labels must have shape (n_elements, 4)")
        if not np.all(np.isfinite(self.T)) or np.any(self.T <= 0):
            raise ValueError("temperatures must be finite and positive kelvin")


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    dirichlet_ids: np.ndarray
    dirichlet_vals: np.ndarray


# --- element-level helpers -------------------------------------------------

def quad_values(mesh, T):
    """Nodal field interpolated at the four volume quadrature points, (E, 4)."""
    return np.asarray(T)[mesh.tets] @ QP_BARY.T


def element_gradients(mesh, T):
    return np.einsum("ei,eij->ej", np.asarray(T)[mesh.tets], mesh.basis_gradients)


def element_gradient(mesh, T, e):
    return np.asarray(T)[mesh.tets[e]] @ mesh.basis_gradients[e]


def smoothing_field(mesh, lag, solid, material):
    """Per-quadrature-point S, active only on powder points of cut elements."""
    S = np.ones(solid.shape)
    cut = solid.any(axis=1) & ~solid.all(axis=1)
    if np.any(cut) and material.delta > 0:
        g = element_gradients(mesh, lag)[cut]
        s = smoothing_factor(material.smoothing(mesh.h_plane), g)
        S[cut] = np.where(solid[cut], 1.0, s[:, None])
    return S


def coefficients(mesh, lag, solid, material, smooth_lag=None):
    """(kappa, c, rho) at the quadrature points for the lagged field.

    ``smooth_lag`` is the field the smoothing factor is taken from (default ``lag``).
    """
    S = smoothing_field(mesh, lag if smooth_lag is None else smooth_lag, solid, material)
    return material.evaluate(quad_values(mesh, lag), solid, S)


def enthalpy(mesh, T, c_rho):
    """Discrete enthalpy  sum_e V_e sum_q w_q (c rho)_q T_q."""
    return float(np.sum(mesh.volumes[:, None] * QP_WEIGHT * c_rho * quad_values(mesh, T)))


def _assemble_matrix(mesh, local):
    n = mesh.n_nodes
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def mass_matrix(mesh, c_rho):
    w = mesh.volumes[:, None] * QP_WEIGHT * c_rho  # (E, 4)
    return _assemble_matrix(mesh, np.einsum("eq,qi,qj->eij", w, QP_BARY, QP_BARY))


def stiffness_matrix(mesh, kappa):
    kbar = mesh.volumes * (kappa * QP_WEIGHT).sum(axis=1)
    G = mesh.basis_gradients
    return _assemble_matrix(mesh, kbar[:, None, None] * np.einsum("eik,ejk->eij", G, G))


def load_vector(mesh, source):
    """Volume load of a per-element (E,) or per-quadrature-point (E, 4) source."""
    Q = np.asarray(source, dtype=float)
    if Q.shape == (mesh.n_elements,):
        Q = np.repeat(Q[:, None], 4, axis=1)
    if Q.shape != (mesh.n_elements, 4):
        raise ValueError("source must have one value per element or per quadrature point")
    w = mesh.volumes[:, None] * QP_WEIGHT * Q
    return np.bincount(mesh.tets.ravel(), (w @ QP_BARY).ravel(), minlength=mesh.n_nodes)


def _robin_terms(mesh, faces, h, T_ref):
    area = 0.5 * np.linalg.norm(
        np.cross(mesh.nodes[faces[:, 1]] - mesh.nodes[faces[:, 0]],
                 mesh.nodes[faces[:, 2]] - mesh.nodes[faces[:, 0]]), axis=1)
    local = h * area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    n = mesh.n_nodes
    rows = np.repeat(faces, 3, axis=1).ravel()
    cols = np.tile(faces, (1, 3)).ravel()
    R = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    f = np.bincount(faces.ravel(), np.repeat(h * T_ref * area / 3.0, 3), minlength=n)
    return R, f, area


def _radiation_load(mesh, faces, area, lag, bc):
    Tq = np.asarray(lag)[faces] @ TRI_QP_BARY.T  # (F, 3)
    q = bc.sigma_sb * bc.emissivity * (Tq**4 - bc.T_amb**4)
    w = area[:, None] * TRI_QP_WEIGHT * q
    return -np.bincount(faces.ravel(), (w @ TRI_QP_BARY).ravel(), minlength=mesh.n_nodes)


def assemble_step(mesh, state: DomainState, bc: BoundaryConditionSet, dt, material,
                  source=None, flux=None, lag=None, gamma=None, dirichlet=None,
                  smooth_lag=None) -> LinearSystem:
    """Linear system of one lagged backward-Euler step (``dt=None``: steady).

    ``lag`` is the iterate the coefficients and radiation are frozen at
    (defaults to ``state.T``); ``smooth_lag`` optionally freezes the smoothing
    factor at another field; ``gamma`` is (node ids, values) for the local
    interface; ``dirichlet`` adds explicit (node ids, values) constraints.
    """
    lag = state.T if lag is None else lag
    kappa, c, rho = coefficients(mesh, lag, state.solid, material, smooth_lag)
    K = stiffness_matrix(mesh, kappa)
    n = mesh.n_nodes
    rhs = np.zeros(n)
    if source is not None:
        rhs += load_vector(mesh, source)
    if flux is not None:
        flux = np.asarray(flux, dtype=float)
        if flux.shape != (n,):
            raise ValueError("flux functional length does not match node count")
        rhs += flux
    fixed_ids, fixed_vals = [], []
    for tag, faces in mesh.faces.items():
        if len(faces) == 0:
            continue
        cond = bc.condition(tag, state.domain)
        if isinstance(cond, Robin):
            T_ref = bc.T_amb if cond.T_ref is None else cond.T_ref
            R, f, area = _robin_terms(mesh, faces, cond.h, T_ref)
            K = K + R
            rhs += f
            if cond.radiation:
                rhs += _radiation_load(mesh, faces, area, lag, bc)
        elif isinstance(cond, Dirichlet):
            ids = np.unique(faces)
            fixed_ids.append(ids)
            fixed_vals.append(np.full(len(ids), cond.value))
    if gamma is not None:
        fixed_ids.append(np.asarray(gamma[0]))
        fixed_vals.append(np.asarray(gamma[1], dtype=float))
    if dirichlet is not None:
        fixed_ids.append(np.asarray(dirichlet[0]))
        fixed_vals.append(np.asarray(dirichlet[1], dtype=float))
    if dt is None:
        A, b = K, rhs
    else:
        if dt <= 0:
            raise ValueError("time step must be positive")
        M = mass_matrix(mesh, c * rho)
        A = (M + dt * K).tocsr()
        b = dt * rhs + M @ state.T
    if fixed_ids:
        ids = np.concatenate(fixed_ids)
        vals = np.concatenate(fixed_vals)
        # later entries take precedence
        _, first = np.unique(ids[::-1], return_index=True)
        keep = len(ids) - 1 - first
        ids, vals = ids[keep], vals[keep]
    else:
        ids, vals = np.zeros(0, dtype=int), np.zeros(0)
    A = A.tocsr()
    # coo summation order differs between (i, j) and (j, i); make symmetry exact
    A = (0.5 * (A + A.T)).tocsr()
    return LinearSystem(A, b, ids, vals)


def solve(sys: LinearSystem, tol_rel=1e-8, max_iter=None, x0=None):
    """Jacobi-preconditioned CG on the system with Dirichlet rows eliminated."""
    n = len(sys.b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x[sys.dirichlet_ids] = sys.dirichlet_vals
    free = np.ones(n, dtype=bool)
    free[sys.dirichlet_ids] = False
    if not np.any(free):
        return x
    A = sys.A
    Aff = A[free][:, free]
    b = sys.b[free] - A[free][:, ~free] @ x[~free]
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        x[free] = 0.0
        return x
    d = Aff.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix is not positive definite (nonpositive diagonal)")
    M = sp.diags(1.0 / d)
    max_iter = max_iter or 10 * len(b) + 100
    xf, info = cg(Aff, b, x0=x[free], rtol=tol_rel, atol=0.0, maxiter=max_iter, M=M)
    res = np.linalg.norm(b - Aff @ xf) / bnorm
    if info != 0 or res > tol_rel * (1 + 1e-6):
        raise SolverError(f"CG did not converge: relative residual {res:.3e}", residual=res)
    x[free] = xf
    return x


def steady_plate_solve(mesh, bc: BoundaryConditionSet, material, solid=None,
                       tol=1e-6, max_iter=50, tol_rel=1e-10) -> DomainState:
    """Steady plate temperature with Picard iteration on the coefficients."""
    solid = np.ones((mesh.n_elements, 4), dtype=bool) if solid is None else solid
    state = DomainState(mesh, np.full(mesh.n_nodes, bc.T_bp), solid, GLOBAL)
    T = state.T
    for _ in range(max_iter):
        T_new = solve(assemble_step(mesh, state, bc, None, material, lag=T), tol_rel=tol_rel, x0=T)
        change = np.linalg.norm(T_new - T) / np.linalg.norm(T_new)
        T = T_new
        if change < tol:
            return DomainState(mesh, T, solid, GLOBAL)
    raise SolverError(f"steady plate Picard did not converge in {max_iter} iterations",
                      residual=change)


def boundary_nodes(mesh):
    return np.unique(np.concatenate([f.ravel() for f in mesh.faces.values()]))
