"""Structured Cartesian tetrahedral meshes for the global and local domains.

Every hexahedral cell is split into six tetrahedra sharing the cell diagonal
from its (0,0,0) corner to its (1,1,1) corner. The split is the same in every
cell, which keeps neighbouring cells conforming. Node and element ids grow
with z fastest-last, so appending a layer on top keeps all previous ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import permutations

import numpy as np

BOTTOM_PLATE = "BOTTOM_PLATE"
PLATE_LATERAL = "PLATE_LATERAL"
POWDER_LATERAL = "POWDER_LATERAL"
TOP_SURFACE = "TOP_SURFACE"
GAMMA_LATERAL = "GAMMA_LATERAL"
GAMMA_BOTTOM = "GAMMA_BOTTOM"

GLOBAL_TAGS = (BOTTOM_PLATE, PLATE_LATERAL, POWDER_LATERAL, TOP_SURFACE)
LOCAL_TAGS = (GAMMA_LATERAL, GAMMA_BOTTOM, TOP_SURFACE)

_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
_TOL = 1e-12


class MeshError(ValueError):
    pass


def _kuhn_tets():
    tets = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            path.append(corner.copy())
        verts = [int(c[0] + 2 * c[1] + 4 * c[2]) for c in path]
        # odd permutations yield negative volume
        sign = np.linalg.det(np.eye(3)[list(perm)])
        if sign < 0:
            verts[1], verts[2] = verts[2], verts[1]
        tets.append(verts)
    return np.array(tets)


KUHN = _kuhn_tets()  # (6, 4) local corner ids, corner = dx + 2 dy + 4 dz


def _axis(lo, hi, h):
    if h <= 0:
        raise MeshError(f"element length must be positive, got {h}")
    if hi <= lo:
        raise MeshError(f"empty extent [{lo}, {hi}]")
    n = max(1, int(np.ceil((hi - lo) / h - 1e-9)))
    return np.linspace(lo, hi, n + 1)


@dataclass
class Mesh:
    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    kind: str = "global"  # or "local"
    plate_top: float | None = None
    h_plane: float | None = None
    nodes: np.ndarray = field(init=False, repr=False)
    tets: np.ndarray = field(init=False, repr=False)
    faces: dict = field(init=False, repr=False)
    face_owner: dict = field(init=False, repr=False)

    def __post_init__(self):
        xs, ys, zs = (np.asarray(a, dtype=float) for a in (self.xs, self.ys, self.zs))
        for a in (xs, ys, zs):
            if len(a) < 2 or np.any(np.diff(a) <= 0):
                raise MeshError("grid coordinates must be strictly increasing")
        self.xs, self.ys, self.zs = xs, ys, zs
        if self.h_plane is None:
            self.h_plane = float(max(np.diff(xs).max(), np.diff(ys).max()))
        nx, ny, nz = self.shape
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        # node id = i + (nx+1) j + (nx+1)(ny+1) k
        self.nodes = np.column_stack(
            [X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(), Z.transpose(2, 1, 0).ravel()]
        )
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        base = (i + (nx + 1) * j + (nx + 1) * (ny + 1) * k).ravel()
        corner = np.array([dx + (nx + 1) * dy + (nx + 1) * (ny + 1) * dz
                           for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)])
        self.tets = (base[:, None, None] + corner[KUHN][None]).reshape(-1, 4)
        self._tag_boundary()

    @property
    def shape(self):
        return len(self.xs) - 1, len(self.ys) - 1, len(self.zs) - 1

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.tets)

    @property
    def extent(self):
        return np.array([self.xs[0], self.ys[0], self.zs[0]]), np.array([self.xs[-1], self.ys[-1], self.zs[-1]])

    @property
    def z_top(self):
        return float(self.zs[-1])

    def all_faces(self):
        """(4E, 3) oriented faces and their owning element ids."""
        f = self.tets[:, _TET_FACES].reshape(-1, 3)
        return f, np.repeat(np.arange(self.n_elements), 4)

    def _tag_boundary(self):
        f, owner = self.all_faces()
        key = _face_keys(f, self.n_nodes)
        _, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
        once = cnt[inv] == 1
        bf, bo = f[once], owner[once]
        c = self.nodes[bf].mean(axis=1)
        lo, hi = self.extent
        scale = max(hi - lo)
        on = lambda v, ref: np.abs(v - ref) <= _TOL * scale + 1e-15
        bottom = on(c[:, 2], lo[2])
        top = on(c[:, 2], hi[2])
        lateral = ~bottom & ~top
        if self.kind == "local":
            masks = {GAMMA_LATERAL: lateral, GAMMA_BOTTOM: bottom, TOP_SURFACE: top}
        else:
            plate_top = self.plate_top if self.plate_top is not None else hi[2]
            below = c[:, 2] < plate_top
            masks = {
                BOTTOM_PLATE: bottom,
                PLATE_LATERAL: lateral & below,
                POWDER_LATERAL: lateral & ~below,
                TOP_SURFACE: top,
            }
        self.faces = {t: bf[m] for t, m in masks.items()}
        self.face_owner = {t: bo[m] for t, m in masks.items()}
        self._boundary = (bf, bo)

    # --- cached element geometry -------------------------------------------

    @cached_property
    def jacobians(self):
        x = self.nodes[self.tets]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)

    @cached_property
    def volumes(self):
        return np.linalg.det(self.jacobians) / 6.0

    @cached_property
    def inv_jacobians(self):
        return np.linalg.inv(self.jacobians)

    @cached_property
    def basis_gradients(self):
        """(E, 4, 3) constant gradients of the four barycentric basis functions."""
        # lambda_i = row i of J^{-1} applied to (x - x0), i = 1..3
        inv = self.inv_jacobians
        out = np.empty((self.n_elements, 4, 3))
        out[:, 1:] = inv
        out[:, 0] = -inv.sum(axis=1)
        return out

    def face_geometry(self, tag):
        """Areas and outward unit normals of the faces with ``tag``."""
        f = self.faces[tag]
        x = self.nodes[f]
        cr = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        area = 0.5 * np.linalg.norm(cr, axis=1)
        return area, cr / (2 * area[:, None])

    def layer_elements(self, k):
        nx, ny, _ = self.shape
        per = nx * ny * 6
        return np.arange(k * per, (k + 1) * per)


def _face_keys(f, n):
    s = np.sort(f, axis=1).astype(np.int64)
    return (s[:, 0] * n + s[:, 1]) * n + s[:, 2]


# --- global mesh and growth ------------------------------------------------

@dataclass(frozen=True)
class GrowthState:
    n_act: int
    plate_top: float
    t_a: float
    max_layers: int
    born: tuple = ()  # per activation: (element ids, node ids)

    @property
    def z_top(self):
        return self.plate_top + self.n_act * self.t_a


def build_global_mesh(plate_extent, h_plane, h_plate_z, powder_extent=None, t_a=None) -> Mesh:
    """Plate (and optionally a fully activated powder bed) as one structured mesh.

    ``plate_extent`` and ``powder_extent`` are ((x0, y0, z0), (x1, y1, z1)) in
    meters. With ``powder_extent`` the bed is filled with layers of thickness
    ``t_a``.
    """
    (x0, y0, z0), (x1, y1, z1) = plate_extent
    if h_plane <= 0 or h_plate_z <= 0:
        raise MeshError("element lengths must be positive")
    xs = _axis(x0, x1, h_plane)
    ys = _axis(y0, y1, h_plane)
    zs = _axis(z0, z1, h_plate_z)
    if powder_extent is not None:
        (px0, py0, pz0), (px1, py1, pz1) = powder_extent
        ok = np.allclose([px0, py0, px1, py1, pz0], [x0, y0, x1, y1, z1], atol=1e-12)
        if not ok:
            raise MeshError("powder extent must sit on the plate with the same footprint")
        if t_a is None or t_a <= 0:
            raise MeshError("powder bed needs a positive layer thickness")
        n = int(round((pz1 - pz0) / t_a))
        zs = np.concatenate([zs, z1 + t_a * np.arange(1, n + 1)])
    return Mesh(xs, ys, zs, kind="global", plate_top=float(z1), h_plane=h_plane)


def start_growth(mesh: Mesh, t_a, max_layers) -> GrowthState:
    return GrowthState(0, float(mesh.plate_top), float(t_a), int(max_layers))


def activate_layer(mesh: Mesh, growth: GrowthState):
    """Append one element layer of thickness ``t_a`` across the whole footprint."""
    if not np.isclose(mesh.z_top, growth.z_top, rtol=0, atol=1e-12):
        raise MeshError("growth state does not match mesh top")
    if growth.n_act >= growth.max_layers:
        raise MeshError(f"build height exceeded ({growth.max_layers} layers)")
    new = Mesh(mesh.xs, mesh.ys, np.append(mesh.zs, mesh.z_top + growth.t_a),
               kind="global", plate_top=mesh.plate_top, h_plane=mesh.h_plane)
    born_el = np.arange(mesh.n_elements, new.n_elements)
    born_nodes = np.arange(mesh.n_nodes, new.n_nodes)
    g = replace(growth, n_act=growth.n_act + 1, born=growth.born + ((born_el, born_nodes),))
    return new, g, born_el


# --- local domain ----------------------------------------------------------

@dataclass(frozen=True)
class LocalBox:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    z_top: float
    depth: float
    h_local: float
    z_floor: float = -np.inf  # plate top; bottom never goes below it

    @property
    def z_bottom(self):
        return max(self.z_top - self.depth, self.z_floor)


def default_local_box(part_lo, part_hi, global_mesh: Mesh, growth: GrowthState,
                      margin=5e-3, depth=5e-3, h_local=1e-3, full_bed=False) -> LocalBox:
    """Part footprint inflated by ``margin``, kept one global cell inside the bed.

    A bed only one or two cells wide falls back to an inset of ``h_local``.
    """
    gx, gy = global_mesh.xs, global_mesh.ys

    def inset(ax):
        if len(ax) > 3:
            return ax[1], ax[-2]
        return ax[0] + h_local, ax[-1] - h_local

    inner = inset(gx) + inset(gy)
    if full_bed:
        x_lo, x_hi, y_lo, y_hi = inner
    else:
        x_lo = max(part_lo[0] - margin, inner[0])
        x_hi = min(part_hi[0] + margin, inner[1])
        y_lo = max(part_lo[1] - margin, inner[2])
        y_hi = min(part_hi[1] + margin, inner[3])
    if x_hi <= x_lo or y_hi <= y_lo:
        raise MeshError("global bed too small to immerse a local box")
    return LocalBox(x_lo, x_hi, y_lo, y_hi, growth.z_top, depth, h_local, growth.plate_top)


def check_immersed(box: LocalBox, global_mesh: Mesh):
    lo, hi = global_mesh.extent
    eps = 1e-12
    lateral_ok = (box.x_lo > lo[0] + eps and box.x_hi < hi[0] - eps
                  and box.y_lo > lo[1] + eps and box.y_hi < hi[1] - eps)
    vertical_ok = box.z_bottom >= lo[2] - eps and box.z_top <= hi[2] + eps
    if not (lateral_ok and vertical_ok):
        raise MeshError("local box must lie strictly inside the global bed laterally")


def build_local_mesh(box: LocalBox, global_mesh: Mesh | None = None) -> Mesh:
    if box.h_local <= 0:
        raise MeshError("local element length must be positive")
    if box.z_top <= box.z_bottom:
        raise MeshError("local box has no height")
    if global_mesh is not None:
        check_immersed(box, global_mesh)
    xs = _axis(box.x_lo, box.x_hi, box.h_local)
    ys = _axis(box.y_lo, box.y_hi, box.h_local)
    zs = _axis(box.z_bottom, box.z_top, box.h_local)
    return Mesh(xs, ys, zs, kind="local", h_plane=box.h_local)


def shift_local_box(box: LocalBox, growth: GrowthState) -> LocalBox:
    new = replace(box, z_top=box.z_top + growth.t_a)
    if not np.isclose(new.z_top, growth.z_top, rtol=0, atol=1e-12):
        raise MeshError("local box shift out of step with growth")
    return new


# --- point location --------------------------------------------------------

def locate_points(mesh: Mesh, pts, tol=1e-9):
    """Element ids and barycentric coordinates for points (m, 3).

    The structured grid gives the cell directly; the six Kuhn tets of the cell
    are then tested and the one with the largest minimum coordinate wins.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lo, hi = mesh.extent
    span = max(hi - lo)
    if np.any(pts < lo - tol * span) or np.any(pts > hi + tol * span):
        raise MeshError("point outside mesh")
    nx, ny, nz = mesh.shape
    i = np.clip(np.searchsorted(mesh.xs, pts[:, 0], side="right") - 1, 0, nx - 1)
    j = np.clip(np.searchsorted(mesh.ys, pts[:, 1], side="right") - 1, 0, ny - 1)
    k = np.clip(np.searchsorted(mesh.zs, pts[:, 2], side="right") - 1, 0, nz - 1)
    cell = i + nx * j + nx * ny * k
    cand = cell[:, None] * 6 + np.arange(6)[None]  # (m, 6)
    x0 = mesh.nodes[mesh.tets[cand, 0]]
    lam = np.einsum("mtij,mtj->mti", mesh.inv_jacobians[cand], pts[:, None, :] - x0)
    bary = np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)
    best = np.argmax(bary.min(axis=2), axis=1)
    rows = np.arange(len(pts))
    b = bary[rows, best]
    if np.any(b.min(axis=1) < -1e-8):
        raise MeshError("point location failed")
    return cand[rows, best], b


def locate_point(mesh: Mesh, p, tol=1e-9):
    e, b = locate_points(mesh, [p], tol)
    return int(e[0]), b[0]


def interpolate(mesh: Mesh, values, elems, bary):
    return np.einsum("mi,mi->m", np.asarray(values)[mesh.tets[elems]], bary)


# --- audits ----------------------------------------------------------------

def audit_mesh(mesh: Mesh) -> dict:
    """Volume, conformity and tag-partition checks; values are booleans."""
    lo, hi = mesh.extent
    box_vol = float(np.prod(hi - lo))
    vol = mesh.volumes
    f, _ = mesh.all_faces()
    _, cnt = np.unique(_face_keys(f, mesh.n_nodes), return_counts=True)
    bf, _ = mesh._boundary
    c = mesh.nodes[bf].mean(axis=1)
    span = max(hi - lo)
    on_hull = np.any(
        (np.abs(c - lo) <= 1e-12 * span) | (np.abs(c - hi) <= 1e-12 * span), axis=1
    )
    tagged = np.concatenate([_face_keys(v, mesh.n_nodes) for v in mesh.faces.values()])
    return {
        "positive_volumes": bool(np.all(vol > 0)),
        "volume_sum": bool(abs(vol.sum() - box_vol) <= 1e-10 * box_vol),
        "conforming": bool(np.all(cnt <= 2) and np.all(on_hull)),
        "tag_partition": bool(
            len(tagged) == len(bf) and len(np.unique(tagged)) == len(tagged)
        ),
    }


# --- VTK export ------------------------------------------------------------

def write_vtk(path, mesh: Mesh, point_data=None, title="twolevel_lpbf"):
    """Legacy ASCII unstructured grid with tetrahedra (cell type 10)."""
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        np.savetxt(fh, mesh.nodes, fmt="%.9e")
        fh.write(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}\n")
        np.savetxt(fh, np.column_stack([np.full(mesh.n_elements, 4), mesh.tets]), fmt="%d")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        np.savetxt(fh, np.full(mesh.n_elements, 10), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, vals in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, np.asarray(vals, dtype=float), fmt="%.9e")
