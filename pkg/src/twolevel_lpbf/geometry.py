"""STL ingestion and inside/outside classification of points.

Membership uses parity ray casting along a nearly vertical ray whose small
lateral components are irrational, so edge and vertex hits are rare. When a
hit does land on an edge, a vertex, or a coplanar facet, the ray is recast in
the next direction of a fixed list. Points within ``BAND_TOL`` of the surface
are SOLID. All coordinates here are millimeters.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

AREA_TOL = 1e-12  # mm^2
BAND_TOL = 1e-6  # mm
_BARY_EPS = 1e-10
_PARALLEL_EPS = 1e-14

RAY_DIRECTIONS = np.array(
    [
        [np.sqrt(2.0) * 1e-3, np.sqrt(3.0) * 1e-3, 1.0],
        [np.sqrt(5.0) * 1e-3, -np.sqrt(7.0) * 1e-3, 1.0],
        [-np.sqrt(11.0) * 1e-3, np.sqrt(13.0) * 1e-3, 1.0],
        [-np.sqrt(17.0) * 1e-3, -np.sqrt(19.0) * 1e-3, 1.0],
        [np.sqrt(23.0) * 1e-3, np.pi * 1e-3, 1.0],
    ]
)
RAY_DIRECTIONS /= np.linalg.norm(RAY_DIRECTIONS, axis=1)[:, None]


class StlError(ValueError):
    pass


class Label(str, Enum):
    SOLID = "SOLID"
    POWDER = "POWDER"


@dataclass(frozen=True)
class PointClassification:
    label: Label
    point: tuple
    layer: int | None = None


@dataclass
class TriangleSoup:
    triangles: np.ndarray  # (n, 3, 3) mm
    normals: np.ndarray = field(init=False)
    dropped: int = 0

    def __post_init__(self):
        tri = np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3)
        if not np.all(np.isfinite(tri)):
            raise StlError("non-finite vertex coordinates")
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area = 0.5 * np.linalg.norm(cr, axis=1)
        keep = area >= AREA_TOL
        self.dropped += int(np.count_nonzero(~keep))
        if self.dropped:
            log.info("dropped %d degenerate facets", self.dropped)
        tri, cr = tri[keep], cr[keep]
        if len(tri) == 0:
            raise StlError("mesh has no valid facets")
        self.triangles = tri
        self.normals = cr / np.linalg.norm(cr, axis=1)[:, None]
        self._index = None

    def __len__(self):
        return len(self.triangles)

    @property
    def bbox(self):
        return self.triangles.reshape(-1, 3).min(axis=0), self.triangles.reshape(-1, 3).max(axis=0)

    def translated(self, v) -> "TriangleSoup":
        return TriangleSoup(self.triangles + np.asarray(v, dtype=float))

    @property
    def index(self) -> "_ColumnIndex":
        if self._index is None:
            self._index = _ColumnIndex(self)
        return self._index


# --- STL I/O ---------------------------------------------------------------

def load_stl(path) -> TriangleSoup:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) == 0:
        raise StlError(f"{path}: empty file")
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            return _parse_binary(data, count)
    if data.lstrip()[:5].lower() == b"solid":
        return _parse_ascii(data.decode("ascii", errors="replace"), path)
    raise StlError(f"{path}: not a valid binary or ASCII STL (truncated?)")


def _parse_binary(data, count):
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.frombuffer(data, dtype=rec, count=count, offset=84)
    return TriangleSoup(arr["v"].astype(float))


def _parse_ascii(text, path):
    verts = []
    in_loop = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        key = tok[0].lower()
        if key == "vertex":
            if len(tok) != 4:
                raise StlError(f"{path}:{lineno}: malformed vertex record")
            try:
                verts.append([float(t) for t in tok[1:]])
            except ValueError as exc:
                raise StlError(f"{path}:{lineno}: {exc}") from None
            in_loop += 1
        elif key == "endloop":
            if in_loop != 3:
                raise StlError(f"{path}:{lineno}: facet with {in_loop} vertices")
            in_loop = 0
        elif key not in ("solid", "facet", "outer", "endfacet", "endsolid"):
            raise StlError(f"{path}:{lineno}: unexpected token {tok[0]!r}")
    if in_loop or len(verts) % 3:
        raise StlError(f"{path}: truncated facet")
    if not verts:
        raise StlError(f"{path}: no facets")
    return TriangleSoup(np.array(verts).reshape(-1, 3, 3))


def write_stl(path, triangles, binary=True, name="part"):
    tri = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    nrm = np.linalg.norm(cr, axis=1)
    n = cr / np.where(nrm > 0, nrm, 1.0)[:, None]
    if binary:
        rec = np.zeros(len(tri), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        rec["n"], rec["v"] = n, tri
        with open(path, "wb") as fh:
            fh.write(name.encode()[:80].ljust(80, b" "))
            fh.write(struct.pack("<I", len(tri)))
            fh.write(rec.tobytes())
        return
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"solid {name}\n")
        for t, nn in zip(tri, n):
            fh.write(f"  facet normal {nn[0]:.9e} {nn[1]:.9e} {nn[2]:.9e}\n    outer loop\n")
            for v in t:
                fh.write(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}\n")
            fh.write("    endloop\n  endfacet\n")
        fh.write(f"endsolid {name}\n")


def box_triangles(lo=(0, 0, 0), hi=(1, 1, 1)):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    v = lo + c * (hi - lo)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, cc, d in quads:
        tris += [(v[a], v[b], v[cc]), (v[a], v[cc], v[d])]
    return np.array(tris)


def cylinder_triangles(radius, height, n_seg=64, center=(0.0, 0.0), z0=0.0):
    """Closed faceted cylinder with axis along z; caps are fans about the axis."""
    cx, cy = center
    th = 2 * np.pi * np.arange(n_seg) / n_seg
    ring = np.column_stack([cx + radius * np.cos(th), cy + radius * np.sin(th)])
    tris = []
    for i in range(n_seg):
        j = (i + 1) % n_seg
        a0, b0 = (*ring[i], z0), (*ring[j], z0)
        a1, b1 = (*ring[i], z0 + height), (*ring[j], z0 + height)
        tris += [(a0, b0, b1), (a0, b1, a1)]
        tris.append(((cx, cy, z0 + height), a1, b1))
        tris.append(((cx, cy, z0), b0, a0))
    return np.array(tris, dtype=float)


# --- classification --------------------------------------------------------

class _ColumnIndex:
    """Bins triangles into xy columns; nearly vertical rays stay in their column."""

    def __init__(self, soup: TriangleSoup):
        tri = soup.triangles
        self.lo, self.hi = soup.bbox
        height = self.hi[2] - self.lo[2]
        lateral = np.abs(RAY_DIRECTIONS[:, :2] / RAY_DIRECTIONS[:, 2:]).max()
        pad = lateral * height + 10 * BAND_TOL
        tlo = tri.min(axis=1)
        thi = tri.max(axis=1)
        self.tlo, self.thi = tlo, thi
        span = np.maximum(self.hi[:2] - self.lo[:2], 1e-9)
        n = int(np.clip(np.sqrt(len(tri)), 1, 256))
        self.n = np.maximum(1, np.round(n * span / span.max()).astype(int))
        self.cell = span / self.n
        i0 = self._cell_xy(tlo[:, :2] - pad)
        i1 = self._cell_xy(thi[:, :2] + pad)
        nx_t, ny_t = i1[:, 0] - i0[:, 0] + 1, i1[:, 1] - i0[:, 1] + 1
        counts = nx_t * ny_t
        tid = np.repeat(np.arange(len(tri)), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cx = i0[tid, 0] + local % nx_t[tid]
        cy = i0[tid, 1] + local // nx_t[tid]
        cid = cy * self.n[0] + cx
        order = np.argsort(cid, kind="stable")
        self.tri_ids = tid[order]
        self.offsets = np.searchsorted(cid[order], np.arange(self.n[0] * self.n[1] + 1))

    def _cell_xy(self, xy):
        ij = np.floor((xy - self.lo[:2]) / self.cell).astype(int)
        return np.clip(ij, 0, self.n - 1)

    def cell_of(self, pts):
        ij = self._cell_xy(pts[:, :2])
        return ij[:, 1] * self.n[0] + ij[:, 0]

    def candidates(self, cid):
        return self.tri_ids[self.offsets[cid]:self.offsets[cid + 1]]


def _point_triangle_distance(p, a, b, c):
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    n /= np.linalg.norm(n, axis=1)[:, None]
    d_plane = np.einsum("ij,ij->i", p - a, n)
    q = p - d_plane[:, None] * n
    # barycentric of the projection
    v2 = q - a
    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    d20 = np.einsum("ij,ij->i", v2, ab)
    d21 = np.einsum("ij,ij->i", v2, ac)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)

    def seg(p, s0, s1):
        e = s1 - s0
        t = np.clip(np.einsum("ij,ij->i", p - s0, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        return np.linalg.norm(p - (s0 + t[:, None] * e), axis=1)

    edge = np.minimum(np.minimum(seg(p, a, b), seg(p, b, c)), seg(p, c, a))
    return np.where(inside, np.abs(d_plane), edge)


def _ray_parity(p, tri, direction):
    """Crossing parity of rays from points ``p`` (m,3) against ``tri`` (t,3,3).

    Returns (odd, degenerate) boolean arrays of length m.
    """
    a = tri[None, :, 0]
    e1 = tri[None, :, 1] - a
    e2 = tri[None, :, 2] - a
    h = np.cross(direction, e2)
    det = np.einsum("...k,...k->...", e1, h)
    parallel = np.abs(det) < _PARALLEL_EPS
    inv = 1.0 / np.where(parallel, 1.0, det)
    s = p[:, None, :] - a
    u = np.einsum("...k,...k->...", s, h) * inv
    q = np.cross(s, e1)
    v = np.einsum("...k,...k->...", q, direction) * inv
    t = np.einsum("...k,...k->...", e2, q) * inv
    hit = (~parallel) & (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1 + _BARY_EPS) & (t > 0)
    grazing = hit & (
        (np.abs(u) <= _BARY_EPS) | (np.abs(v) <= _BARY_EPS) | (np.abs(u + v - 1) <= _BARY_EPS)
    )
    # a coplanar facet containing the ray origin makes the count meaningless
    d_plane = np.abs(np.einsum("...k,...k->...", s, np.cross(e1, e2)))
    coplanar = parallel & (d_plane < _BARY_EPS * np.linalg.norm(np.cross(e1, e2), axis=-1) + 1e-300)
    strict = hit & ~grazing
    odd = (np.count_nonzero(strict, axis=1) % 2) == 1
    return odd, (grazing | coplanar).any(axis=1)


def inside_mask(geom: TriangleSoup, points) -> np.ndarray:
    """Vectorized membership: True where SOLID. ``points`` in mm, shape (m, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    if len(pts) == 0:
        return out
    lo, hi = geom.bbox
    cand = np.all((pts >= lo - BAND_TOL) & (pts <= hi + BAND_TOL), axis=1)
    idx = np.flatnonzero(cand)
    if len(idx) == 0:
        return out
    ix = geom.index
    cells = ix.cell_of(pts[idx])
    order = np.argsort(cells, kind="stable")
    idx, cells = idx[order], cells[order]
    bounds = np.flatnonzero(np.diff(cells)) + 1
    for group in np.split(np.arange(len(idx)), bounds):
        pid = idx[group]
        tids = ix.candidates(cells[group[0]])
        if len(tids) == 0:
            continue
        out[pid] = _classify_group(geom, pts[pid], tids)
    return out


def _classify_group(geom, p, tids, budget=400_000):
    result = np.zeros(len(p), dtype=bool)
    tri = geom.triangles[tids]
    tlo, thi = geom.index.tlo[tids], geom.index.thi[tids]
    chunk = max(1, budget // len(tids))
    for start in range(0, len(p), chunk):
        sl = slice(start, start + chunk)
        q = p[sl]
        res = result[sl]
        near_box = np.all((q[:, None, :] >= tlo - BAND_TOL) & (q[:, None, :] <= thi + BAND_TOL), axis=2)
        pi, ti = np.nonzero(near_box)
        if len(pi):
            d = _point_triangle_distance(q[pi], tri[ti, 0], tri[ti, 1], tri[ti, 2])
            res[np.unique(pi[d <= BAND_TOL])] = True
        pending = np.flatnonzero(~res)
        for k, direction in enumerate(RAY_DIRECTIONS):
            if len(pending) == 0:
                break
            odd, degenerate = _ray_parity(q[pending], tri, direction)
            settle = ~degenerate | (k == len(RAY_DIRECTIONS) - 1)
            res[pending[settle]] = odd[settle]
            pending = pending[~settle]
    return result


def classify_point(geom: TriangleSoup, p, layer=None) -> PointClassification:
    p = tuple(float(x) for x in p)
    solid = bool(inside_mask(geom, np.array([p]))[0])
    return PointClassification(Label.SOLID if solid else Label.POWDER, p, layer)


def check_band(points, z_band, tol=1e-9):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) and (np.any(pts[:, 2] < z_band[0] - tol) or np.any(pts[:, 2] > z_band[1] + tol)):
        raise ValueError(f"points outside z band [{z_band[0]}, {z_band[1]}]")
    return pts


def classify_layer_points(geom: TriangleSoup, points, z_band, layer=None):
    pts = check_band(points, z_band)
    if len(pts) == 0:
        return []
    mask = inside_mask(geom, pts)
    return [
        PointClassification(Label.SOLID if m else Label.POWDER, tuple(p), layer)
        for p, m in zip(pts.tolist(), mask)
    ]
