"""Bundled scenarios: the validation cylinder and a perforated beam.

The STL files here are generated by :func:`generate`; run
``python -m twolevel_lpbf.scenarios`` to rebuild them.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .. import geometry

CYLINDER_RADIUS = 5.0  # mm
CYLINDER_HEIGHT = 20.0
CYLINDER_SEGMENTS = 64

BEAM_SIZE = (24.0, 6.0, 8.0)  # mm
BEAM_HOLES = ((4.0, 4.0, 1.6), (12.0, 4.0, 2.0), (20.0, 4.0, 1.6))  # (x, z, r), axis along y


def scenario_dir() -> Path:
    return Path(str(resources.files(__package__)))


def scenario_config(name) -> Path:
    return scenario_dir() / f"{name}.ini"


def cylinder_triangles():
    return geometry.cylinder_triangles(CYLINDER_RADIUS, CYLINDER_HEIGHT, CYLINDER_SEGMENTS,
                                       center=(0.0, 0.0))


def beam_sdf(x, y, z):
    """Signed distance (negative inside) of a bar with three horizontal bores."""
    L, W, H = BEAM_SIZE
    q = np.stack([np.abs(x - L / 2) - L / 2, np.abs(y - W / 2) - W / 2, np.abs(z - H / 2) - H / 2])
    outside = np.linalg.norm(np.maximum(q, 0), axis=0)
    d = outside + np.minimum(q.max(axis=0), 0)
    for cx, cz, r in BEAM_HOLES:
        d = np.maximum(d, r - np.hypot(x - cx, z - cz))
    return d


def beam_triangles(spacing=0.4):
    from skimage import measure

    L, W, H = BEAM_SIZE
    pad = 2 * spacing
    ax = [np.arange(-pad, s + pad + spacing / 2, spacing) for s in (L, W, H)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    verts, faces, _, _ = measure.marching_cubes(beam_sdf(X, Y, Z), level=0.0,
                                                spacing=(spacing,) * 3)
    verts -= pad
    return verts[faces]


def generate(out_dir=None):
    out = Path(out_dir) if out_dir else scenario_dir()
    geometry.write_stl(out / "cylinder.stl", cylinder_triangles(), name="cylinder")
    geometry.write_stl(out / "beam.stl", beam_triangles(), name="beam")
    return out
