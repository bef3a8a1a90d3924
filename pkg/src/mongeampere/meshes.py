"""Domain meshes: node clouds with boundary flags and cell-volume weights.

A mesh is a finite sample of a bounded domain in R^2 or R^3.  Box grids carry
extra structure (shape, spacing) that enables fast paths elsewhere; scattered
meshes (affine images, fans, disks) only carry nodes, flags and weights.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainMesh",
    "grid_mesh",
    "disk_mesh",
    "fan_mesh",
    "slab_mesh",
    "affine_image",
    "write_mafn",
    "read_mafn",
]


class MeshError(ValueError):
    """Raised for invalid or degenerate mesh constructions."""


@dataclass(frozen=True)
class DomainMesh:
    """Nodes of a bounded domain with boundary flags and cell weights.

    points    : (N, n) node coordinates, n in {2, 3}
    boundary  : (N,) bool, True on topological boundary nodes
    weights   : (N,) positive cell volumes summing to the domain volume
    grid_shape: optional tuple, set when the nodes form a full box grid in
                lexicographic (ij) order; enables grid fast paths
    grid_bounds: optional (n, 2) array of box bounds for grid meshes
    """

    points: np.ndarray
    boundary: np.ndarray
    weights: np.ndarray
    grid_shape: tuple | None = None
    grid_bounds: np.ndarray | None = None
    domain_volume: float = field(default=0.0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise MeshError("mesh points must be (N, n) with n in {2, 3}")
        if len(pts) < pts.shape[1] + 1:
            raise MeshError("mesh needs at least n+1 nodes")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "boundary", np.asarray(self.boundary, dtype=bool))
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise MeshError("cell weights must be positive")
        object.__setattr__(self, "weights", w)
        if self.domain_volume <= 0:
            object.__setattr__(self, "domain_volume", float(w.sum()))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def spacing(self) -> float:
        """Grid spacing; uniform grids only."""
        if self.grid_shape is None:
            # fall back to a nearest-neighbour estimate
            d = self.points[1:] - self.points[:-1]
            return float(np.sqrt((d * d).sum(1)).min())
        lo, hi = self.grid_bounds[0]
        return float((hi - lo) / (self.grid_shape[0] - 1))

    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def grid_index(self, node: int) -> tuple:
        if self.grid_shape is None:
            raise MeshError("not a grid mesh")
        return np.unravel_index(node, self.grid_shape)

    def nearest_node(self, x) -> int:
        d = self.points - np.asarray(x, dtype=float)
        return int(np.argmin((d * d).sum(1)))


def _grid_weights(shape, spacing_per_axis):
    """Trapezoidal node weights: half cells on faces, quarters on edges."""
    w = np.ones(shape, dtype=float)
    for ax, m in enumerate(shape):
        f = np.ones(m)
        f[0] = f[-1] = 0.5
        sl = [None] * len(shape)
        sl[ax] = slice(None)
        w = w * f[tuple(sl)]
    return w.ravel() * np.prod(spacing_per_axis)


def grid_mesh(bounds, shape) -> DomainMesh:
    """Uniform box grid on the given bounds.

    bounds: sequence of (lo, hi) per axis; shape: nodes per axis.
    Nodes are in lexicographic order (first axis slowest), so serialization
    order is deterministic.
    """
    bounds = np.asarray(bounds, dtype=float)
    if np.isscalar(shape):
        shape = (int(shape),) * len(bounds)
    else:
        shape = tuple(int(m) for m in shape)
    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(bounds, shape)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    idx = np.stack(np.meshgrid(*[np.arange(m) for m in shape], indexing="ij"), axis=-1)
    idx = idx.reshape(-1, len(shape))
    on_face = (idx == 0) | (idx == np.array(shape) - 1)
    boundary = on_face.any(axis=1)
    spac = [(hi - lo) / (m - 1) for (lo, hi), m in zip(bounds, shape)]
    weights = _grid_weights(shape, spac)
    return DomainMesh(pts, boundary, weights, grid_shape=shape, grid_bounds=bounds)


def disk_mesh(radius: float, n: int) -> DomainMesh:
    """Grid nodes inside a disk; nodes within one spacing of the circle are boundary."""
    full = grid_mesh([(-radius, radius)] * 2, (n, n))
    s = full.spacing
    r = np.sqrt((full.points ** 2).sum(1))
    keep = r <= radius + 1e-12
    pts = full.points[keep]
    rr = r[keep]
    boundary = rr > radius - 1.5 * s
    weights = np.full(len(pts), s * s)
    return DomainMesh(pts, boundary, weights)


def fan_mesh(m: int, radius: float = 1.0, rings: int = 1) -> DomainMesh:
    """Triangle fan around the origin: `rings` rings of m nodes each.

    Used by the cone fixtures; the only interior nodes are the origin and
    inner rings.  Weights distribute each triangle's area evenly to its nodes.
    """
    if m < 3:
        raise MeshError("fan needs at least 3 sectors")
    ang = 2 * np.pi * np.arange(m) / m
    pts = [np.zeros((1, 2))]
    for k in range(1, rings + 1):
        rk = radius * k / rings
        pts.append(np.column_stack([rk * np.cos(ang), rk * np.sin(ang)]))
    pts = np.vstack(pts)
    boundary = np.zeros(len(pts), dtype=bool)
    boundary[1 + m * (rings - 1):] = True
    area = 0.5 * m * np.sin(2 * np.pi / m) * radius ** 2
    # uniform-enough weights: exact node-area splitting is immaterial to the
    # gradient-cell computations the fan supports
    weights = np.full(len(pts), area / len(pts))
    return DomainMesh(pts, boundary, weights)


def slab_mesh(resolution: int, lateral_radius: float = 1.0) -> DomainMesh:
    """Grid on [-1,1]^3 with nodes outside the open cylinder {|x'| < R} marked boundary.

    This is the first-order discretization of the cylinder-slab domain: every
    outside-cylinder node carries Dirichlet data, so wide stencils always land
    on valued nodes.
    """
    mesh = grid_mesh([(-1, 1)] * 3, (resolution,) * 3)
    r2 = mesh.points[:, 0] ** 2 + mesh.points[:, 1] ** 2
    s = mesh.spacing
    outside = r2 >= (lateral_radius - 0.5 * s) ** 2
    boundary = mesh.boundary | outside
    return DomainMesh(mesh.points, boundary, mesh.weights,
                      grid_shape=mesh.grid_shape, grid_bounds=mesh.grid_bounds)


def affine_image(mesh: DomainMesh, a_inv: np.ndarray) -> DomainMesh:
    """Mesh with nodes x -> A^{-1} x (a_inv applied), weights scaled by |det a_inv|.

    Grid structure is dropped; boundary flags carry over.  Supports the affine
    invariance checks, where node sets must transform exactly.
    """
    a_inv = np.asarray(a_inv, dtype=float)
    pts = mesh.points @ a_inv.T
    det = abs(np.linalg.det(a_inv))
    return DomainMesh(pts, mesh.boundary.copy(), mesh.weights * det)


# ---------------------------------------------------------------------------
# `ma-fn v1` text serialization


def write_mafn(mesh: DomainMesh, values, stream=None) -> str:
    """Serialize mesh+values in the `ma-fn v1` format (lexicographic node order)."""
    values = np.asarray(values, dtype=float)
    order = np.lexsort(mesh.points.T[::-1])
    buf = io.StringIO()
    buf.write(f"ma-fn v1 n={mesh.dim} nodes={mesh.n_nodes}\n")
    for i in order:
        coords = " ".join(repr(float(c)) for c in mesh.points[i])
        buf.write(f"{coords} {values[i]!r} {int(mesh.boundary[i])}\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_mafn(text: str):
    """Parse `ma-fn v1` text; returns (mesh, values) with unit fallback weights."""
    lines = text.strip().splitlines()
    head = lines[0].split()
    if head[:2] != ["ma-fn", "v1"]:
        raise MeshError("not an ma-fn v1 stream")
    n = int(head[2].split("=")[1])
    count = int(head[3].split("=")[1])
    rows = [ln.split() for ln in lines[1:count + 1]]
    pts = np.array([[float(c) for c in r[:n]] for r in rows])
    vals = np.array([float(r[n]) for r in rows])
    boundary = np.array([bool(int(r[n + 1])) for r in rows])
    # weights are not part of the wire format; reconstruct uniform weights
    lo = pts.min(0)
    hi = pts.max(0)
    vol = float(np.prod(hi - lo)) or 1.0
    weights = np.full(len(pts), vol / len(pts))
    return DomainMesh(pts, boundary, weights), vals
