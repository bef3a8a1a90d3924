"""Lower convex envelopes, subdifferential cells and Monge-Ampere measures.

The single primitive is the lower hull of the lifted nodes (x, f(x)) in
R^{n+1}.  Facets with downward normals give the envelope's affine pieces;
their gradients, grouped per incident node, are the vertices of that node's
subdifferential cell.  Cell volumes are the node masses of the discrete
Monge-Ampere measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .meshes import DomainMesh

__all__ = [
    "DiscreteConvexFunction",
    "SubdifferentialCell",
    "MongeAmpereMeasure",
    "lower_convex_envelope",
    "subdifferential_cell",
    "ma_measure",
    "flux_laplacian_mass",
    "legendre_transform",
    "gradient_dual_points",
]

#: relative tolerance for plane/vertex classification (design choice: inputs
#: are analytic samples, determinism beats exactness)
PLANE_TOL = 1e-12


class DegenerateMeshError(ValueError):
    """Fewer than n+1 affinely independent nodes."""


class UnboundedCellError(ValueError):
    """Boundary-node cell requested without a gradient clamp box."""


# ---------------------------------------------------------------------------
# envelope


@dataclass
class DiscreteConvexFunction:
    """Largest convex minorant of node values, with its lower-hull structure."""

    mesh: DomainMesh
    values: np.ndarray                 # envelope values at nodes
    facet_gradients: np.ndarray        # (F, n)
    facet_offsets: np.ndarray          # (F,)  facet plane: g . x + c
    facet_nodes: np.ndarray            # (F, n+1) node indices spanning each facet
    is_vertex: np.ndarray              # (N,) True when the node supports the hull
    input_values: np.ndarray = None    # raw values before enveloping
    _incident_ptr: np.ndarray = field(default=None, repr=False)
    _incident_facets: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def plane_values(self, x) -> np.ndarray:
        """All facet-plane values at a point; the max is the envelope there."""
        x = np.asarray(x, dtype=float)
        return self.facet_gradients @ x + self.facet_offsets

    def evaluate(self, x) -> float:
        return float(self.plane_values(x).max())

    def incident_facets(self, node: int) -> np.ndarray:
        """Indices of lower-hull facets containing the node."""
        if self._incident_ptr is None:
            flat = self.facet_nodes.ravel()
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.mesh.n_nodes)
            ptr = np.concatenate([[0], np.cumsum(counts)])
            self._incident_ptr = ptr
            self._incident_facets = order // self.facet_nodes.shape[1]
        a, b = self._incident_ptr[node], self._incident_ptr[node + 1]
        return self._incident_facets[a:b]

    def node_gradients(self, node: int) -> np.ndarray:
        """Deduplicated gradients of the facets incident to a node."""
        g = self.facet_gradients[self.incident_facets(node)]
        if len(g) == 0:
            return g
        scale = max(1.0, float(np.abs(g).max()))
        return np.unique(np.round(g / (scale * 1e-12)) * (scale * 1e-12), axis=0)

    def neighbor_nodes(self, node: int) -> np.ndarray:
        """Nodes sharing a lower-hull facet with `node`."""
        f = self.facet_nodes[self.incident_facets(node)]
        nb = np.unique(f)
        return nb[nb != node]


def lower_convex_envelope(mesh: DomainMesh, values) -> DiscreteConvexFunction:
    """Largest convex function below the node values, sampled at the nodes.

    Lifts nodes to (x, f(x)) and keeps the lower hull.  Idempotent: enveloping
    an envelope reproduces it bit-exactly, because hull facets of points that
    already lie on their hull are reproduced.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    pts = mesh.points
    lift = np.column_stack([pts, values])
    try:
        hull = ConvexHull(lift, qhull_options="Qt")
    except QhullError as exc:
        raise DegenerateMeshError(
            f"could not build lower hull (degenerate node set?): {exc}") from exc
    normals = hull.equations[:, :-1]
    offsets = hull.equations[:, -1]
    nz = normals[:, -1]
    lower = nz < -PLANE_TOL
    if not np.any(lower):
        raise DegenerateMeshError("no downward facets: nodes affinely degenerate")
    g = -normals[lower, :-1] / nz[lower, None]
    c = -offsets[lower] / nz[lower]
    facet_nodes = hull.simplices[lower]
    is_vertex = np.zeros(len(pts), dtype=bool)
    is_vertex[np.unique(facet_nodes)] = True

    env = values.copy()
    above = ~is_vertex
    if np.any(above):
        # nodes strictly above the hull: evaluate the PL envelope there
        sub = pts[above]
        best = np.full(len(sub), -np.inf)
        step = max(1, int(2e7 // max(len(sub), 1)))
        for k in range(0, len(g), step):
            cand = sub @ g[k:k + step].T + c[k:k + step]
            best = np.maximum(best, cand.max(axis=1))
        env[above] = np.minimum(best, values[above])

    return DiscreteConvexFunction(
        mesh=mesh, values=env, facet_gradients=g, facet_offsets=c,
        facet_nodes=facet_nodes, is_vertex=is_vertex, input_values=values)


# ---------------------------------------------------------------------------
# subdifferential cells


@dataclass
class SubdifferentialCell:
    node: int
    extreme_points: np.ndarray   # (V, n) gradients
    volume: float
    method: str = "exact-cell"   # exact-cell | monte-carlo
    clamped: bool = False

    @property
    def centroid(self) -> np.ndarray:
        return self.extreme_points.mean(axis=0)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _poly_area_2d(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Extreme points in ccw order and area of conv(points) in the plane."""
    if len(points) < 3:
        return points, 0.0
    try:
        hull = ConvexHull(points)
        return points[hull.vertices], float(hull.volume)
    except QhullError:
        # collinear or duplicated input: report the extreme segment
        c = points.mean(0)
        d = points - c
        k = int(np.argmax((d * d).sum(1)))
        t = points @ d[k]
        return points[[int(np.argmin(t)), int(np.argmax(t))]], 0.0


def _hull_volume(points: np.ndarray, dim: int) -> tuple[np.ndarray, float]:
    """Extreme points and volume of conv(points); degenerate sets get volume 0."""
    points = np.atleast_2d(points)
    if len(points) <= dim:
        return points, 0.0
    if dim == 2:
        return _poly_area_2d(points)
    try:
        hull = ConvexHull(points)
        return points[hull.vertices], float(hull.volume)
    except QhullError:
        # flat cell: collapse to its planar/segment extreme points
        c = points.mean(0)
        u, s, vt = np.linalg.svd(points - c, full_matrices=False)
        rank = int((s > 1e-12 * max(s[0], 1e-300)).sum())
        if rank == 0:
            return points[:1], 0.0
        proj = (points - c) @ vt[:rank].T
        if rank == 1:
            order = np.argsort(proj[:, 0])
            return points[[order[0], order[-1]]], 0.0
        verts, _ = _poly_area_2d(proj)
        keep = [int(np.argmin(((proj - v) ** 2).sum(1))) for v in verts]
        return points[keep], 0.0


def _clamp_box(f: DiscreteConvexFunction, clamp):
    """Resolve a clamp spec into an (n, 2) gradient box."""
    g = f.facet_gradients
    lo, hi = g.min(0), g.max(0)
    if isinstance(clamp, str):
        if clamp == "range2x":
            c, half = (lo + hi) / 2, (hi - lo) / 2
            half = np.maximum(half, 1e-9)
            return np.column_stack([c - 2 * half, c + 2 * half])
        if clamp == "snug":
            # inflate the observed gradient hull by half a local gradient-cell
            # width; boundary cells clipped to this box tile exactly the
            # collar the interior cells miss, so closed-domain totals estimate
            # |grad f(domain)| to second order
            pad = _mean_cell_width(f) / 2
            return np.column_stack([lo - pad, hi + pad])
        raise ValueError(f"unknown clamp spec {clamp!r}")
    box = np.asarray(clamp, dtype=float)
    if box.shape != (f.dim, 2):
        raise ValueError("clamp box must be (n, 2)")
    return box


def _mean_cell_width(f: DiscreteConvexFunction) -> np.ndarray:
    ii = f.mesh.interior_indices()
    sample = ii[:: max(1, len(ii) // 64)]
    widths = []
    for i in sample:
        if not f.is_vertex[i]:
            continue
        g = f.node_gradients(i)
        if len(g) > 1:
            widths.append(g.max(0) - g.min(0))
    if not widths:
        return np.full(f.dim, 0.0)
    return np.median(np.array(widths), axis=0)


def _clip_polygon(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by {p : p.normal <= offset}."""
    if len(poly) == 0:
        return poly
    d = poly @ normal - offset
    if np.all(d <= 1e-14):
        return poly
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        di, dj = d[i], d[j]
        if di <= 0:
            out.append(poly[i])
        if (di < 0 < dj) or (dj < 0 < di):
            t = di / (di - dj)
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.empty((0, 2))


def _halfspace_cell(f, node, box):
    """Exact clamped cell {p : p.(y-x) <= f(y)-f(x)} ∩ box for any node."""
    x = f.mesh.points[node]
    fx = f.values[node]
    d = f.mesh.points - x
    c = f.values - fx
    keep = np.any(d != 0, axis=1)
    d, c = d[keep], c[keep]
    if f.dim == 2:
        poly = np.array([[box[0, 0], box[1, 0]], [box[0, 1], box[1, 0]],
                         [box[0, 1], box[1, 1]], [box[0, 0], box[1, 1]]])
        while len(poly) >= 3:
            cut_depth = (poly @ d.T - c).max(axis=0)
            k = int(np.argmax(cut_depth))
            if cut_depth[k] <= 1e-14:
                break
            poly = _clip_polygon(poly, d[k], c[k])
        if len(poly) < 3:
            return (np.atleast_2d(poly) if len(poly) else f.node_gradients(node)[:1]), 0.0
        area = 0.5 * abs(_cross2(poly, np.roll(poly, -1, axis=0)).sum())
        return poly, float(area)
    # 3D: prune to potentially-active constraints against the box corners, then
    # intersect halfspaces around a Chebyshev-ish interior point
    from scipy.optimize import linprog
    from scipy.spatial import HalfspaceIntersection

    corners = np.stack(np.meshgrid(*box, indexing="ij"), -1).reshape(-1, 3)
    active = (corners @ d.T - c).max(axis=0) > -1e-12
    d, c = d[active], c[active]
    norms = np.linalg.norm(d, axis=1)
    a_ub = np.column_stack([d, norms])
    b_ub = c.copy()
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = 1.0
        a_ub = np.vstack([a_ub, np.append(e, 1.0), np.append(-e, 1.0)])
        b_ub = np.append(b_ub, [box[ax, 1], -box[ax, 0]])
    res = linprog(c=[0, 0, 0, -1], A_ub=a_ub, b_ub=b_ub,
                  bounds=[(None, None)] * 3 + [(0, None)], method="highs")
    if not res.success or res.x[3] <= 1e-13:
        return f.node_gradients(node)[:1], 0.0
    interior = res.x[:3]
    halfspaces = np.column_stack([a_ub[:, :3], -b_ub])
    hs = HalfspaceIntersection(halfspaces, interior)
    verts, vol = _hull_volume(hs.intersections, 3)
    return verts, vol


def subdifferential_cell(f: DiscreteConvexFunction, node: int,
                         clamp=None, mc_facet_limit: int = 60,
                         mc_samples: int = 100_000,
                         rng=None) -> SubdifferentialCell:
    """Subdifferential cell of the envelope at a node.

    Interior vertex nodes: convex hull of incident facet gradients (exact).
    Boundary nodes are unbounded and rejected unless a clamp box (or a clamp
    spec like `"range2x"`) is supplied.  Nodes with more than `mc_facet_limit`
    incident facets fall back to Monte-Carlo volume, keeping the worst case
    bounded; the method tag records this.
    """
    if f.mesh.boundary[node]:
        if clamp is None:
            raise UnboundedCellError(
                f"node {node} is a boundary node: unbounded cell (supply clamp box)")
        box = _clamp_box(f, clamp)
        verts, vol = _halfspace_cell(f, node, box)
        return SubdifferentialCell(node, np.atleast_2d(verts), vol, clamped=True)
    if not f.is_vertex[node]:
        g = f.node_gradients(node)
        if len(g) == 0:
            # node above the hull: any supporting plane below it works; use the
            # best plane at the node
            k = int(np.argmax(f.plane_values(f.mesh.points[node])))
            g = f.facet_gradients[k:k + 1]
        return SubdifferentialCell(node, g[:1], 0.0)
    grads = f.node_gradients(node)
    if f.dim == 3 and len(grads) > mc_facet_limit:
        nb = f.neighbor_nodes(node)
        d = f.mesh.points[nb] - f.mesh.points[node]
        c = f.values[nb] - f.values[node]
        lo, hi = grads.min(0), grads.max(0)
        rng = np.random.default_rng(0) if rng is None else rng
        sample = lo + (hi - lo) * rng.random((mc_samples, 3))
        inside = np.all(sample @ d.T <= c + 1e-14, axis=1)
        vol = float(np.prod(hi - lo) * inside.mean())
        verts, _ = _hull_volume(grads, 3)
        return SubdifferentialCell(node, verts, vol, method="monte-carlo")
    verts, vol = _hull_volume(grads, f.dim)
    return SubdifferentialCell(node, verts, vol)


# ---------------------------------------------------------------------------
# Monge-Ampere measure


@dataclass
class MongeAmpereMeasure:
    nodes: np.ndarray        # region node indices
    masses: np.ndarray       # per-node cell volumes
    total: float
    method: str = "exact-cell"

    def mass_of(self, node_set) -> float:
        mask = np.isin(self.nodes, np.asarray(node_set))
        return float(self.masses[mask].sum())


def ma_measure(f: DiscreteConvexFunction, region=None, clamp=None) -> MongeAmpereMeasure:
    """Per-node subdifferential masses over a region of nodes.

    Default region is all interior nodes.  Boundary nodes in the region need a
    clamp (box or spec); masses are additive over disjoint regions and vanish
    at non-vertex nodes.
    """
    if region is None:
        region = f.mesh.interior_indices()
    region = np.asarray(region, dtype=int)
    if clamp is None and np.any(f.mesh.boundary[region]):
        raise UnboundedCellError("region touches boundary nodes: supply a clamp")
    box = _clamp_box(f, clamp) if clamp is not None else None
    masses = np.zeros(len(region))
    method = "exact-cell"
    for k, i in enumerate(region):
        if f.mesh.boundary[i]:
            cell = subdifferential_cell(f, i, clamp=box)
        else:
            cell = subdifferential_cell(f, i)
        masses[k] = cell.volume
        if cell.method == "monte-carlo":
            method = "monte-carlo"
    return MongeAmpereMeasure(region, masses, float(masses.sum()), method=method)


def gradient_image_volume(f: DiscreteConvexFunction) -> float:
    """Volume of the convex hull of all facet gradients (independent total)."""
    _, vol = _hull_volume(f.facet_gradients, f.dim)
    return vol


# ---------------------------------------------------------------------------
# boundary flux of the gradient (distributional Laplacian mass)


def _sphere_directions(dim: int, m: int) -> np.ndarray:
    if dim == 2:
        t = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.column_stack([np.cos(t), np.sin(t)])
    # Fibonacci sphere
    k = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * k / m)
    theta = np.pi * (1 + 5 ** 0.5) * k
    return np.column_stack([np.cos(theta) * np.sin(phi),
                            np.sin(theta) * np.sin(phi), np.cos(phi)])


def _grid_interpolator(f: DiscreteConvexFunction):
    mesh = f.mesh
    if mesh.grid_shape is None:
        raise ValueError("flux over a mesh field needs a grid mesh")
    from scipy.interpolate import RegularGridInterpolator

    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(mesh.grid_bounds, mesh.grid_shape)]
    vals = f.values.reshape(mesh.grid_shape)
    return RegularGridInterpolator(axes, vals, method="linear", bounds_error=True)


def flux_laplacian_mass(f, center, radius, spacing=None, n_samples=None):
    """Outward flux of grad f through the sphere/circle of given radius.

    `f` is a DiscreteConvexFunction on a grid mesh, or a plain callable of
    points (analytic constructions).  Radial one-sided (forward) differences
    at quadrature samples approximate u_nu; the result is the distributional
    Laplacian mass of the ball for convex f.
    """
    center = np.asarray(center, dtype=float)
    if callable(f):
        evaluate = lambda pts: np.asarray(f(pts))
        dim = len(center)
        h = spacing if spacing is not None else radius / 64
        margin_ok = True
    else:
        interp = _grid_interpolator(f)
        evaluate = interp
        dim = f.dim
        h = spacing if spacing is not None else f.mesh.spacing
        lo = f.mesh.grid_bounds[:, 0]
        hi = f.mesh.grid_bounds[:, 1]
        margin_ok = np.all(center - radius - h >= lo - 1e-12) and \
            np.all(center + radius + h <= hi + 1e-12)
    if not margin_ok:
        raise ValueError("ball (plus one difference step) exits the mesh")
    if n_samples is None:
        n_samples = max(64, int(8 * 2 * np.pi * radius / h)) if dim == 2 else \
            max(256, int(8 * 4 * np.pi * radius ** 2 / h ** 2))
        n_samples = min(n_samples, 200_000)
    dirs = _sphere_directions(dim, n_samples)
    inner = evaluate(center + radius * dirs)
    outer = evaluate(center + (radius + h) * dirs)
    u_nu = (outer - inner) / h
    area = 2 * np.pi * radius if dim == 2 else 4 * np.pi * radius ** 2
    return float(u_nu.mean() * area)


def node_laplacian_masses(f: DiscreteConvexFunction) -> np.ndarray:
    """Per-node discrete Laplacian mass s^{n-2} * sum_axis second differences (grid)."""
    mesh = f.mesh
    if mesh.grid_shape is None:
        raise ValueError("grid mesh required")
    u = f.values.reshape(mesh.grid_shape)
    s = mesh.spacing
    out = np.zeros_like(u)
    core = tuple(slice(1, -1) for _ in mesh.grid_shape)
    for ax in range(len(mesh.grid_shape)):
        up = np.roll(u, -1, axis=ax)
        dn = np.roll(u, 1, axis=ax)
        out[core] += (up + dn - 2 * u)[core]
    return (out * s ** (mesh.dim - 2)).ravel()


# ---------------------------------------------------------------------------
# Legendre transform


@dataclass
class LegendreResult:
    mesh: DomainMesh
    function: DiscreteConvexFunction
    range_warning: bool


def legendre_transform(f: DiscreteConvexFunction, dual_mesh: DomainMesh) -> LegendreResult:
    """f*(p) = max_x (p.x - f(x)) sampled on a dual mesh.

    Sets `range_warning` when an interior dual node attains its max at a
    primal boundary node, i.e. the dual grid pokes beyond the gradient range.
    """
    vals, argmax = _conjugate(dual_mesh.points, f.mesh.points, f.values)
    warn = bool(np.any(f.mesh.boundary[argmax[~dual_mesh.boundary]]))
    dual_f = lower_convex_envelope(dual_mesh, vals)
    return LegendreResult(dual_mesh, dual_f, warn)


def _conjugate(dual_points, points, values):
    best = np.full(len(dual_points), -np.inf)
    arg = np.zeros(len(dual_points), dtype=int)
    step = max(1, int(2e7 // max(len(points), 1)))
    for k in range(0, len(dual_points), step):
        scores = dual_points[k:k + step] @ points.T - values
        arg[k:k + step] = np.argmax(scores, axis=1)
        best[k:k + step] = scores[np.arange(len(scores)), arg[k:k + step]]
    return best, arg


def biconjugate_values(f: DiscreteConvexFunction, dual_points=None) -> np.ndarray:
    """f** at the primal nodes, conjugating through a dual point set.

    With `dual_points=None` the facet gradients are used, which reproduces the
    envelope exactly at vertex nodes.
    """
    if dual_points is None:
        dual_points = f.facet_gradients
    star, _ = _conjugate(dual_points, f.mesh.points, f.values)
    back, _ = _conjugate(f.mesh.points, dual_points, star)
    return back


def gradient_dual_points(f: DiscreteConvexFunction, pad: float = 0.25, per_axis: int = 17):
    """Facet gradients plus a covering box grid, for conjugation tests."""
    g = f.facet_gradients
    lo, hi = g.min(0), g.max(0)
    span = np.maximum(hi - lo, 1e-9)
    axes = [np.linspace(l - pad * s, h + pad * s, per_axis)
            for l, h, s in zip(lo, hi, span)]
    grid = np.meshgrid(*axes, indexing="ij")
    box = np.column_stack([a.ravel() for a in grid])
    return np.vstack([g, box])
