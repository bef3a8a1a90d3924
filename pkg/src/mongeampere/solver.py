"""Dirichlet solvers for det D^2 u = mu with convex boundary data.

Two backends:

* `solve_exact_2d` matches prescribed subdifferential cell volumes at the
  nodes (discrete Alexandrov solution): starting from the convex envelope of
  the boundary data, interior node values are repeatedly lowered, largest
  deficit first, each lowering solving its own one-node volume equation
  exactly.  Values never increase, and the limit is an envelope fixed point.

* `solve_fd` is a monotone wide-stencil scheme for constant density: the
  determinant is the minimum over orthogonal direction frames of the product
  of clamped second differences, driven to the density by damped Newton
  updates in checkerboard Gauss-Seidel sweeps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .meshes import DomainMesh, grid_mesh, slab_mesh
from .envelope import lower_convex_envelope
from .constructions import epsilon_from_delta, make_boundary_g, make_w

__all__ = [
    "DirichletProblem",
    "SolveReport",
    "boundary_envelope_values",
    "solve_exact_2d",
    "solve_fd",
    "solve_slab_example",
]


@dataclass
class DirichletProblem:
    mesh: DomainMesh
    boundary_values: np.ndarray          # full-length array; read at boundary nodes
    density: float = 1.0                 # constant density, or None with masses
    masses: np.ndarray = None            # per-interior-node target masses
    density_bounds: tuple = (1.0, 1.0)   # (lambda, Lambda) metadata
    boundary_eval: callable = None       # g as a function of points (cascade use)
    mesh_factory: callable = None        # shape -> coarse mesh with same geometry

    def target_masses(self) -> np.ndarray:
        ii = self.mesh.interior_indices()
        if self.masses is not None:
            m = np.asarray(self.masses, dtype=float)
            if len(m) == self.mesh.n_nodes:
                m = m[ii]
            if np.any(m < 0) or not np.all(np.isfinite(m)):
                raise ValueError("target masses must be finite and nonnegative")
            return m
        return self.density * self.mesh.weights[ii]

    def check_boundary_convexity(self, tol: float = 1e-9) -> float:
        """Worst midpoint-convexity violation of g along flat boundary runs."""
        mesh = self.mesh
        if mesh.grid_shape is None:
            return 0.0
        g = np.asarray(self.boundary_values, dtype=float).reshape(mesh.grid_shape)
        b = mesh.boundary.reshape(mesh.grid_shape)
        worst = 0.0
        for ax in range(len(mesh.grid_shape)):
            lo = np.take(g, range(0, mesh.grid_shape[ax] - 2), axis=ax)
            mid = np.take(g, range(1, mesh.grid_shape[ax] - 1), axis=ax)
            hi = np.take(g, range(2, mesh.grid_shape[ax]), axis=ax)
            flat = np.take(b, range(0, mesh.grid_shape[ax] - 2), axis=ax) \
                & np.take(b, range(1, mesh.grid_shape[ax] - 1), axis=ax) \
                & np.take(b, range(2, mesh.grid_shape[ax]), axis=ax)
            gap = np.where(flat, mid - 0.5 * (lo + hi), -np.inf)
            worst = max(worst, float(gap.max(initial=-np.inf)))
        return worst


@dataclass
class SolveReport:
    backend: str
    iterations: int
    residual: float
    wall_time: float
    monotonicity_violations: int
    tolerance: float
    converged: bool
    notes: dict = field(default_factory=dict)

    def serialize(self) -> str:
        keys = ["backend", "iterations", "residual", "wall_time",
                "monotonicity_violations", "tolerance", "converged"]
        lines = [f"{k} = {getattr(self, k)!r}" for k in keys]
        for k in sorted(self.notes):
            lines.append(f"note.{k} = {self.notes[k]!r}")
        return "\n".join(lines) + "\n"


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def boundary_envelope_values(mesh: DomainMesh, boundary_values) -> np.ndarray:
    """Convex envelope of the boundary data, evaluated at every node.

    This is the zero-mass solution and the canonical supersolution start.
    """
    g = np.asarray(boundary_values, dtype=float)
    bidx = np.flatnonzero(mesh.boundary)
    pts = mesh.points[bidx]
    lift = np.column_stack([pts, g[bidx]])
    try:
        hull = ConvexHull(lift, qhull_options="Qt")
    except QhullError:
        # affine boundary data: the envelope is that affine function
        a = np.column_stack([pts, np.ones(len(pts))])
        coef, *_ = np.linalg.lstsq(a, g[bidx], rcond=None)
        resid = np.abs(a @ coef - g[bidx]).max()
        if resid > 1e-9 * max(1.0, np.abs(g[bidx]).max()):
            raise
        out = mesh.points @ coef[:-1] + coef[-1]
        out[bidx] = g[bidx]
        return out
    normals = hull.equations[:, :-1]
    offs = hull.equations[:, -1]
    nz = normals[:, -1]
    lower = nz < -1e-12
    grad = -normals[lower, :-1] / nz[lower, None]
    c = -offs[lower] / nz[lower]
    out = np.full(mesh.n_nodes, -np.inf)
    step = max(1, int(2e7 // max(len(grad), 1)))
    for k in range(0, mesh.n_nodes, step):
        vals = mesh.points[k:k + step] @ grad.T + c
        out[k:k + step] = vals.max(axis=1)
    out[bidx] = g[bidx]
    return out


# ---------------------------------------------------------------------------
# exact 2D backend: batched coordinate lowering on subdifferential volumes


class _PolygonOverflow(RuntimeError):
    """A clipped cell exceeded the padded vertex budget."""


class _CellWorkspace:
    """Batched Laguerre-cell volumes for interior grid nodes.

    All cells are clipped from a common gradient box by the halfplanes
    p . (x_j - x_i) <= u_j - u_i + delta, constraints drawn from a local
    offset window and ordered most-binding-first.  `max_poly` caps polygon
    complexity; window adequacy is re-verified globally by the caller.
    """

    def __init__(self, mesh: DomainMesh, radius: int = 4, max_poly: int = 48):
        if mesh.grid_shape is None or mesh.dim != 2:
            raise ValueError("exact 2D backend needs a 2D grid mesh")
        self.mesh = mesh
        self.shape = mesh.grid_shape
        self.s = mesh.spacing
        self.max_poly = max_poly
        self.set_radius(radius)

    def set_radius(self, radius: int):
        self.radius = radius
        offs = [(di, dj) for di in range(-radius, radius + 1)
                for dj in range(-radius, radius + 1) if (di, dj) != (0, 0)]
        self.offsets = np.array(offs)                       # (M0, 2)
        self.dirs = self.offsets * self.s                   # gradient-space normals
        self.dir_norms = np.linalg.norm(self.dirs, axis=1)
        self.axis_cols = [
            int(np.flatnonzero((self.offsets == off).all(1))[0])
            for off in [(1, 0), (-1, 0), (0, 1), (0, -1)]]

    def neighbor_values(self, u_grid, nodes_ij):
        """(K, M0) neighbor values; out-of-range neighbors read +inf."""
        ni, nj = self.shape
        ii = nodes_ij[:, 0][:, None] + self.offsets[:, 0][None, :]
        jj = nodes_ij[:, 1][:, None] + self.offsets[:, 1][None, :]
        ok = (ii >= 0) & (ii < ni) & (jj >= 0) & (jj < nj)
        vals = np.full(ii.shape, np.inf)
        vals[ok] = u_grid[ii[ok], jj[ok]]
        return vals

    def gradient_bound(self, u_grid) -> float:
        """Global bound on subgradient norms from one-sided axis differences."""
        lim = 0.0
        for ax in (0, 1):
            d = np.abs(np.diff(u_grid, axis=ax)) / self.s
            lim = max(lim, float(d.max(initial=0.0)))
        return 2.0 * max(lim, 1e-9)

    def volumes(self, u_grid, nodes_ij, delta=None, grad_box=None):
        """Cell areas for the given nodes, exact within the offset window.

        The four unit-axis constraints bound each cell in a rectangle; the
        remaining constraints are support-pruned against it and clipped most
        binding first.  Polygon storage grows if a cell has more vertices
        than expected.
        """
        k = len(nodes_ij)
        own = u_grid[nodes_ij[:, 0], nodes_ij[:, 1]]
        if delta is not None:
            own = own - delta
        nb = self.neighbor_values(u_grid, nodes_ij)
        c = nb - own[:, None]                               # (K, M0); +inf off-grid
        s = self.s
        xp, xm, yp, ym = (c[:, col] / s for col in self.axis_cols)
        lo = np.column_stack([-xm, -ym])
        hi = np.column_stack([xp, yp])
        empty = (hi <= lo + 1e-300).any(axis=1)
        lo = np.where(empty[:, None], 0.0, lo)
        hi = np.where(empty[:, None], 0.0, hi)
        corners = np.stack([
            lo,
            np.column_stack([hi[:, 0], lo[:, 1]]),
            hi,
            np.column_stack([lo[:, 0], hi[:, 1]]),
        ], axis=1)                                          # (K, 4, 2)
        support = np.einsum("kvc,mc->kvm", corners, self.dirs).max(axis=1)
        need = (support > c + 1e-14) & np.isfinite(c) & ~empty[:, None]
        slopes = np.where(need, c / self.dir_norms[None, :], np.inf)
        order = np.argsort(slopes, axis=1)
        counts = need.sum(axis=1)
        n_steps = int(counts.max(initial=0))
        # process rows in descending constraint count so the active batch
        # shrinks as cheap cells finish
        row_perm = np.argsort(-counts, kind="stable")
        inv_perm = np.argsort(row_perm)
        order = order[row_perm]
        counts_s = counts[row_perm]
        c_s = c[row_perm]
        corners_s = corners[row_perm]
        vmax = self.max_poly
        while True:
            polys = np.empty((k, vmax, 2))
            polys[:, :4] = corners_s
            polys[:, 4:] = corners_s[:, 3:4]
            try:
                for step in range(n_steps):
                    kk = int(np.searchsorted(-counts_s, -step - 0.5))
                    if kk == 0:
                        break
                    rr = np.arange(kk)
                    cid = order[:kk, step]
                    polys[:kk] = _batched_clip(
                        polys[:kk], self.dirs[cid], c_s[rr, cid])
                break
            except _PolygonOverflow:
                vmax *= 2
                if vmax > 512:
                    raise
        polys = polys[inv_perm]
        x = polys[..., 0]
        y = polys[..., 1]
        return 0.5 * np.abs((x * np.roll(y, -1, axis=1)
                             - y * np.roll(x, -1, axis=1)).sum(axis=1))


def _batched_clip(polys, d, off):
    """Clip K padded convex polygons by their own halfplane p.d <= off.

    Padding repeats the last vertex; duplicate vertices are harmless for
    areas and later clips.
    """
    k, v, _ = polys.shape
    dist = np.einsum("kvc,kc->kv", polys, d) - off[:, None]
    inside = dist <= 1e-14
    if inside.all():
        return polys
    nxt_dist = np.roll(dist, -1, axis=1)
    nxt_poly = np.roll(polys, -1, axis=1)
    crossing = (dist < 0) != (nxt_dist < 0)
    denom = dist - nxt_dist
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    t = np.where(crossing, dist / denom, 0.0)
    inter = polys + t[..., None] * (nxt_poly - polys)
    cand = np.empty((k, 2 * v, 2))
    cand[:, 0::2] = polys
    cand[:, 1::2] = inter
    # drop consecutive duplicates (the padding repeats the last real vertex)
    prev = np.roll(polys, 1, axis=1)
    dup = (polys == prev).all(-1) & np.roll(inside, 1, axis=1)
    emit = np.empty((k, 2 * v), dtype=bool)
    emit[:, 0::2] = inside & ~dup
    emit[:, 1::2] = crossing
    counts = emit.sum(axis=1)
    if counts.max(initial=0) > v:
        raise _PolygonOverflow
    perm = np.argsort(~emit, axis=1, kind="stable")
    rows = np.arange(k)[:, None]
    cand = cand[rows, perm]
    out = cand[:, :v].copy()
    # repeat the last valid vertex into the padding slots
    idx = np.clip(counts - 1, 0, v - 1)
    pad = np.arange(v)[None, :] >= counts[:, None]
    out[pad] = np.repeat(out[rows[:, 0], idx], pad.sum(axis=1), axis=0)
    out[counts < 3] = 0.0
    return out


def exact_cell_volumes(f, nodes) -> np.ndarray:
    """Envelope-based exact interior cell volumes (verification path)."""
    from .envelope import subdifferential_cell
    return np.array([subdifferential_cell(f, int(i)).volume for i in nodes])


def solve_exact_2d(problem: DirichletProblem, tol: float = 1e-3,
                   max_sweeps: int = 4000, sweeps: int = None,
                   radius: int = 4):
    """Discrete Alexandrov solution by monotone coordinate lowering (n = 2).

    Each sweep lowers every deficient interior node to the value whose cell
    volume meets its target given the current neighbours (deficits processed
    in descending order; the updates commute, values only decrease).  Window
    cells are re-verified against the global envelope every `verify_every`
    sweeps and at convergence, widening the window on mismatch.  The floor
    for relative deficits is tol * 1e-3 * mean(mu), so zero-mass targets are
    legitimate.
    """
    t0 = time.time()
    mesh = problem.mesh
    mu = problem.target_masses()
    ii = mesh.interior_indices()
    # NOTE: any finite mass vector is attainable for Dirichlet data (cells grow
    # without bound as a node is lowered), so no feasibility warning is needed
    ws = _CellWorkspace(mesh, radius=radius)
    shape = mesh.grid_shape
    nodes_ij = np.column_stack(np.unravel_index(ii, shape))
    u = boundary_envelope_values(mesh, problem.boundary_values)
    u_grid = u.reshape(shape).copy()
    floor = tol * 1e-3 * max(mu.mean(), 1e-300)
    tol_abs = tol * np.maximum(mu, floor)
    scale = max(1.0, float(np.abs(u).max()))
    violations = 0
    sweep = 0
    target_sweeps = sweeps if sweeps is not None else max_sweeps
    converged = False
    probes = np.full(len(ii), 0.5 * ws.s) \
        + np.sqrt(np.maximum(mu, 0.0) / np.pi) * ws.s * ws.radius
    while sweep < target_sweeps:
        sweep += 1
        vols = ws.volumes(u_grid, nodes_ij)
        deficits = mu - vols
        work = np.flatnonzero(deficits > tol_abs)
        if len(work) == 0:
            if sweeps is not None:
                continue
            exact = exact_cell_volumes(
                lower_convex_envelope(mesh, u_grid.ravel()), ii)
            if np.all(np.abs(exact - mu) <= np.maximum(tol_abs, 1e-12)):
                converged = True
                break
            if ws.radius < 8:
                ws.set_radius(ws.radius + 2)
                continue
            converged = bool(np.all(mu - exact <= np.maximum(tol_abs, 1e-12)))
            break
        order = np.argsort(-deficits[work], kind="stable")
        work = work[order]
        sub = nodes_ij[work]
        delta, new_probe = _lowering_step(
            ws, u_grid, sub, mu[work], deficits[work], probes[work])
        probes[work] = new_probe
        before = u_grid[sub[:, 0], sub[:, 1]]
        newvals = before - delta
        if np.any(newvals > before + 1e-12 * scale):
            violations += int((newvals > before + 1e-12 * scale).sum())
        u_grid[sub[:, 0], sub[:, 1]] = np.minimum(before, newvals)
    u_final = u_grid.ravel()
    f = lower_convex_envelope(mesh, u_final)
    exact = exact_cell_volumes(f, ii)
    resid = float(np.max(np.abs(exact - mu) / np.maximum(mu, floor))) if len(mu) else 0.0
    report = SolveReport(
        backend="exact-2d", iterations=sweep, residual=resid,
        wall_time=time.time() - t0, monotonicity_violations=violations,
        tolerance=tol, converged=converged or sweeps is not None,
        notes={"mass_total_target": float(mu.sum()),
               "mass_total_solved": float(exact.sum()),
               "cell_window_radius": ws.radius})
    if sweeps is None and not converged:
        raise SolverError(
            f"exact 2D solve did not converge in {sweep} sweeps "
            f"(residual {resid:.3e})", report)
    return f, report


def _lowering_step(ws, u_grid, nodes_ij, target, deficits, probe):
    """One certified under-root lowering step of V(u - delta) = target per node.

    sqrt(V) is concave increasing in delta, so any evaluated delta with
    sqrt(V) < sqrt(target) is below the root, and the capped secant
    extrapolation through two such points stays below it too.  Nodes are
    therefore never lowered past their exact coordinate roots and the iterate
    remains a supersolution.  Returns (delta, next_probe).
    """
    rt = np.sqrt(target)
    v0 = np.maximum(target - deficits, 0.0)
    f0 = np.sqrt(v0) - rt
    vp = ws.volumes(u_grid, nodes_ij, delta=probe)
    fp = np.sqrt(vp) - rt
    under = fp < 0
    # sqrt(V) is zero on an empty-cell prefix, then concave; chord
    # extrapolation is certified only when both samples are in the concave
    # (positive-volume) regime, otherwise the evaluated probe itself is
    # the only certified under-root step
    slope = (fp - f0) / np.maximum(probe, 1e-300)
    both_pos = (v0 > 0) & (vp > 0) & (slope > 1e-300)
    extrap = np.where(both_pos, -f0 / np.maximum(slope, 1e-300), probe)
    delta = np.where(under, np.clip(extrap, probe, 6.0 * probe), 0.0)
    # probe past the root: retry a shortened step, apply only if still under
    over_idx = np.flatnonzero(~under)
    if len(over_idx):
        denom = fp[over_idx] - f0[over_idx]
        chord = probe[over_idx] * (-f0[over_idx]) / np.maximum(denom, 1e-300)
        trial = 0.6 * np.minimum(chord, probe[over_idx])
        vt = ws.volumes(u_grid, nodes_ij[over_idx], delta=trial)
        delta[over_idx] = np.where(np.sqrt(vt) < rt[over_idx], trial, 0.0)
    next_probe = np.where(under, 2.0 * probe,
                          np.maximum(0.5 * probe, 1e-4 * ws.s))
    return np.maximum(delta, 0.0), next_probe


# ---------------------------------------------------------------------------
# wide-stencil finite-difference backend


def _frames(dim: int):
    if dim == 2:
        return [
            [(1, 0), (0, 1)],
            [(1, 1), (1, -1)],
            [(2, 1), (1, -2)],
            [(1, 2), (-2, 1)],
        ]
    frames = [[(1, 0, 0), (0, 1, 0), (0, 0, 1)]]
    # one axis + the two diagonals of the complementary plane
    for ax in range(3):
        e = [0, 0, 0]
        e[ax] = 1
        others = [i for i in range(3) if i != ax]
        d1 = [0, 0, 0]
        d2 = [0, 0, 0]
        d1[others[0]], d1[others[1]] = 1, 1
        d2[others[0]], d2[others[1]] = 1, -1
        frames.append([tuple(e), tuple(d1), tuple(d2)])
    # (2,1)-type rotations in each coordinate plane, third axis straight
    for ax in range(3):
        others = [i for i in range(3) if i != ax]
        e = [0, 0, 0]
        e[ax] = 1
        for (p, q) in [(2, 1), (1, 2)]:
            d1 = [0, 0, 0]
            d2 = [0, 0, 0]
            d1[others[0]], d1[others[1]] = p, q
            d2[others[0]], d2[others[1]] = -q, p
            frames.append([tuple(e), tuple(d1), tuple(d2)])
    return frames


class _Stencil:
    def __init__(self, shape, spacing, dim):
        self.shape = shape
        self.s = spacing
        self.frames = _frames(dim)
        dirs = {}
        for fr in self.frames:
            for v in fr:
                dirs.setdefault(v, None)
        self.dirs = list(dirs)
        self.dir_index = {v: k for k, v in enumerate(self.dirs)}
        self.frame_dirs = np.array(
            [[self.dir_index[v] for v in fr] for fr in self.frames])
        self.coef = np.array(
            [(spacing ** 2) * sum(c * c for c in v) for v in self.dirs])
        # per-node availability of each direction (both arms in-array)
        grids = np.meshgrid(*[np.arange(m) for m in shape], indexing="ij")
        idx = np.stack(grids, axis=-1)
        avail = []
        for v in self.dirs:
            ok = np.ones(shape, dtype=bool)
            for ax, c in enumerate(v):
                if c > 0:
                    ok &= (idx[..., ax] + c <= shape[ax] - 1) & (idx[..., ax] - c >= 0)
                elif c < 0:
                    ok &= (idx[..., ax] + c >= 0) & (idx[..., ax] - c <= shape[ax] - 1)
            avail.append(ok)
        self.dir_avail = np.stack(avail)                     # (D, *shape)
        fav = np.ones((len(self.frames),) + shape, dtype=bool)
        for k, fr in enumerate(self.frames):
            for v in fr:
                fav[k] &= self.dir_avail[self.dir_index[v]]
        self.frame_avail = fav

    def neighbor_sums(self, u):
        """S_v = u(x + h v) + u(x - h v) per direction, NaN where unavailable."""
        out = np.full((len(self.dirs),) + self.shape, np.nan)
        for k, v in enumerate(self.dirs):
            plus = u
            minus = u
            sl_dst = [slice(None)] * len(self.shape)
            src_p = [slice(None)] * len(self.shape)
            src_m = [slice(None)] * len(self.shape)
            for ax, c in enumerate(v):
                if c > 0:
                    sl_dst[ax] = slice(c, self.shape[ax] - c)
                    src_p[ax] = slice(2 * c, self.shape[ax])
                    src_m[ax] = slice(0, self.shape[ax] - 2 * c)
                elif c < 0:
                    a = -c
                    sl_dst[ax] = slice(a, self.shape[ax] - a)
                    src_p[ax] = slice(0, self.shape[ax] - 2 * a)
                    src_m[ax] = slice(2 * a, self.shape[ax])
            out[(k,) + tuple(sl_dst)] = u[tuple(src_p)] + u[tuple(src_m)]
        return out


FD_FLOOR = 1e-12


def _scheme_residual(st: _Stencil, u, density, interior_mask):
    sums = st.neighbor_sums(u)
    diffs = (sums - 2 * u[None]) / st.coef.reshape((-1,) + (1,) * u.ndim)
    diffs = np.maximum(diffs, FD_FLOOR)
    best = np.full(u.shape, np.inf)
    for k, fr in enumerate(st.frame_dirs):
        prod = diffs[fr[0]].copy()
        for d in fr[1:]:
            prod = prod * diffs[d]
        prod = np.where(st.frame_avail[k], prod, np.inf)
        best = np.minimum(best, prod)
    m = len(st.frame_dirs[0])
    res = np.where(interior_mask, best - density, 0.0)
    return res, best


def solve_fd(problem: DirichletProblem, tol: float = 1e-8,
             max_sweeps: int = 20000, sweeps: int = None,
             init: np.ndarray = None, newton_damping: float = 0.7,
             inner_newton: int = 12, levels: int = 1):
    """Monotone wide-stencil solve of det D^2 u = density (n = 2 or 3).

    Checkerboard Gauss-Seidel; each visit solves the per-node product
    equation (active frame) by damped Newton in log form.  The iterate never
    exceeds the convex envelope of the boundary data; overshoot counts are
    reported as monotonicity violations (must stay 0).

    `levels > 1` runs a coarse-to-fine cascade; each level's start is clipped
    under the boundary-data envelope so the monotone bound still holds.
    """
    t0 = time.time()
    mesh = problem.mesh
    if mesh.grid_shape is None:
        raise ValueError("FD backend needs a grid mesh")
    if problem.masses is not None:
        raise ValueError("FD backend handles constant density only")
    shape = mesh.grid_shape
    dim = mesh.dim
    density = float(problem.density)
    g = np.asarray(problem.boundary_values, dtype=float)
    env = boundary_envelope_values(mesh, g)
    env_grid = env.reshape(shape)
    boundary = mesh.boundary.reshape(shape)
    interior = ~boundary

    if init is None and levels > 1 and min(shape) >= 17:
        init = _cascade_init(problem, tol, levels)
    if init is None:
        u = env_grid.copy()
    else:
        u = np.minimum(np.asarray(init, dtype=float).reshape(shape), env_grid)
        u[boundary] = env_grid[boundary]

    st = _Stencil(shape, mesh.spacing, dim)
    colors = _checkerboard(shape)
    n_colors = 2 ** dim
    residual = np.inf
    sweep = 0
    target = sweeps if sweeps is not None else max_sweeps
    history = []
    while sweep < target:
        sweep += 1
        for color in range(n_colors):
            mask = interior & (colors == color)
            sums = st.neighbor_sums(u)
            flat = mask.ravel()
            idx = np.flatnonzero(flat)
            if len(idx) == 0:
                continue
            s_cols = sums.reshape(len(st.dirs), -1)[:, idx]
            avail_cols = st.frame_avail.reshape(len(st.frames), -1)[:, idx]
            t = u.ravel()[idx]
            t = _newton_product_roots(
                st, s_cols, avail_cols, t, density,
                damping=newton_damping, iters=inner_newton)
            uf = u.ravel()
            uf[idx] = t
            u = uf.reshape(shape)
        if sweep % 5 == 0 or sweeps is not None:
            res, _ = _scheme_residual(st, u, density, interior)
            residual = float(np.abs(res[interior]).max())
            history.append(residual)
            if sweeps is None and residual <= tol:
                break
    res, _ = _scheme_residual(st, u, density, interior)
    residual = float(np.abs(res[interior]).max())
    overshoot = int((u > env_grid + 1e-12 * max(1.0, np.abs(env_grid).max())).sum())
    report = SolveReport(
        backend="fd-wide-stencil", iterations=sweep, residual=residual,
        wall_time=time.time() - t0, monotonicity_violations=overshoot,
        tolerance=tol, converged=residual <= tol or sweeps is not None,
        notes={"frames": len(st.frames), "directions": len(st.dirs),
               "shape": shape, "residual_history_tail": history[-3:]})
    if sweeps is None and residual > tol:
        raise SolverError(
            f"FD solve stalled at residual {residual:.3e} after {sweep} sweeps",
            report)
    return u.ravel(), report


def _checkerboard(shape):
    """Parity-class coloring: every stencil direction (at least one odd
    component) connects distinct classes, so class-wise simultaneous updates
    are a true Gauss-Seidel ordering."""
    grids = np.meshgrid(*[np.arange(m) for m in shape], indexing="ij")
    color = np.zeros(shape, dtype=np.int64)
    for k, gax in enumerate(grids):
        color += (gax % 2) << k
    return color


def _newton_product_roots(st, s_cols, avail_cols, t, density, damping, iters):
    """Solve prod_k max((S_k - 2t)/c_k, floor) = density per node (vectorized).

    The active frame is fixed per visit (argmin of the current products); the
    root is found by Newton on the log product, which is monotone in t.
    """
    nfr = len(st.frames)
    m = st.frame_dirs.shape[1]
    coef = st.coef
    prods = np.full((nfr, s_cols.shape[1]), np.inf)
    for k, fr in enumerate(st.frame_dirs):
        d = (s_cols[fr] - 2 * t[None]) / coef[fr][:, None]
        p = np.maximum(d, FD_FLOOR).prod(axis=0)
        prods[k] = np.where(avail_cols[k], p, np.inf)
    active = np.argmin(prods, axis=0)
    fr_dirs = st.frame_dirs[active]                       # (K, m)
    cols = np.arange(s_cols.shape[1])
    s_act = s_cols[fr_dirs.T, cols[None, :]]              # (m, K)
    c_act = coef[fr_dirs.T]                               # (m, K)
    # keep t strictly inside the positive-diff region
    t_cap = 0.5 * s_act.min(axis=0)
    logrho = np.log(density)
    t = np.minimum(t, t_cap - 1e-9 * np.maximum(1.0, np.abs(t_cap)))
    for it in range(iters):
        d = (s_act - 2 * t[None]) / c_act
        d = np.maximum(d, FD_FLOOR)
        h = np.log(d).sum(axis=0) - logrho
        hp = (-2.0 / (c_act * d)).sum(axis=0)
        step = -h / hp
        if it == 0:
            step = damping * step
        t_new = t + step
        t_new = np.minimum(t_new, t_cap - 1e-12 * np.maximum(1.0, np.abs(t_cap)))
        if np.abs(h).max(initial=0.0) < 1e-14:
            t = t_new
            break
        t = t_new
    return t


def _cascade_init(problem: DirichletProblem, tol, levels):
    """Solve on a 2x-coarser grid (recursively) and linearly interpolate up."""
    mesh = problem.mesh
    shape = mesh.grid_shape
    coarse_shape = tuple((m - 1) // 2 + 1 for m in shape)
    if any((m - 1) % 2 for m in shape) or min(coarse_shape) < 9:
        return None
    if problem.mesh_factory is not None:
        cmesh = problem.mesh_factory(coarse_shape)
    else:
        cmesh = grid_mesh(mesh.grid_bounds, coarse_shape)
    if problem.boundary_eval is not None:
        gc = problem.boundary_eval(cmesh.points)
    else:
        sl = tuple(slice(None, None, 2) for _ in shape)
        gc = np.asarray(problem.boundary_values, dtype=float).reshape(shape)[sl].ravel()
    cprob = DirichletProblem(cmesh, gc, density=problem.density,
                             density_bounds=problem.density_bounds,
                             boundary_eval=problem.boundary_eval,
                             mesh_factory=problem.mesh_factory)
    uc, _ = solve_fd(cprob, tol=max(tol, 1e-7),
                     max_sweeps=20000, levels=levels - 1)
    from scipy.interpolate import RegularGridInterpolator
    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(cmesh.grid_bounds, coarse_shape)]
    interp = RegularGridInterpolator(axes, uc.reshape(coarse_shape), method="linear")
    return interp(mesh.points)


# ---------------------------------------------------------------------------
# the slab example


def solve_slab_example(delta: float, depth: int = 8, resolution: int = 65,
                       tol: float = 1e-8, seed: int = 0, margin: float = 1.25,
                       levels: int = 3):
    """Construct and solve the slab problem whose singular set is S x {0} x (-1,1).

    Orchestrates the removed-interval set, the kink-sum boundary profile, the
    certified barrier and the FD solve; returns (values, mesh, metadata).
    """
    if not (0 < delta <= 0.4):
        raise ValueError("delta must lie in (0, 0.4]")
    if resolution > 129:
        raise ValueError("resolution capped at 129 per axis")
    eps = epsilon_from_delta(delta)
    w_fn = make_w(delta)
    gfield = make_boundary_g(eps, depth, margin=margin, delta=delta,
                             w_fn=w_fn, seed=seed)
    mesh = slab_mesh(resolution)
    g = gfield(mesh.points)
    problem = DirichletProblem(mesh, g, density=1.0, boundary_eval=gfield,
                               mesh_factory=lambda shp: slab_mesh(shp[0]))
    values, report = solve_fd(problem, tol=tol, levels=levels)
    meta = dict(gfield.metadata)
    meta.update(w_fn.metadata)
    meta.update({
        "resolution": resolution,
        "dim_target": 2.0 - 1.5 * delta,
        "solver": report.serialize(),
    })
    return values, mesh, meta, gfield, w_fn
