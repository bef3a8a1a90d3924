"""Sections of convex functions, John ellipsoids, covers and box dimension."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .envelope import DiscreteConvexFunction

__all__ = [
    "Section",
    "EllipsoidSummary",
    "GrowthProfile",
    "extract_section",
    "john_ellipsoid",
    "growth_profile",
    "vitali_subcover",
    "box_counting_dimension",
]


class InvalidSlopeError(ValueError):
    """The supplied slope is not a subgradient at the base point."""


@dataclass
class Section:
    """Sublevel set {y : f(y) < f(x) + p.(y-x) + h} as a node set."""

    base: int
    slope: np.ndarray
    height: float
    members: np.ndarray            # node indices, sorted
    volume: float                  # sum of member cell weights
    compactly_contained: bool

    @property
    def n_members(self) -> int:
        return len(self.members)


def _boundary_adjacency(f: DiscreteConvexFunction) -> np.ndarray:
    """True at nodes adjacent to (within 1.5 spacings of) a boundary node."""
    mesh = f.mesh
    cache = getattr(f, "_near_boundary", None)
    if cache is not None:
        return cache
    tree = cKDTree(mesh.points[mesh.boundary])
    d, _ = tree.query(mesh.points, k=1)
    near = (d <= 1.55 * mesh.spacing) | mesh.boundary
    f._near_boundary = near
    return near


def extract_section(f: DiscreteConvexFunction, x: int, p, h: float,
                    slope_tol: float = 1e-9) -> Section:
    """Section of f at node x with slope p and height h.

    `p` must be a subgradient at x: the plane f(x) + p.(y-x) has to stay
    below f at every node within slope_tol times the value scale.
    """
    p = np.asarray(p, dtype=float)
    pts = f.mesh.points
    plane = f.values[x] + (pts - pts[x]) @ p
    gap = f.values - plane
    scale = max(1.0, float(np.abs(f.values).max()))
    if gap.min() < -slope_tol * scale:
        raise InvalidSlopeError(
            f"invalid supporting slope: plane exceeds f by {-gap.min():.3e}")
    members = np.flatnonzero(gap < h)
    vol = float(f.mesh.weights[members].sum())
    near = _boundary_adjacency(f)
    contained = not bool(near[members].any())
    return Section(x, p, float(h), members, vol, contained)


# ---------------------------------------------------------------------------
# John ellipsoid (minimum volume enclosing ellipsoid + inscribed 1/n copy)


@dataclass
class EllipsoidSummary:
    center: np.ndarray
    axes: np.ndarray             # (n, n), rows are orthonormal axis directions
    lengths: np.ndarray          # semi-axis lengths, sorted descending
    inscribed_factor: float      # inscribed copy = MVEE scaled by this factor
    degenerate: bool = False

    @property
    def volume(self) -> float:
        n = len(self.lengths)
        unit = np.pi if n == 2 else 4 * np.pi / 3
        return float(unit * np.prod(self.lengths))

    def mahalanobis(self, points) -> np.ndarray:
        """Ellipsoid norm of points; <= 1 means inside the enclosing ellipsoid."""
        d = (np.atleast_2d(points) - self.center) @ self.axes.T
        safe = np.where(self.lengths > 0, self.lengths, np.inf)
        return np.sqrt(((d / safe) ** 2).sum(1))

    def boundary_points(self, m: int = 64) -> np.ndarray:
        """Sample points of the *inscribed* ellipsoid (factor applied)."""
        n = len(self.center)
        if n == 2:
            t = np.linspace(0, 2 * np.pi, m, endpoint=False)
            sph = np.column_stack([np.cos(t), np.sin(t)])
        else:
            rng = np.random.default_rng(0)
            sph = rng.normal(size=(m, 3))
            sph /= np.linalg.norm(sph, axis=1, keepdims=True)
        scaled = sph * (self.lengths * self.inscribed_factor)
        return self.center + scaled @ self.axes


def _mvee_weights(pts: np.ndarray, tol: float) -> np.ndarray:
    """Wolfe-Atwood ascent for the MVEE: Khachiyan steps plus away steps."""
    n_pts, d = pts.shape
    q = np.column_stack([pts, np.ones(n_pts)])
    u = np.full(n_pts, 1.0 / n_pts)
    for _ in range(200_000):
        v = q.T @ (q * u[:, None])
        try:
            vi = np.linalg.inv(v)
        except np.linalg.LinAlgError:
            vi = np.linalg.pinv(v)
        m = np.einsum("ij,jk,ik->i", q, vi, q)
        j_up = int(np.argmax(m))
        support = u > 1e-12
        m_dn = np.where(support, m, np.inf)
        j_dn = int(np.argmin(m_dn))
        kappa_up = m[j_up] / (d + 1) - 1
        kappa_dn = 1 - m_dn[j_dn] / (d + 1)
        if max(kappa_up, kappa_dn) < tol:
            break
        if kappa_up >= kappa_dn:
            j, mj = j_up, m[j_up]
            step = (mj - d - 1) / ((d + 1) * (mj - 1))
        else:
            j, mj = j_dn, m_dn[j_dn]
            step = max((mj - d - 1) / ((d + 1) * (mj - 1)), -u[j] / (1 - u[j]))
        u *= (1 - step)
        u[j] += step
    return u


def john_ellipsoid(points, weights=None, tol: float = 2e-7) -> EllipsoidSummary:
    """Minimum-volume enclosing ellipsoid with the 1/n inscribed copy.

    Degenerate (affinely dependent) inputs return a lower-dimensional summary
    with trailing zero lengths and the degeneracy flag set.  The `weights`
    argument is accepted for interface symmetry with volume computations; the
    MVEE itself depends only on the point positions.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    center0 = pts.mean(0)
    spread = pts - center0
    u_, s_, vt_ = np.linalg.svd(spread, full_matrices=False)
    scale = max(s_[0], 1e-300)
    rank = int((s_ > 1e-9 * scale).sum())
    if rank < n:
        lengths = np.zeros(n)
        axes = vt_
        if rank > 0:
            proj = spread @ vt_[:rank].T
            sub = john_ellipsoid(proj, tol=tol) if rank > 1 else None
            if rank == 1:
                lengths[0] = np.abs(proj[:, 0]).max()
            else:
                lengths[:rank] = sub.lengths
                axes = np.vstack([sub.axes @ vt_[:rank], vt_[rank:]])
                center0 = center0 + sub.center @ vt_[:rank]
        return EllipsoidSummary(center0, axes, lengths, 1.0 / n, degenerate=True)
    # restrict to hull vertices: MVEE is determined by them
    try:
        hull = ConvexHull(pts)
        work = pts[hull.vertices]
    except QhullError:
        work = pts
    u = _mvee_weights(work, tol)
    center = work.T @ u
    cov = (work.T * u) @ work - np.outer(center, center)
    shape = np.linalg.inv(cov) / n          # ellipsoid {x: (x-c)' shape (x-c) <= 1}
    evals, evecs = np.linalg.eigh(shape)
    lengths = 1.0 / np.sqrt(np.maximum(evals, 1e-300))
    order = np.argsort(lengths)[::-1]
    lengths = lengths[order]
    axes = evecs[:, order].T
    # guarantee containment: inflate minimally so every input point is inside
    summary = EllipsoidSummary(center, axes, lengths, 1.0 / n)
    reach = summary.mahalanobis(pts).max()
    if reach > 1:
        lengths = lengths * reach
    return EllipsoidSummary(center, axes, lengths, 1.0 / n)


# ---------------------------------------------------------------------------
# growth profiles


@dataclass
class GrowthProfile:
    heights: np.ndarray
    volumes: np.ndarray
    axis_lengths: np.ndarray       # (len(h), n), descending per row
    contained: np.ndarray          # bool per height
    sigma: float                   # fitted volume exponent
    sigma_stderr: float
    constant: float                # fitted C in volume ~ C h^sigma
    dn1_over_sqrth: np.ndarray     # d_{n-1}(h) / sqrt(h)
    dropped: list

    def to_csv(self) -> str:
        n = self.axis_lengths.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "volume"] + [f"d{i + 1}" for i in range(n)] + ["contained"])
        for k in range(len(self.heights)):
            w.writerow([repr(float(self.heights[k])), repr(float(self.volumes[k]))]
                       + [repr(float(d)) for d in self.axis_lengths[k]]
                       + [int(self.contained[k])])
        return buf.getvalue()


def fit_loglog(x, y):
    """Least-squares slope of log y against log x, with stderr and intercept."""
    lx, ly = np.log(x), np.log(y)
    a = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(a, ly, rcond=None)
    slope, intercept = coef
    if len(x) > 2:
        resid = ly - a @ coef
        dof = len(x) - 2
        s2 = (resid ** 2).sum() / dof
        denom = ((lx - lx.mean()) ** 2).sum()
        stderr = float(np.sqrt(s2 / denom)) if denom > 0 else np.inf
    else:
        stderr = np.inf
    return float(slope), stderr, float(np.exp(intercept))


def growth_profile(f: DiscreteConvexFunction, x: int, p, h_list,
                   min_nodes: int = 8, min_extent_cells: float = 0.0) -> GrowthProfile:
    """Section volumes and John axis lengths over a decreasing height list.

    Heights whose sections resolve fewer than `min_nodes` nodes are dropped
    with a note; when `min_extent_cells` > 0, heights whose smallest section
    extent falls below that many cells are dropped too (resolution floor).
    The exponent fit uses compactly contained entries only.
    """
    h_list = np.asarray(sorted(h_list, reverse=True), dtype=float)
    n = f.dim
    s = f.mesh.spacing
    rows = []
    dropped = []
    for h in h_list:
        sec = extract_section(f, x, p, h)
        if sec.n_members < min_nodes:
            dropped.append((float(h), "fewer than %d member nodes" % min_nodes))
            continue
        pts = f.mesh.points[sec.members]
        ell = john_ellipsoid(pts)
        if min_extent_cells > 0 and ell.lengths[-1] < min_extent_cells * s / 2:
            dropped.append((float(h), "section thinner than resolution floor"))
            continue
        rows.append((h, sec.volume, ell.lengths, sec.compactly_contained))
    if not rows:
        raise ValueError("no resolvable heights in h_list")
    heights = np.array([r[0] for r in rows])
    volumes = np.array([r[1] for r in rows])
    lengths = np.array([r[2] for r in rows])
    contained = np.array([r[3] for r in rows])
    fit_mask = contained & (volumes > 0)
    if fit_mask.sum() >= 2:
        sigma, err, const = fit_loglog(heights[fit_mask], volumes[fit_mask])
    else:
        sigma, err, const = np.nan, np.inf, np.nan
    ratio = lengths[:, n - 2] / np.sqrt(heights)
    return GrowthProfile(heights, volumes, lengths, contained,
                         sigma, err, const, ratio, dropped)


# ---------------------------------------------------------------------------
# Vitali subcover


def vitali_subcover(balls):
    """Greedy disjoint subfamily whose tripled balls cover all input centers.

    Balls are processed by decreasing radius, ties broken by lexicographic
    center order, so the output is deterministic.
    """
    balls = [(np.asarray(c, dtype=float), float(r)) for c, r in balls]
    if any(r <= 0 for _, r in balls):
        raise ValueError("radii must be positive")
    order = sorted(range(len(balls)),
                   key=lambda i: (-balls[i][1], tuple(balls[i][0])))
    chosen = []
    for i in order:
        c, r = balls[i]
        if all(np.linalg.norm(c - cc) > r + rr for cc, rr in chosen):
            chosen.append((c, r))
    return chosen


# ---------------------------------------------------------------------------
# box-counting dimension


def box_counting_dimension(points, scales):
    """Slope of log N(s) against log (1/s) over dyadic scales.

    Returns (dimension, list of (scale, count), residual).  Scales finer than
    the point count supports are dropped with a note in the counts list.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    if len(scales) < 2 or scales[0] / scales[-1] < 7.9:
        raise ValueError("need dyadic scales spanning at least 3 octaves")
    lo = pts.min(0)
    span = np.maximum(pts.max(0) - lo, 1e-300)
    counts = []
    for s in scales:
        per_axis = np.maximum(np.ceil(span / s - 1e-9), 1).astype(np.int64)
        idx = np.floor((pts - lo) / s).astype(np.int64)
        idx = np.minimum(idx, per_axis - 1)
        n_boxes = len(np.unique(idx, axis=0))
        if n_boxes > len(pts) * 0.9 and len(counts) >= 2:
            break  # finer scales dominated by sample count, drop
        counts.append((float(s), int(n_boxes)))
    sc = np.array([c[0] for c in counts])
    ns = np.array([c[1] for c in counts])
    slope, stderr, _ = fit_loglog(1.0 / sc, ns)
    lx = np.log(1 / sc)
    ly = np.log(ns)
    fitl = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - np.polyval(fitl, lx)) ** 2)))
    return float(slope), counts, resid
