"""Closed-form convex functions and sets used throughout the experiments.

Contains the degenerate model solutions (Pogorelov type), the anisotropic
barrier family w with certified determinant lower bound, the self-similar
removed-interval set S, the one-dimensional kink-sum function v whose tangent
separation at points of S is super-quadratic, the boundary field g built from
v, and small fixtures for strict-convexity and degeneracy checks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ClosedFormFunction",
    "CantorSet",
    "KinkSumFunction",
    "BoundaryField",
    "make_paraboloid",
    "make_cone",
    "make_pogorelov",
    "make_w",
    "make_cantor",
    "make_v",
    "make_boundary_g",
    "make_fixture",
    "extend_to_rn",
    "parse_function_spec",
    "cone_support_values",
    "epsilon_from_delta",
    "delta_from_epsilon",
]


def epsilon_from_delta(delta: float) -> float:
    """Invert delta = 2 eps / (1 + 3 eps)."""
    return delta / (2 - 3 * delta)


def delta_from_epsilon(eps: float) -> float:
    return 2 * eps / (1 + 3 * eps)


@dataclass
class ClosedFormFunction:
    """Convex function with analytic evaluators.

    `gradient`/`hessian`/`det_hessian` may be None (not defined for the tag)
    and may raise on degeneracy loci (for example the symmetry axis of the
    Pogorelov solutions).
    """

    tag: str
    params: dict
    value: callable                     # (N, n) -> (N,)
    gradient: callable = None
    hessian: callable = None            # (n,) point -> (n, n)
    det_hessian: callable = None        # (N, n) -> (N,)
    domain_bounds: np.ndarray = None    # (n, 2)
    violates_ma_bound: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.domain_bounds)

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))

    def sample_domain(self, rng, size: int) -> np.ndarray:
        lo = self.domain_bounds[:, 0]
        hi = self.domain_bounds[:, 1]
        return lo + (hi - lo) * rng.random((size, len(lo)))

    def check_convexity(self, rng, samples: int = 10_000, tol: float = 1e-10) -> float:
        """Worst midpoint-convexity violation over random segments (<= tol passes)."""
        a = self.sample_domain(rng, samples)
        b = self.sample_domain(rng, samples)
        mid = 0.5 * (a + b)
        gap = self.value(mid) - 0.5 * (self.value(a) + self.value(b))
        return float(gap.max())


def make_paraboloid(n: int = 2, factor: float = 0.5) -> ClosedFormFunction:
    def value(x):
        return factor * (x ** 2).sum(axis=1)

    def gradient(x):
        return 2 * factor * np.atleast_2d(x)

    def hessian(x):
        return 2 * factor * np.eye(n)

    def det_hessian(x):
        return np.full(len(np.atleast_2d(x)), (2 * factor) ** n)

    return ClosedFormFunction(
        "paraboloid", {"n": n, "factor": factor}, value, gradient, hessian,
        det_hessian, domain_bounds=np.array([[-1.0, 1.0]] * n))


def make_cone(n: int = 2) -> ClosedFormFunction:
    def value(x):
        return np.sqrt((x ** 2).sum(axis=1))

    def gradient(x):
        x = np.atleast_2d(x)
        r = np.sqrt((x ** 2).sum(axis=1, keepdims=True))
        if np.any(r == 0):
            raise ValueError("gradient undefined at the apex")
        return x / r

    return ClosedFormFunction(
        "cone", {"n": n}, value, gradient,
        domain_bounds=np.array([[-1.0, 1.0]] * n))


def cone_support_values(points: np.ndarray, m: int) -> np.ndarray:
    """Max of m supporting planes of the 2D cone |x| (dyadic direction fans).

    The planes have unit slopes at angles 2 pi (j + 1/2) / m; doubling m keeps
    all previous directions, so the apex subdifferential grids are nested and
    their areas increase monotonically to pi.
    """
    ang = 2 * np.pi * (np.arange(m) + 0.5) / m
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    return (np.atleast_2d(points) @ dirs.T).max(axis=1)


# ---------------------------------------------------------------------------
# Pogorelov solutions (degenerate along the x_n axis, n >= 3)


def make_pogorelov(n: int = 3, variant: str = "c1alpha",
                   rho0: float = 0.5) -> ClosedFormFunction:
    """Model solutions |x'|^{2-2/n} (1+x_n^2) and |x'| + |x'|^{n/2} (1+x_n^2).

    Defined on {|x'| < 1, |x_n| <= rho0}; Hessians exist only off the axis
    x' = 0 and requesting one there raises "degenerate axis".
    """
    if n < 3:
        raise ValueError("Pogorelov solutions need n >= 3")
    if rho0 > 0.5:
        raise ValueError("rho0 must be <= 1/2")
    a = 2.0 - 2.0 / n

    def g(t):
        return 1.0 + t ** 2

    if variant == "c1alpha":
        def value(x):
            x = np.atleast_2d(x)
            r = np.sqrt((x[:, :-1] ** 2).sum(axis=1))
            return r ** a * g(x[:, -1])

        def gradient(x):
            x = np.atleast_2d(x)
            r = np.sqrt((x[:, :-1] ** 2).sum(axis=1, keepdims=True))
            out = np.empty_like(x)
            out[:, :-1] = a * x[:, :-1] * r ** (a - 2) * g(x[:, -1])[..., None]
            out[:, -1] = (r[:, 0] ** a) * 2 * x[:, -1]
            return out

        def hessian(x):
            x = np.asarray(x, dtype=float)
            xp = x[:-1]
            r = np.linalg.norm(xp)
            if r == 0:
                raise ValueError("degenerate axis: Hessian undefined at x' = 0")
            t = x[-1]
            h = np.zeros((n, n))
            h[:-1, :-1] = a * r ** (a - 2) * g(t) * np.eye(n - 1) \
                + a * (a - 2) * r ** (a - 4) * g(t) * np.outer(xp, xp)
            h[:-1, -1] = h[-1, :-1] = a * xp * r ** (a - 2) * 2 * t
            h[-1, -1] = r ** a * 2
            return h

        def det_hessian(x):
            x = np.atleast_2d(x)
            return np.array([np.linalg.det(hessian(row)) for row in x])

        tag = "pogorelov-c1a"
    elif variant == "lipschitz":
        b = n / 2.0

        def value(x):
            x = np.atleast_2d(x)
            r = np.sqrt((x[:, :-1] ** 2).sum(axis=1))
            return r + r ** b * g(x[:, -1])

        def gradient(x):
            x = np.atleast_2d(x)
            r = np.sqrt((x[:, :-1] ** 2).sum(axis=1, keepdims=True))
            if np.any(r == 0):
                raise ValueError("gradient undefined on the axis")
            out = np.empty_like(x)
            radial = 1.0 + b * r ** (b - 1) * g(x[:, -1])[..., None]
            out[:, :-1] = x[:, :-1] / r * radial
            out[:, -1] = (r[:, 0] ** b) * 2 * x[:, -1]
            return out

        hessian = None
        det_hessian = None
        tag = "pogorelov-lipschitz"
    else:
        raise ValueError(f"unknown Pogorelov variant {variant!r}")

    bounds = np.array([[-1.0, 1.0]] * (n - 1) + [[-rho0, rho0]])
    # shrink the transverse box so samples stay inside {|x'| < 1}
    bounds[:-1] /= np.sqrt(n - 1)
    return ClosedFormFunction(tag, {"n": n, "variant": variant, "rho0": rho0},
                              value, gradient, hessian, det_hessian,
                              domain_bounds=bounds)


# ---------------------------------------------------------------------------
# the anisotropic barrier w


def _w_exponents(delta: float):
    if not (0 < delta < 0.5):
        raise ValueError("delta must lie in (0, 1/2)")
    alpha = 2.0 - delta
    beta = 1.0 / (1.5 - 1.0 / alpha)
    return alpha, beta


def make_w(delta: float, rho0: float = None, safety: float = 0.9) -> ClosedFormFunction:
    """Barrier w = M (|x1|^a + |x2|^b) f(rho0 x3), f(t) = 1 + t^2, det >= 1.

    alpha = 2 - delta and 1/alpha + 1/beta = 3/2 make the determinant
    constant along the curves x2 = m x1^{alpha/beta}.  The x3 axis is scaled
    by rho0 (chosen inside the positivity window) and the result multiplied by
    M so the certified determinant lower bound on the slab is exactly 1; the
    achieved constants are recorded in metadata.
    """
    alpha, beta = _w_exponents(delta)
    a, b = alpha, beta
    limit = min((a - 1) / (a + 1), (b - 1) / (b + 1))
    rho_max = np.sqrt(limit)
    if rho0 is None:
        rho0 = safety * rho_max
    elif rho0 >= rho_max:
        raise ValueError(f"rho0 must be below {rho_max:.4f} for delta={delta}")

    # certified bracket constants (f >= 1, |t| <= rho0)
    c1 = 2 * a * b * (b - 1) * ((a - 1) - (a + 1) * rho0 ** 2)
    c2 = 2 * a * b * (a - 1) * ((b - 1) - (b + 1) * rho0 ** 2)
    c_delta = min(c1, c2)
    # minimum over the curve family of |m|^{b-2} + |m|^{2b-2}
    m_star = ((2 - b) / (2 * b - 2)) ** (1.0 / b)
    h_min = m_star ** (b - 2) + m_star ** (2 * b - 2)
    d_min = c_delta * h_min
    scale = (rho0 ** 2 * d_min) ** (-1.0 / 3.0)

    def base_parts(x):
        x = np.atleast_2d(x)
        va = np.abs(x[:, 0]) ** a
        vb = np.abs(x[:, 1]) ** b
        t = rho0 * x[:, 2]
        return va, vb, t

    def value(x):
        va, vb, t = base_parts(x)
        return scale * (va + vb) * (1 + t ** 2)

    def gradient(x):
        x = np.atleast_2d(x)
        va, vb, t = base_parts(x)
        f = 1 + t ** 2
        out = np.empty_like(x)
        out[:, 0] = scale * a * np.sign(x[:, 0]) * np.abs(x[:, 0]) ** (a - 1) * f
        out[:, 1] = scale * b * np.sign(x[:, 1]) * np.abs(x[:, 1]) ** (b - 1) * f
        out[:, 2] = scale * (va + vb) * 2 * t * rho0
        return out

    def hessian(x):
        x = np.asarray(x, dtype=float)
        if x[0] == 0 or x[1] == 0:
            raise ValueError("Hessian singular on the coordinate axes")
        va, vb, t = (np.abs(x[0]) ** a, np.abs(x[1]) ** b, rho0 * x[2])
        f = 1 + t ** 2
        h = np.zeros((3, 3))
        h[0, 0] = a * (a - 1) * np.abs(x[0]) ** (a - 2) * f
        h[1, 1] = b * (b - 1) * np.abs(x[1]) ** (b - 2) * f
        h[2, 2] = (va + vb) * 2 * rho0 ** 2
        h[0, 2] = h[2, 0] = a * np.sign(x[0]) * np.abs(x[0]) ** (a - 1) * 2 * t * rho0
        h[1, 2] = h[2, 1] = b * np.sign(x[1]) * np.abs(x[1]) ** (b - 1) * 2 * t * rho0
        return scale * h

    def det_hessian(x):
        x = np.atleast_2d(x)
        va, vb, t = base_parts(x)
        f = 1 + t ** 2
        x1 = np.abs(x[:, 0])
        x2 = np.abs(x[:, 1])
        br1 = 2 * a * b * (a - 1) * (b - 1) * f ** 2 - 4 * a ** 2 * b * (b - 1) * f * t ** 2
        br2 = 2 * a * b * (a - 1) * (b - 1) * f ** 2 - 4 * a * b ** 2 * (a - 1) * f * t ** 2
        det0 = x1 ** (2 * a - 2) * x2 ** (b - 2) * br1 \
            + x1 ** (a - 2) * x2 ** (2 * b - 2) * br2
        return scale ** 3 * rho0 ** 2 * det0

    fn = ClosedFormFunction(
        "w-barrier",
        {"delta": delta, "alpha": a, "beta": b, "rho0": rho0, "scale": scale},
        value, gradient, hessian, det_hessian,
        domain_bounds=np.array([[-0.7, 0.7], [-0.7, 0.7], [-1.0, 1.0]]))
    fn.metadata = certify_w_on_curves(fn)
    return fn


def certify_w_on_curves(w_fn: ClosedFormFunction) -> dict:
    """Dense determinant sampling along the invariant curves of the barrier.

    Samples m in [2^-6, 2^6] (log spaced) times x1 in [2^-10, 1] times x3 in
    [-1, 1], evaluates det D^2 w and reports the achieved minimum, which the
    normalization should place at >= 1.
    """
    a = w_fn.params["alpha"]
    b = w_fn.params["beta"]
    ms = np.logspace(-6 * np.log10(2), 6 * np.log10(2), 25)
    x1 = np.logspace(-10 * np.log10(2), 0, 21)
    x3 = np.linspace(-1, 1, 9)
    grid_m, grid_x1, grid_x3 = np.meshgrid(ms, x1, x3, indexing="ij")
    x2 = grid_m * grid_x1 ** (a / b)
    pts = np.column_stack([grid_x1.ravel(), x2.ravel(), grid_x3.ravel()])
    det = w_fn.det_hessian(pts)
    mono = np.abs(grid_m.ravel()) ** (b - 2) + np.abs(grid_m.ravel()) ** (2 * b - 2)
    ratios = det / (mono * w_fn.params["scale"] ** 3 * w_fn.params["rho0"] ** 2)
    return {
        "curve_det_min": float(det.min()),
        "curve_ratio_min": float(ratios.min()),
        "curve_ratio_max": float(ratios.max()),
        "samples": int(len(pts)),
    }


# ---------------------------------------------------------------------------
# the removed-interval set S


@dataclass
class CantorSet:
    """Self-similar subset of [-1/2, 1/2]: remove the center fraction gamma
    of every surviving interval, K times."""

    eps: float
    gamma: float
    depth: int
    removed: list            # (k, i, center, length) with 1-based k, i
    survivors: np.ndarray    # (2^K, 2) lo/hi at final depth

    @property
    def hausdorff_dimension(self) -> float:
        return 1.0 / (1.0 + 3.0 * self.eps)

    def survivor_length(self) -> float:
        return float((self.survivors[:, 1] - self.survivors[:, 0]).sum())

    def contains(self, x: float) -> bool:
        """Membership in the depth-K survivor set, by O(K) interval descent."""
        lo, hi = -0.5, 0.5
        for _ in range(self.depth):
            length = hi - lo
            half_gap = 0.5 * self.gamma * length
            mid = 0.5 * (lo + hi)
            if x < mid - half_gap:
                hi = mid - half_gap
            elif x > mid + half_gap:
                lo = mid + half_gap
            else:
                return False
        return lo - 1e-15 <= x <= hi + 1e-15

    def sample_points(self, per_interval: int = 2) -> np.ndarray:
        """Interior survivor samples (interval midpoints) for box counts.

        Midpoint sampling keeps samples off box edges, so counts at scales
        4^{-k} see each level-k survivor in exactly one box.
        """
        t = (np.arange(per_interval) + 0.5) / per_interval
        lo = self.survivors[:, 0][:, None]
        hi = self.survivors[:, 1][:, None]
        return (lo + (hi - lo) * t).ravel()

    def sample_members(self, rng, count: int) -> np.ndarray:
        """Random survivor points (midpoints of randomly chosen intervals)."""
        idx = rng.integers(0, len(self.survivors), size=count)
        t = rng.random(count)
        lo = self.survivors[idx, 0]
        hi = self.survivors[idx, 1]
        return lo + (hi - lo) * t

    def removed_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "i", "center", "length"])
        for k, i, c, ln in self.removed:
            w.writerow([k, i, repr(float(c)), repr(float(ln))])
        return buf.getvalue()


def make_cantor(eps: float, depth: int) -> CantorSet:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if depth > 30:
        raise ValueError("depth capped at 30")
    gamma = 1.0 - 2.0 ** (-3.0 * eps)
    survivors = np.array([[-0.5, 0.5]])
    removed = []
    for k in range(1, depth + 1):
        gap = gamma * 2.0 ** (-(1.0 + 3.0 * eps) * (k - 1))
        new = np.empty((2 * len(survivors), 2))
        for i, (lo, hi) in enumerate(survivors):
            mid = 0.5 * (lo + hi)
            removed.append((k, i + 1, mid, gap))
            new[2 * i] = (lo, mid - gap / 2)
            new[2 * i + 1] = (mid + gap / 2, hi)
        survivors = new
    return CantorSet(eps, gamma, depth, removed, survivors)


# ---------------------------------------------------------------------------
# the kink-sum function v


@dataclass
class KinkSumFunction:
    """v(x) = sum over removed-interval centers of rescaled copies of
    v0(t) = |t| (|t| <= 1), 2|t| - 1 (|t| > 1)."""

    eps: float
    depth: int
    centers: np.ndarray          # kink centers x_{i,k}
    amplitudes: np.ndarray       # 2^{-2(1+2 eps) k}
    rescales: np.ndarray         # 2 gamma^{-1} 2^{(1+3 eps) k}
    gamma: float

    @property
    def delta(self) -> float:
        return delta_from_epsilon(self.eps)

    def value(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(len(x))
        step = max(1, int(5e6 // max(len(self.centers), 1)))
        for k in range(0, len(x), step):
            t = (x[k:k + step, None] - self.centers) * self.rescales
            at = np.abs(t)
            v0 = np.where(at <= 1.0, at, 2 * at - 1)
            out[k:k + step] = (v0 * self.amplitudes).sum(axis=1)
        return out

    def __call__(self, x):
        return self.value(x)

    def one_sided_slopes(self, x):
        """(left, right) derivatives; exact for the piecewise-linear sum."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = (x[:, None] - self.centers) * self.rescales
        right = np.where(t >= 1.0, 2.0, np.where(t >= 0.0, 1.0,
                         np.where(t >= -1.0, -1.0, -2.0)))
        left = np.where(t > 1.0, 2.0, np.where(t > 0.0, 1.0,
                        np.where(t > -1.0, -1.0, -2.0)))
        w = self.amplitudes * self.rescales
        return (left * w).sum(axis=1), (right * w).sum(axis=1)

    def subgradient(self, x):
        """Midpoint of the one-sided slopes (deterministic subgradient)."""
        lo, hi = self.one_sided_slopes(x)
        return 0.5 * (lo + hi)

    def breakpoints(self) -> np.ndarray:
        half = 1.0 / self.rescales
        return np.unique(np.concatenate(
            [self.centers, self.centers - half, self.centers + half]))

    def term_bound_constant(self) -> float:
        """Per-term constant in |v| <= C sum_k 2^{-eps k} over |x| <= 1."""
        return 8.0 / self.gamma


def make_v(eps: float, depth: int) -> KinkSumFunction:
    cantor = make_cantor(eps, depth)
    ks = np.array([k for k, _, _, _ in cantor.removed], dtype=float)
    centers = np.array([c for _, _, c, _ in cantor.removed])
    amplitudes = 2.0 ** (-2.0 * (1.0 + 2.0 * eps) * ks)
    rescales = 2.0 / cantor.gamma * 2.0 ** ((1.0 + 3.0 * eps) * ks)
    return KinkSumFunction(eps, depth, centers, amplitudes, rescales, cantor.gamma)


# ---------------------------------------------------------------------------
# boundary data g for the slab problem


@dataclass
class BoundaryField:
    """g(x) = C (v(x1) + |x2|) on the slab boundary, with the fitted C."""

    v: KinkSumFunction
    c_value: float
    c0: float
    margin: float
    metadata: dict

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.c_value * (self.v.value(x[:, 0]) + np.abs(x[:, 1]))

    def tangent_slope(self, z1: float) -> float:
        """Slope a_z of the supporting line of C v at z1 (midpoint convention)."""
        return self.c_value * float(self.v.subgradient([z1])[0])

    def comparison_plane(self, w_fn: ClosedFormFunction, z1: float):
        """w_z(x) = g(z) + a_z (x1 - z1) + w(x - z); returns a callable."""
        gz = self.c_value * float(self.v.value([z1])[0])
        az = self.tangent_slope(z1)
        z = np.array([z1, 0.0, 0.0])

        def w_z(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return gz + az * (x[:, 0] - z1) + w_fn.value(x - z)

        w_z.touch_value = gz
        return w_z


def make_boundary_g(eps: float, depth: int, margin: float = 1.25,
                    delta: float = None, w_fn: ClosedFormFunction = None,
                    seed: int = 0, n_z: int = 64, n_face: int = 4096) -> BoundaryField:
    """Fit the boundary constant C so g dominates every comparison barrier w_z.

    First fits C0 with w(x - z) <= C0 (|x1-z1|^{2-delta} + |x2|^beta) over
    sampled z in S and slab points, then takes C = margin times the smallest
    constant with g >= g(z) + a_z (x1-z1) + C0-bound on the top/bottom faces.
    """
    if delta is None:
        delta = delta_from_epsilon(eps)
    if w_fn is None:
        w_fn = make_w(delta)
    beta = w_fn.params["beta"]
    v = make_v(eps, depth)
    cantor = make_cantor(eps, depth)
    rng = np.random.default_rng(seed)
    zs = cantor.sample_members(rng, n_z)

    # --- C0: bound w(x - z) by the split power profile over face samples
    x1 = np.concatenate([rng.uniform(-1, 1, n_face // 2),
                         np.repeat(zs, 8) + np.tile(
                             np.array([2.0 ** -j for j in range(1, 9)]), len(zs))])
    x1 = np.clip(x1, -1, 1)
    x2 = rng.uniform(-1, 1, len(x1))
    x3 = rng.choice([-1.0, 1.0], len(x1))
    ratios = []
    for z1 in zs:
        pts = np.column_stack([x1, x2, x3])
        wvals = w_fn.value(pts - np.array([z1, 0.0, 0.0]))
        denom = np.abs(x1 - z1) ** (2 - delta) + np.abs(x2) ** beta
        ok = denom > 1e-12
        ratios.append((wvals[ok] / denom[ok]).max())
    c0 = float(np.max(ratios))
    if not np.isfinite(c0):
        raise ValueError("C0 fit failed (non-finite)")

    # --- C: dominate the C0 profile by C (sep_z(x1) + |x2|) on the faces
    need = 0.0
    vz = v.value(zs)
    for z1, vz1 in zip(zs, vz):
        az = float(v.subgradient([z1])[0])
        sep = v.value(x1) - vz1 - az * (x1 - z1)
        sep = np.maximum(sep, 0.0)
        denom = sep + np.abs(x2)
        num = c0 * (np.abs(x1 - z1) ** (2 - delta) + np.abs(x2) ** beta)
        ok = denom > 1e-12
        need = max(need, float((num[ok] / denom[ok]).max()))
    c_value = margin * need
    if not np.isfinite(c_value) or c_value <= 0:
        raise ValueError("C fit failed (non-finite)")
    meta = {
        "eps": eps, "delta": delta, "gamma": v.gamma, "depth": depth,
        "C0": c0, "C": c_value, "margin": margin, "beta": beta,
        "alpha": w_fn.params["alpha"], "w_scale": w_fn.params["scale"],
        "w_rho0": w_fn.params["rho0"], "seed": seed,
    }
    return BoundaryField(v, c_value, c0, margin, meta)


# ---------------------------------------------------------------------------
# fixtures


def make_fixture(tag: str, n: int = 2, k: int = None) -> ClosedFormFunction:
    """quad-plus-kink: |x|^2 + |x_n| (strictly convex, kinked);
    degenerate-k-plane: sum of squares of the last n-k coordinates, which
    vanishes on a k-plane and deliberately violates the determinant bound."""
    if tag == "quad-plus-kink":
        def value(x):
            x = np.atleast_2d(x)
            return (x ** 2).sum(axis=1) + np.abs(x[:, -1])

        return ClosedFormFunction(
            "quad-plus-kink", {"n": n}, value,
            domain_bounds=np.array([[-1.0, 1.0]] * n))
    if tag == "degenerate-k-plane":
        if k is None:
            k = n - 1
        if not 1 <= k < n:
            raise ValueError("need 1 <= k < n")

        def value(x):
            x = np.atleast_2d(x)
            return (x[:, k:] ** 2).sum(axis=1)

        return ClosedFormFunction(
            "degenerate-k-plane", {"n": n, "k": k}, value,
            domain_bounds=np.array([[-1.0, 1.0]] * n),
            violates_ma_bound=True)
    raise ValueError(f"unknown fixture {tag!r}")


def extend_to_rn(base, n: int):
    """Evaluator for F(x) = base(x_1..3) + x_4^2 + ... + x_n^2 (n >= 4).

    Evaluation-level only; mesh-based analysis in n >= 4 is rejected.
    """
    if n < 4:
        raise ValueError("extension targets n >= 4")
    base_val = base.value if hasattr(base, "value") else base

    def value(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != n:
            raise ValueError("evaluation-only extension: expected n columns")
        return np.asarray(base_val(x[:, :3])) + (x[:, 3:] ** 2).sum(axis=1)

    return value


# ---------------------------------------------------------------------------
# registry


def parse_function_spec(spec: str):
    """Build a construction from 'name(key=value, ...)' config strings."""
    spec = spec.strip()
    if "(" in spec:
        name, _, rest = spec.partition("(")
        args = rest.rstrip(")").strip()
    else:
        name, args = spec, ""
    kwargs = {}
    if args:
        for part in args.split(","):
            key, _, val = part.partition("=")
            key = key.strip()
            val = val.strip()
            try:
                kwargs[key] = int(val) if val.isdigit() else float(val)
            except ValueError:
                kwargs[key] = val
    name = name.strip()
    makers = {
        "paraboloid": make_paraboloid,
        "cone": make_cone,
        "pogorelov-c1a": lambda **kw: make_pogorelov(variant="c1alpha", **kw),
        "pogorelov-lipschitz": lambda **kw: make_pogorelov(variant="lipschitz", **kw),
        "w-barrier": make_w,
        "quad-plus-kink": lambda **kw: make_fixture("quad-plus-kink", **kw),
        "degenerate-k-plane": lambda **kw: make_fixture("degenerate-k-plane", **kw),
    }
    if name not in makers:
        raise ValueError(f"unknown construction {name!r} (have {sorted(makers)})")
    return makers[name](**kwargs)
