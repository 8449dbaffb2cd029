"""Set arithmetic for tube construction.

Zonotopes carry the disturbance and error tubes; polytopes in halfspace form
carry state and input constraints. The only nontrivial routine is
``rpi_outer_approx``, which outer-bounds the minimal robust positively
invariant set of a switched linear error system by accumulating interval
hulls of the mapped disturbance set and closing the geometric tail.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class EmptyTightenedSet(Exception):
    """Raised when constraint tightening empties a polytope."""

    def __init__(self, row: int, margin: float):
        self.row = row
        self.margin = margin
        super().__init__(
            f"tightened polytope is empty: row {row} infeasible by {margin:.3g}"
        )


class NotContractive(Exception):
    """Raised when the error maps show no contraction at the depth cutoff."""


@dataclass
class Zonotope:
    """Set {center + G xi : |xi_i| <= 1} with generator matrix G of shape (d, g)."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((self.center.size, 0))
        if G.ndim != 2 or G.shape[0] != self.center.size:
            raise ValueError("generators must have shape (d, g)")
        self.generators = G

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]


@dataclass
class HPolytope:
    """Set {x : A x <= b} with one row per halfspace."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b must have matching row counts")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts @ self.A.T <= self.b[None, :] + tol).all(axis=1)

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate interval hull [lo, hi], via support LPs."""
        from scipy.optimize import linprog

        d = self.dim
        lo = np.empty(d)
        hi = np.empty(d)
        for j in range(d):
            c = np.zeros(d)
            c[j] = 1.0
            res_lo = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * d)
            res_hi = linprog(-c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * d)
            if not (res_lo.success and res_hi.success):
                raise ValueError("polytope is empty or unbounded along an axis")
            lo[j] = res_lo.x[j]
            hi[j] = res_hi.x[j]
        return lo, hi


def box_polytope(lo, hi) -> HPolytope:
    """Axis-aligned box {lo <= x <= hi} in halfspace form."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if (lo > hi).any():
        raise ValueError("box requires lo <= hi")
    d = lo.size
    eye = np.eye(d)
    return HPolytope(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))


def box_zonotope(lo, hi) -> Zonotope:
    """Axis-aligned box as a zonotope; zero-width axes contribute no generator."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    cols = [i for i in range(lo.size) if half[i] > 0.0]
    G = np.zeros((lo.size, len(cols)))
    for k, i in enumerate(cols):
        G[i, k] = half[i]
    return Zonotope(center, G)


def support(z: Zonotope, direction: np.ndarray) -> float:
    """Support function max_{x in z} direction . x."""
    d = np.asarray(direction, dtype=float).ravel()
    return float(d @ z.center + np.abs(d @ z.generators).sum())


def linear_map(M: np.ndarray, z: Zonotope) -> Zonotope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return Zonotope(M @ z.center, M @ z.generators)


def minkowski_sum(a: Zonotope, b: Zonotope) -> Zonotope:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    return Zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))


def scale(z: Zonotope, factor: float) -> Zonotope:
    """Scale about the center (center fixed, generators scaled)."""
    if factor < 0:
        raise ValueError("factor must be nonnegative")
    return Zonotope(z.center.copy(), factor * z.generators)


def interval_hull(z: Zonotope) -> tuple[np.ndarray, np.ndarray]:
    half = np.abs(z.generators).sum(axis=1)
    return z.center - half, z.center + half


def pontryagin_diff(p: HPolytope, z: Zonotope) -> HPolytope:
    """Erode the polytope by the zonotope: b_i <- b_i - support(z, a_i).

    Raises ``EmptyTightenedSet`` naming the first violated row when the
    tightened polytope has no interior point.
    """
    if p.dim != z.dim:
        raise ValueError("dimension mismatch")
    shrink = np.abs(p.A @ z.generators).sum(axis=1) + p.A @ z.center
    b_new = p.b - shrink
    out = HPolytope(p.A.copy(), b_new)
    _check_nonempty(out)
    return out


def _check_nonempty(p: HPolytope) -> None:
    # Chebyshev-center LP: max r s.t. A x + ||a_i|| r <= b. Empty iff r* < 0.
    from scipy.optimize import linprog

    norms = np.linalg.norm(p.A, axis=1)
    d = p.dim
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([p.A, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=p.b, bounds=[(None, None)] * d + [(None, None)])
    if not res.success or res.x[-1] < 0:
        slack = p.b - p.A @ res.x[:d] if res.x is not None else p.b
        row = int(np.argmin(slack))
        raise EmptyTightenedSet(row, float(-slack[row]))


def zonotope_contains(z: Zonotope, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Exact membership test for a batch of points.

    A least-norm certificate (precomputed pseudoinverse) settles most points;
    leftovers go through an infinity-norm minimizing LP, so the answer is
    exact up to ``tol`` either way.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    R = pts - z.center[None, :]
    g = z.num_generators
    if g == 0:
        return np.abs(R).max(axis=1) <= tol
    G = z.generators
    scale_ref = 1.0 + np.abs(G).sum(axis=1).max()
    Gp = np.linalg.pinv(G)
    Xi = R @ Gp.T
    consistent = np.abs(Xi @ G.T - R).max(axis=1) <= tol * scale_ref
    inside = consistent & (np.abs(Xi).max(axis=1) <= 1.0 + tol)
    undecided = np.nonzero(~inside)[0]
    if undecided.size == 0:
        return inside
    from scipy.optimize import linprog

    # min t  s.t.  G xi = r, -t <= xi_i <= t
    for idx in undecided:
        r = R[idx]
        c = np.zeros(g + 1)
        c[-1] = 1.0
        A_eq = np.hstack([G, np.zeros((z.dim, 1))])
        ones = np.ones((g, 1))
        A_ub = np.vstack(
            [np.hstack([np.eye(g), -ones]), np.hstack([-np.eye(g), -ones])]
        )
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=np.zeros(2 * g),
            A_eq=A_eq,
            b_eq=r,
            bounds=[(None, None)] * g + [(0, None)],
        )
        if res.success and res.x[-1] <= 1.0 + tol:
            inside[idx] = True
    return inside


def zonotope_sample(z: Zonotope, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample points of z by drawing generator coefficients uniformly in [-1, 1]."""
    xi = rng.uniform(-1.0, 1.0, size=(count, z.num_generators))
    return z.center[None, :] + xi @ z.generators.T


@dataclass
class RpiResult:
    """Outer approximation of the minimal RPI set plus iteration metadata."""

    outer: Zonotope
    depth: int
    contraction: float
    converged: bool
    term_radii: list[float] = field(default_factory=list)


def _abs_radius(z: Zonotope) -> np.ndarray:
    # Per-coordinate radius of the smallest origin-centered box containing z.
    return np.abs(z.center) + np.abs(z.generators).sum(axis=1)


def _mapped_interval_hull(maps: list[np.ndarray], z: Zonotope) -> Zonotope:
    lo = np.full(z.dim, np.inf)
    hi = np.full(z.dim, -np.inf)
    for M in maps:
        c = M @ z.center
        half = np.abs(M @ z.generators).sum(axis=1)
        lo = np.minimum(lo, c - half)
        hi = np.maximum(hi, c + half)
    return box_zonotope(lo, hi)


def rpi_outer_approx(
    maps: list[np.ndarray],
    W: Zonotope,
    epsilon: float = 1e-4,
    max_depth: int = 50,
) -> RpiResult:
    """Outer approximation of the minimal RPI set of e+ = A_i e + w, w in W.

    Accumulates S = W (+) hull(A_i W) (+) hull(A_i hull(...)) (+) ...,
    stopping once the newest term's radius falls below ``epsilon`` times the
    radius of W, then appends a tail box of radius r_last * rho / (1 - rho)
    per coordinate (rho = last observed radius ratio, clamped to [0, 0.99]).
    Raises ``NotContractive`` if the cutoff is reached with rho >= 1.
    """
    maps = [np.atleast_2d(np.asarray(M, dtype=float)) for M in maps]
    if not maps:
        raise ValueError("at least one error map is required")
    for M in maps:
        if M.shape != (W.dim, W.dim):
            raise ValueError("maps must be square and match the disturbance dimension")
    if not (0 < epsilon < 1):
        raise ValueError("epsilon must lie in (0, 1)")
    if max_depth < 1:
        raise ValueError("max_depth must be positive")

    r_w = float(_abs_radius(W).max())
    threshold = epsilon * r_w if r_w > 0 else epsilon

    S = Zonotope(W.center.copy(), W.generators.copy())
    term = S
    r_prev = r_w if r_w > 0 else 1.0
    radii = [r_w]
    converged = False
    rho = 0.0
    depth = 0
    for depth in range(1, max_depth + 1):
        term = _mapped_interval_hull(maps, term)
        S = minkowski_sum(S, term)
        r_new = float(_abs_radius(term).max())
        radii.append(r_new)
        rho = r_new / r_prev if r_prev > 0 else 0.0
        if r_new <= threshold:
            converged = True
            break
        r_prev = r_new

    if not converged:
        if rho >= 1.0:
            raise NotContractive(
                f"no contraction at depth cutoff {max_depth}: radius ratio {rho:.4g} >= 1"
            )
        warnings.warn(
            f"rpi_outer_approx hit max_depth={max_depth} before reaching the"
            f" radius threshold; tail closed with rho={rho:.4g}",
            RuntimeWarning,
            stacklevel=2,
        )

    rho_c = min(max(rho, 0.0), 0.99)
    if rho_c > 0.0:
        tail_radii = _abs_radius(term) * (rho_c / (1.0 - rho_c))
        S = minkowski_sum(S, box_zonotope(-tail_radii, tail_radii))
    return RpiResult(outer=S, depth=depth, contraction=rho_c, converged=converged, term_radii=radii)
