"""Lifting dictionaries that map physical states to lifted coordinates.

Two families are provided. ``ThinPlateRbf`` places thin-plate radial basis
functions (r^2 log r) at centers drawn uniformly from a domain box with a
fixed seed; an optional switch prepends the raw state so the output map can
fall back to a plain selection. ``Monomial`` evaluates an explicit exponent
table and must embed the identity map (every unit exponent present) so the
physical state is recoverable from the lifted vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass
class ThinPlateRbf:
    """Thin-plate spline dictionary over a box domain.

    Parameters
    ----------
    centers : (q0, n) array
        RBF centers.
    append_state : bool
        When True the raw state is prepended, giving dimension n + q0.
    """

    centers: np.ndarray
    append_state: bool = False
    seed: int | None = None
    domain_box: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if self.centers.ndim != 2:
            raise ValueError("centers must be a (q0, n) array")

    @property
    def state_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def dim(self) -> int:
        q = self.centers.shape[0]
        return q + self.state_dim if self.append_state else q


@dataclass
class Monomial:
    """Monomial dictionary given by an explicit exponent table.

    exponents[i] holds the per-coordinate powers of the i-th feature. The
    table must contain every unit exponent (the identity map) and no
    duplicate rows.
    """

    exponents: np.ndarray = field()

    def __post_init__(self):
        expo = np.atleast_2d(np.asarray(self.exponents))
        if expo.ndim != 2:
            raise ValueError("exponents must be a (q, n) table")
        if not np.issubdtype(expo.dtype, np.integer):
            as_int = expo.astype(np.int64)
            if not np.array_equal(as_int, expo):
                raise ValueError("exponents must be nonnegative integers")
            expo = as_int
        if (expo < 0).any():
            raise ValueError("exponents must be nonnegative integers")
        seen = set()
        for row in expo:
            key = tuple(int(v) for v in row)
            if key in seen:
                raise ValueError(f"duplicate exponent row {key}")
            seen.add(key)
        n = expo.shape[1]
        for d in range(n):
            unit = tuple(1 if i == d else 0 for i in range(n))
            if unit not in seen:
                raise ValueError(
                    f"exponent table must embed the identity map; missing unit row {unit}"
                )
        self.exponents = expo.astype(np.int64)

    @property
    def state_dim(self) -> int:
        return self.exponents.shape[1]

    @property
    def dim(self) -> int:
        return self.exponents.shape[0]


Basis = ThinPlateRbf | Monomial


def make_thin_plate_basis(
    num_centers: int,
    domain_box: np.ndarray,
    seed: int,
    append_state: bool = False,
) -> ThinPlateRbf:
    """Draw ``num_centers`` centers uniformly from the box [lo, hi] per axis."""
    box = np.asarray(domain_box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("domain_box must be an (n, 2) array of [lo, hi] rows")
    if (box[:, 0] > box[:, 1]).any():
        raise ValueError("domain_box rows must satisfy lo <= hi")
    if num_centers < 1:
        raise ValueError("num_centers must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(box[:, 0], box[:, 1], size=(num_centers, box.shape[0]))
    return ThinPlateRbf(centers=centers, append_state=append_state, seed=seed, domain_box=box)


def make_monomial_basis(exponents) -> Monomial:
    return Monomial(exponents=np.asarray(exponents))


def vdp_monomial_basis() -> Monomial:
    """Nine-feature cubic dictionary used for the oscillator studies."""
    return make_monomial_basis(
        [
            [1, 0],
            [0, 1],
            [1, 1],
            [2, 0],
            [0, 2],
            [2, 1],
            [1, 2],
            [3, 0],
            [0, 3],
        ]
    )


def lift_batch(basis: Basis, X: np.ndarray) -> np.ndarray:
    """Lift a batch of states.

    Parameters
    ----------
    X : (M, n) array of physical states.

    Returns
    -------
    (M, q) array of lifted coordinates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != basis.state_dim:
        raise ValueError(f"expected states of dimension {basis.state_dim}, got {X.shape[1]}")
    if isinstance(basis, ThinPlateRbf):
        if _kernels.NUMBA_ENABLED:
            feats = _kernels.thin_plate_features_loop(X, basis.centers)
        else:
            feats = _kernels.thin_plate_features_numpy(X, basis.centers)
        if basis.append_state:
            feats = np.hstack([X, feats])
        return feats
    if isinstance(basis, Monomial):
        if _kernels.NUMBA_ENABLED:
            return _kernels.monomial_features_loop(X, basis.exponents)
        return _kernels.monomial_features_numpy(X, basis.exponents)
    raise TypeError(f"unknown basis type {type(basis)!r}")


def lift_state(basis: Basis, x: np.ndarray) -> np.ndarray:
    """Lift a single state vector to a (q,) array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single state vector")
    return lift_batch(basis, x[None, :])[0]
