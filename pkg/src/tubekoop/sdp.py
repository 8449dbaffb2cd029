"""First-order operator-splitting solver for small LMI problems.

Solves   minimize c' x   subject to   M_j(x) = F0_j + sum_i x_i F_ij  PSD
by ADMM: a least-squares step couples the blocks, each block is projected
onto the PSD cone by eigendecomposition, and scaled dual matrices close the
loop. Suited to the small dense problems produced by gain synthesis (tens of
variables, blocks a few tens wide); convergence is monitored through primal
and dual residuals with a stall detector so infeasible problems surface as
"stalled" rather than spinning forever.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


@dataclass
class LmiBlock:
    """Affine matrix map x -> F0 + sum_i x_i F_i, stored vectorized.

    ``basis`` has shape (k*k, nvar); column i is vec(F_i).
    """

    F0: np.ndarray
    basis: np.ndarray

    @property
    def size(self) -> int:
        return self.F0.shape[0]


def block_from_builder(builder, nvar: int) -> LmiBlock:
    """Extract an LmiBlock from an affine builder M(x) by probing unit vectors."""
    F0 = np.asarray(builder(np.zeros(nvar)), dtype=float)
    k = F0.shape[0]
    cols = np.empty((k * k, nvar))
    e = np.zeros(nvar)
    for i in range(nvar):
        e[i] = 1.0
        cols[:, i] = (np.asarray(builder(e), dtype=float) - F0).ravel()
        e[i] = 0.0
    return LmiBlock(F0=F0, basis=cols)


@dataclass
class SdpResult:
    x: np.ndarray
    status: str  # "optimal" | "stalled" | "max_iter"
    iterations: int
    primal_residual: float
    dual_residual: float


def _psd_project(V: np.ndarray) -> np.ndarray:
    V = 0.5 * (V + V.T)
    w, Q = np.linalg.eigh(V)
    w = np.clip(w, 0.0, None)
    return (Q * w) @ Q.T


def solve_sdp(
    c: np.ndarray,
    blocks: list[LmiBlock],
    *,
    rho: float = 1.0,
    alpha: float = 1.6,
    tol: float = 1e-8,
    max_iter: int = 30000,
    stall_window: int = 4000,
    stall_factor: float = 0.998,
    x0: np.ndarray | None = None,
) -> SdpResult:
    """Run the splitting iteration; see module docstring.

    Basis columns are equilibrated to unit norm internally (results are
    reported in the caller's coordinates). The penalty is rebalanced every
    100 iterations from the primal/dual residual ratio (scaled duals
    rescaled accordingly). Stall status is declared when neither the best
    primal residual nor the objective improves over ``stall_window``
    iterations, which is the practical signature of an infeasible
    constraint set for this method.
    """
    c = np.asarray(c, dtype=float).ravel()
    nvar = c.size
    if not blocks:
        raise ValueError("at least one LMI block is required")
    for blk in blocks:
        if blk.basis.shape != (blk.F0.size, nvar):
            raise ValueError("block basis shape mismatch")

    # column equilibration: variables whose basis columns carry very
    # different weight (a shared margin scalar vs single matrix entries)
    # otherwise make the splitting step badly scaled
    col_norm = np.sqrt(sum((blk.basis**2).sum(axis=0) for blk in blocks))
    scale = np.where(col_norm > 1e-12, col_norm, 1.0)
    blocks = [LmiBlock(F0=blk.F0, basis=blk.basis / scale) for blk in blocks]
    c = c / scale

    # normal matrix of the coupled least-squares step
    Hn = sum(blk.basis.T @ blk.basis for blk in blocks)
    Hn = Hn + 1e-12 * np.eye(nvar)
    cho = sla.cho_factor(Hn)

    if x0 is None:
        x = np.zeros(nvar)
        Z = [_psd_project(blk.F0) for blk in blocks]
    else:
        x = np.asarray(x0, dtype=float).ravel() * scale
        if x.size != nvar:
            raise ValueError("warm start length mismatch")
        Z = [
            _psd_project(blk.F0 + (blk.basis @ x).reshape(blk.F0.shape))
            for blk in blocks
        ]
    U = [np.zeros_like(blk.F0) for blk in blocks]

    best_pri = np.inf
    best_obj = np.inf
    best_x = x.copy()
    best_obj_x = None
    has_objective = bool(np.any(c != 0.0))
    last_improve = 0
    status = "max_iter"
    iters = max_iter
    pri = dua = np.inf

    for k in range(1, max_iter + 1):
        rhs = -c / rho
        for blk, Zj, Uj in zip(blocks, Z, U):
            rhs = rhs + blk.basis.T @ (Zj - Uj - blk.F0).ravel()
        x = sla.cho_solve(cho, rhs)

        pri_num = 0.0
        pri_den = 1.0
        dz_acc = np.zeros(nvar)
        for j, blk in enumerate(blocks):
            M = blk.F0 + (blk.basis @ x).reshape(blk.F0.shape)
            M_rel = alpha * M + (1.0 - alpha) * Z[j]
            Z_old = Z[j]
            Z[j] = _psd_project(M_rel + U[j])
            U[j] = U[j] + M_rel - Z[j]
            pri_num = max(pri_num, np.linalg.norm(M - Z[j]))
            pri_den = max(pri_den, np.linalg.norm(M), np.linalg.norm(Z[j]))
            dz_acc += blk.basis.T @ (Z[j] - Z_old).ravel()

        pri = pri_num / pri_den
        dua = rho * np.linalg.norm(dz_acc) / (1.0 + np.linalg.norm(c))

        improved = False
        if pri < best_pri * stall_factor:
            best_pri = pri
            best_x = x.copy()
            improved = True
        # an objective still on the move is progress even when the primal
        # residual has flattened (typical of margin-maximization runs); the
        # feasibility gate keeps transients during penalty rescaling from
        # poisoning the record with a deceptively good infeasible iterate
        if has_objective and pri <= 10.0 * max(best_pri, tol):
            obj = float(c @ x)
            if not np.isfinite(best_obj) or obj < best_obj - 1e-10 * (1.0 + abs(best_obj)):
                best_obj = obj
                best_obj_x = x.copy()
                improved = True
        if improved:
            last_improve = k

        if pri <= tol and dua <= tol:
            status = "optimal"
            iters = k
            break
        if k - last_improve >= stall_window and best_pri > 100.0 * tol:
            status = "stalled"
            iters = k
            break

        if k % 100 == 0 and np.isfinite(pri) and np.isfinite(dua) and dua > 0:
            ratio = np.sqrt(pri / max(dua, 1e-14))
            if ratio > 5.0 or ratio < 0.2:
                factor = float(np.clip(ratio, 0.1, 10.0))
                rho = float(np.clip(rho * factor, 1e-6, 1e6))
                for Uj in U:
                    Uj /= factor

    if status != "optimal":
        x = best_obj_x if best_obj_x is not None else best_x
    return SdpResult(
        x=x / scale, status=status, iterations=iters, primal_residual=pri, dual_residual=dua
    )
