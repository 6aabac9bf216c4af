"""Principal eigenpair of the discretized operator and HJB policy iteration.

The assembled matrix A has nonnegative off-diagonal entries, so sI - A is a
nonsingular M-matrix for any shift s strictly above every row sum and inverse
power iteration on (sI - A)^{-1} converges to the (simple, positive) principal
eigenvector.  lambda is recovered from the Rayleigh-free update
lambda = s - 1/rho with rho the growth factor at the normalization node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import Grid, OperatorMatrix, Policy, assemble, diffusion_apply, drift_cost_apply
from .errors import ConvergenceError, InvariantError
from .model import Model

DEFAULT_EIGEN_TOL = 1e-10
DEFAULT_PI_TOL = 1e-12
MAX_POLICY_SWEEPS = 100


@dataclass
class EigenPair:
    """Principal eigenvalue with its positive eigenfunction (origin-normalized)."""

    eigenvalue: float
    v: np.ndarray
    residual: float
    iterations: int

    def to_json_dict(self, grid: Grid) -> dict:
        return {
            "lambda": float(self.eigenvalue),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "grid": {"r": grid.radius, "h": grid.spacing, "dim": grid.dim},
            "v": [float(x) for x in self.v],
        }


def _resolvent(mat: sp.csr_matrix, dim: int):
    """Return a solver for (shifted) linear systems: direct in 1-D, ILU+BiCGStab in 2-D."""
    if dim == 1:
        lu = spla.splu(mat.tocsc())
        return lambda rhs, x0: lu.solve(rhs)

    ilu = spla.spilu(mat.tocsc(), drop_tol=1e-5, fill_factor=20)
    prec = spla.LinearOperator(mat.shape, ilu.solve)

    def solve(rhs, x0):
        out, info = spla.bicgstab(mat, rhs, x0=x0, rtol=1e-12, atol=0.0, M=prec, maxiter=2000)
        if info != 0:
            # fall back to an exact factorization rather than iterate on garbage
            return spla.splu(mat.tocsc()).solve(rhs)
        return out

    return solve


def principal_eigenpair(
    op: OperatorMatrix, tol: float = DEFAULT_EIGEN_TOL, max_iter: int = 100_000
) -> EigenPair:
    """Inverse power iteration for the principal (largest-real) eigenvalue.

    Convergence is declared on the pointwise relative defect
    max_i |(A v - lambda v)_i| / v_i <= tol, which is stronger than the
    sup-norm residual reported back.
    """
    A = op.entries
    n = A.shape[0]
    if n == 1:
        lam = float(A[0, 0])
        return EigenPair(lam, np.ones(1), 0.0, 0)

    if op.off_diagonal_min() < 0:
        raise InvariantError("operator lost its nonnegative off-diagonal structure")

    row_sums = np.asarray(A.sum(axis=1)).ravel()
    s = 1.0 + float(row_sums.max())
    shifted = (sp.eye(n, format="csr") * s - A).tocsr()
    solve = _resolvent(shifted, op.grid.dim)

    # rounding in A@v scales with the row magnitude (~ 2 a / h^2), so a defect
    # below eps * row_scale is unreachable; relax the target to that floor
    row_scale = float(np.max(np.abs(A).sum(axis=1)))
    eff_tol = max(tol, 4.0 * np.finfo(float).eps * row_scale)

    anchor = op.grid.origin_index
    v = np.ones(n)
    lam = float("nan")
    residual = float("inf")
    for it in range(1, max_iter + 1):
        w = solve(v, v)
        if not np.all(np.isfinite(w)) or np.min(w) <= 0.0:
            raise InvariantError(
                "inverse power iterate lost positivity; the shifted matrix is "
                "not acting as an inverse M-matrix",
                payload={"iteration": it, "min_entry": float(np.min(w))},
            )
        rho = w[anchor]
        v = w / rho
        lam = s - 1.0 / rho
        defect = A @ v - lam * v
        pointwise = float(np.max(np.abs(defect) / v))
        residual = float(np.max(np.abs(defect)) / np.max(v))
        if pointwise <= eff_tol:
            return EigenPair(lam, v, residual, it)

    raise ConvergenceError(
        f"eigensolve did not reach tol={tol:g} in {max_iter} iterations",
        payload={"eigenpair": EigenPair(lam, v, residual, max_iter)},
    )


@dataclass
class HjbSolution:
    eigenpair: EigenPair
    policy: Policy
    policy_sweeps: int
    lambda_history: list[float] = field(default_factory=list)

    def to_json_dict(self, grid: Grid) -> dict:
        out = self.eigenpair.to_json_dict(grid)
        out["policy"] = [int(i) for i in self.policy.indices]
        return out


def _improve_policy(model: Model, grid: Grid, v: np.ndarray, scheme: str) -> Policy:
    """Pointwise argmin of the Hamiltonian over the action set (ties -> lowest index)."""
    best_vals = drift_cost_apply(model, grid, v, model.actions[0], scheme)
    best_idx = np.zeros(grid.n, dtype=np.int64)
    for ai in range(1, model.actions.size):
        vals = drift_cost_apply(model, grid, v, model.actions[ai], scheme)
        better = vals < best_vals
        best_vals = np.where(better, vals, best_vals)
        best_idx[better] = ai
    return Policy(indices=best_idx)


def solve_hjb_dirichlet(
    model: Model,
    grid: Grid,
    tol: float = DEFAULT_PI_TOL,
    max_sweeps: int = MAX_POLICY_SWEEPS,
    eigen_tol: float = DEFAULT_EIGEN_TOL,
    scheme: str = "hybrid",
) -> HjbSolution:
    """Policy iteration on the Dirichlet eigenproblem.

    Each sweep solves the linear eigenproblem under the frozen policy and then
    improves the policy pointwise; the eigenvalue is nonincreasing along
    sweeps, and iteration stops once the policy is stationary or the
    eigenvalue moves by less than ``tol``.
    """
    policy = Policy.uniform(grid)
    history: list[float] = []
    prev_policy = policy
    for sweep in range(1, max_sweeps + 1):
        op = assemble(model, grid, policy, scheme)
        pair = principal_eigenpair(op, eigen_tol)
        history.append(pair.eigenvalue)
        if not model.controlled:
            return HjbSolution(pair, policy, sweep, history)
        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol:
            return HjbSolution(pair, policy, sweep, history)
        improved = _improve_policy(model, grid, pair.v, scheme)
        if np.array_equal(improved.indices, policy.indices):
            return HjbSolution(pair, policy, sweep, history)
        prev_policy, policy = policy, improved

    raise ConvergenceError(
        f"policy iteration still oscillating after {max_sweeps} sweeps",
        payload={
            "lambda_history": history,
            "last_policies": (prev_policy.indices, policy.indices),
        },
    )


def hjb_residual(
    model: Model, grid: Grid, v: np.ndarray, lam: float, scheme: str = "hybrid"
) -> float:
    """max_i |(L v + min_u [b_u . grad + c_u] v - lambda v)_i| / v_i on the grid."""
    v = np.asarray(v, dtype=float)
    if np.min(v) <= 0:
        raise ValueError("HJB residual needs a strictly positive eigenfunction")
    diff = diffusion_apply(model, grid, v)
    best = drift_cost_apply(model, grid, v, model.actions[0], scheme)
    for ai in range(1, model.actions.size):
        best = np.minimum(best, drift_cost_apply(model, grid, v, model.actions[ai], scheme))
    return float(np.max(np.abs(diff + best - lam * v) / v))
