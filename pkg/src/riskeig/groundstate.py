"""Ground-state transform of the principal eigenfunction and its diagnostics.

psi = log of the eigenfunction turns the multiplicative eigenproblem into an
additive one; the drift corrected by a grad(psi) drives the ground-state
("twisted") diffusion whose recurrence properties are what the certificates
and simulation checks below interrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .discretize import Grid, Policy, _policy_coefficients, assemble, assemble_fields
from .eigensolve import DEFAULT_EIGEN_TOL, EigenPair, principal_eigenpair
from .errors import InvariantError
from .model import Model
from .montecarlo import SimConfig, _resolve_cost, _resolve_drift, _sigma_action, interp_field, run_paths

CLASSIFICATIONS = (
    "recurrent-certified",
    "geometric-certified",
    "transient-suspected",
    "inconclusive",
)


@dataclass
class GroundState:
    grid: Grid
    psi: np.ndarray
    grad_psi: np.ndarray       # (n, dim)
    drift: np.ndarray          # twisted drift at nodes, (n, dim)
    policy: Policy
    classification: str = "inconclusive"

    def __setattr__(self, name, value):
        # the token is re-assigned after simulation evidence arrives, so the
        # vocabulary check has to live on assignment, not just construction
        if name == "classification" and value not in CLASSIFICATIONS:
            raise ValueError(f"unknown classification {value!r}")
        super().__setattr__(name, value)


def field_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Nodewise gradient: central differences inside, one-sided at the walls."""
    values = np.asarray(values, dtype=float)
    h = grid.spacing
    if grid.dim == 1:
        return np.gradient(values, h)[:, None]
    m = grid.axis.size
    arr = values.reshape(m, m)
    gx = np.gradient(arr, h, axis=0)
    gy = np.gradient(arr, h, axis=1)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def log_transform(eigenpair: EigenPair, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """psi = log v and its gradient field."""
    v = np.asarray(eigenpair.v, dtype=float)
    if np.min(v) <= 0:
        raise InvariantError("eigenfunction must be strictly positive for the log transform")
    psi = np.log(v)
    return psi, field_gradient(grid, psi)


def twisted_drift(model: Model, grid: Grid, policy: Policy, grad_psi: np.ndarray) -> np.ndarray:
    """Ground-state drift b(x, v(x)) + a(x) grad_psi(x) at every node."""
    b, _, a = _policy_coefficients(model, grid, policy, signed_cost=True)
    return b + np.einsum("nde,ne->nd", a, np.asarray(grad_psi, dtype=float))


def ground_state(model: Model, grid: Grid, eigenpair: EigenPair, policy: Policy | None = None) -> GroundState:
    policy = policy if policy is not None else Policy.uniform(grid)
    psi, grad = log_transform(eigenpair, grid)
    return GroundState(
        grid=grid,
        psi=psi,
        grad_psi=grad,
        drift=twisted_drift(model, grid, policy, grad),
        policy=policy,
    )


@dataclass
class CertificateReport:
    classification: str
    delta_hat: float
    lambda_base: float
    lambda_bumped: float
    gamma: float
    r_cut: float
    noise_floor: float
    drift_check_max: float
    checked_nodes: int
    lyapunov: np.ndarray = field(repr=False, default=None)

    def to_json_dict(self) -> dict:
        return {
            "classification": self.classification,
            "delta_hat": self.delta_hat,
            "lambda_base": self.lambda_base,
            "lambda_bumped": self.lambda_bumped,
            "gamma": self.gamma,
            "r_cut": self.r_cut,
            "noise_floor": self.noise_floor,
            "drift_check_max": self.drift_check_max,
            "checked_nodes": self.checked_nodes,
        }


def ergodicity_certificate(
    model: Model,
    grid: Grid,
    lam: float,
    psi: np.ndarray,
    gamma: float,
    r_cut: float,
    policy: Policy | None = None,
    saturation_gap: float = 0.0,
    scheme: str = "hybrid",
    eigen_tol: float = DEFAULT_EIGEN_TOL,
) -> CertificateReport:
    """Foster-Lyapunov certificate for the twisted diffusion.

    Dropping the potential by gamma inside the ball of radius r_cut lowers
    the principal eigenvalue by delta_hat; the eigenfunction ratio
    V = (bumped)/(base) then satisfies a drift inequality for the twisted
    generator, verified nodewise outside the ball with margin delta_hat/2.
    delta_hat below three saturation gaps is treated as discretization noise
    and the certificate abstains.  Transience is never certified here.
    """
    if not gamma > 0:
        raise ValueError(f"bump size gamma must be positive, got {gamma}")
    policy = policy if policy is not None else Policy.uniform(grid)
    psi = np.asarray(psi, dtype=float)
    v = np.exp(psi)

    radii = np.linalg.norm(grid.nodes, axis=1)
    inside = radii <= r_cut

    def bumped_cost(x, u):
        pts = model.points(x)
        ind = (np.linalg.norm(pts, axis=1) <= r_cut).astype(float)
        return model.cost(x, u) - gamma * ind

    bumped = model.with_cost(bumped_cost, label=model.label + "-bumped")
    op = assemble(bumped, grid, policy, scheme, signed_cost=True)
    pair = principal_eigenpair(op, eigen_tol)
    delta_hat = lam - pair.eigenvalue

    lyap = pair.v / v

    b, _, a = _policy_coefficients(model, grid, policy, signed_cost=True)
    tw_drift = b + np.einsum("nde,ne->nd", a, field_gradient(grid, psi))
    op_tw = assemble_fields(grid, tw_drift, np.zeros(grid.n), a, scheme=scheme)

    # margin check L* V <= -(delta_hat/2) V strictly outside the bump ball;
    # skip the outermost ring, where the Dirichlet wall distorts the stencil
    check = grid.interior_mask(1) & ~inside
    resid = (op_tw.entries @ lyap + 0.5 * delta_hat * lyap) / lyap
    drift_check_max = float(np.max(resid[check])) if check.any() else math.inf

    noise_floor = 3.0 * (saturation_gap if math.isfinite(saturation_gap) else 0.0)
    certified = delta_hat > noise_floor and drift_check_max <= 1e-9
    return CertificateReport(
        classification="geometric-certified" if certified else "inconclusive",
        delta_hat=float(delta_hat),
        lambda_base=float(lam),
        lambda_bumped=float(pair.eigenvalue),
        gamma=float(gamma),
        r_cut=float(r_cut),
        noise_floor=float(noise_floor),
        drift_check_max=drift_check_max,
        checked_nodes=int(check.sum()),
        lyapunov=lyap,
    )


def classify(certificate: CertificateReport, exit_check=None, probe=None) -> str:
    """Combine PDE and simulation evidence into one classification token.

    The certificate alone can certify geometric ergodicity; a passing exit
    representation certifies plain recurrence; a failed strict-monotonicity
    probe downgrades to transient-suspected.  Anything else stays
    inconclusive.
    """
    if certificate.classification == "geometric-certified":
        return "geometric-certified"
    if exit_check is not None:
        if abs(exit_check.value - 1.0) <= 3.0 * exit_check.stderr and exit_check.truncated_fraction < 0.01:
            return "recurrent-certified"
    if probe is not None and not probe.strict:
        return "transient-suspected"
    return "inconclusive"


@dataclass
class IdentityReport:
    mu_f: float
    half_mu_G: float
    total: float
    lam: float
    abs_gap: float
    stderr: float
    stderr_f: float
    stderr_G: float
    paths_used: int
    truncated_fraction: float
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mu_f": self.mu_f,
            "half_mu_G": self.half_mu_G,
            "sum": self.total,
            "lambda": self.lam,
            "abs_gap": self.abs_gap,
            "stderr": self.stderr,
            "stderr_f": self.stderr_f,
            "stderr_G": self.stderr_G,
            "paths_used": self.paths_used,
            "truncated_fraction": self.truncated_fraction,
            "warnings": list(self.warnings),
        }


def ergodic_identity(
    model: Model,
    grid: Grid,
    lam: float,
    psi: np.ndarray,
    cfg: SimConfig,
    policy: Policy | None = None,
    x0=None,
    warm_fraction: float = 0.1,
    threads: int = 1,
) -> IdentityReport:
    """Occupation check of half mu(|sigma^T grad psi|^2) + mu(f) = lambda.

    mu is sampled by time-averaging the base (untwisted) diffusion under the
    frozen policy; G = <grad psi, a grad psi> is interpolated from the grid.
    Paths leaving the grid window are dropped from the averages and flagged.
    """
    psi = np.asarray(psi, dtype=float)
    grad = field_gradient(grid, psi)
    _, _, a = _policy_coefficients(
        model, grid, policy if policy is not None else Policy.uniform(grid), signed_cost=True
    )
    g_nodes = np.einsum("nd,nde,ne->n", grad, a, grad)

    spec = (grid, policy) if (policy is not None and model.controlled) else None
    drift_fn = _resolve_drift(model, spec)
    cost_fn = _resolve_cost(model, spec)
    g_fn = lambda pts: interp_field(grid, g_nodes, pts)

    # clamp the window to the grid so the interpolants never extrapolate
    cfg_run = replace(cfg, kill_radius=min(cfg.kill_radius, grid.radius))
    warm_step = max(1, int(round(cfg_run.n_steps * warm_fraction)))
    x = np.zeros(model.dim) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    batch = run_paths(
        drift_fn, _sigma_action(model), x, cfg_run, model.dim,
        integrands=(cost_fn, g_fn), snapshot_steps=(warm_step,), threads=threads,
    )

    keep = ~batch.truncated
    n_used = int(keep.sum())
    warnings_out: list[str] = []
    trunc_frac = 1.0 - n_used / cfg_run.paths
    if trunc_frac > 0:
        warnings_out.append(
            f"{trunc_frac:.2%} of paths left the grid window and were dropped"
        )
    if n_used == 0:
        raise InvariantError("all paths escaped the grid window")

    span = (cfg_run.n_steps - warm_step) * cfg_run.dt
    warm = batch.snapshots[warm_step]["integrals"]
    avg_f = (batch.integrals[0][keep] - warm[0][keep]) / span
    avg_g = (batch.integrals[1][keep] - warm[1][keep]) / span

    mu_f = float(np.mean(avg_f))
    half_g = 0.5 * float(np.mean(avg_g))
    combined = avg_f + 0.5 * avg_g
    se = float(np.std(combined, ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.inf
    se_f = float(np.std(avg_f, ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.inf
    se_g = float(np.std(0.5 * avg_g, ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.inf
    total = mu_f + half_g
    return IdentityReport(
        mu_f=mu_f,
        half_mu_G=half_g,
        total=total,
        lam=float(lam),
        abs_gap=abs(total - lam),
        stderr=se,
        stderr_f=se_f,
        stderr_G=se_g,
        paths_used=n_used,
        truncated_fraction=trunc_frac,
        warnings=warnings_out,
    )


def write_field_csv(path, grid: Grid, columns: dict[str, np.ndarray]):
    """Node coordinates plus named fields, one row per node (plot-ready)."""
    names: list[str] = [f"x{d + 1}" for d in range(grid.dim)]
    cols: list[np.ndarray] = [grid.nodes[:, d] for d in range(grid.dim)]
    for name, values in columns.items():
        values = np.asarray(values)
        if values.ndim == 1:
            names.append(name)
            cols.append(values)
        else:
            for d in range(values.shape[1]):
                names.append(f"{name}_{d + 1}")
                cols.append(values[:, d])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(grid.n):
            fh.write(",".join(f"{c[i]:.17g}" for c in cols) + "\n")
