"""Euler-Maruyama path ensembles and the statistical checks built on them.

Every estimator here shares one marching kernel.  Paths get their own
counter-based RNG stream spawned from (seed, path index), so an ensemble is
reproducible bitwise regardless of chunking or thread count; reductions
happen after the march, in fixed path order.

Exponential functionals are handled on the log scale throughout (logsumexp),
since path integrals of the running cost routinely reach hundreds of natural
log units.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .continuation import SweepResult, sweep
from .discretize import Grid, Policy
from .errors import EstimatorUndefinedError, UnreliableEstimateError
from .model import Model

DEFAULT_BATCHES = 32
CHUNK_PATHS = 2048
BLOCK_STEPS = 1024


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 50.0
    paths: int = 10_000
    seed: int = 12345
    kill_radius: float = 16.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.dt < self.horizon:
            raise ValueError(f"dt={self.dt} must be smaller than horizon={self.horizon}")
        if self.paths < 1:
            raise ValueError("need at least one path")
        if not self.kill_radius > 0:
            raise ValueError("kill_radius must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class FkEstimate:
    value: float
    stderr: float
    paths_used: int
    truncated_fraction: float

    def __post_init__(self):
        if self.stderr < 0 or not 0.0 <= self.truncated_fraction <= 1.0:
            raise ValueError("malformed estimate")

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "paths_used": self.paths_used,
            "truncated_fraction": self.truncated_fraction,
        }


@dataclass
class PathBatch:
    """March output: terminal states plus whatever was accumulated on the way."""

    cfg: SimConfig
    final: np.ndarray                   # (paths, dim)
    truncated: np.ndarray               # crossed kill_radius
    absorbed: np.ndarray                # met the absorb predicate
    exit_step: np.ndarray               # step of absorption/truncation, -1 if neither
    integrals: list[np.ndarray]
    snapshots: dict[int, dict]          # step -> {truncated, absorbed, integrals}
    samples: np.ndarray | None = None   # (paths, n_samples, dim)

    @property
    def exit_times(self) -> np.ndarray:
        return np.where(self.exit_step >= 0, self.exit_step * self.cfg.dt, np.inf)


def _as_state(x0, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (dim,):
        raise ValueError(f"x0 has shape {x.shape}, model dimension is {dim}")
    return x


def _sigma_action(model: Model):
    """Return a callable applying sigma to a noise block, (k,dim)->(k,dim)."""
    probe = model.diffusion(np.zeros((1, model.dim)))
    sig = np.asarray(probe, dtype=float)
    if sig.shape == (model.dim, model.dim):
        sig_t = sig.T.copy()
        return lambda x, xi: xi @ sig_t
    # state-dependent sigma
    def apply(x, xi):
        s = np.asarray(model.diffusion(x), dtype=float)
        return np.einsum("kij,kj->ki", s, xi)

    return apply


def interp_field(grid: Grid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid fields at arbitrary points.

    Points are clamped to the grid box, so queries just outside the domain
    return the boundary value instead of extrapolating.
    """
    values = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1, grid.dim)
    if values.ndim == 2:
        return np.stack([interp_field(grid, values[:, d], x) for d in range(values.shape[1])], axis=1)
    ax = grid.axis
    h = grid.spacing
    xc = np.clip(x, ax[0], ax[-1])
    if grid.dim == 1:
        return np.interp(xc[:, 0], ax, values)
    m = ax.size
    fx = (xc[:, 0] - ax[0]) / h
    fy = (xc[:, 1] - ax[0]) / h
    ix = np.clip(fx.astype(np.int64), 0, m - 2)
    iy = np.clip(fy.astype(np.int64), 0, m - 2)
    tx = fx - ix
    ty = fy - iy
    vals = values.reshape(m, m)
    v00 = vals[ix, iy]
    v10 = vals[ix + 1, iy]
    v01 = vals[ix, iy + 1]
    v11 = vals[ix + 1, iy + 1]
    return (
        v00 * (1 - tx) * (1 - ty)
        + v10 * tx * (1 - ty)
        + v01 * (1 - tx) * ty
        + v11 * tx * ty
    )


def _nearest_node(grid: Grid, x: np.ndarray) -> np.ndarray:
    ax = grid.axis
    m = ax.size
    idx = np.clip(np.rint((x - ax[0]) / grid.spacing).astype(np.int64), 0, m - 1)
    if grid.dim == 1:
        return idx[:, 0]
    return idx[:, 0] * m + idx[:, 1]


def _resolve_drift(model: Model, spec):
    """Turn the drift_field_or_policy argument into a plain (k,dim)->(k,dim) callable."""
    if spec is None:
        u0 = model.actions[0]
        return lambda x: model.drift_at(x, u0)
    if callable(spec):
        return lambda x: np.asarray(spec(x), dtype=float).reshape(len(x), model.dim)
    grid, payload = spec
    if isinstance(payload, Policy):
        node_action = model.actions[np.asarray(payload.indices)]

        def from_policy(x):
            u = node_action[_nearest_node(grid, x)]
            out = np.empty((len(x), model.dim))
            for uv in np.unique(u):
                mask = u == uv
                out[mask] = model.drift_at(x[mask], uv)
            return out

        return from_policy
    values = np.asarray(payload, dtype=float)
    return lambda x: interp_field(grid, values, x).reshape(len(x), model.dim)


def _resolve_cost(model: Model, spec):
    """Running cost along the path under the same action selection as the drift."""
    if spec is None or callable(spec) or not isinstance(spec[1], Policy):
        u0 = model.actions[0]
        return lambda x: model.cost_at(x, u0)
    grid, policy = spec
    node_action = model.actions[np.asarray(policy.indices)]

    def from_policy(x):
        u = node_action[_nearest_node(grid, x)]
        out = np.empty(len(x))
        for uv in np.unique(u):
            mask = u == uv
            out[mask] = model.cost_at(x[mask], uv)
        return out

    return from_policy


def run_paths(
    drift_fn,
    sigma_apply,
    x0: np.ndarray,
    cfg: SimConfig,
    dim: int,
    integrands=(),
    absorb=None,
    snapshot_steps=(),
    sample_every: int = 0,
    threads: int = 1,
) -> PathBatch:
    """March all paths to the horizon (or their exit), chunk by chunk.

    Integrands are accumulated with left-endpoint quadrature while a path is
    live; absorption and truncation freeze the state and the accumulators.
    Snapshots record accumulator copies at fixed step counts.
    """
    n = cfg.paths
    n_steps = cfg.n_steps
    dt = cfg.dt
    sq_dt = math.sqrt(dt)
    snap_set = sorted(set(int(s) for s in snapshot_steps))
    n_samples = n_steps // sample_every if sample_every else 0

    final = np.tile(x0, (n, 1))
    truncated = np.zeros(n, dtype=bool)
    absorbed = np.zeros(n, dtype=bool)
    exit_step = np.full(n, -1, dtype=np.int64)
    integrals = [np.zeros(n) for _ in integrands]
    snapshots = {
        s: {
            "truncated": np.zeros(n, dtype=bool),
            "absorbed": np.zeros(n, dtype=bool),
            "integrals": [np.zeros(n) for _ in integrands],
        }
        for s in snap_set
    }
    samples = np.empty((n, n_samples, dim)) if n_samples else None

    def run_chunk(lo: int, hi: int):
        k = hi - lo
        gens = [
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(p,)))
            )
            for p in range(lo, hi)
        ]
        X = final[lo:hi]
        active = np.ones(k, dtype=bool)
        sample_idx = 0
        step = 0
        snap_iter = iter(snap_set)
        next_snap = next(snap_iter, None)

        def record_snaps_and_samples(upto_step):
            nonlocal next_snap, sample_idx
            while next_snap is not None and next_snap <= upto_step:
                snap = snapshots[next_snap]
                snap["truncated"][lo:hi] = truncated[lo:hi]
                snap["absorbed"][lo:hi] = absorbed[lo:hi]
                for dst, src in zip(snap["integrals"], integrals):
                    dst[lo:hi] = src[lo:hi]
                next_snap = next(snap_iter, None)
            if sample_every:
                while sample_idx < n_samples and (sample_idx + 1) * sample_every <= upto_step:
                    samples[lo:hi, sample_idx] = X
                    sample_idx += 1

        while step < n_steps:
            b = min(BLOCK_STEPS, n_steps - step)
            xi = np.empty((k, b, dim))
            for j, g in enumerate(gens):
                xi[j] = g.standard_normal((b, dim))
            for t in range(b):
                now = step + t + 1
                if active.any():
                    xa = X[active]
                    for acc, fn in zip(integrals, integrands):
                        acc[lo:hi][active] += fn(xa) * dt
                    xa = xa + drift_fn(xa) * dt + sigma_apply(xa, xi[active, t]) * sq_dt
                    X[active] = xa
                    live = np.flatnonzero(active)
                    out_now = np.linalg.norm(xa, axis=1) > cfg.kill_radius
                    if out_now.any():
                        died = live[out_now]
                        truncated[lo + died] = True
                        exit_step[lo + died] = now
                        active[died] = False
                    if absorb is not None:
                        still = live[~out_now]
                        if still.size:
                            hit = absorb(X[still])
                            if hit.any():
                                got = still[hit]
                                absorbed[lo + got] = True
                                exit_step[lo + got] = now
                                active[got] = False
                record_snaps_and_samples(now)
            step += b
            if not active.any():
                # frozen from here on: flush remaining checkpoints and stop
                record_snaps_and_samples(n_steps)
                break

    chunks = [(lo, min(lo + CHUNK_PATHS, n)) for lo in range(0, n, CHUNK_PATHS)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda c: run_chunk(*c), chunks))
    else:
        for c in chunks:
            run_chunk(*c)

    return PathBatch(
        cfg=cfg,
        final=final,
        truncated=truncated,
        absorbed=absorbed,
        exit_step=exit_step,
        integrals=integrals,
        snapshots=snapshots,
        samples=samples,
    )


def simulate(model: Model, drift_field_or_policy, x0, cfg: SimConfig, threads: int = 1) -> PathBatch:
    """Euler-Maruyama ensemble of the model's diffusion under the given drift."""
    x = _as_state(x0, model.dim)
    if np.linalg.norm(x) >= cfg.kill_radius:
        raise ValueError("x0 starts outside the kill radius")
    drift_fn = _resolve_drift(model, drift_field_or_policy)
    return run_paths(drift_fn, _sigma_action(model), x, cfg, model.dim, threads=threads)


def _batch_means_log(log_values: np.ndarray, scale: float, batches: int) -> float:
    """Stderr of a logsumexp-mean estimator by batch means on the log scale."""
    nb = min(batches, log_values.size)
    if nb < 2:
        return float("inf")
    splits = np.array_split(log_values, nb)
    vals = np.array([(logsumexp(s) - math.log(s.size)) / scale for s in splits])
    return float(np.std(vals, ddof=1) / math.sqrt(nb))


def fk_lambda(
    model: Model,
    policy,
    x0,
    cfg: SimConfig,
    threads: int = 1,
    batches: int = DEFAULT_BATCHES,
) -> FkEstimate:
    """Risk-sensitive growth rate (1/T) log E[exp of the path cost integral].

    The expectation is over surviving paths; truncated paths are excluded
    from the average and reported via truncated_fraction.
    """
    x = _as_state(x0, model.dim)
    min_c = min(float(model.cost_at(x[None, :], u)[0]) for u in model.actions)
    if cfg.horizon * min_c < 1.0:
        warnings.warn(
            f"horizon {cfg.horizon} x running cost {min_c:.3g} at x0 is below 1; "
            "the finite-horizon bias may dominate",
            stacklevel=2,
        )
    drift_fn = _resolve_drift(model, policy)
    cost_fn = _resolve_cost(model, policy)
    batch = run_paths(
        drift_fn, _sigma_action(model), x, cfg, model.dim,
        integrands=(cost_fn,), threads=threads,
    )
    keep = ~batch.truncated
    used = int(keep.sum())
    if used == 0:
        raise EstimatorUndefinedError("every path crossed the kill radius")
    ints = batch.integrals[0][keep]
    t_total = cfg.n_steps * cfg.dt
    value = (float(logsumexp(ints)) - math.log(used)) / t_total
    stderr = _batch_means_log(ints, t_total, batches)
    return FkEstimate(value, stderr, used, 1.0 - used / cfg.paths)


@dataclass(frozen=True)
class ExitEstimate:
    ratio: FkEstimate
    r: float
    x0: float | tuple


def exit_representation_check(
    model: Model,
    policy,
    grid: Grid,
    v: np.ndarray,
    lam: float,
    r: float,
    x0,
    cfg: SimConfig,
    threads: int = 1,
    batches: int = DEFAULT_BATCHES,
) -> FkEstimate:
    """Check E[exp(int_0^tau (f - lambda)) Psi(X_tau)] / Psi(x0) = 1.

    tau is the first entry into the closed ball of radius r; the eigenfunction
    is interpolated multilinearly from the grid.
    """
    x = _as_state(x0, model.dim)
    if np.linalg.norm(x) <= r:
        raise ValueError(f"x0 must start outside the ball of radius {r}")
    drift_fn = _resolve_drift(model, policy)
    cost_fn = _resolve_cost(model, policy)
    shifted = lambda pts: cost_fn(pts) - lam
    absorb = lambda pts: np.linalg.norm(pts, axis=1) <= r
    batch = run_paths(
        drift_fn, _sigma_action(model), x, cfg, model.dim,
        integrands=(shifted,), absorb=absorb, threads=threads,
    )
    frac_lost = 1.0 - float(batch.absorbed.sum()) / cfg.paths
    if frac_lost > 0.5:
        raise UnreliableEstimateError(
            f"{frac_lost:.1%} of paths never entered the ball; the exit "
            "representation cannot be estimated from this run",
            payload={"truncated_fraction": frac_lost},
        )
    got = batch.absorbed
    psi_exit = interp_field(grid, v, batch.final[got])
    psi_start = float(interp_field(grid, v, x[None, :])[0])
    log_terms = batch.integrals[0][got] + np.log(psi_exit) - math.log(psi_start)
    n_used = int(got.sum())
    ratio = math.exp(float(logsumexp(log_terms)) - math.log(n_used))
    # delta-method transfer of the log-scale batch spread to the ratio
    log_se = _batch_means_log(log_terms, 1.0, batches)
    return FkEstimate(ratio, ratio * log_se, n_used, frac_lost)


@dataclass
class ExitMomentReport:
    estimate: FkEstimate
    verdict: str
    schedule: list[tuple[float, float]]
    max_path_share: float

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_json_dict(),
            "verdict": self.verdict,
            "schedule": [[t, g] for t, g in self.schedule],
            "max_path_share": self.max_path_share,
        }


def exit_exponential_moment(
    model: Model,
    policy,
    lam: float,
    delta: float,
    r: float,
    x0,
    cfg: SimConfig,
    threads: int = 1,
    batches: int = DEFAULT_BATCHES,
    doublings: int = 4,
) -> ExitMomentReport:
    """Estimate E[exp(int_0^tau (f - lambda + delta))] and judge its finiteness.

    Statistical verdict, not a proof: the estimate is recomputed on a doubling
    horizon schedule; "finite-consistent" needs the schedule to stabilize, the
    truncated fraction to stay under 1%, and no single path to dominate the
    sum.  Everything else is "divergence-suspected".
    """
    # delta = 0 is the degenerate identity check E[exp(int (f - lambda))] = 1
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    x = _as_state(x0, model.dim)
    if np.linalg.norm(x) <= r:
        raise ValueError(f"x0 must start outside the ball of radius {r}")
    drift_fn = _resolve_drift(model, policy)
    cost_fn = _resolve_cost(model, policy)
    shifted = lambda pts: cost_fn(pts) - lam + delta
    absorb = lambda pts: np.linalg.norm(pts, axis=1) <= r
    batch = run_paths(
        drift_fn, _sigma_action(model), x, cfg, model.dim,
        integrands=(shifted,), absorb=absorb, threads=threads,
    )
    got = batch.absorbed
    n = cfg.paths
    frac_lost = 1.0 - float(got.sum()) / n
    if not got.any():
        raise EstimatorUndefinedError("no path entered the ball before the horizon")

    tau = batch.exit_times[got]
    log_w = batch.integrals[0][got]

    def log_estimate(t_cut: float) -> float:
        sel = tau <= t_cut
        if not sel.any():
            return -math.inf
        return float(logsumexp(log_w[sel])) - math.log(n)

    horizons = [cfg.horizon * 2.0 ** (k - doublings) for k in range(doublings + 1)]
    schedule = [(t, math.exp(min(log_estimate(t), 700.0))) for t in horizons]

    log_final = log_estimate(cfg.horizon)
    max_share = math.exp(float(np.max(log_w)) - float(logsumexp(log_w)))
    log_prev = log_estimate(cfg.horizon / 2.0)
    growth = log_final - log_prev if math.isfinite(log_prev) else math.inf
    rel_se = _batch_means_log(log_w, 1.0, batches)

    stabilized = growth <= max(0.05, 3.0 * rel_se)
    verdict = (
        "finite-consistent"
        if stabilized and frac_lost < 0.01 and max_share < 0.30
        else "divergence-suspected"
    )
    est = FkEstimate(math.exp(min(log_final, 700.0)), rel_se, int(got.sum()), frac_lost)
    return ExitMomentReport(est, verdict, schedule, max_share)


@dataclass
class GammaIntegralReport:
    values: list[tuple[float, float]]   # (t, g(t))
    verdict: str
    fitted_rate: float
    plateau: float
    truncated_fraction: float

    def to_json_dict(self) -> dict:
        return {
            "values": [[t, g] for t, g in self.values],
            "verdict": self.verdict,
            "fitted_rate": self.fitted_rate,
            "plateau": self.plateau,
            "truncated_fraction": self.truncated_fraction,
        }


def gamma_integral(
    model: Model,
    policy,
    lam: float,
    x0,
    cfg: SimConfig,
    threads: int = 1,
    batches: int = DEFAULT_BATCHES,
    doublings: int = 4,
    plateau_tol: float = 0.15,
) -> GammaIntegralReport:
    """Track g(t) = E[exp(int_0^t (f - lambda))] on a geometric t-schedule.

    A positive plateau means the time integral of g diverges
    ("divergent-consistent"); geometric decay of g means it converges
    ("convergent-suspected").  The plateau test compares log g at the last
    two horizons against max(plateau_tol, 3 stderr).
    """
    x = _as_state(x0, model.dim)
    drift_fn = _resolve_drift(model, policy)
    cost_fn = _resolve_cost(model, policy)
    shifted = lambda pts: cost_fn(pts) - lam
    snap_steps = [max(1, int(round(cfg.n_steps * 2.0 ** (k - doublings)))) for k in range(doublings + 1)]
    batch = run_paths(
        drift_fn, _sigma_action(model), x, cfg, model.dim,
        integrands=(shifted,), snapshot_steps=snap_steps, threads=threads,
    )

    points: list[tuple[float, float, float]] = []   # (t, log g, stderr of log g)
    for s in snap_steps:
        snap = batch.snapshots[s]
        alive = ~snap["truncated"]
        ints = snap["integrals"][0][alive]
        if ints.size == 0:
            points.append((s * cfg.dt, -math.inf, math.inf))
            continue
        log_g = float(logsumexp(ints)) - math.log(ints.size)
        points.append((s * cfg.dt, log_g, _batch_means_log(ints, 1.0, batches)))

    (t_prev, lg_prev, se_prev), (t_last, lg_last, se_last) = points[-2], points[-1]
    diff = lg_last - lg_prev
    band = max(plateau_tol, 3.0 * math.hypot(se_prev, se_last))
    verdict = "convergent-suspected" if diff < -band else "divergent-consistent"
    rate = -diff / (t_last - t_prev)
    plateau = math.exp(min(lg_last, 700.0))
    return GammaIntegralReport(
        values=[(t, math.exp(min(lg, 700.0))) for t, lg, _ in points],
        verdict=verdict,
        fitted_rate=float(rate),
        plateau=plateau,
        truncated_fraction=float(batch.snapshots[snap_steps[-1]]["truncated"].mean()),
    )


@dataclass(frozen=True)
class Bump:
    """Additive cost bump epsilon * indicator(box); None bounds mean everywhere."""

    epsilon: float
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("bump size must be nonnegative")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("box needs both bounds (or neither, for a global bump)")
        if self.lo is not None and not self.lo < self.hi:
            raise ValueError(f"empty bump box [{self.lo}, {self.hi}]")

    def indicator(self, x: np.ndarray) -> np.ndarray:
        if self.lo is None:
            return np.ones(len(x))
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        return inside.astype(float)


@dataclass
class ProbeReport:
    lambda_base: float
    lambda_bumped: float
    gap: float
    strict: bool
    threshold: float
    saturation_gap: float

    def to_json_dict(self) -> dict:
        return {
            "lambda_base": self.lambda_base,
            "lambda_bumped": self.lambda_bumped,
            "gap": self.gap,
            "strict": self.strict,
            "threshold": self.threshold,
            "saturation_gap": self.saturation_gap,
        }


def monotonicity_probe(model: Model, bump: Bump, radii, spacing, **sweep_kwargs) -> ProbeReport:
    """Strictness probe: does a small cost bump move the extrapolated eigenvalue?

    Reruns the radius continuation for the base and the bumped cost and calls
    the increase strict when it clears max(10 x saturation gap, 1e-6).
    """
    if bump.lo is not None and (bump.lo <= -min(radii) or bump.hi >= min(radii)):
        raise ValueError("bump box must sit strictly inside the smallest swept radius")

    base = sweep(model, radii, spacing, **sweep_kwargs)

    def bumped_cost(x, u):
        return model.cost(x, u) + bump.epsilon * bump.indicator(model.points(x))

    bumped_model = model.with_cost(bumped_cost, label=model.label + "+bump")
    bumped = sweep(bumped_model, radii, spacing, **sweep_kwargs)

    gap = bumped.lambda_star - base.lambda_star
    sat = base.saturation_gap if math.isfinite(base.saturation_gap) else 0.0
    threshold = max(10.0 * sat, 1e-6)
    return ProbeReport(
        lambda_base=base.lambda_star,
        lambda_bumped=bumped.lambda_star,
        gap=gap,
        strict=bool(gap > threshold),
        threshold=threshold,
        saturation_gap=sat,
    )


@dataclass
class MixingReport:
    rate: float
    fit_r2: float
    lags: list[tuple[float, float]]
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "rate": self.rate,
            "fit_r2": self.fit_r2,
            "lags": [[t, a] for t, a in self.lags],
            "warnings": list(self.warnings),
        }


def autocorrelation_decay(samples: np.ndarray, lag_dt: float, n_lags: int) -> MixingReport:
    """Pooled within-path autocorrelation and its log-linear decay fit.

    Correlation below the sampling noise floor at the first lag reports an
    infinite rate (white-noise branch).
    """
    samples = np.asarray(samples, dtype=float)
    n_paths, n_t = samples.shape
    n_lags = min(n_lags, n_t - 1)
    centered = samples - samples.mean()
    denom = float(np.sum(centered * centered))
    acf = np.empty(n_lags + 1)
    acf[0] = 1.0
    for k in range(1, n_lags + 1):
        acf[k] = float(np.sum(centered[:, :-k] * centered[:, k:])) / denom
    lags = [(k * lag_dt, float(acf[k])) for k in range(n_lags + 1)]

    floor = max(0.05, 3.0 / math.sqrt(n_paths * n_t))
    usable = [k for k in range(1, n_lags + 1) if acf[k] > floor]
    # demand a contiguous run from lag 1; a gap means we are already in noise
    run = []
    for k in range(1, n_lags + 1):
        if k in usable:
            run.append(k)
        else:
            break
    if len(run) < 2:
        return MixingReport(rate=math.inf, fit_r2=float("nan"), lags=lags)

    tau = np.array([k * lag_dt for k in run])
    log_acf = np.log(acf[run])
    slope, intercept = np.polyfit(tau, log_acf, 1)
    fitted = slope * tau + intercept
    ss_res = float(np.sum((log_acf - fitted) ** 2))
    ss_tot = float(np.sum((log_acf - log_acf.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return MixingReport(rate=float(-slope), fit_r2=r2, lags=lags)


def mixing_diagnostic(
    drift_field,
    cfg: SimConfig,
    sigma: np.ndarray | None = None,
    dim: int = 1,
    x0=None,
    lag_dt: float = 0.1,
    n_lags: int = 25,
    warm_fraction: float = 0.25,
    threads: int = 1,
) -> MixingReport:
    """Autocorrelation decay of x1 along the diffusion driven by a drift field.

    The drift field is (grid, values) or a callable; sigma defaults to the
    identity.  Samples before warm_fraction of the horizon are discarded, and
    a residual trend across the retained halves raises a warm-up warning.
    """
    if isinstance(drift_field, tuple):
        grid, values = drift_field
        dim = grid.dim
        drift_fn = lambda x: interp_field(grid, np.asarray(values, float), x).reshape(len(x), dim)
    else:
        drift_fn = lambda x: np.asarray(drift_field(x), dtype=float).reshape(len(x), dim)
    sig = np.eye(dim) if sigma is None else np.asarray(sigma, dtype=float)
    sig_t = sig.T.copy()
    sigma_apply = lambda x, xi: xi @ sig_t

    x = _as_state(0.0 if x0 is None else x0, dim)
    sample_every = max(1, int(round(lag_dt / cfg.dt)))
    batch = run_paths(
        drift_fn, sigma_apply, x, cfg, dim,
        sample_every=sample_every, threads=threads,
    )
    obs = batch.samples[:, :, 0]
    n_warm = int(obs.shape[1] * warm_fraction)
    kept = obs[:, n_warm:]

    report = autocorrelation_decay(kept, sample_every * cfg.dt, n_lags)

    half = kept.shape[1] // 2
    m1, m2 = kept[:, :half].mean(), kept[:, half:].mean()
    spread = kept.std() / math.sqrt(kept.shape[0])
    if abs(m1 - m2) > 3.0 * spread:
        report.warnings.append("warm-up-insufficient")
    return report


def write_trace_csv(path, times: np.ndarray, states: np.ndarray, row_cap: int = 200_000):
    """Dump sampled path states as long-form CSV (path, t, x1[, x2]), capped."""
    n_paths, n_t, dim = states.shape
    cols = ",".join(f"x{d + 1}" for d in range(dim))
    rows = 0
    with open(path, "w") as fh:
        fh.write(f"path,t,{cols}\n")
        for p in range(n_paths):
            for ti in range(n_t):
                if rows >= row_cap:
                    return
                vals = ",".join(f"{x:.17g}" for x in states[p, ti])
                fh.write(f"{p},{times[ti]:.17g},{vals}\n")
                rows += 1
