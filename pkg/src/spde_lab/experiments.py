"""Monte-Carlo harness: error curves over nu, rate fits, coverage and normality.

Work is cut into fixed blocks of runs per diffusivity. A block is simulated
in lockstep and estimated on the fly, so full trajectories are never kept.
Block boundaries depend only on the configuration, which makes the output
independent of how many worker processes execute the blocks.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .estimators import (
    MIN_INFORMATION,
    IncrementAccumulator,
    KnownPhysics,
    NonparamSpec,
    Window,
    confidence_interval,
    global_plan,
    localized_plan,
    nonparam_windows,
)
from .mesh import MeshPolicy, MeshReport, check_mesh
from .modes import ModeAccumulator, _check_linear, default_k_nu
from .simulator import DEFAULT_GUARD, BatchSimulation, ModelSpec, derive_seed

log = logging.getLogger(__name__)

ESTIMATORS = ("global", "localized", "nonparametric", "spectral")
MAX_BLOWUP_FRACTION = 0.10


class MCAbort(RuntimeError):
    code = "MC_ABORT"


@dataclass(frozen=True)
class MCConfig:
    model: ModelSpec
    M: int
    N: int
    nus: tuple[float, ...]
    runs: int
    base_seed: int = 0
    estimator: str = "global"
    forward: str = "implicit-euler"
    window: Window | None = None
    nonparam: NonparamSpec | None = None
    K_nu: int | None = None
    alpha_bar: float = 0.05
    mesh_policy: MeshPolicy = field(default_factory=MeshPolicy)
    paired: bool = False
    block_size: int = 50
    chunk: int = 512
    guard: float = DEFAULT_GUARD
    rate_max_nu: float | None = None

    def __post_init__(self):
        if self.runs < 2:
            raise ValueError(f"need at least 2 runs per diffusivity, got {self.runs}")
        if not self.nus or any(not nu > 0 for nu in self.nus):
            raise ValueError("diffusivities must be strictly positive")
        if len(set(self.nus)) != len(self.nus):
            raise ValueError("diffusivities must be distinct")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.estimator == "localized" and self.window is None:
            raise ValueError("localized estimator needs a window")
        if self.estimator == "nonparametric":
            if self.nonparam is None or len(self.nonparam.points) != 1:
                raise ValueError("Monte-Carlo nonparametric runs need exactly one evaluation point")
        if self.block_size < 1 or self.chunk < 1:
            raise ValueError("block size and chunk length must be positive")

    def model_at(self, nu: float) -> ModelSpec:
        return replace(self.model, nu=nu)

    def seed(self, nu_index: int, run: int) -> int:
        if self.paired:
            return derive_seed(self.base_seed, run)
        return derive_seed(self.base_seed, nu_index, run)

    def target(self) -> float:
        """True value the errors are measured against."""
        theta = self.model.theta
        if not callable(theta):
            return float(theta)
        if self.estimator == "localized":
            return float(theta(self.window.y0, self.window.t0))
        if self.estimator == "nonparametric":
            y0, t0 = self.nonparam.points[0]
            return float(theta(y0, t0))
        raise ValueError("a space-time theta needs a localized or nonparametric estimator")


@dataclass
class Diagnostics:
    n: int
    coverage: float
    z_mean: float
    z_var: float
    ks: float


@dataclass
class NuResult:
    nu: float
    target: float
    alpha_bar: float
    seeds: np.ndarray
    theta_hat: np.ndarray
    fisher: np.ndarray
    blowup: np.ndarray
    mesh: MeshReport
    delta_y: float | None = None
    delta_t: float | None = None

    @property
    def used(self) -> np.ndarray:
        return ~self.blowup

    @property
    def runs_used(self) -> int:
        return int(self.used.sum())

    @property
    def blowups(self) -> int:
        return int(self.blowup.sum())

    def intervals(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.theta_hat.shape, np.nan)
        hi = np.full(self.theta_hat.shape, np.nan)
        for r in np.flatnonzero(self.used):
            lo[r], hi[r] = confidence_interval(self.theta_hat[r], self.fisher[r], self.alpha_bar)
        return lo, hi

    def covered(self) -> np.ndarray:
        lo, hi = self.intervals()
        return (lo <= self.target) & (self.target <= hi)

    def errors(self) -> np.ndarray:
        return self.theta_hat[self.used] - self.target

    @property
    def mse(self) -> float:
        e = self.errors()
        return math.fsum(e * e) / e.size

    @property
    def mean(self) -> float:
        return math.fsum(self.theta_hat[self.used]) / self.runs_used

    @property
    def bias(self) -> float:
        return self.mean - self.target

    @property
    def variance(self) -> float:
        d = self.theta_hat[self.used] - self.mean
        return math.fsum(d * d) / d.size

    def z(self) -> np.ndarray:
        return np.sqrt(self.fisher[self.used]) * self.errors()


@dataclass
class MCResult:
    config: MCConfig
    per_nu: list[NuResult]

    @property
    def nus(self) -> list[float]:
        return [r.nu for r in self.per_nu]

    def mse_points(self, max_nu: float | None = None) -> list[tuple[float, float]]:
        return [(r.nu, r.mse) for r in self.per_nu if max_nu is None or r.nu <= max_nu]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_rate(points) -> RateFit:
    """Least squares of log MSE on log nu; ``mse ~ exp(intercept) * nu**slope``."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError(f"rate fit needs at least 3 points, got {len(pts)}")
    nu = np.array([p[0] for p in pts], dtype=float)
    mse = np.array([p[1] for p in pts], dtype=float)
    if np.any(nu <= 0) or np.any(mse <= 0):
        raise ValueError("rate fit needs positive diffusivities and MSE values")
    x, y = np.log(nu), np.log(mse)
    xc, yc = x - x.mean(), y - y.mean()
    sxx = math.fsum(xc * xc)
    slope = math.fsum(xc * yc) / sxx
    intercept = y.mean() - slope * x.mean()
    resid = y - (intercept + slope * x)
    syy = math.fsum(yc * yc)
    r2 = 1.0 if syy == 0 else 1.0 - math.fsum(resid * resid) / syy
    return RateFit(slope, intercept, min(max(r2, 0.0), 1.0), len(pts))


def normality_stats(z) -> tuple[float, float, float]:
    """Sample mean, sample variance and KS distance to N(0, 1)."""
    z = np.asarray(z, dtype=float)
    mean = math.fsum(z) / z.size
    var = math.fsum((z - mean) ** 2) / (z.size - 1) if z.size > 1 else 0.0
    ks = float(stats.kstest(z, "norm").statistic)
    return mean, var, ks


def coverage_and_normality(mc: MCResult, nu_index: int) -> Diagnostics:
    res = mc.per_nu[nu_index]
    if res.runs_used < 30:
        raise ValueError(f"diagnostics need at least 30 runs, got {res.runs_used}")
    covered = res.covered()[res.used]
    mean, var, ks = normality_stats(res.z())
    return Diagnostics(res.runs_used, float(covered.mean()), mean, var, ks)


# -- execution -------------------------------------------------------------

def worker_count(requested: int | None = None) -> int:
    """Workers to use: explicit request, else SPDE_LAB_THREADS (0 = all cores)."""
    if requested is None:
        requested = int(os.environ.get("SPDE_LAB_THREADS", "0") or 0)
    if requested <= 0:
        requested = os.cpu_count() or 1
    return requested


def _bandwidths(config: MCConfig, nu: float):
    if config.estimator != "nonparametric":
        return None
    grid = config.model.grid(config.M, config.N)
    (win, _), = nonparam_windows(config.nonparam, grid, nu, config.model.dom)
    return win


def run_block(config: MCConfig, nu_index: int, start: int, stop: int) -> dict:
    """Simulate and estimate runs ``start..stop-1`` at one diffusivity."""
    nu = config.nus[nu_index]
    model = config.model_at(nu)
    grid = model.grid(config.M, config.N)
    seeds = [config.seed(nu_index, r) for r in range(start, stop)]
    phys = KnownPhysics.from_model(model, forward=config.forward)
    B = len(seeds)
    if config.estimator == "spectral":
        K = config.K_nu or default_k_nu(nu, model.dom, grid.M)
        acc = ModeAccumulator(phys, grid, K, batch=B)
    else:
        if config.estimator == "global":
            plan = global_plan(grid)
        elif config.estimator == "localized":
            plan = localized_plan(grid, [config.window])
        else:
            plan = localized_plan(grid, [_bandwidths(config, nu)])
        acc = IncrementAccumulator(phys, grid, plan.weights, batch=B)
    sim = BatchSimulation(model, grid, seeds, chunk=config.chunk, guard=config.guard, force=True)
    for k0, rows in sim:
        acc.update(k0, rows)
    if config.estimator == "spectral":
        num, den = acc.sums()
        sig2 = _check_linear(phys, grid) ** 2
        num, den = num / sig2, den / sig2
    else:
        num, den = acc.sums(plan.masks)
        num, den = num[:, 0], den[:, 0]
    blow = sim.blowup_step >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(blow, np.nan, num / den)
    if np.any(~blow & ~(den > MIN_INFORMATION)):
        raise ArithmeticError(f"vanishing observed information at nu={nu}")
    return {
        "nu_index": nu_index, "start": start, "seeds": np.array(seeds, dtype=np.uint64),
        "theta_hat": theta, "fisher": np.where(blow, np.nan, den), "blowup": blow,
    }


def _blocks(config: MCConfig):
    for i in range(len(config.nus)):
        for start in range(0, config.runs, config.block_size):
            yield i, start, min(start + config.block_size, config.runs)


def _run_block_args(args):
    return run_block(*args)


def run_mc(config: MCConfig, workers: int | None = None) -> MCResult:
    jobs = [(config, i, a, b) for i, a, b in _blocks(config)]
    n_workers = min(worker_count(workers), len(jobs))
    if n_workers <= 1:
        outputs = [_run_block_args(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outputs = list(pool.map(_run_block_args, jobs))

    R = config.runs
    target = config.target()
    per_nu = []
    for i, nu in enumerate(config.nus):
        seeds = np.zeros(R, dtype=np.uint64)
        theta = np.zeros(R)
        fisher = np.zeros(R)
        blow = np.zeros(R, dtype=bool)
        for out in outputs:
            if out["nu_index"] != i:
                continue
            s = slice(out["start"], out["start"] + len(out["seeds"]))
            seeds[s], theta[s], fisher[s], blow[s] = out["seeds"], out["theta_hat"], out["fisher"], out["blowup"]
        model = config.model_at(nu)
        grid = model.grid(config.M, config.N)
        mesh = check_mesh(model, grid, config.mesh_policy)
        if mesh.status != "PASS":
            log.info("nu=%g: mesh check %s (r_t=%.3g, r_y=%.3g)", nu, mesh.status, mesh.r_t, mesh.r_y)
        win = _bandwidths(config, nu)
        res = NuResult(nu, target, config.alpha_bar, seeds, theta, fisher, blow, mesh,
                       win.delta_y if win else None, win.delta_t if win else None)
        if res.blowups > MAX_BLOWUP_FRACTION * R:
            raise MCAbort(f"{res.blowups} of {R} runs blew up at nu={nu}")
        if res.blowups:
            log.warning("nu=%g: %d of %d runs blew up and were excluded", nu, res.blowups, R)
        per_nu.append(res)
    return MCResult(config, per_nu)
