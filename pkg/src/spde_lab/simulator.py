"""Semi-implicit Euler simulation of the semi-linear fractional heat equation.

    dX = -nu (-Laplacian)^{alpha/2} X dt + theta f(X) dt + sigma(y) dW

The linear part is solved exactly in the sine eigenbasis, the reaction and
the noise are explicit. Every run is a pure function of (model, grid, seed).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft

from .spectral import DomainSpec, from_spectral, mode_rates, to_spectral

DEFAULT_GUARD = 1e6
FORWARD_POLICIES = ("exact", "implicit-euler", "explicit-euler")


class BlowUpError(RuntimeError):
    """The solution left the sup-norm guard; usually a too coarse time step."""

    code = "BLOWUP"

    def __init__(self, step: int, sup: float):
        super().__init__(f"sup-norm {sup:.3g} exceeded the blow-up guard at step {step}")
        self.step = step
        self.sup = sup


class MeshGuardError(ValueError):
    code = "MESH_GUARD"


@dataclass(frozen=True)
class ReactionFn:
    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        return self.evaluate(x)


def _f1(x):
    return -x * (2.0 + np.sin(x))


def _df1(x):
    return -(2.0 + np.sin(x)) - x * np.cos(x)


def _f2(x):
    return 9.0 * x - x * x * x


def _df2(x):
    return 9.0 - 3.0 * x * x


def _identity(x):
    return np.array(x, dtype=float, copy=True)


def _ones(x):
    return np.ones_like(x)


REACTIONS = {
    "f1": ReactionFn("f1", _f1, _df1),
    "f2": ReactionFn("f2", _f2, _df2),
    "linear": ReactionFn("linear", _identity, _ones),
    "zero": ReactionFn("zero", np.zeros_like, np.zeros_like),
}


def get_reaction(name: str) -> ReactionFn:
    try:
        return REACTIONS[name]
    except KeyError:
        raise ValueError(f"unknown reaction {name!r}; choose from {sorted(REACTIONS)}") from None


@dataclass(frozen=True)
class AffineField:
    """Space-time field ``c0 + cy*y + ct*t``."""

    c0: float
    cy: float = 0.0
    ct: float = 0.0

    def __call__(self, y, t):
        return self.c0 + self.cy * np.asarray(y, dtype=float) + self.ct * t


@dataclass(frozen=True)
class GridSpec:
    M: int
    N: int
    T: float = 1.0
    l: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"need M >= 2 spatial subintervals, got {self.M}")
        if self.N < 1:
            raise ValueError(f"need N >= 1 time steps, got {self.N}")
        if not self.T > 0 or not self.l > 0:
            raise ValueError("grid horizon and length must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def dy(self) -> float:
        return self.l / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dy

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


@dataclass(frozen=True)
class ModelSpec:
    """One SPDE instance.

    ``theta`` is a number or a callable ``theta(y, t)``; ``sigma`` a number
    or a callable ``sigma(y)``; ``x0`` is None (zero), a callable of y, or a
    nodal array. ``nu = 0`` and ``sigma = 0`` are accepted for frozen and
    noiseless runs; the estimators need ``sigma > 0``.
    """

    dom: DomainSpec = field(default_factory=DomainSpec)
    nu: float = 0.01
    theta: float | Callable = 3.0
    reaction: ReactionFn = REACTIONS["f1"]
    sigma: float | Callable = 1.0
    T: float = 1.0
    x0: Callable | np.ndarray | None = None

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"diffusivity must be nonnegative, got nu={self.nu}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if not callable(self.sigma) and self.sigma < 0:
            raise ValueError("noise level must be nonnegative")

    def grid(self, M: int, N: int) -> GridSpec:
        return GridSpec(M, N, self.T, self.dom.l)

    def sigma_nodes(self, grid: GridSpec) -> np.ndarray:
        if callable(self.sigma):
            s = np.asarray(self.sigma(grid.nodes), dtype=float)
        else:
            s = np.full(grid.M + 1, float(self.sigma))
        if np.any(s < 0):
            raise ValueError("noise level must be nonnegative everywhere")
        return s

    def theta_nodes(self, grid: GridSpec, t: float):
        if callable(self.theta):
            return np.asarray(self.theta(grid.nodes, t), dtype=float)
        return float(self.theta)

    def initial(self, grid: GridSpec) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(grid.M + 1)
        if callable(self.x0):
            x = np.asarray(self.x0(grid.nodes), dtype=float)
        else:
            x = np.asarray(self.x0, dtype=float).copy()
        if x.shape != (grid.M + 1,):
            raise ValueError(f"initial condition needs {grid.M + 1} nodal values, got shape {x.shape}")
        if abs(x[0]) > 1e-12 or abs(x[-1]) > 1e-12:
            raise ValueError("initial condition violates the Dirichlet boundary condition")
        x[0] = x[-1] = 0.0
        return x

    def tag(self) -> str:
        """Short content hash used to label trajectories."""
        parts = [
            repr(self.dom), repr(self.nu), repr(self.theta), self.reaction.name,
            repr(self.sigma), repr(self.T),
            repr(self.x0.tolist() if isinstance(self.x0, np.ndarray) else self.x0),
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    grid: GridSpec
    values: np.ndarray  # (N+1, M+1), row k is the field at t_k
    seed: int
    nu: float
    alpha: float
    model_tag: str = ""

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.grid == other.grid and self.seed == other.seed and self.nu == other.nu
            and self.alpha == other.alpha and np.array_equal(self.values, other.values)
        )


def derive_seed(base_seed: int, *keys: int) -> int:
    """Mix a base seed with integer keys into an independent 64-bit seed."""
    ss = np.random.SeedSequence([int(base_seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for one trajectory."""
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_noise_increment(grid: GridSpec, sigma, rng: np.random.Generator,
                           dom: DomainSpec | None = None) -> np.ndarray:
    """Nodal ``sigma * dW`` over one time step.

    Draws ``M - 1`` standard normal mode coefficients (the full stream, even
    when fewer modes are retained), scales them by ``sqrt(dt)`` and maps the
    retained ones to nodes.
    """
    dom = DomainSpec(l=grid.l) if dom is None else dom
    K = dom.modes(grid.M)
    xi = rng.standard_normal(grid.M - 1)
    noise = from_spectral(math.sqrt(grid.dt) * xi[:K], dom, grid.M)
    return np.asarray(sigma, dtype=float) * noise


def step(model: ModelSpec, grid: GridSpec, x_k, t_k: float, noise, *,
         guard: float = DEFAULT_GUARD) -> np.ndarray:
    """One semi-implicit Euler step with the spectral implicit solve."""
    x_k = np.asarray(x_k, dtype=float)
    dom = model.dom
    theta = model.theta_nodes(grid, t_k)
    y = x_k + grid.dt * theta * model.reaction(x_k) + noise
    c = to_spectral(y, dom, check_boundary=False)
    c = c / (1.0 + model.nu * grid.dt * mode_rates(dom, c.shape[-1]))
    x_new = from_spectral(c, dom, grid.M)
    sup = float(np.max(np.abs(x_new))) if x_new.size else 0.0
    if not sup <= guard:
        raise BlowUpError(-1, sup)
    return x_new


def forward_semigroup(x, delta: float, nu: float, dom: DomainSpec,
                      policy: str = "exact") -> np.ndarray:
    """Push nodal fields forward by ``S_{nu delta}`` or a one-step surrogate.

    ``exact`` uses exp(-nu mu_k delta); ``implicit-euler`` uses
    1 / (1 + nu mu_k delta), the simulator's own linear solve;
    ``explicit-euler`` uses 1 - nu mu_k delta.
    """
    x = np.asarray(x, dtype=float)
    M = x.shape[-1] - 1
    c = to_spectral(x, dom)
    c *= forward_multipliers(nu * delta, dom, c.shape[-1], policy)
    return from_spectral(c, dom, M)


def forward_multipliers(a: float, dom: DomainSpec, K: int, policy: str) -> np.ndarray:
    """Per-mode multipliers of the forward operator at ``a = nu * delta``."""
    z = a * mode_rates(dom, K)
    if policy == "exact":
        return np.exp(-z)
    if policy == "implicit-euler":
        return 1.0 / (1.0 + z)
    if policy == "explicit-euler":
        return 1.0 - z
    raise ValueError(f"unknown forward policy {policy!r}; choose from {FORWARD_POLICIES}")


def check_grid(model: ModelSpec, grid: GridSpec) -> list[str]:
    """Cheap pre-flight checks of a (model, grid) pair; returns warnings.

    Raises for hard incompatibilities (too many modes, mismatched domain).
    """
    if abs(grid.l - model.dom.l) > 1e-12 * model.dom.l or abs(grid.T - model.T) > 1e-12 * model.T:
        raise ValueError("grid length/horizon do not match the model")
    K = model.dom.modes(grid.M)
    if K > grid.M - 1:
        raise ValueError(f"K={K} exceeds the M-1={grid.M - 1} modes resolvable on this grid")
    warnings = []
    deriv = model.reaction.derivative
    if deriv is not None:
        th = model.theta_nodes(grid, 0.0)
        gain = grid.dt * float(np.max(np.abs(th))) * abs(float(deriv(np.zeros(1))[0]))
        if gain > 1.0:
            warnings.append(
                f"explicit reaction step dt*|theta*f'(0)| = {gain:.3g} > 1; expect instability"
            )
    return warnings


class BatchSimulation:
    """Simulate several seeds in lockstep and stream the rows in chunks.

    Iterating yields ``(k0, rows)`` with ``rows`` of shape
    ``(B, C + 1, M + 1)`` holding times ``t_{k0} .. t_{k0 + C}``; consecutive
    chunks share their boundary row. Runs that leave the guard are frozen at
    zero and their step index is kept in ``blowup_step`` (-1 if none).
    """

    def __init__(self, model: ModelSpec, grid: GridSpec, seeds, *, chunk: int = 512,
                 guard: float = DEFAULT_GUARD, force: bool = False):
        warnings = check_grid(model, grid)
        if warnings and not force:
            raise MeshGuardError("; ".join(warnings))
        self.model = model
        self.grid = grid
        self.seeds = [int(s) for s in seeds]
        self.chunk = int(chunk)
        self.guard = guard
        self.blowup_step = np.full(len(self.seeds), -1, dtype=np.int64)
        self.blowup_sup = np.full(len(self.seeds), np.nan)

        M = grid.M
        K = model.dom.modes(M)
        mult = np.zeros(M - 1)
        mult[:K] = 1.0 / (1.0 + model.nu * grid.dt * mode_rates(model.dom, K))
        self._mult = mult
        sig = model.sigma_nodes(grid)
        self._sigma = sig
        self._sigma_const = bool(np.all(sig[1:-1] == sig[1]))
        # nodal -> coefficient scale sqrt(l/M) and back sqrt(M/l) cancel around the solve
        a = math.sqrt(grid.l / M)
        if self._sigma_const:
            self._noise_scale = mult * (sig[1] * math.sqrt(grid.dt) / a)
        else:
            keep = np.zeros(M - 1)
            keep[:K] = math.sqrt(grid.dt)
            self._noise_keep = keep
        self._theta_const = not callable(model.theta)

    def __iter__(self):
        grid, model = self.grid, self.model
        M, N, B = grid.M, grid.N, len(self.seeds)
        rngs = [make_rng(s) for s in self.seeds]
        x = np.tile(model.initial(grid), (B, 1))
        f = model.reaction
        dt = grid.dt
        dst = scipy.fft.dst
        k = 0
        while k < N:
            C = min(self.chunk, N - k)
            xi = np.empty((B, C, M - 1))
            for b, rng in enumerate(rngs):
                xi[b] = rng.standard_normal((C, M - 1))
            rows = np.zeros((B, C + 1, M + 1))
            rows[:, 0] = x
            for j in range(C):
                t = (k + j) * dt
                theta = model.theta if self._theta_const else model.theta_nodes(grid, t)
                y = x + (dt * theta) * f(x)
                if self._sigma_const:
                    c = dst(y[:, 1:-1], type=1, norm="ortho", axis=-1)
                    c *= self._mult
                    c += xi[:, j] * self._noise_scale
                else:
                    noise = dst(xi[:, j] * self._noise_keep, type=1, norm="ortho", axis=-1)
                    noise *= math.sqrt(M / grid.l)
                    c = dst(y[:, 1:-1] + self._sigma[1:-1] * noise, type=1, norm="ortho", axis=-1)
                    c *= self._mult
                x = np.zeros((B, M + 1))
                x[:, 1:-1] = dst(c, type=1, norm="ortho", axis=-1)
                sup = np.max(np.abs(x), axis=1)
                bad = ~(sup <= self.guard)
                if bad.any():
                    fresh = bad & (self.blowup_step < 0)
                    self.blowup_step[fresh] = k + j + 1
                    self.blowup_sup[fresh] = sup[fresh]
                dead = self.blowup_step >= 0
                if dead.any():
                    x[dead] = 0.0
                rows[:, j + 1] = x
            yield k, rows
            k += C


def simulate(model: ModelSpec, grid: GridSpec, seed: int, *, guard: float = DEFAULT_GUARD,
             force: bool = False, chunk: int = 512) -> Trajectory:
    """Full trajectory for one seed; raises BlowUpError with the step index."""
    sim = BatchSimulation(model, grid, [seed], chunk=chunk, guard=guard, force=force)
    values = np.empty((grid.N + 1, grid.M + 1))
    for k0, rows in sim:
        if sim.blowup_step[0] >= 0:
            raise BlowUpError(int(sim.blowup_step[0]), float(sim.blowup_sup[0]))
        values[k0:k0 + rows.shape[1]] = rows[0]
    return Trajectory(grid, values, int(seed), model.nu, model.dom.alpha, model.tag())
