"""Discretised maximum-likelihood estimators of the reaction intensity.

All variants share one building block: for every observed increment
``[t_k, t_{k+1}]`` the numerator term

    <sigma^-1 f(X_k), sigma^-1 (X_{k+1} - S X_k)>

and the information term ``dt * ||sigma^-1 f(X_k)||^2``, both by
trapezoidal quadrature with a (possibly windowed) weight vector. An
estimator is then a choice of weight vectors and of increments to sum.
The first increment is never used.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from .simulator import (
    FORWARD_POLICIES,
    GridSpec,
    ModelSpec,
    ReactionFn,
    Trajectory,
    forward_multipliers,
)
from .spectral import DomainSpec, from_spectral, phi, to_spectral, trapezoid_weights

MIN_INFORMATION = 1e-300
CHUNK = 512


class ZeroInformation(ArithmeticError):
    code = "ZERO_INFORMATION"


class GridMismatch(ValueError):
    code = "GRID_MISMATCH"


class EmptyWindow(ValueError):
    code = "EMPTY_WINDOW"


@dataclass(frozen=True)
class KnownPhysics:
    """Everything about the model except the reaction intensity."""

    dom: DomainSpec
    nu: float
    reaction: ReactionFn
    sigma: float | Callable = 1.0
    forward: str = "exact"

    def __post_init__(self):
        if self.forward not in FORWARD_POLICIES:
            raise ValueError(f"unknown forward policy {self.forward!r}")
        if self.nu < 0:
            raise ValueError("diffusivity must be nonnegative")

    @classmethod
    def from_model(cls, model: ModelSpec, forward: str = "exact", sigma=None) -> "KnownPhysics":
        return cls(model.dom, model.nu, model.reaction,
                   model.sigma if sigma is None else sigma, forward)

    def inv_sigma2(self, grid: GridSpec) -> np.ndarray:
        if callable(self.sigma):
            s = np.asarray(self.sigma(grid.nodes), dtype=float)
        else:
            s = np.full(grid.M + 1, float(self.sigma))
        # boundary nodes carry zero fields; their noise level is irrelevant
        inner = s[1:-1]
        if not np.all(inner > 0):
            raise ValueError("estimators need a strictly positive noise level")
        out = np.zeros(grid.M + 1)
        out[1:-1] = 1.0 / inner ** 2
        return out


@dataclass(frozen=True)
class Window:
    y0: float
    t0: float
    delta_y: float
    delta_t: float

    def interval(self, l: float) -> tuple[float, float]:
        """The rescaled spatial set ``y0 + delta_y * ((0, l) - y0)``."""
        return self.y0 - self.delta_y * self.y0, self.y0 + self.delta_y * (l - self.y0)

    def validate(self, l: float, T: float):
        if not 0 < self.y0 < l:
            raise ValueError(f"window centre y0={self.y0} must lie in (0, {l})")
        if not 0 < self.t0 < T:
            raise ValueError(f"window centre t0={self.t0} must lie in (0, {T})")
        if not 0 < self.delta_y <= 1:
            raise ValueError(f"spatial scale must satisfy 0 < delta_y <= 1, got {self.delta_y}")
        limit = min(self.t0, T - self.t0)
        if not 0 < self.delta_t <= limit * (1 + 1e-12):
            raise ValueError(f"temporal half-width must satisfy 0 < delta_t <= {limit}, got {self.delta_t}")


@dataclass
class EstimateResult:
    theta_hat: float
    fisher: float
    alpha_bar: float
    n_increments: int
    kind: str = "global"
    window: Window | None = None

    @property
    def stderr(self) -> float:
        return self.fisher ** -0.5

    @property
    def ci(self) -> tuple[float, float]:
        return confidence_interval(self.theta_hat, self.fisher, self.alpha_bar)

    def record(self) -> dict:
        lo, hi = self.ci
        w = self.window
        return {
            "estimator": self.kind,
            "theta_hat": self.theta_hat,
            "fisher": self.fisher,
            "stderr": self.stderr,
            "ci_lo": lo,
            "ci_hi": hi,
            "alpha_bar": self.alpha_bar,
            "n_increments": self.n_increments,
            "y0": w.y0 if w else "",
            "t0": w.t0 if w else "",
            "delta_y": w.delta_y if w else "",
            "delta_t": w.delta_t if w else "",
        }


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def confidence_interval(theta_hat: float, fisher: float, alpha_bar: float) -> tuple[float, float]:
    """Asymptotic (1 - alpha_bar) interval ``theta_hat -/+ q * fisher^{-1/2}``."""
    if not fisher > 0:
        raise ValueError(f"observed information must be positive, got {fisher}")
    if not 0 < alpha_bar < 1:
        raise ValueError(f"level must lie in (0, 1), got {alpha_bar}")
    half = normal_quantile(1.0 - alpha_bar / 2.0) / math.sqrt(fisher)
    return theta_hat - half, theta_hat + half


# -- increment terms -------------------------------------------------------

def increment_terms(rows, phys: KnownPhysics, grid: GridSpec, weights) -> tuple[np.ndarray, np.ndarray]:
    """Per-increment numerator and information terms.

    ``rows`` has shape ``(..., C + 1, M + 1)``; ``weights`` has shape
    ``(P, M + 1)``. Returns two arrays of shape ``(..., C, P)``.
    """
    rows = np.asarray(rows, dtype=float)
    x, x_next = rows[..., :-1, :], rows[..., 1:, :]
    fx = phys.reaction(x)
    c = to_spectral(x, phys.dom)
    c *= forward_multipliers(phys.nu * grid.dt, phys.dom, c.shape[-1], phys.forward)
    resid = x_next - from_spectral(c, phys.dom, grid.M)
    g = fx * phys.inv_sigma2(grid)
    w = np.asarray(weights, dtype=float)
    return (g * resid) @ w.T, grid.dt * ((g * fx) @ w.T)


class IncrementAccumulator:
    """Collects increment terms of a batch of runs chunk by chunk."""

    def __init__(self, phys: KnownPhysics, grid: GridSpec, weights, batch: int = 1):
        self.phys = phys
        self.grid = grid
        self.weights = np.atleast_2d(np.asarray(weights, dtype=float))
        P = self.weights.shape[0]
        self.num = np.zeros((batch, grid.N, P))
        self.den = np.zeros((batch, grid.N, P))

    def update(self, k0: int, rows):
        num, den = increment_terms(rows, self.phys, self.grid, self.weights)
        C = num.shape[-2]
        self.num[:, k0:k0 + C] = num.reshape(self.num.shape[0], C, -1)
        self.den[:, k0:k0 + C] = den.reshape(self.den.shape[0], C, -1)

    def sums(self, masks) -> tuple[np.ndarray, np.ndarray]:
        """Exactly rounded sums over the masked increments, shape ``(B, P)``."""
        masks = np.atleast_2d(masks)
        B, _, P = self.num.shape
        num = np.empty((B, P))
        den = np.empty((B, P))
        for p in range(P):
            m = masks[p]
            for b in range(B):
                num[b, p] = math.fsum(self.num[b, m, p])
                den[b, p] = math.fsum(self.den[b, m, p])
        return num, den


def _accumulate(traj: Trajectory, phys: KnownPhysics, weights) -> IncrementAccumulator:
    _check_grid(traj, phys)
    acc = IncrementAccumulator(phys, traj.grid, weights)
    N = traj.grid.N
    for k0 in range(0, N, CHUNK):
        k1 = min(k0 + CHUNK, N)
        acc.update(k0, traj.values[k0:k1 + 1])
    return acc


def _check_grid(traj: Trajectory, phys: KnownPhysics):
    g = traj.grid
    if traj.values.shape != (g.N + 1, g.M + 1):
        raise GridMismatch(f"values of shape {traj.values.shape} do not match grid M={g.M}, N={g.N}")
    if abs(g.l - phys.dom.l) > 1e-12 * phys.dom.l:
        raise GridMismatch(f"trajectory length l={g.l} differs from the physics l={phys.dom.l}")
    if phys.dom.modes(g.M) > g.M - 1:
        raise GridMismatch("physics retains more modes than the trajectory grid resolves")


def _finish(num: float, den: float, n: int, alpha_bar: float, kind: str,
            window: Window | None = None) -> EstimateResult:
    if not den > MIN_INFORMATION:
        raise ZeroInformation(f"observed information {den!r} vanishes; theta is not identifiable")
    return EstimateResult(num / den, den, alpha_bar, n, kind, window)


def global_mask(grid: GridSpec) -> np.ndarray:
    m = np.ones(grid.N, dtype=bool)
    m[0] = False
    return m


def estimate_global(traj: Trajectory, phys: KnownPhysics, alpha_bar: float = 0.05) -> EstimateResult:
    """Fully discretised MLE over the whole domain and all increments but the first."""
    acc = _accumulate(traj, phys, trapezoid_weights(traj.grid.M, traj.grid.l))
    mask = global_mask(traj.grid)
    num, den = acc.sums(mask)
    return _finish(num[0, 0], den[0, 0], int(mask.sum()), alpha_bar, "global")


# -- localisation ----------------------------------------------------------

def window_weights(grid: GridSpec, win: Window) -> np.ndarray:
    """Trapezoidal weights over the nodes inside the window's spatial set."""
    a, b = win.interval(grid.l)
    tol = 1e-9 * grid.dy
    inside = np.flatnonzero((grid.nodes >= a - tol) & (grid.nodes <= b + tol))
    if inside.size < 2:
        raise EmptyWindow(f"fewer than two grid nodes inside [{a:.6g}, {b:.6g}]")
    w = np.zeros(grid.M + 1)
    w[inside] = grid.dy
    w[inside[0]] = w[inside[-1]] = 0.5 * grid.dy
    return w


def window_mask(grid: GridSpec, win: Window) -> np.ndarray:
    """Increments ``k >= 1`` whose left end lies in ``(t0 - dt, t0 + dt)``."""
    t = grid.times[:-1]
    tol = 1e-12 * grid.T
    mask = (t > win.t0 - win.delta_t + tol) & (t < win.t0 + win.delta_t - tol)
    mask[0] = False
    if mask.sum() < 2:
        raise EmptyWindow(f"fewer than two time steps inside ({win.t0 - win.delta_t:.6g}, {win.t0 + win.delta_t:.6g})")
    return mask


def estimate_localized(traj: Trajectory, phys: KnownPhysics, win: Window,
                       alpha_bar: float = 0.05) -> EstimateResult:
    """Windowed MLE: inner products and time sum restricted to the window.

    The forward step still acts on the full observed field.
    """
    g = traj.grid
    win.validate(g.l, g.T)
    w = window_weights(g, win)
    mask = window_mask(g, win)
    num, den = _accumulate(traj, phys, w).sums(mask)
    return _finish(num[0, 0], den[0, 0], int(mask.sum()), alpha_bar, "localized", win)


# -- nonparametric ---------------------------------------------------------

@dataclass(frozen=True)
class NonparamSpec:
    eta_y: float
    eta_t: float
    points: tuple[tuple[float, float], ...]
    bandwidths: str | tuple[float, float] = "optimal"

    def __post_init__(self):
        if not (0 < self.eta_y <= 1 and 0 < self.eta_t <= 1):
            raise ValueError("Hoelder exponents must lie in (0, 1]")

    @property
    def eta_eff(self) -> float:
        return effective_smoothness(self.eta_y, self.eta_t)


def effective_smoothness(eta_y: float, eta_t: float, d: int = 1) -> float:
    return 1.0 / (d / eta_y + 1.0 / eta_t)


def optimal_bandwidths(eta_y: float, eta_t: float, phi_value: float) -> tuple[float, float, float]:
    """Rate-optimal ``(delta_y, delta_t, eta_eff)`` for a given ``phi(nu)``."""
    if not (eta_y > 0 and eta_t > 0):
        raise ValueError("Hoelder exponents must be positive")
    if not phi_value > 1:
        raise ValueError(f"bandwidth rule needs phi(nu) > 1, got {phi_value}")
    eff = effective_smoothness(eta_y, eta_t)
    denom = 2.0 * eff + 1.0
    return phi_value ** (-eff / (eta_y * denom)), phi_value ** (-eff / (eta_t * denom)), eff


@dataclass
class PointEstimate:
    point: tuple[float, float]
    delta_y: float
    delta_t: float
    result: EstimateResult | None = None
    error: str | None = None
    clipped: bool = False


def nonparam_windows(spec: NonparamSpec, grid: GridSpec, nu: float, dom: DomainSpec):
    """One clipped window per evaluation point, plus whether clipping happened."""
    if spec.bandwidths == "optimal":
        dy, dt, _ = optimal_bandwidths(spec.eta_y, spec.eta_t, phi(nu, grid.T, dom, grid.M - 1))
    else:
        dy, dt = spec.bandwidths
    out = []
    for y0, t0 in spec.points:
        cy, ct = min(dy, 1.0), min(dt, t0, grid.T - t0)
        clipped = (cy, ct) != (dy, dt)
        if clipped:
            warnings.warn(f"bandwidths clipped to ({cy:.4g}, {ct:.4g}) at point ({y0}, {t0})", stacklevel=2)
        out.append((Window(y0, t0, cy, ct), clipped))
    return out


def estimate_nonparametric(traj: Trajectory, phys: KnownPhysics, spec: NonparamSpec,
                           alpha_bar: float = 0.05) -> list[PointEstimate]:
    g = traj.grid
    wins = nonparam_windows(spec, g, phys.nu, phys.dom)
    rows, weights, masks = [], [], []
    for win, clipped in wins:
        pe = PointEstimate((win.y0, win.t0), win.delta_y, win.delta_t, clipped=clipped)
        try:
            win.validate(g.l, g.T)
            w, m = window_weights(g, win), window_mask(g, win)
        except (EmptyWindow, ValueError) as exc:
            pe.error = str(exc)
        else:
            weights.append(w)
            masks.append(m)
        rows.append(pe)
    ok = [pe for pe in rows if pe.error is None]
    if ok:
        num, den = _accumulate(traj, phys, np.array(weights)).sums(np.array(masks))
        for p, pe in enumerate(ok):
            win = Window(pe.point[0], pe.point[1], pe.delta_y, pe.delta_t)
            try:
                pe.result = _finish(num[0, p], den[0, p], int(masks[p].sum()), alpha_bar,
                                    "nonparametric", win)
            except ZeroInformation as exc:
                pe.error = str(exc)
    return rows


# -- uncertainty helpers used by the Monte-Carlo harness -------------------

@dataclass
class Plan:
    """Weight vectors and increment masks for a batch evaluation."""

    weights: np.ndarray
    masks: np.ndarray
    kind: str
    windows: list = field(default_factory=list)


def global_plan(grid: GridSpec) -> Plan:
    return Plan(trapezoid_weights(grid.M, grid.l)[None, :], global_mask(grid)[None, :], "global", [None])


def localized_plan(grid: GridSpec, windows) -> Plan:
    ws, ms = [], []
    for win in windows:
        win.validate(grid.l, grid.T)
        ws.append(window_weights(grid, win))
        ms.append(window_mask(grid, win))
    return Plan(np.array(ws), np.array(ms), "localized", list(windows))
