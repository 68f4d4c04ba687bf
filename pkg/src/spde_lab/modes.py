"""Fourier-mode estimators for the linear equation.

With ``f(x) = x`` every sine mode of the solution is an independent
Ornstein-Uhlenbeck process ``dX^k = (theta - nu mu_k) X^k dt + dW^k``, so
the intensity can be estimated from the first few modes alone.
"""

from __future__ import annotations

import math

import numpy as np

from .estimators import CHUNK, EstimateResult, KnownPhysics, _check_grid, _finish
from .simulator import Trajectory, forward_multipliers
from .spectral import DomainSpec, eigen, to_spectral


def ou_mle(times, values, nu: float, mu: float, forward: str = "explicit-euler") -> float:
    """Drift-corrected Riemann-Ito MLE of theta from one mode path.

    With the default ``explicit-euler`` correction this is
    ``sum x_k (x_{k+1} - x_k + nu mu x_k dt_k) / sum x_k^2 dt_k``; the
    other policies replace ``1 - nu mu dt_k`` by the matching multiplier.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.shape != x.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if x.size < 2:
        raise ValueError("a mode path needs at least two observations")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("observation times must be strictly increasing")
    z = nu * mu * dt
    if forward == "explicit-euler":
        mult = 1.0 - z
    elif forward == "implicit-euler":
        mult = 1.0 / (1.0 + z)
    elif forward == "exact":
        mult = np.exp(-z)
    else:
        raise ValueError(f"unknown forward policy {forward!r}")
    num = math.fsum(x[:-1] * (x[1:] - mult * x[:-1]))
    den = math.fsum(x[:-1] ** 2 * dt)
    if not den > 1e-300:
        raise ZeroDivisionError("mode path is identically zero; theta is not identifiable")
    return num / den


def default_k_nu(nu: float, dom: DomainSpec, M: int | None = None) -> int:
    """Largest k with ``nu * mu_k <= 1`` (at least 1, at most ``M - 1``)."""
    if not nu > 0:
        raise ValueError("diffusivity must be positive")
    # mu_k = (k pi / l)^alpha <= 1/nu  <=>  k <= (l / pi) nu^{-1/alpha}
    k = max(1, int(math.floor(dom.l / math.pi * nu ** (-1.0 / dom.alpha))))
    while k > 1 and nu * eigen(k, dom)[1] > 1:
        k -= 1
    while nu * eigen(k + 1, dom)[1] <= 1:
        k += 1
    return min(k, M - 1) if M is not None else k


class ModeAccumulator:
    """Per-mode numerator and information sums for a batch of runs."""

    def __init__(self, phys: KnownPhysics, grid, K_nu: int, batch: int = 1):
        self.phys = phys
        self.grid = grid
        self.K = K_nu
        self.dom = DomainSpec(phys.dom.l, phys.dom.alpha, grid.M - 1)
        self.mult = forward_multipliers(phys.nu * grid.dt, self.dom, K_nu, phys.forward)
        self.num = np.zeros((batch, grid.N, K_nu))
        self.den = np.zeros((batch, grid.N, K_nu))

    def update(self, k0: int, rows):
        c = to_spectral(rows, self.dom)[..., :self.K]
        c = c.reshape(-1, c.shape[-2], self.K)
        x, x_next = c[:, :-1], c[:, 1:]
        C = x.shape[1]
        self.num[:, k0:k0 + C] = x * (x_next - self.mult * x)
        self.den[:, k0:k0 + C] = self.grid.dt * x * x

    def sums(self) -> tuple[np.ndarray, np.ndarray]:
        B = self.num.shape[0]
        num = np.array([math.fsum(self.num[b, 1:].ravel()) for b in range(B)])
        den = np.array([math.fsum(self.den[b, 1:].ravel()) for b in range(B)])
        return num, den


def _check_linear(phys: KnownPhysics, grid):
    if phys.reaction.name != "linear":
        raise ValueError(f"mode estimator needs the linear reaction, got {phys.reaction.name!r}")
    s = phys.sigma(grid.nodes) if callable(phys.sigma) else np.full(grid.M + 1, float(phys.sigma))
    s = np.asarray(s, dtype=float)[1:-1]
    if not (np.all(s > 0) and np.all(s == s[0])):
        raise ValueError("mode estimator needs a constant positive noise level")
    return float(s[0])


def estimate_spectral(traj: Trajectory, phys: KnownPhysics, K_nu: int | None = None,
                      alpha_bar: float = 0.05) -> EstimateResult:
    """Aggregate mode MLE over modes ``1..K_nu``, increments ``k >= 1``.

    ``K_nu=None`` applies ``default_k_nu``.
    """
    _check_grid(traj, phys)
    g = traj.grid
    sigma = _check_linear(phys, g)
    K = default_k_nu(phys.nu, phys.dom, g.M) if K_nu is None else int(K_nu)
    if not 1 <= K <= g.M - 1:
        raise ValueError(f"K_nu={K} must lie in [1, {g.M - 1}]")
    acc = ModeAccumulator(phys, g, K)
    for k0 in range(0, g.N, CHUNK):
        k1 = min(k0 + CHUNK, g.N)
        acc.update(k0, traj.values[k0:k1 + 1])
    num, den = acc.sums()
    # a constant noise level rescales every mode by the same factor
    return _finish(num[0] / sigma**2, den[0] / sigma**2, g.N - 1, alpha_bar, "spectral")


def mode_path(traj: Trajectory, k: int, dom: DomainSpec) -> np.ndarray:
    """Coefficient of mode k along the whole trajectory."""
    full = DomainSpec(dom.l, dom.alpha, traj.grid.M - 1)
    return to_spectral(traj.values, full)[:, k - 1]
