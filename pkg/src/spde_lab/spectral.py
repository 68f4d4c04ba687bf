"""Spectral calculus for the Dirichlet fractional Laplacian on (0, l).

Fields live in two representations. Nodal arrays hold values at the
``M + 1`` grid nodes ``y_j = j l / M`` (boundary values included) along
the last axis. Spectral arrays hold coefficients ``c_k`` with respect to
the orthonormal sine basis ``e_k(x) = sqrt(2/l) sin(k pi x / l)`` for
``k = 1..K``, again along the last axis. Leading axes are batch axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy import special

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """Interval (0, l), fractional order alpha and spectral truncation K.

    ``K=None`` means "all modes the grid can carry", i.e. ``M - 1``.
    """

    l: float = 1.0
    alpha: float = 2.0
    K: int | None = None

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"interval length must be positive, got l={self.l}")
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError(f"fractional order must satisfy 1 < alpha <= 2, got {self.alpha}")
        if self.K is not None and self.K < 1:
            raise ValueError(f"spectral truncation must be >= 1, got K={self.K}")

    def modes(self, M: int | None = None) -> int:
        """Number of retained modes, resolving ``K=None`` against ``M``."""
        if self.K is not None:
            return self.K
        if M is None:
            raise ValueError("K is unset and no grid size was given to resolve it")
        return M - 1


def eigen(k, dom: DomainSpec):
    """Dirichlet Laplacian eigenvalue ``lambda_k`` and its fractional power ``mu_k``.

    Accepts a scalar or an integer array of mode indices.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("mode index must be >= 1")
    lam = (k_arr * math.pi / dom.l) ** 2
    mu = lam ** (dom.alpha / 2.0)
    if np.ndim(k) == 0:
        return float(lam), float(mu)
    return lam, mu


def mode_rates(dom: DomainSpec, K: int | None = None) -> np.ndarray:
    """``mu_k`` for ``k = 1..K`` as a float array."""
    K = dom.modes() if K is None else K
    return eigen(np.arange(1, K + 1), dom)[1]


def to_spectral(values, dom: DomainSpec, *, check_boundary: bool = True) -> np.ndarray:
    """Project nodal values onto the first K sine modes.

    Uses the type-I discrete sine transform, which is the trapezoidal rule
    with weight ``l / M`` applied to ``<g, e_k>``.
    """
    g = np.asarray(values, dtype=float)
    M = g.shape[-1] - 1
    if M < 2:
        raise ValueError("nodal field needs at least 3 nodes")
    K = dom.modes(M)
    if K > M - 1:
        raise ValueError(f"K={K} exceeds the M-1={M - 1} modes resolvable on this grid")
    if check_boundary:
        edge = np.maximum(np.abs(g[..., 0]), np.abs(g[..., -1]))
        if np.any(edge > BOUNDARY_TOL):
            raise ValueError("nodal field violates the Dirichlet boundary condition")
    c = scipy.fft.dst(g[..., 1:-1], type=1, norm="ortho", axis=-1)
    c *= math.sqrt(dom.l / M)
    return c[..., :K] if K < M - 1 else c


def from_spectral(coeffs, dom: DomainSpec, M: int) -> np.ndarray:
    """Evaluate ``sum_k c_k e_k(y_j)`` at the ``M + 1`` grid nodes."""
    c = np.asarray(coeffs, dtype=float)
    K = c.shape[-1]
    if K > M - 1:
        raise ValueError(f"K={K} exceeds the M-1={M - 1} modes resolvable on this grid")
    if K < M - 1:
        pad = np.zeros(c.shape[:-1] + (M - 1 - K,))
        c = np.concatenate([c, pad], axis=-1)
    out = np.zeros(c.shape[:-1] + (M + 1,))
    out[..., 1:-1] = scipy.fft.dst(c, type=1, norm="ortho", axis=-1)
    out[..., 1:-1] *= math.sqrt(M / dom.l)
    return out


def apply_semigroup(coeffs, t: float, nu: float, dom: DomainSpec) -> np.ndarray:
    """Exact action of ``S_{nu t}``: ``c_k -> exp(-nu mu_k t) c_k``."""
    if t < 0 or nu < 0:
        raise ValueError("semigroup needs t >= 0 and nu >= 0")
    c = np.asarray(coeffs, dtype=float)
    mu = mode_rates(dom, c.shape[-1])
    return c * np.exp(-nu * mu * t)


def phi(nu: float, t: float, dom: DomainSpec, K: int | None = None) -> float:
    """Integrated squared Hilbert-Schmidt norm of the semigroup up to time t.

    Closed form of the per-mode integrals, summed over the retained modes.
    """
    if not nu > 0:
        raise ValueError(f"diffusivity must be positive, got nu={nu}")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got t={t}")
    mu = mode_rates(dom, K)
    rate = 2.0 * mu * nu
    # -expm1 keeps full precision for the slow low modes at tiny nu * t
    return math.fsum(-np.expm1(-rate * t) / rate)


def green_kernel(t: float, x, y, nu: float, dom: DomainSpec, K: int | None = None):
    """Truncated heat kernel of ``S_{nu t}`` and a bound on the discarded tail.

    Returns ``(value, tail_bound)``; ``value`` broadcasts over ``x`` and ``y``.
    """
    if not t > 0:
        raise ValueError("kernel series is only evaluated for t > 0")
    K = dom.modes() if K is None else K
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x < 0) | (x > dom.l)) or np.any((y < 0) | (y > dom.l)):
        raise ValueError("positions must lie in [0, l]")
    k = np.arange(1, K + 1)
    decay = np.exp(-nu * t * mode_rates(dom, K))
    scale = 2.0 / dom.l
    wx = np.sin(np.multiply.outer(x, k) * math.pi / dom.l)
    wy = np.sin(np.multiply.outer(y, k) * math.pi / dom.l)
    value = scale * np.sum(wx * wy * decay, axis=-1)
    return value, kernel_tail_bound(t, nu, dom, K)


def kernel_tail_bound(t: float, nu: float, dom: DomainSpec, K: int) -> float:
    """Upper bound of ``(2/l) sum_{k>K} exp(-nu t mu_k)``.

    First omitted term plus the integral of the decreasing summand from K+1.
    """
    c = nu * t * (math.pi / dom.l) ** dom.alpha
    a = dom.alpha
    head = math.exp(-c * (K + 1) ** a)
    s = 1.0 / a
    integral = s * c ** (-s) * special.gamma(s) * special.gammaincc(s, c * (K + 1) ** a)
    return (2.0 / dom.l) * (head + integral)


def trapezoid_weights(M: int, l: float) -> np.ndarray:
    """Trapezoidal quadrature weights on the uniform grid with M subintervals."""
    w = np.full(M + 1, l / M)
    w[0] = w[-1] = 0.5 * l / M
    return w
