"""Advisory check of space-time meshes against the discretisation conditions.

Both conditions are little-o statements as nu -> 0, so at a fixed nu the
checker can only report how far each mesh width sits below its scale.
A ratio below one is reported as PASS.
"""

from __future__ import annotations

from dataclasses import dataclass

from .simulator import GridSpec, ModelSpec


@dataclass(frozen=True)
class MeshPolicy:
    beta: float = 2.0
    gamma_t: float = 0.24
    gamma_y: float = 0.24
    p_y: float = 1000.0
    tilde_gamma_y: float = 0.48

    def __post_init__(self):
        cap = (1.0 - 1.0 / self.beta) / 2.0
        if not self.beta > 1:
            raise ValueError(f"generator order must exceed 1, got beta={self.beta}")
        if not 0 < self.gamma_t < cap:
            raise ValueError(f"need 0 < gamma_t < {cap:.6g}, got {self.gamma_t}")
        if not 0 < self.gamma_y < cap - 1.0 / self.p_y:
            raise ValueError(f"need 0 < gamma_y < {cap - 1.0 / self.p_y:.6g}, got {self.gamma_y}")
        if not self.p_y > 1.0 / self.tilde_gamma_y:
            raise ValueError(f"need p_y > 1/tilde_gamma_y = {1.0 / self.tilde_gamma_y:.6g}, got {self.p_y}")

    @property
    def time_exponent(self) -> float:
        return 1.0 / (2.0 * self.beta * self.gamma_t)

    @property
    def space_exponents(self) -> tuple[float, float]:
        """Exponents of nu and of delta_t in the spatial scale."""
        gap = self.tilde_gamma_y - 1.0 / self.p_y
        return (self.gamma_y + 1.0 / (2.0 * self.beta)) / gap, 1.0 / gap


@dataclass(frozen=True)
class MeshReport:
    nu: float
    delta_t: float
    delta_y: float
    r_t: float
    r_y: float
    r_first: float

    @property
    def t_status(self) -> str:
        return "PASS" if self.r_t < 1 else "WARN"

    @property
    def y_status(self) -> str:
        return "PASS" if self.r_y < 1 else "WARN"

    @property
    def status(self) -> str:
        return "PASS" if self.r_t < 1 and self.r_y < 1 else "WARN"

    def lines(self) -> list[str]:
        return [
            f"time  {self.t_status}  r_t = {self.r_t:.6g}  (delta_t = {self.delta_t:.6g})",
            f"space {self.y_status}  r_y = {self.r_y:.6g}  (delta_y = {self.delta_y:.6g})",
            f"first increment ratio delta_t0 / nu^(1/(2 beta gamma_t)) = {self.r_first:.6g}",
            f"overall {self.status}",
        ]


def mesh_ratios(nu: float, delta_t: float, delta_y: float, policy: MeshPolicy) -> MeshReport:
    if not (nu > 0 and delta_t > 0 and delta_y > 0):
        raise ValueError("diffusivity and mesh widths must be positive")
    r_t = delta_t / nu ** policy.time_exponent
    a_nu, a_dt = policy.space_exponents
    r_y = delta_y / (nu ** a_nu * delta_t ** a_dt)
    # uniform grids: the first step has the common width, so the lower
    # bound on it is measured against the same scale as r_t
    return MeshReport(nu, delta_t, delta_y, r_t, r_y, r_t)


def check_mesh(model: ModelSpec, grid: GridSpec, policy: MeshPolicy | None = None) -> MeshReport:
    return mesh_ratios(model.nu, grid.dt, grid.dy, policy or MeshPolicy())
