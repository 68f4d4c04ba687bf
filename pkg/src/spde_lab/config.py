"""Strict JSON run configuration.

Unknown keys and constraint violations are collected with their JSON path
and raised together as one ConfigError.
"""

from __future__ import annotations

import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import NonparamSpec, Window
from .experiments import ESTIMATORS, MCConfig
from .mesh import MeshPolicy
from .simulator import DEFAULT_GUARD, FORWARD_POLICIES, REACTIONS, AffineField, GridSpec, ModelSpec
from .spectral import DomainSpec

SCHEMA = {
    "model": {"l", "alpha", "nu", "theta", "theta_field", "reaction", "sigma", "T", "K", "x0"},
    "grid": {"M", "N"},
    "estimator": {"kind", "window", "nonparam", "alpha_bar", "forward_policy", "K_nu"},
    "mc": {"nus", "runs", "base_seed", "paired", "block_size", "chunk", "rate_max_nu", "workers"},
    "mesh_policy": {"beta", "gamma_t", "gamma_y", "p_y", "tilde_gamma_y"},
    "output": {"dir", "formats"},
    "simulate": {"seed", "guard"},
}
WINDOW_KEYS = {"y0", "t0", "delta_y", "delta_t"}
NONPARAM_KEYS = {"eta_y", "eta_t", "points", "bandwidths"}
FIELD_KEYS = {"c0", "cy", "ct"}
FORMATS = {"csv", "png", "gnuplot"}


class ConfigError(ValueError):
    code = "CONFIG"

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


@dataclass
class RunConfig:
    model: ModelSpec
    M: int
    N: int
    estimator: str = "global"
    window: Window | None = None
    nonparam: NonparamSpec | None = None
    alpha_bar: float = 0.05
    forward_policy: str = "implicit-euler"
    K_nu: int | None = None
    nus: tuple[float, ...] = ()
    runs: int = 100
    base_seed: int = 0
    paired: bool = False
    block_size: int = 50
    chunk: int = 512
    rate_max_nu: float | None = None
    workers: int | None = None
    mesh_policy: MeshPolicy = field(default_factory=MeshPolicy)
    out_dir: str = "out"
    formats: tuple[str, ...] = ("csv", "png", "gnuplot")
    seed: int = 0
    guard: float = DEFAULT_GUARD

    @property
    def grid(self) -> GridSpec:
        return self.model.grid(self.M, self.N)

    def mc_config(self) -> MCConfig:
        if not self.nus:
            raise ConfigError([("$.mc.nus", "required for Monte-Carlo runs")])
        return MCConfig(
            self.model, self.M, self.N, tuple(self.nus), self.runs, self.base_seed,
            self.estimator, self.forward_policy, self.window, self.nonparam, self.K_nu,
            self.alpha_bar, self.mesh_policy, self.paired, self.block_size, self.chunk,
            self.guard, self.rate_max_nu,
        )


class _Checker:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def fail(self, path, msg):
        self.problems.append((path, msg))

    def keys(self, obj, allowed, path):
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
            return {}
        for key in obj:
            if key not in allowed:
                self.fail(f"{path}.{key}", "unknown key")
        return obj

    def number(self, obj, key, path, default=None, *, cond=None, what=""):
        if key not in obj:
            if default is None:
                self.fail(f"{path}.{key}", "required")
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, numbers.Real):
            self.fail(f"{path}.{key}", "expected a number")
            return default
        if cond is not None and not cond(v):
            self.fail(f"{path}.{key}", f"must satisfy {what}, got {v}")
            return default
        return float(v)

    def integer(self, obj, key, path, default=None, *, cond=None, what=""):
        if key not in obj:
            if default is None:
                self.fail(f"{path}.{key}", "required")
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, numbers.Integral):
            self.fail(f"{path}.{key}", "expected an integer")
            return default
        if cond is not None and not cond(v):
            self.fail(f"{path}.{key}", f"must satisfy {what}, got {v}")
            return default
        return int(v)


def parse_config(doc: dict) -> RunConfig:
    ck = _Checker()
    doc = ck.keys(doc, set(SCHEMA), "$")
    for name in ("model", "grid"):
        if name not in doc:
            ck.fail(f"$.{name}", "required section")
    sec = {name: ck.keys(doc.get(name, {}), SCHEMA[name], f"$.{name}") for name in SCHEMA}

    m, p = sec["model"], "$.model"
    l = ck.number(m, "l", p, 1.0, cond=lambda v: v > 0, what="l > 0")
    alpha = ck.number(m, "alpha", p, 2.0, cond=lambda v: 1 < v <= 2, what="1 < alpha <= 2")
    nu = ck.number(m, "nu", p, 0.01, cond=lambda v: v > 0, what="nu > 0")
    T = ck.number(m, "T", p, 1.0, cond=lambda v: v > 0, what="T > 0")
    K = ck.integer(m, "K", p, -1, cond=lambda v: v >= 1, what="K >= 1")
    K = None if K == -1 else K
    if "theta" in m and "theta_field" in m:
        ck.fail(f"{p}.theta_field", "give either theta or theta_field, not both")
    theta = ck.number(m, "theta", p, 3.0)
    if "theta_field" in m:
        tf = ck.keys(m["theta_field"], FIELD_KEYS, f"{p}.theta_field")
        theta = AffineField(
            ck.number(tf, "c0", f"{p}.theta_field"),
            ck.number(tf, "cy", f"{p}.theta_field", 0.0),
            ck.number(tf, "ct", f"{p}.theta_field", 0.0),
        )
    reaction = m.get("reaction", "f1")
    if reaction not in REACTIONS:
        ck.fail(f"{p}.reaction", f"must be one of {sorted(REACTIONS)}, got {reaction!r}")
        reaction = "f1"

    g = sec["grid"]
    M = ck.integer(g, "M", "$.grid", 256, cond=lambda v: v >= 2, what="M >= 2")
    N = ck.integer(g, "N", "$.grid", 65536, cond=lambda v: v >= 1, what="N >= 1")
    if K is not None and K > M - 1:
        ck.fail(f"{p}.K", f"must satisfy K <= M - 1 = {M - 1}, got {K}")

    sigma = m.get("sigma", 1.0)
    if isinstance(sigma, list):
        arr = np.asarray(sigma, dtype=float) if all(isinstance(s, numbers.Real) for s in sigma) else None
        if arr is None or arr.shape != (M + 1,):
            ck.fail(f"{p}.sigma", f"nodal noise level needs {M + 1} numbers")
            sigma = 1.0
        elif np.any(arr[1:-1] <= 0):
            ck.fail(f"{p}.sigma", "must be > 0 at every interior node")
            sigma = 1.0
        else:
            sigma = _NodalField(tuple(arr.tolist()))
    else:
        sigma = ck.number(m, "sigma", p, 1.0, cond=lambda v: v > 0, what="sigma > 0")

    x0 = None
    if "x0" in m:
        v = m["x0"]
        if not (isinstance(v, list) and len(v) == M + 1 and all(isinstance(s, numbers.Real) for s in v)):
            ck.fail(f"{p}.x0", f"initial condition needs {M + 1} numbers")
        elif abs(v[0]) > 1e-12 or abs(v[-1]) > 1e-12:
            ck.fail(f"{p}.x0", "must vanish at both boundary nodes")
        else:
            x0 = np.asarray(v, dtype=float)

    e, pe = sec["estimator"], "$.estimator"
    kind = e.get("kind", "global")
    if kind not in ESTIMATORS:
        ck.fail(f"{pe}.kind", f"must be one of {ESTIMATORS}, got {kind!r}")
    alpha_bar = ck.number(e, "alpha_bar", pe, 0.05, cond=lambda v: 0 < v < 1, what="0 < alpha_bar < 1")
    policy = e.get("forward_policy", "implicit-euler")
    if policy not in FORWARD_POLICIES:
        ck.fail(f"{pe}.forward_policy", f"must be one of {FORWARD_POLICIES}, got {policy!r}")
    K_nu = ck.integer(e, "K_nu", pe, -1, cond=lambda v: 1 <= v <= M - 1, what=f"1 <= K_nu <= {M - 1}")
    K_nu = None if K_nu == -1 else K_nu
    window = None
    if "window" in e:
        w = ck.keys(e["window"], WINDOW_KEYS, f"{pe}.window")
        pw = f"{pe}.window"
        y0 = ck.number(w, "y0", pw, cond=lambda v: 0 < v < l, what=f"0 < y0 < {l}")
        t0 = ck.number(w, "t0", pw, cond=lambda v: 0 < v < T, what=f"0 < t0 < {T}")
        dy = ck.number(w, "delta_y", pw, cond=lambda v: 0 < v <= 1, what="0 < delta_y <= 1")
        dt = ck.number(w, "delta_t", pw, cond=lambda v: v > 0, what="delta_t > 0")
        if None not in (y0, t0, dy, dt):
            if dt > min(t0, T - t0) * (1 + 1e-12):
                ck.fail(f"{pw}.delta_t", f"must satisfy delta_t <= min(t0, T - t0) = {min(t0, T - t0)}")
            else:
                window = Window(y0, t0, dy, dt)
    elif kind == "localized":
        ck.fail(f"{pe}.window", "required for the localized estimator")
    nonparam = None
    if "nonparam" in e:
        npd = ck.keys(e["nonparam"], NONPARAM_KEYS, f"{pe}.nonparam")
        pn = f"{pe}.nonparam"
        ey = ck.number(npd, "eta_y", pn, cond=lambda v: 0 < v <= 1, what="0 < eta_y <= 1")
        et = ck.number(npd, "eta_t", pn, cond=lambda v: 0 < v <= 1, what="0 < eta_t <= 1")
        pts = npd.get("points")
        ok_pts = (
            isinstance(pts, list) and pts
            and all(isinstance(q, list) and len(q) == 2 and all(isinstance(c, numbers.Real) for c in q) for q in pts)
        )
        if not ok_pts:
            ck.fail(f"{pn}.points", "expected a non-empty list of [y0, t0] pairs")
        else:
            for i, (y0, t0) in enumerate(pts):
                if not (0 < y0 < l and 0 < t0 < T):
                    ck.fail(f"{pn}.points[{i}]", f"point must lie in (0, {l}) x (0, {T})")
        bw = npd.get("bandwidths", "optimal")
        if bw != "optimal" and not (
            isinstance(bw, list) and len(bw) == 2 and all(isinstance(c, numbers.Real) and c > 0 for c in bw)
        ):
            ck.fail(f"{pn}.bandwidths", 'expected "optimal" or [delta_y, delta_t] with positive entries')
            bw = "optimal"
        if ey is not None and et is not None and ok_pts:
            nonparam = NonparamSpec(ey, et, tuple(tuple(map(float, q)) for q in pts),
                                    bw if bw == "optimal" else tuple(map(float, bw)))
    elif kind == "nonparametric":
        ck.fail(f"{pe}.nonparam", "required for the nonparametric estimator")
    if callable(theta) and kind in ("global", "spectral"):
        ck.fail(f"{p}.theta_field", f"a space-time theta cannot be targeted by the {kind} estimator")
    if kind == "spectral" and reaction != "linear":
        ck.fail(f"{p}.reaction", "the spectral estimator needs the linear reaction")

    mc, pm = sec["mc"], "$.mc"
    nus = mc.get("nus", [])
    if not isinstance(nus, list) or not all(isinstance(v, numbers.Real) and not isinstance(v, bool) for v in nus):
        ck.fail(f"{pm}.nus", "expected a list of numbers")
        nus = []
    elif any(v <= 0 for v in nus):
        ck.fail(f"{pm}.nus", "diffusivities must be strictly positive")
    elif len(set(nus)) != len(nus):
        ck.fail(f"{pm}.nus", "diffusivities must be distinct")
    runs = ck.integer(mc, "runs", pm, 100, cond=lambda v: v >= 2, what="runs >= 2")
    base_seed = ck.integer(mc, "base_seed", pm, 0, cond=lambda v: 0 <= v < 2**64, what="0 <= base_seed < 2^64")
    paired = mc.get("paired", False)
    if not isinstance(paired, bool):
        ck.fail(f"{pm}.paired", "expected true or false")
    block = ck.integer(mc, "block_size", pm, 50, cond=lambda v: v >= 1, what="block_size >= 1")
    chunk = ck.integer(mc, "chunk", pm, 512, cond=lambda v: v >= 1, what="chunk >= 1")
    workers = ck.integer(mc, "workers", pm, -1, cond=lambda v: v >= 0, what="workers >= 0")
    rate_max_nu = ck.number(mc, "rate_max_nu", pm, -1.0, cond=lambda v: v > 0, what="rate_max_nu > 0")

    mp, pp = sec["mesh_policy"], "$.mesh_policy"
    d = MeshPolicy()
    beta = ck.number(mp, "beta", pp, d.beta, cond=lambda v: v > 1, what="beta > 1")
    cap = (1 - 1 / beta) / 2
    gamma_t = ck.number(mp, "gamma_t", pp, d.gamma_t, cond=lambda v: 0 < v < cap, what=f"0 < gamma_t < {cap:.6g}")
    p_y = ck.number(mp, "p_y", pp, d.p_y, cond=lambda v: v > 0, what="p_y > 0")
    gamma_y = ck.number(mp, "gamma_y", pp, d.gamma_y, cond=lambda v: 0 < v < cap - 1 / p_y,
                        what=f"0 < gamma_y < {cap - 1 / p_y:.6g}")
    tg = ck.number(mp, "tilde_gamma_y", pp, d.tilde_gamma_y, cond=lambda v: v > 0 and p_y > 1 / v,
                   what="p_y > 1/tilde_gamma_y")

    o, po = sec["output"], "$.output"
    out_dir = o.get("dir", "out")
    if not isinstance(out_dir, str):
        ck.fail(f"{po}.dir", "expected a string")
    formats = o.get("formats", ["csv", "png", "gnuplot"])
    if not isinstance(formats, list) or not set(formats) <= FORMATS:
        ck.fail(f"{po}.formats", f"expected a list drawn from {sorted(FORMATS)}")
        formats = ["csv"]

    s, ps = sec["simulate"], "$.simulate"
    seed = ck.integer(s, "seed", ps, 0, cond=lambda v: 0 <= v < 2**64, what="0 <= seed < 2^64")
    guard = ck.number(s, "guard", ps, DEFAULT_GUARD, cond=lambda v: v > 0, what="guard > 0")

    if ck.problems:
        raise ConfigError(ck.problems)
    model = ModelSpec(DomainSpec(l, alpha, K), nu, theta, REACTIONS[reaction], sigma, T, x0)
    return RunConfig(
        model, M, N, kind, window, nonparam, alpha_bar, policy, K_nu, tuple(map(float, nus)),
        runs, base_seed, paired, block, chunk, None if rate_max_nu == -1.0 else rate_max_nu,
        None if workers == -1 else workers, MeshPolicy(beta, gamma_t, gamma_y, p_y, tg),
        out_dir, tuple(formats), seed, guard,
    )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"invalid JSON: {exc}")]) from None
    return parse_config(doc)


@dataclass(frozen=True)
class _NodalField:
    """Noise level given by nodal values; evaluated on the matching grid only."""

    values: tuple[float, ...]

    def __call__(self, y):
        y = np.asarray(y)
        if y.shape != (len(self.values),):
            raise ValueError(f"nodal noise level has {len(self.values)} values, grid has {y.size} nodes")
        return np.asarray(self.values)
