"""Command-line interface.

Exit status: 0 success, 2 invalid input, 3 numerical failure. Errors are
printed to stderr as ``error[CODE]: message``.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .estimators import (
    EmptyWindow,
    GridMismatch,
    KnownPhysics,
    Window,
    ZeroInformation,
    estimate_global,
    estimate_localized,
    estimate_nonparametric,
)
from .experiments import MCAbort, MCResult, fit_rate, normality_stats, run_mc
from .fileio import TrajectoryFileError, read_csv, read_trajectory, write_csv, write_trajectory
from .mesh import MeshPolicy, mesh_ratios
from .modes import estimate_spectral
from .simulator import BlowUpError, MeshGuardError, simulate

log = logging.getLogger("spde_lab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

ESTIMATE_COLUMNS = ["estimator", "theta_hat", "fisher", "stderr", "ci_lo", "ci_hi", "alpha_bar",
                    "n_increments", "y0", "t0", "delta_y", "delta_t"]
MC_COLUMNS = ["nu", "run", "seed", "theta_hat", "fisher", "ci_lo", "ci_hi", "covered", "blowup"]
DIAG_COLUMNS = ["nu", "runs_used", "blowups", "mse", "bias", "variance", "coverage", "z_mean", "z_var",
                "ks", "mesh_status", "r_t", "r_y", "delta_y", "delta_t"]
RATE_COLUMNS = ["slope", "intercept", "r2", "n_points"]


def _physics(cfg: RunConfig, traj) -> KnownPhysics:
    """Known physics from the config, with nu taken from the trajectory file."""
    if traj.nu != cfg.model.nu:
        log.warning("trajectory nu=%g differs from config nu=%g; using the trajectory value",
                    traj.nu, cfg.model.nu)
    m = cfg.model
    return KnownPhysics(m.dom, traj.nu, m.reaction, m.sigma, cfg.forward_policy)


def _header(cfg: RunConfig, **extra) -> dict:
    h = {"spde_lab": __version__, "base_seed": cfg.base_seed}
    h.update(extra)
    return h


def _out_path(args, cfg: RunConfig, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / default


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    traj = simulate(cfg.model, cfg.grid, seed, guard=cfg.guard, force=args.force)
    path = _out_path(args, cfg, "trajectory.spd")
    write_trajectory(path, traj)
    print(f"wrote {path} (M={cfg.M}, N={cfg.N}, seed={seed})")
    return EXIT_OK


def _write_estimates(args, cfg, traj, results) -> int:
    path = _out_path(args, cfg, "estimate.csv")
    write_csv(path, ESTIMATE_COLUMNS, [r.record() for r in results],
              _header(cfg, seed=traj.seed, nu=traj.nu))
    for r in results:
        lo, hi = r.ci
        print(f"{r.kind}: theta_hat={r.theta_hat:.10g} fisher={r.fisher:.6g} "
              f"ci=[{lo:.6g}, {hi:.6g}]")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    traj = read_trajectory(args.traj)
    return _write_estimates(args, cfg, traj, [estimate_global(traj, _physics(cfg, traj), cfg.alpha_bar)])


def cmd_estimate_local(args) -> int:
    cfg = load_config(args.config)
    traj = read_trajectory(args.traj)
    flags = (args.y0, args.t0, args.delta_y, args.delta_t)
    if all(v is not None for v in flags):
        win = Window(*flags)
    elif cfg.window is not None:
        win = cfg.window
    else:
        raise ConfigError([("$.estimator.window", "required (or pass --y0 --t0 --delta-y --delta-t)")])
    return _write_estimates(args, cfg, traj, [estimate_localized(traj, _physics(cfg, traj), win, cfg.alpha_bar)])


def cmd_estimate_nonparam(args) -> int:
    cfg = load_config(args.config)
    if cfg.nonparam is None:
        raise ConfigError([("$.estimator.nonparam", "required for estimate-nonparam")])
    traj = read_trajectory(args.traj)
    points = estimate_nonparametric(traj, _physics(cfg, traj), cfg.nonparam, cfg.alpha_bar)
    results = []
    for pe in points:
        if pe.error:
            print(f"point {pe.point}: skipped ({pe.error})", file=sys.stderr)
        else:
            results.append(pe.result)
    if not results:
        raise EmptyWindow("no evaluation point admits a window")
    return _write_estimates(args, cfg, traj, results)


def cmd_estimate_spectral(args) -> int:
    cfg = load_config(args.config)
    traj = read_trajectory(args.traj)
    K = args.k_nu if args.k_nu is not None else cfg.K_nu
    return _write_estimates(args, cfg, traj, [estimate_spectral(traj, _physics(cfg, traj), K, cfg.alpha_bar)])


def write_mc_outputs(mc: MCResult, cfg: RunConfig, out_dir: Path) -> dict:
    """mc.csv, diagnostics.csv, rate.csv (+ subset fit), plot script and figure."""
    out_dir.mkdir(parents=True, exist_ok=True)
    c = mc.config
    header = _header(cfg, estimator=c.estimator, target=mc.per_nu[0].target, runs=c.runs,
                     M=c.M, N=c.N, forward_policy=c.forward, alpha_bar=c.alpha_bar,
                     blowup_policy="excluded; abort above 10% per nu")
    rows = []
    for res in mc.per_nu:
        lo, hi = res.intervals()
        cov = res.covered()
        for r in range(len(res.seeds)):
            rows.append([res.nu, r, int(res.seeds[r]), res.theta_hat[r], res.fisher[r], lo[r], hi[r],
                         bool(cov[r]), bool(res.blowup[r])])
    files = {"mc": out_dir / "mc.csv", "diagnostics": out_dir / "diagnostics.csv", "rate": out_dir / "rate.csv"}
    write_csv(files["mc"], MC_COLUMNS, rows, header)

    diag = []
    for res in mc.per_nu:
        z_mean, z_var, ks = normality_stats(res.z()) if res.runs_used else (math.nan,) * 3
        cov = res.covered()[res.used]
        diag.append([res.nu, res.runs_used, res.blowups, res.mse, res.bias, res.variance,
                     float(cov.mean()), z_mean, z_var, ks, res.mesh.status, res.mesh.r_t, res.mesh.r_y,
                     "" if res.delta_y is None else res.delta_y, "" if res.delta_t is None else res.delta_t])
    write_csv(files["diagnostics"], DIAG_COLUMNS, diag, header)

    fit = None
    if len(mc.per_nu) >= 3:
        fit = fit_rate(mc.mse_points())
        write_csv(files["rate"], RATE_COLUMNS, [[fit.slope, fit.intercept, fit.r_squared, fit.n_points]], header)
        if c.rate_max_nu is not None:
            pts = mc.mse_points(c.rate_max_nu)
            if len(pts) >= 3:
                sub = fit_rate(pts)
                files["rate_subset"] = out_dir / "rate_subset.csv"
                write_csv(files["rate_subset"], RATE_COLUMNS,
                          [[sub.slope, sub.intercept, sub.r_squared, sub.n_points]],
                          dict(header, rate_max_nu=c.rate_max_nu))
            else:
                log.warning("fewer than 3 diffusivities below %g; no subset fit", c.rate_max_nu)
    else:
        files.pop("rate")
        log.warning("fewer than 3 diffusivities; no rate fit")

    if fit is not None and "gnuplot" in cfg.formats:
        from .plotting import gnuplot_script

        files["gnuplot"] = out_dir / "plot_mse.gp"
        files["gnuplot"].write_text(gnuplot_script("plot_mse.gp", "diagnostics.csv", "mse_gnuplot.png", fit))
    if fit is not None and "png" in cfg.formats:
        from .plotting import plot_mse

        files["png"] = out_dir / "mse.png"
        plot_mse(mc.nus, [r.mse for r in mc.per_nu], fit, files["png"],
                 title=f"{c.model.reaction.name}, theta={mc.per_nu[0].target:g}, R={c.runs}")
    return files


def cmd_mc(args) -> int:
    cfg = load_config(args.config)
    mc = run_mc(cfg.mc_config(), workers=args.workers if args.workers is not None else cfg.workers)
    out_dir = Path(args.out_dir or cfg.out_dir)
    files = write_mc_outputs(mc, cfg, out_dir)
    for res in mc.per_nu:
        print(f"nu={res.nu:g}: mse={res.mse:.6g} bias={res.bias:.4g} used={res.runs_used} blowups={res.blowups}")
    for name, path in files.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


def mse_points_from_csv(path, theta: float | None = None) -> list[tuple[float, float]]:
    """(nu, mse) pairs from a file with an ``mse`` column or per-run mc.csv rows."""
    header, rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if "mse" in rows[0]:
        return [(float(r["nu"]), float(r["mse"])) for r in rows]
    target = theta if theta is not None else header.get("target")
    if target is None:
        raise ValueError(f"{path}: per-run rows need the true theta (header 'target' or --theta)")
    target = float(target)
    groups: dict[float, list[float]] = {}
    for r in rows:
        if r.get("blowup", "0") in ("1", "True", "true"):
            continue
        groups.setdefault(float(r["nu"]), []).append((float(r["theta_hat"]) - target) ** 2)
    return [(nu, math.fsum(v) / len(v)) for nu, v in groups.items()]


def cmd_rate(args) -> int:
    pts = mse_points_from_csv(args.csv, args.theta)
    if args.max_nu is not None:
        pts = [p for p in pts if p[0] <= args.max_nu]
    fit = fit_rate(pts)
    out = Path(args.out) if args.out else Path(args.csv).with_name("rate.csv")
    write_csv(out, RATE_COLUMNS, [[fit.slope, fit.intercept, fit.r_squared, fit.n_points]])
    print(f"slope={fit.slope:.10g} intercept={fit.intercept:.10g} r2={fit.r_squared:.10g} n={fit.n_points}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check_mesh(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        policy, nu, dt, dy = cfg.mesh_policy, cfg.model.nu, cfg.grid.dt, cfg.grid.dy
    else:
        policy, nu, dt, dy = MeshPolicy(), None, None, None
    overrides = {k: getattr(args, k) for k in ("beta", "gamma_t", "gamma_y", "p_y", "tilde_gamma_y")
                 if getattr(args, k) is not None}
    if overrides:
        fields = {k: getattr(policy, k) for k in ("beta", "gamma_t", "gamma_y", "p_y", "tilde_gamma_y")}
        fields.update(overrides)
        policy = MeshPolicy(**fields)
    nu = args.nu if args.nu is not None else nu
    dt = args.delta_t if args.delta_t is not None else dt
    dy = args.delta_y if args.delta_y is not None else dy
    missing = [n for n, v in (("--nu", nu), ("--delta-t", dt), ("--delta-y", dy)) if v is None]
    if missing:
        raise ConfigError([("$", f"missing {', '.join(missing)} (give a config or the flags)")])
    report = mesh_ratios(nu, dt, dy, policy)
    print(f"mesh check at nu={nu:g} (beta={policy.beta:g}, gamma_t={policy.gamma_t:g}, "
          f"gamma_y={policy.gamma_y:g}, p_y={policy.p_y:g}, tilde_gamma_y={policy.tilde_gamma_y:g})")
    for line in report.lines():
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spde-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one trajectory and write an SPD1 file")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--force", action="store_true", help="ignore pre-flight grid warnings")
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (
        ("estimate", cmd_estimate, "global discretised MLE"),
        ("estimate-local", cmd_estimate_local, "windowed MLE"),
        ("estimate-nonparam", cmd_estimate_nonparam, "pointwise estimates of a space-time theta"),
        ("estimate-spectral", cmd_estimate_spectral, "Fourier-mode MLE (linear reaction)"),
    ):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--config", required=True)
        e.add_argument("--traj", required=True)
        e.add_argument("--out")
        if name == "estimate-local":
            for flag in ("--y0", "--t0", "--delta-y", "--delta-t"):
                e.add_argument(flag, type=float)
        if name == "estimate-spectral":
            e.add_argument("--k-nu", type=int)
        e.set_defaults(func=func)

    m = sub.add_parser("mc", help="Monte-Carlo sweep over diffusivities")
    m.add_argument("--config", required=True)
    m.add_argument("--out-dir")
    m.add_argument("--workers", type=int)
    m.set_defaults(func=cmd_mc)

    r = sub.add_parser("rate", help="fit log MSE against log nu")
    r.add_argument("csv")
    r.add_argument("--out")
    r.add_argument("--theta", type=float)
    r.add_argument("--max-nu", type=float)
    r.set_defaults(func=cmd_rate)

    c = sub.add_parser("check-mesh", help="compare mesh widths with the discretisation scales")
    c.add_argument("--config")
    c.add_argument("--nu", type=float)
    c.add_argument("--delta-t", type=float)
    c.add_argument("--delta-y", type=float)
    for flag in ("--beta", "--gamma-t", "--gamma-y", "--p-y", "--tilde-gamma-y"):
        c.add_argument(flag, type=float)
    c.set_defaults(func=cmd_check_mesh)
    return p


def _fail(code: str, msg: str, status: int) -> int:
    print(f"error[{code}]: {msg}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BlowUpError, ZeroInformation, MCAbort, ArithmeticError) as exc:
        return _fail(getattr(exc, "code", "NUMERIC"), str(exc), EXIT_NUMERIC)
    except (ConfigError, TrajectoryFileError, GridMismatch, EmptyWindow, MeshGuardError) as exc:
        return _fail(exc.code, str(exc), EXIT_INVALID)
    except (ValueError, OSError) as exc:
        return _fail("INVALID", str(exc), EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
