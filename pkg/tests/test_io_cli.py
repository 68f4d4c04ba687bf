import json
import math

import numpy as np
import pytest

from spde_lab.cli import main, mse_points_from_csv
from spde_lab.config import ConfigError, load_config, parse_config
from spde_lab.estimators import KnownPhysics, estimate_global
from spde_lab.fileio import (
    BadMagic,
    TruncatedFile,
    VersionUnsupported,
    fmt,
    read_csv,
    read_trajectory,
    write_csv,
    write_trajectory,
)
from spde_lab.simulator import ModelSpec, simulate


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


BASE = {
    "model": {"nu": 0.02, "theta": 3.0, "reaction": "f1"},
    "grid": {"M": 32, "N": 512},
    "simulate": {"seed": 11},
}


class TestTrajectoryFile:
    @pytest.fixture
    def traj(self):
        model = ModelSpec(nu=0.03)
        return simulate(model, model.grid(16, 40), 2**63 + 5)

    def test_round_trip(self, tmp_path, traj):
        path = tmp_path / "t.spd"
        write_trajectory(path, traj)
        back = read_trajectory(path)
        assert back == traj
        assert back.values.tobytes() == traj.values.tobytes()
        assert back.seed == 2**63 + 5

    def test_layout(self, tmp_path, traj):
        path = tmp_path / "t.spd"
        write_trajectory(path, traj)
        data = path.read_bytes()
        assert data[:4] == b"SPD1"
        assert len(data) == 4 + 4 + 8 + 8 + 4 * 8 + 8 + 8 * 41 * 17

    def test_bad_magic(self, tmp_path, traj):
        path = tmp_path / "t.spd"
        write_trajectory(path, traj)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(BadMagic):
            read_trajectory(path)

    def test_version(self, tmp_path, traj):
        path = tmp_path / "t.spd"
        write_trajectory(path, traj)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(VersionUnsupported):
            read_trajectory(path)

    def test_truncated(self, tmp_path, traj):
        path = tmp_path / "t.spd"
        write_trajectory(path, traj)
        data = path.read_bytes()
        cut = len(data) - 8 * 17 // 2 - 3
        path.write_bytes(data[:cut])
        with pytest.raises(TruncatedFile) as info:
            read_trajectory(path)
        assert info.value.offset == cut
        assert str(cut) in str(info.value)


class TestCSV:
    def test_round_trip_digits(self, tmp_path):
        vals = [math.pi, 1 / 3, 1e-300, -2.5e17, 0.1 + 0.2]
        path = tmp_path / "x.csv"
        write_csv(path, ["v", "flag"], [[v, i % 2 == 0] for i, v in enumerate(vals)], {"base_seed": 4})
        header, rows = read_csv(path)
        assert header == {"base_seed": "4"}
        assert [float(r["v"]) for r in rows] == vals
        assert [r["flag"] for r in rows] == ["1", "0", "1", "0", "1"]

    def test_fmt(self):
        assert fmt(np.float64(0.1)) == "0.10000000000000001"
        assert fmt(np.int64(3)) == "3"
        assert fmt(np.bool_(False)) == "0"


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({"model": {}, "grid": {}})
        assert (cfg.M, cfg.N) == (256, 65536)
        assert cfg.model.theta == 3.0 and cfg.forward_policy == "implicit-euler"

    def test_unknown_key_path(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"model": {"nuu": 0.1}, "grid": {}, "extra": 1})
        paths = [p for p, _ in info.value.problems]
        assert "$.model.nuu" in paths and "$.extra" in paths

    @pytest.mark.parametrize("section,key,value", [
        ("model", "alpha", 2.5), ("model", "nu", 0.0), ("model", "l", -1.0), ("model", "sigma", -1.0),
        ("grid", "M", 1), ("grid", "N", 0), ("model", "K", 40), ("mesh_policy", "gamma_t", 0.3),
        ("mesh_policy", "tilde_gamma_y", 0.0001), ("estimator", "alpha_bar", 1.5),
        ("estimator", "forward_policy", "rk4"), ("mc", "runs", 1),
    ])
    def test_violations_carry_json_path(self, section, key, value):
        doc = {"model": {}, "grid": {"M": 32, "N": 10}}
        doc.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError) as info:
            parse_config(doc)
        assert f"$.{section}.{key}" in [p for p, _ in info.value.problems]

    def test_collects_every_problem(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"model": {"alpha": 3, "nu": -1}, "grid": {"M": 1}})
        assert len(info.value.problems) == 3

    def test_window_and_field(self):
        cfg = parse_config({
            "model": {"theta_field": {"c0": 3, "cy": 1}},
            "grid": {"M": 32, "N": 10},
            "estimator": {"kind": "localized", "window": {"y0": 0.5, "t0": 0.5, "delta_y": 0.5, "delta_t": 0.25}},
        })
        assert cfg.window.delta_t == 0.25 and cfg.model.theta(0.5, 0.0) == 3.5
        with pytest.raises(ConfigError):
            parse_config({"model": {"theta_field": {"c0": 3}}, "grid": {}})

    def test_nodal_sigma(self):
        sig = [1.0] * 9
        cfg = parse_config({"model": {"sigma": sig}, "grid": {"M": 8, "N": 4}})
        np.testing.assert_array_equal(cfg.model.sigma_nodes(cfg.grid), sig)
        with pytest.raises(ConfigError):
            parse_config({"model": {"sigma": [1.0] * 5}, "grid": {"M": 8, "N": 4}})

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{model:")
        with pytest.raises(ConfigError):
            load_config(p)


class TestCLI:
    def test_simulate_then_estimate_bit_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, BASE)
        traj_path = str(tmp_path / "t.spd")
        out = str(tmp_path / "est.csv")
        assert main(["simulate", "--config", cfg_path, "--out", traj_path]) == 0
        assert main(["estimate", "--config", cfg_path, "--traj", traj_path, "--out", out]) == 0
        header, rows = read_csv(out)
        model = ModelSpec(nu=0.02)
        traj = simulate(model, model.grid(32, 512), 11)
        est = estimate_global(traj, KnownPhysics.from_model(model, forward="implicit-euler"))
        assert float(rows[0]["theta_hat"]) == est.theta_hat
        assert float(rows[0]["fisher"]) == est.fisher
        assert header["seed"] == "11"

    def test_other_estimators(self, tmp_path):
        doc = json.loads(json.dumps(BASE))
        doc["model"]["reaction"] = "linear"
        doc["estimator"] = {"nonparam": {"eta_y": 1, "eta_t": 1, "points": [[0.5, 0.5], [0.3, 0.6]],
                                         "bandwidths": [0.5, 0.25]}}
        cfg_path = write_config(tmp_path, doc)
        traj_path = str(tmp_path / "t.spd")
        assert main(["simulate", "--config", cfg_path, "--out", traj_path]) == 0
        for cmd, extra in (("estimate-local", ["--y0", "0.5", "--t0", "0.5", "--delta-y", "0.5", "--delta-t", "0.25"]),
                           ("estimate-nonparam", []), ("estimate-spectral", ["--k-nu", "2"])):
            out = str(tmp_path / f"{cmd}.csv")
            assert main([cmd, "--config", cfg_path, "--traj", traj_path, "--out", out] + extra) == 0
            _, rows = read_csv(out)
            assert rows and all(math.isfinite(float(r["theta_hat"])) for r in rows)
        _, rows = read_csv(tmp_path / "estimate-nonparam.csv")
        assert len(rows) == 2

    def test_rate_on_hand_written_csv(self, tmp_path):
        src = tmp_path / "mc.csv"
        lines = ["nu,mse"] + [f"{nu!r},{nu ** 0.5!r}" for nu in (0.1, 0.05, 0.02, 0.01, 0.005)]
        src.write_text("\n".join(lines) + "\n")
        assert main(["rate", str(src)]) == 0
        _, rows = read_csv(tmp_path / "rate.csv")
        assert abs(float(rows[0]["slope"]) - 0.5) < 1e-12
        assert abs(float(rows[0]["r2"]) - 1.0) < 1e-12

    def test_rate_from_per_run_rows(self, tmp_path):
        src = tmp_path / "mc.csv"
        rows = []
        for nu in (0.1, 0.01, 0.001):
            e = nu**0.25
            rows += [[nu, 0, 0, 3 + e, 1, 0, 0, 1, 0], [nu, 1, 0, 3 - e, 1, 0, 0, 1, 0]]
        write_csv(src, ["nu", "run", "seed", "theta_hat", "fisher", "ci_lo", "ci_hi", "covered", "blowup"],
                  rows, {"target": 3.0})
        pts = mse_points_from_csv(src)
        for nu, mse in pts:
            assert mse == pytest.approx(nu**0.5, rel=1e-12)

    def test_check_mesh_output(self, capsys):
        nu = 0.01
        code = main(["check-mesh", "--nu", str(nu), "--delta-t", repr(nu**1.1), "--delta-y", repr(nu**3.5),
                     "--beta", "2", "--gamma-t", "0.24"])
        out = capsys.readouterr().out
        assert code == 0
        line = next(ln for ln in out.splitlines() if ln.startswith("time"))
        assert "PASS" in line
        assert float(line.split("=")[1].split()[0]) == pytest.approx(0.765, abs=1e-3)
        code = main(["check-mesh", "--nu", str(nu), "--delta-t", repr(nu**0.5), "--delta-y", repr(nu**3.5)])
        line = next(ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("time"))
        assert "WARN" in line

    def test_exit_codes(self, tmp_path, capsys):
        bad = write_config(tmp_path, {"model": {"alpha": 7}, "grid": {}}, "bad.json")
        assert main(["simulate", "--config", bad]) == 2
        assert "error[CONFIG]" in capsys.readouterr().err
        junk = tmp_path / "junk.spd"
        junk.write_bytes(b"XXXXjunk")
        assert main(["estimate", "--config", write_config(tmp_path, BASE), "--traj", str(junk)]) == 2
        assert "error[BAD_MAGIC]" in capsys.readouterr().err
        zero = json.loads(json.dumps(BASE))
        zero["model"]["reaction"] = "zero"
        zpath = write_config(tmp_path, zero, "zero.json")
        tpath = str(tmp_path / "z.spd")
        assert main(["simulate", "--config", zpath, "--out", tpath]) == 0
        assert main(["estimate", "--config", zpath, "--traj", tpath, "--out", str(tmp_path / "z.csv")]) == 3
        assert "error[ZERO_INFORMATION]" in capsys.readouterr().err
        blow = json.loads(json.dumps(BASE))
        blow["model"].update(reaction="f2", x0=[0.0] + [50.0] * 31 + [0.0])
        blow["grid"]["N"] = 16
        bpath = write_config(tmp_path, blow, "blow.json")
        assert main(["simulate", "--config", bpath, "--out", str(tmp_path / "b.spd")]) == 2
        assert "error[MESH_GUARD]" in capsys.readouterr().err
        assert main(["simulate", "--config", bpath, "--out", str(tmp_path / "b.spd"), "--force"]) == 3
        assert "error[BLOWUP]" in capsys.readouterr().err

    def test_config_error_message(self, tmp_path, capsys):
        bad = write_config(tmp_path, {"model": {"alpha": 7}, "grid": {}}, "bad.json")
        assert main(["simulate", "--config", bad]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error[CONFIG]") and "$.model.alpha" in err

    def test_mc_outputs(self, tmp_path):
        doc = json.loads(json.dumps(BASE))
        doc["grid"] = {"M": 16, "N": 128}
        doc["mc"] = {"nus": [0.1, 0.05, 0.02], "runs": 4, "base_seed": 3, "block_size": 3}
        cfg_path = write_config(tmp_path, doc)
        out = tmp_path / "run"
        assert main(["mc", "--config", cfg_path, "--out-dir", str(out), "--workers", "1"]) == 0
        for name in ("mc.csv", "diagnostics.csv", "rate.csv", "plot_mse.gp", "mse.png"):
            assert (out / name).exists()
        header, rows = read_csv(out / "mc.csv")
        assert header["base_seed"] == "3"
        assert list(rows[0]) == ["nu", "run", "seed", "theta_hat", "fisher", "ci_lo", "ci_hi", "covered", "blowup"]
        assert len(rows) == 12
        script = (out / "plot_mse.gp").read_text()
        assert "diagnostics.csv" in script and "using 1:4" in script
        _, diag = read_csv(out / "diagnostics.csv")
        assert list(diag[0])[3] == "mse"
