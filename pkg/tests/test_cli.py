import json
import math

import pytest

from holomodel.cli import dumps_report, emit_report, load_config, main
from holomodel.errors import ConfigError, IoError

AUTO = "(2*z0 + 1)/(z0 + 2)"
DISC = {"kind": "ball", "dim": 1}


def write_config(tmp_path, body, name="job.json"):
    path = tmp_path / name
    path.write_text(body if isinstance(body, str) else json.dumps(body))
    return path


def run(tmp_path, command, body, out="out"):
    cfg = write_config(tmp_path, body)
    status = main([command, "--config", str(cfg), "--out", str(tmp_path / out)])
    report = tmp_path / out / f"{command}_report.json"
    return status, report


class TestConfig:
    def test_points_accept_several_forms(self, tmp_path):
        body = {
            "map": {"domain": {"kind": "ball", "dim": 2}, "expressions": ["z0/2", "z1/2"]},
            "base_point": [0.1, [0.2, -0.3]],
            "zeta": ["1", 0],
            "orbit_start": ["0.1+0.2j", 0],
        }
        cfg = load_config(write_config(tmp_path, body), "verify")
        assert cfg.base_point[1] == complex(0.2, -0.3)
        assert cfg.orbit_start[0] == complex(0.1, 0.2)

    def test_malformed_json_names_config(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(write_config(tmp_path, "{not json"), "classify")
        assert err.value.field == "config"

    @pytest.mark.parametrize(
        "body,field",
        [
            ({}, "map"),
            ({"map": {"expressions": [AUTO]}}, "map.domain"),
            ({"map": {"domain": DISC, "expressions": ["z0 +"]}}, "map.components"),
            ({"map": {"domain": DISC, "expressions": [AUTO]}, "base_point": [1.5]}, "base_point"),
            ({"map": {"domain": DISC, "expressions": [AUTO]}, "tolerances": {"rate_tol": -1}}, "tolerances.rate_tol"),
            ({"map": {"domain": DISC, "expressions": [AUTO]}, "tolerances": {"bogus": 1}}, "tolerances.bogus"),
            ({"map": {"domain": DISC, "expressions": [AUTO]}, "seed": -3}, "seed"),
            ({"map": {"domain": DISC, "expressions": [AUTO]}, "horizon": 0}, "horizon"),
        ],
    )
    def test_field_errors(self, tmp_path, body, field):
        with pytest.raises(ConfigError) as err:
            load_config(write_config(tmp_path, body), "classify")
        assert err.value.field == field
        assert str(err.value).startswith(field)

    def test_backward_requires_zeta(self, tmp_path):
        body = {"map": {"domain": DISC, "expressions": ["z0**2"]}, "orbit_start": 0.5}
        with pytest.raises(ConfigError) as err:
            load_config(write_config(tmp_path, body), "backward")
        assert err.value.field == "zeta"

    def test_tolerance_override(self, tmp_path):
        body = {"map": {"domain": DISC, "expressions": [AUTO]}, "tolerances": {"rate_horizon": 1024, "svd_tol": 1e-5}}
        cfg = load_config(write_config(tmp_path, body), "classify")
        assert cfg.tolerances.rate_horizon == 1024 and isinstance(cfg.tolerances.rate_horizon, int)
        assert cfg.model_tolerances["svd_tol"] == 1e-5


class TestReports:
    def test_formatting(self):
        text = dumps_report({"x": 1 / 3, "inf": math.inf, "nan": math.nan, "z": 1 + 2j, "v": [1, 2]})
        data = json.loads(text)
        assert data["x"] == 1 / 3
        assert data["inf"] == "inf" and data["nan"] == "nan"
        assert '"v": [1, 2]' in text

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        target = blocker / "report.json"
        with pytest.raises(IoError) as err:
            emit_report({"a": 1}, target)
        assert str(target) in str(err.value)


class TestCommands:
    def test_classify(self, tmp_path):
        status, path = run(tmp_path, "classify", {"map": {"domain": DISC, "expressions": [AUTO]}})
        assert status == 0
        res = json.loads(path.read_text())["result"]
        assert res["kind"] == "hyperbolic"
        assert res["lambda"] == pytest.approx(1 / 3, abs=1e-6)
        assert res["c"] == pytest.approx(math.log(3), abs=1e-3)

    def test_valiron(self, tmp_path):
        status, path = run(tmp_path, "valiron", {"map": {"domain": DISC, "expressions": ["(z0 + 1)/2"]}})
        assert status == 0
        res = json.loads(path.read_text())["result"]
        assert res["lambda"] == pytest.approx(0.5, abs=1e-6)
        assert res["residual"] < 1e-5

    def test_backward_writes_csv(self, tmp_path):
        body = {"map": {"domain": DISC, "expressions": ["z0**2"]}, "zeta": 1, "orbit_start": 0.5}
        status, path = run(tmp_path, "backward", body)
        assert status == 0
        assert (tmp_path / "out" / "backward_orbit.csv").read_text().startswith("n,re0,im0,k_next")
        res = json.loads(path.read_text())["result"]
        assert res["mu"]["value"] == pytest.approx(2, abs=1e-2)

    def test_not_repelling_exit_1(self, tmp_path, capsys):
        body = {"map": {"domain": DISC, "expressions": ["(z0 + 1)/2"]}, "zeta": 1, "orbit_start": 0}
        status, path = run(tmp_path, "backward", body)
        assert status == 1
        assert json.loads(path.read_text())["error"]["type"] == "NotRepelling"
        assert "NotRepelling" in capsys.readouterr().err

    def test_unconverged_exit_2(self, tmp_path):
        body = {"map": {"domain": DISC, "expressions": ["(z0 + 1)/2"]}, "horizon": 5}
        status, path = run(tmp_path, "forward", body)
        assert status == 2
        report = json.loads(path.read_text())
        assert report["result"] is None and report["error"]["type"] == "ModelNotConverged"

    def test_malformed_exit_1(self, tmp_path, capsys):
        status, _ = run(tmp_path, "classify", "{")
        assert status == 1
        assert "config" in capsys.readouterr().err

    def test_report_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HOLOMODEL_REPORT_DIR", str(tmp_path / "env"))
        cfg = write_config(tmp_path, {"map": {"domain": DISC, "expressions": ["z0/2"]}})
        assert main(["classify", "--config", str(cfg)]) == 0
        assert (tmp_path / "env" / "classify_report.json").exists()

    def test_deterministic(self, tmp_path):
        body = {"map": {"domain": DISC, "expressions": [AUTO]}, "seed": 11}
        _, a = run(tmp_path, "forward", body, "a")
        _, b = run(tmp_path, "forward", body, "b")
        assert a.read_bytes() == b.read_bytes()
