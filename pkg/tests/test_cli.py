import csv
import json
import math

import pytest
import yaml

from obshom.cli import dispatch, emit_plot_data, main, payload_bytes
from obshom.config import ConfigError, parse_config

MED2 = {"dim": 2, "law": {"kind": "constant", "gamma": 2 * math.pi}, "gamma_bar": 2 * math.pi}
MED3 = {"dim": 3, "law": {"kind": "constant", "gamma": 4 * math.pi}, "gamma_bar": 4 * math.pi}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data) if name.endswith(".yaml") else json.dumps(data))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_minimal_config_fills_defaults():
    cfg = parse_config("alpha0", {"medium": MED2}, env={})
    assert cfg.experiment["t"] == [8, 16, 32, 64]
    assert cfg.experiment["m"] == 9 and cfg.experiment["samples"] == 16
    for key in ("experiment.t", "experiment.m", "experiment.samples", "seed"):
        assert key in cfg.defaults_filled
    assert cfg.out_dir == "out"


def test_law_above_gamma_bar_names_field():
    med = {"dim": 2, "law": {"kind": "iid_uniform", "gamma_lo": 0.0, "gamma_hi": 9.0}, "gamma_bar": 6.0}
    with pytest.raises(ConfigError) as exc:
        parse_config("ell", {"medium": med})
    assert exc.value.path == "medium.law.gamma_hi"


@pytest.mark.parametrize("command", ["ell", "alpha0", "corrector", "converge", "solve-eps", "solve-aux"])
def test_config_round_trip(command, tmp_path):
    cfg = parse_config(command, {"medium": MED2, "seed": 4}, env={})
    again = parse_config(command, write_cfg(tmp_path, cfg.to_dict(), "c.json"), env={})
    assert again.to_dict() == cfg.to_dict()


def test_unknown_keys_and_bad_values_rejected():
    with pytest.raises(ConfigError, match="experiment.bogus"):
        parse_config("ell", {"medium": MED2, "experiment": {"bogus": 1}})
    with pytest.raises(ConfigError, match="^colour"):
        parse_config("ell", {"medium": MED2, "colour": "red"})
    with pytest.raises(ConfigError, match="medium"):
        parse_config("ell", {})
    with pytest.raises(ConfigError, match="experiment.m"):
        parse_config("ell", {"medium": MED2, "experiment": {"m": 8}})
    with pytest.raises(ConfigError, match="eps_list"):
        parse_config("converge", {"medium": MED2, "experiment": {"eps_list": [0.25, 0.5]}})


def test_out_dir_precedence(monkeypatch):
    monkeypatch.setenv("OBSHOM_OUT_DIR", "/tmp/from_env")
    assert parse_config("solve-hom", {}).out_dir == "/tmp/from_env"
    assert parse_config("solve-hom", {}, {"out_dir": "/tmp/flag"}).out_dir == "/tmp/flag"


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, {"medium": {**MED2, "gamma_bar": 1.0}})
    assert main(["ell", "--config", path, "--out-dir", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["stage"] == "config" and err["field"].startswith("medium.law")


def test_compute_failure_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, {"medium": MED2, "grid": {"cells": 8}})
    assert main(["solve-eps", "--config", path, "--out-dir", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["stage"] == "holes" and "coarse" in err["error"]


def test_alpha0_report_contains_bracket_and_trace(tmp_path):
    path = write_cfg(tmp_path, {"medium": MED3, "experiment": {"t": [2], "samples": 1, "m": 5, "rtol": 0.2}})
    assert main(["alpha0", "--config", path, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["results"]["bracket"] == [3.0, 24.0]
    assert rep["results"]["trace"]
    assert "timings" in rep and rep["version"]
    rows = read_csv(tmp_path / "alpha0_trace.csv")
    assert rows[0] == ["alpha", "ell_hat", "ci", "verdict"] and len(rows) == 1 + len(rep["results"]["trace"])


def test_converge_nonnegative_source_is_inactive(tmp_path):
    cfg = parse_config("converge", {"medium": MED2, "grid": {"cells": 96},
                                    "experiment": {"f": 1.0, "alpha0": 6.0, "eps_list": [1 / 3, 0.25],
                                                   "seeds": 2},
                                    "out_dir": str(tmp_path)})
    rep = dispatch(cfg)
    res = rep["results"]
    assert res["obstacle_inactive"]
    assert all(r["l2_error"] < 1e-8 for r in res["rows"])
    rows = read_csv(tmp_path / "converge.csv")
    assert rows[0] == ["eps", "seed", "l2_error", "energy_gap"]
    assert len(rows) == 1 + 2 * 2


def test_ell_csv_and_workers_agree(tmp_path):
    base = {"medium": MED2, "experiment": {"alpha": [-1.0, 4.0], "t": [2, 4], "samples": 2, "m": 5}}
    one = dispatch(parse_config("ell", {**base, "out_dir": str(tmp_path / "a")}))
    two = dispatch(parse_config("ell", {**base, "out_dir": str(tmp_path / "a")}), workers=2)
    assert payload_bytes(one) == payload_bytes(two)
    rows = read_csv(tmp_path / "a" / "ell.csv")
    assert rows[0] == ["alpha", "t", "sample", "ratio"]
    assert len(rows) == 1 + 2 * 2 * 2


def test_empty_sweep_gives_header_only(tmp_path):
    report = {"command": "converge", "results": {"rows": []}}
    (path,) = emit_plot_data(report, tmp_path)
    assert path.read_text() == "eps,seed,l2_error,energy_gap\n"


def test_determinism_excludes_timings(tmp_path):
    cfg = {"medium": MED2, "experiment": {"alpha": 3.0, "t": 3, "m": 5}, "seed": 11}
    a = dispatch(parse_config("solve-aux", {**cfg, "out_dir": str(tmp_path / "a")}))
    b = dispatch(parse_config("solve-aux", {**cfg, "out_dir": str(tmp_path / "a")}))
    assert payload_bytes(a) == payload_bytes(b)
    c = dispatch(parse_config("solve-aux", {**cfg, "seed": 12, "out_dir": str(tmp_path / "a")}))
    assert json.loads(payload_bytes(c))["config"]["seed"] == 12


def test_capacity_and_solve_hom_commands(tmp_path, capsys):
    out = tmp_path / "cap"
    assert main(["capacity", "--set", "experiment.h=0.125", "--out-dir", str(out), "--dump-fields"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["capacity"] == pytest.approx(rep["results"]["shell_flux"], rel=1e-6)
    assert (out / "phi.txt").exists()
    assert main(["solve-hom", "--set", "grid.cells=16", "--set", "experiment.alpha0=5", "--out-dir",
                 str(tmp_path / "hom")]) == 0


def test_print_config(capsys):
    assert main(["solve-hom", "--print-config", "--seed", "3"]) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["seed"] == 3 and echoed["experiment"]["method"] == "picard"
