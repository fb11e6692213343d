import csv
import json

import pytest

from ncgshape import cli
from ncgshape.config import DEFAULTS, config_from_dict, emit_config, parse_config
from ncgshape.errors import ConfigError

ELLIPSE = {"problem": "geometric", "scale": [1.3, 0.8], "level": 2}


def write_cfg(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- configuration ---------------------------------------------------------------------


def test_defaults_filled(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, {"problem": "poisson", "variant": "DY"}))
    assert cfg["rel_tol"] == 1e-3
    assert cfg["lbfgs_memory"] == 5
    assert cfg["level"] == 3
    assert set(cfg.values) == set(DEFAULTS)


def test_bad_variant_lists_valid_ones(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(write_cfg(tmp_path, {"variant": "XY"}))
    msg = str(info.value)
    assert "variant" in msg and "line 2" in msg
    for v in ("GD", "FR", "PR", "HS", "DY", "HZ", "LBFGS"):
        assert v in msg


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'step'.*line 3"):
        parse_config(write_cfg(tmp_path, {"variant": "DY", "step": 1}))


@pytest.mark.parametrize(
    "obj, key",
    [({"max_iter": 1.5}, "max_iter"), ({"rel_tol": "small"}, "rel_tol"),
     ({"clip_beta": 1}, "clip_beta"), ({"level": True}, "level"), ({"scale": [1]}, "scale")],
)
def test_type_mismatch(tmp_path, obj, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(write_cfg(tmp_path, obj))


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "variant": "DY",\n  "level": \n}\n')
    with pytest.raises(ConfigError, match="line 4"):
        parse_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.json")


def test_exactly_one_mesh_source(tmp_path):
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_dict({"mesh": "disc", "mesh_file": "m.txt"})
    cfg = config_from_dict({"mesh_file": "m.txt"})
    assert cfg["mesh"] is None


def test_emit_config_roundtrip(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, {"problem": "geometric", "gamma": 100, "vol0": 3.14159}))
    text = emit_config(cfg)
    again = parse_config(write_cfg(tmp_path, json.loads(text), "again.json"))
    assert emit_config(again) == text
    path = tmp_path / "emitted.json"
    path.write_text(text)
    assert emit_config(parse_config(path)) == text


def test_emit_config_command(tmp_path, capsys):
    cfg_path = write_cfg(tmp_path, {"problem": "geometric", "gamma": 100, "vol0": 3.14159})
    assert cli.main(["emit-config", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    emitted = tmp_path / "e.json"
    emitted.write_text(out)
    assert cli.main(["emit-config", "--config", str(emitted)]) == 0
    assert capsys.readouterr().out == out


def test_config_error_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, {"variant": "XY"})
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "valid variants" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2


def test_fmt_shortest_roundtrip():
    assert cli.fmt(0.1) == "0.1"
    assert cli.fmt(1e-3) == "0.001"
    assert cli.fmt(True) == "1"
    assert cli.fmt(7) == "7"
    assert float(cli.fmt(2 / 3)) == 2 / 3


# --- run ---------------------------------------------------------------------------


def test_run_geometric_dy(tmp_path):
    cfg = config_from_dict({**ELLIPSE, "level": 3, "variant": "DY"})
    out = tmp_path / "run"
    assert cli.cmd_run(cfg, out) == 0
    rows = read_csv(out / "history.csv")
    assert tuple(rows[0]) == cli.HISTORY_COLUMNS
    assert float(rows[-1][3]) <= 1e-3
    assert [int(r[0]) for r in rows[1:]] == list(range(len(rows) - 1))
    summary = json.loads((out / "summary.json").read_text())
    assert tuple(summary) == cli.SUMMARY_KEYS
    assert summary["termination_reason"] == "converged"
    for name in ("mesh_initial.vtk", "mesh_final.vtk", "mesh_final.txt"):
        assert (out / name).exists()


def test_run_max_iter_zero(tmp_path):
    cfg = config_from_dict({**ELLIPSE, "max_iter": 0})
    out = tmp_path / "run"
    assert cli.cmd_run(cfg, out) == 1
    rows = read_csv(out / "history.csv")
    assert len(rows) == 2 and rows[1][0] == "0"
    assert json.loads((out / "summary.json").read_text())["termination_reason"] == "max iterations"


def test_run_deterministic(tmp_path):
    cfg = config_from_dict({"level": 2, "max_iter": 8, "variant": "HZ"})
    cli.cmd_run(cfg, tmp_path / "a")
    cli.cmd_run(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_run_from_mesh_file(tmp_path):
    from ncgshape import mesh as M

    M.write_mesh(M.scale(M.generate_unit_disc(2), 1.3, 0.8), tmp_path / "m.txt")
    path = write_cfg(tmp_path, {"problem": "geometric", "mesh_file": str(tmp_path / "m.txt")})
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 0


def test_run_missing_mesh_file(tmp_path):
    path = write_cfg(tmp_path, {"mesh_file": str(tmp_path / "missing.txt")})
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


# --- check-gradient ----------------------------------------------------------------


def test_check_gradient_geometric(tmp_path):
    cfg = config_from_dict({**ELLIPSE, "level": 3})
    assert cli.cmd_check_gradient(cfg, tmp_path) == 0
    rows = read_csv(tmp_path / "fd_report.csv")
    assert tuple(rows[0]) == cli.FD_COLUMNS
    assert len(rows) == 1 + cfg["n_fields"]
    extrapolated = [float(r[7]) for r in rows[1:]]
    assert max(extrapolated) <= 1e-6


def test_check_gradient_poisson(tmp_path):
    cfg = config_from_dict({"level": 3, "n_fields": 5})
    assert cli.cmd_check_gradient(cfg, tmp_path) == 0


def test_check_gradient_detects_corruption(tmp_path, capsys):
    cfg = config_from_dict({"level": 2, "n_fields": 3})
    assert cli.cmd_check_gradient(cfg, tmp_path, derivative_scale=1.1) == 1
    assert "worst field" in capsys.readouterr().out


def test_check_gradient_seed_flag(tmp_path):
    path = write_cfg(tmp_path, {**ELLIPSE, "n_fields": 2})
    for seed in ("3", "3"):
        cli.main(["check-gradient", "--config", str(path), "--seed", seed, "--out", str(tmp_path / seed)])
    other = tmp_path / "4"
    cli.main(["check-gradient", "--config", str(path), "--seed", "4", "--out", str(other)])
    assert (tmp_path / "3" / "fd_report.csv").read_bytes() != (other / "fd_report.csv").read_bytes()


# --- compare -----------------------------------------------------------------------


def test_compare_geometric_all_converge(tmp_path):
    cfg = config_from_dict(ELLIPSE)
    assert cli.cmd_compare(cfg, tmp_path) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert tuple(rows[0]) == cli.COMPARE_COLUMNS
    assert len(rows) == 8
    assert {r[0] for r in rows[1:]} == set(cli.VARIANTS)
    iters = [int(r[1]) for r in rows[1:]]
    assert iters == sorted(iters)
    for v in cli.VARIANTS:
        assert (tmp_path / v / "history.csv").exists()


def test_compare_rows_always_seven(tmp_path):
    cfg = config_from_dict({**ELLIPSE, "max_iter": 2})
    assert cli.cmd_compare(cfg, tmp_path) == 1
    assert len(read_csv(tmp_path / "compare.csv")) == 8


def test_compare_parallel_matches_sequential(tmp_path):
    cfg = config_from_dict({**ELLIPSE, "max_iter": 5})
    cli.cmd_compare(cfg, tmp_path / "seq")
    cli.cmd_compare(cfg, tmp_path / "par", parallel=True)
    for v in cli.VARIANTS:
        a = (tmp_path / "seq" / v / "history.csv").read_bytes()
        b = (tmp_path / "par" / v / "history.csv").read_bytes()
        assert a == b
