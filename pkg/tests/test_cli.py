import json
import shutil
from pathlib import Path

import pytest
import yaml

from plcond import cli
from plcond.tables import read_table, write_table

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(cfg, out, *extra):
    return cli.main(["run", str(cfg), "-o", str(out), *extra])


@pytest.fixture(scope="module")
def dton_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("dton")
    assert run(CONFIGS / "dton.yaml", out) == 0
    return out


def test_run_writes_artifacts(dton_run):
    manifest = json.loads((dton_run / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "dton"
    for name in manifest["tables"].values():
        cols, rows = read_table(dton_run / name)
        assert cols and rows
    assert manifest["figures"] and all((dton_run / f).stat().st_size > 0 for f in manifest["figures"])
    assert (dton_run / "summary.json").exists()


def test_tables_deterministic(dton_run, tmp_path):
    assert run(CONFIGS / "dton.yaml", tmp_path) == 0
    manifest = json.loads((dton_run / "manifest.json").read_text())
    for name in [*manifest["tables"].values(), "summary.json"]:
        assert (dton_run / name).read_bytes() == (tmp_path / name).read_bytes()
    assert cli.main(["compare", str(dton_run), str(tmp_path), "--tol", "0"]) == 0


def test_compare_breach(dton_run, tmp_path, capsys):
    cand = tmp_path / "cand"
    shutil.copytree(dton_run, cand)
    name = json.loads((dton_run / "manifest.json").read_text())["tables"]["dton"]
    cols, rows = read_table(cand / name)
    j = next(k for k, v in enumerate(rows[0]) if isinstance(v, float))
    rows[0][j] = rows[0][j] + 1.0
    write_table(cand / name, cols, rows)
    assert cli.main(["compare", str(dton_run), str(cand), "--tol", "1e-9"]) == cli.EXIT_BREACH
    assert "BREACH" in capsys.readouterr().out


def test_compare_schema_mismatch(dton_run, tmp_path):
    assert run(CONFIGS / "forward.yaml", tmp_path, "--no-figures") == 0
    assert cli.main(["compare", str(dton_run), str(tmp_path)]) == cli.EXIT_CONFIG


def test_manifest_replays(dton_run, tmp_path):
    assert run(dton_run / "manifest.json", tmp_path, "--no-figures") == 0
    name = json.loads((dton_run / "manifest.json").read_text())["tables"]["dton"]
    assert (dton_run / name).read_bytes() == (tmp_path / name).read_bytes()


def test_output_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    cfg = yaml.safe_load((CONFIGS / "dton.yaml").read_text())
    cfg.pop("output")
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert cli.main(["run", str(path), "--no-figures"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    assert cli.main(["validate", str(CONFIGS / name)]) == 0


def test_config_errors(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: forward\nh: 0.1\nbogus: 1\n")
    assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG
    coarse = tmp_path / "coarse.yaml"
    coarse.write_text("experiment: forward\nh: 10\npartition: {preset: unit_square}\n"
                      "conductivity: {pieces: [{a: 1}]}\n")
    assert run(coarse, tmp_path / "o") == cli.EXIT_CONFIG
    assert "config-error" in capsys.readouterr().err


def test_tolerance_parsing():
    assert cli.parse_tolerance("1e-9")[0] == 1e-9
    assert cli.parse_tolerance("abs=1e-6,rel=1e-3") == (1e-6, 1e-3)
    with pytest.raises(cli.ConfigError):
        cli.parse_tolerance("abs=x")


def test_compare_with_itself(dton_run):
    diffs = cli.compare(dton_run, dton_run)
    assert diffs and all(d.max_abs == 0.0 and d.breach is None for d in diffs)


def test_forward_run_writes_field(tmp_path):
    assert run(CONFIGS / "forward.yaml", tmp_path, "--no-figures") == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    cols, rows = read_table(tmp_path / manifest["tables"]["field"])
    assert cols[:3] == ["node", "x", "y"] and len(rows) > 10
    assert "wall_time_s" in manifest and "versions" in manifest


def test_missing_partition_file(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: forward\nh: 0.1\npartition: nowhere.yaml\nconductivity: {pieces: [{a: 1}]}\n")
    assert cli.main(["validate", str(cfg)]) == cli.EXIT_CONFIG
    assert run(cfg, tmp_path / "o") == cli.EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()
    assert err and all(line.startswith("plcond: config-error:") for line in err)


def test_stochastic_run_needs_seed(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: stability\nh: 0.1\nparams: {layers: [1]}\n")
    assert cli.main(["validate", str(cfg)]) == cli.EXIT_CONFIG
