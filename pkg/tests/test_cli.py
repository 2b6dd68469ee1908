"""Command line interface tests: exit codes, stderr tagging, file effects."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from sesmap.cli import main


@pytest.fixture(scope="module")
def city(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "city"
    rc = main(["synth", "--out", str(out), "--seed", "2", "--size", "5"])
    assert rc == 0
    cfg = json.loads((out / "config.json").read_text())
    cfg.update({"alpha_count": 25, "cv_repeats": 5})
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return out


def test_synth_writes_city_and_runnable_config(city):
    for name in ("units.geojson", "fixture.jsonl", "target.csv", "manifest.json", "config.json"):
        assert (city / name).is_file(), name
    cfg = json.loads((city / "config.json").read_text())
    assert cfg["boundary_path"] == "units.geojson"
    assert cfg["output_dir"] == "run"
    assert cfg["seed"] == 2


def test_run_subcommand_completes_and_prints_run_dir(city, capsys):
    rc = main(["run", "--config", str(city / "config.json")])
    assert rc == 0
    out_dir = Path(capsys.readouterr().out.strip())
    assert out_dir == city / "run"
    assert (out_dir / "summary.json").is_file()
    assert (out_dir / "map_truth.svg").is_file()


def test_stage_subcommand_stops_at_its_stage(city, tmp_path):
    rc = main(["grid", "--config", str(city / "config.json"), "--out", str(tmp_path / "g")])
    assert rc == 0
    assert (tmp_path / "g" / "grid.geojson").is_file()
    assert not (tmp_path / "g" / "panel.csv").exists()


def test_out_and_seed_overrides(city, tmp_path):
    out = tmp_path / "override"
    rc = main(["run", "--config", str(city / "config.json"), "--out", str(out), "--seed", "11"])
    assert rc == 0
    doc = json.loads((out / "summary.json").read_text())
    assert doc["seed"] == 11


def test_unknown_config_key_exits_nonzero_with_config_tag(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"city": "x", "whoops": 1}))
    rc = main(["run", "--config", str(p)])
    assert rc != 0
    err = capsys.readouterr().err
    assert "[config]" in err
    assert "whoops" in err


def test_missing_input_file_is_a_config_error(city, tmp_path, capsys):
    cfg = json.loads((city / "config.json").read_text())
    cfg["fixture_path"] = "nothing_here.jsonl"
    p = tmp_path / "cfg.json"
    cfg["boundary_path"] = str(city / "units.geojson")
    cfg["target_path"] = str(city / "target.csv")
    p.write_text(json.dumps(cfg))
    rc = main(["run", "--config", str(p)])
    assert rc != 0
    assert "[config]" in capsys.readouterr().err


def test_broken_fixture_is_tagged_with_fetch_stage(city, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{ not json }\n")
    cfg = json.loads((city / "config.json").read_text())
    cfg["boundary_path"] = str(city / "units.geojson")
    cfg["target_path"] = str(city / "target.csv")
    cfg["fixture_path"] = str(bad)
    cfg["output_dir"] = str(tmp_path / "run")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    rc = main(["run", "--config", str(p)])
    assert rc != 0
    assert "[fetch]" in capsys.readouterr().err


def test_synth_rejects_bad_parameters(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "c"), "--size", "1"])
    assert rc != 0
    assert "[synth]" in capsys.readouterr().err
