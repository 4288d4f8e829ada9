"""Tests for the symflow command line"""
import pytest

from symflow.cli import build_parser, main

from .conftest import SMALL


@pytest.fixture
def small_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text("".join(f"{k} = {v}\n" for k, v in SMALL.items()), encoding="utf-8")
    return path


def test_parser_knows_every_stage():
    parser = build_parser()
    args = parser.parse_args(["refine", "--depth", "2", "--seed", "3"])
    assert args.command == "refine"
    assert args.depth == 2
    assert args.seed == 3
    with pytest.raises(SystemExit):
        parser.parse_args(["unknown"])


def test_orbit_stage_writes_artifact(small_toml, tmp_path):
    out = tmp_path / "out"
    assert main(["orbit", "--config", str(small_toml), "--out", str(out)]) == 0
    assert (out / "orbit.json").exists()
    assert not (out / "frames.json").exists()


def test_invalid_chi_exits_with_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("chi = 2.0\n", encoding="utf-8")
    assert main(["orbit", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_exits_with_2(tmp_path):
    assert main(["orbit", "--config", str(tmp_path / "nope.toml")]) == 2


def test_export_dot(small_toml, tmp_path):
    target = tmp_path / "graph.dot"
    code = main(["export-dot", "--graph", "gpo", "--config", str(small_toml), "--path", str(target)])
    assert code == 0
    assert target.read_text(encoding="utf-8").startswith('digraph "gpo" {')
