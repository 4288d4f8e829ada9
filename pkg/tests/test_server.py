"""Tests for the FastMCP tool surface (in-memory client)"""
import pytest
from fastmcp import Client

import server
from server import app

from .conftest import SMALL

TOOLS = {"run_stage", "describe_config", "entropy_report", "export_graph_dot"}


@pytest.fixture
def small_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text("".join(f"{k} = {v}\n" for k, v in SMALL.items()), encoding="utf-8")
    return str(path)


@pytest.fixture(autouse=True)
def fresh_server():
    server.pipeline = None
    server.config_path = None
    server._init_lock = None
    yield
    server.pipeline = None


async def test_tools_registered():
    async with Client(app) as client:
        tools = await client.list_tools()
    assert TOOLS <= {t.name for t in tools}


async def test_describe_config_defaults():
    async with Client(app) as client:
        result = await client.call_tool("describe_config", {})
    data = result.structured_content
    assert data["rho"] == 0.2
    assert data["model"]["matrix"] == [[2, 1], [1, 1]]


async def test_unknown_stage_is_an_error_payload():
    async with Client(app) as client:
        result = await client.call_tool("run_stage", {"stage": "bogus"})
    assert result.structured_content["error"] == "input"
    assert server.pipeline is None


async def test_unknown_graph_is_an_error_payload():
    async with Client(app) as client:
        result = await client.call_tool("export_graph_dot", {"which": "tree"})
    assert result.structured_content["error"] == "input"


async def test_missing_config_maps_error_code(tmp_path):
    async with Client(app) as client:
        result = await client.call_tool("describe_config", {"config": str(tmp_path / "nope.toml")})
    assert result.structured_content["error"] == "configuration"


async def test_run_orbit_stage(small_toml):
    async with Client(app) as client:
        result = await client.call_tool("run_stage", {"stage": "orbit", "config": small_toml})
    data = result.structured_content
    assert data["stage"] == "orbit"
    assert [c["name"] for c in data["checks"]] == ["exponent_recovery", "cocycle_law", "cocycle_norm"]
    assert server.config_path == small_toml


def test_get_pipeline_reuses_until_path_changes(small_toml):
    first = server.get_pipeline(small_toml)
    assert server.get_pipeline(small_toml) is first
    assert server.get_pipeline(small_toml, reset=True) is not first
    assert server.get_pipeline(None).config.window == 150
