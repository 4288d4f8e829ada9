"""
Main MCP server entry point for symflow

Exposes the coding pipeline as FastMCP tools. numpy/scipy and the pipeline
modules are imported lazily inside ``get_pipeline()`` so the stdio
handshake answers before any heavy import; each stage then runs in a
worker thread so the event loop keeps serving JSON-RPC.
"""
import asyncio
import sys
from typing import TYPE_CHECKING, Any, Dict, Optional

from fastmcp import FastMCP

if TYPE_CHECKING:
    from symflow.pipeline import Pipeline

__all__ = ["app", "get_pipeline"]

app = FastMCP(
    name="symflow",
    instructions="""
    Symbolic coding of non-uniformly hyperbolic flows.
    Runs the staged pipeline (orbit, frames, alphabet, graph, shadow, cover,
    refine, entropy, check) on a configured model flow and reports the
    invariant tables, entropy estimates and DOT graphs.
    """
)

pipeline: Optional[Any] = None
config_path: Optional[str] = None

# Created on first use so the lock binds to the running loop
_init_lock: Optional[asyncio.Lock] = None


def _get_init_lock() -> asyncio.Lock:
    global _init_lock
    if _init_lock is None:
        _init_lock = asyncio.Lock()
    return _init_lock


def _log(message: str) -> None:
    """stdout carries JSON-RPC, so diagnostics go to stderr"""
    print(message, file=sys.stderr)


def get_pipeline(path: Optional[str] = None, reset: bool = False) -> "Pipeline":
    """
    Get or create the pipeline for ``path`` (defaults when None).

    A different path, or ``reset``, discards previously computed stages.
    """
    global pipeline, config_path
    if pipeline is None or reset or path != config_path:
        from symflow.config import load_config
        from symflow.pipeline import Pipeline

        pipeline = Pipeline(load_config(path))
        config_path = path
        _log(f"symflow pipeline created (config={path or 'defaults'})")
    return pipeline


async def _aget_pipeline(path: Optional[str] = None, reset: bool = False) -> "Pipeline":
    async with _get_init_lock():
        return get_pipeline(path, reset)


def _error(e: Exception) -> Dict[str, Any]:
    code = getattr(e, "code", type(e).__name__)
    return {"error": code, "message": str(e)}


@app.tool()
async def run_stage(stage: str = "check", config: Optional[str] = None) -> Dict[str, Any]:
    """
    Run the pipeline up to a stage.

    Args:
        stage: One of orbit, frames, alphabet, graph, shadow, cover, refine, entropy, check
        config: Optional TOML configuration path

    Returns:
        Stage name, pass/fail and its invariant table
    """
    from symflow.errors import SymflowError
    from symflow.types import Stage

    try:
        target = Stage(stage)
    except ValueError:
        return {"error": "input", "message": f"unknown stage {stage!r}"}
    try:
        p = await _aget_pipeline(config)
        await asyncio.to_thread(p.run, target)
    except SymflowError as e:
        return _error(e)
    checks = [c.to_dict() for c in p.checks.get(target.value, [])]
    return {"stage": target.value, "passed": p.passed, "checks": checks}


@app.tool()
async def describe_config(config: Optional[str] = None) -> Dict[str, Any]:
    """
    Validated configuration as a dictionary.

    Args:
        config: Optional TOML configuration path
    """
    from symflow.errors import SymflowError

    try:
        p = await _aget_pipeline(config)
    except SymflowError as e:
        return _error(e)
    return p.config.model_dump(mode="json")


@app.tool()
async def entropy_report(config: Optional[str] = None) -> Dict[str, Any]:
    """
    Entropy of the reference partition shift and of the sampled second coding.

    Runs the pipeline through the entropy stage if needed.
    """
    from symflow.artifacts import to_jsonable
    from symflow.errors import SymflowError
    from symflow.types import Stage

    try:
        p = await _aget_pipeline(config)
        await asyncio.to_thread(p.run, Stage.ENTROPY)
    except SymflowError as e:
        return _error(e)
    data = p.state.entropy
    return to_jsonable({k: data[k] for k in ("oracle", "reference", "second_coding") if k in data})


@app.tool()
async def export_graph_dot(which: str = "gpo", config: Optional[str] = None) -> Dict[str, Any]:
    """
    DOT text of the gpo graph or of the partition graph.

    Args:
        which: "gpo" or "partition"
        config: Optional TOML configuration path
    """
    from symflow.artifacts import dot_text
    from symflow.errors import SymflowError
    from symflow.types import Stage

    if which not in ("gpo", "partition"):
        return {"error": "input", "message": f"unknown graph {which!r}"}
    try:
        p = await _aget_pipeline(config)
        await asyncio.to_thread(p.run, Stage.GRAPH if which == "gpo" else Stage.REFINE)
    except SymflowError as e:
        return _error(e)
    graph = p.state.graph.graph if which == "gpo" else p.state.partition.edge_graph()
    return {"graph": which, "vertices": graph.number_of_nodes(), "dot": dot_text(graph, name=which)}


def main():
    """Main entry point; the pipeline is built on the first tool call"""
    app.run(transport="stdio")


if __name__ == "__main__":
    main()
