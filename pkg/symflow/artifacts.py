"""
Artifact serialization: versioned JSON documents and DOT graphs
"""
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

SCHEMA = "symflow/1"


def to_jsonable(obj: Any) -> Any:
    """Convert numpy containers, enums and tuples into plain JSON values"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(stage: str, payload: Dict[str, Any]) -> str:
    """Render a stage document; equal payloads give byte-identical text"""
    doc = {"schema": SCHEMA, "stage": stage, "data": to_jsonable(payload)}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(out_dir: Path, stage: str, payload: Dict[str, Any]) -> Path:
    """
    Write ``<out_dir>/<stage>.json``.

    Args:
        out_dir: Output directory (created if missing)
        stage: Stage name, also the file stem
        payload: Stage data

    Returns:
        Path of the written file
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stage}.json"
    path.write_text(dumps(stage, payload), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: Path) -> Dict[str, Any]:
    """Read a stage document, checking the schema tag"""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported schema {doc.get('schema')!r}")
    return doc


def _quote(value: Any) -> str:
    text = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{text}"'


def dot_text(
    graph: nx.DiGraph,
    name: str = "symflow",
    edge_label: Optional[Callable[[Any, Any, Dict[str, Any]], str]] = None,
) -> str:
    """
    Render a DOT digraph.

    Vertex labels are the node identifiers; edge labels come from
    ``edge_label(u, v, data)`` or the edge's ``label`` / ``time`` attribute.
    """
    lines = [f"digraph {_quote(name)} {{"]
    for node in sorted(graph.nodes, key=str):
        lines.append(f"  {_quote(node)} [label={_quote(node)}];")
    for u, v, data in sorted(graph.edges(data=True), key=lambda e: (str(e[0]), str(e[1]))):
        if edge_label is not None:
            label = edge_label(u, v, data)
        elif "label" in data:
            label = str(data["label"])
        elif "time" in data:
            label = f"{data['time']:.6g}"
        else:
            label = ""
        attr = f" [label={_quote(label)}]" if label else ""
        lines.append(f"  {_quote(u)} -> {_quote(v)}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_dot(graph: nx.DiGraph, path: Path, name: str = "symflow") -> Path:
    """Write a graph as DOT text to ``path``"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dot_text(graph, name=name), encoding="utf-8")
    logger.info(f"Wrote {path} ({graph.number_of_nodes()} vertices)")
    return path
