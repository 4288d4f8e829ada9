"""
Command-line driver

``symflow <stage>`` recomputes the pipeline up to ``<stage>``, writes the
artifacts of every stage it ran and exits 0 only when all invariant checks
passed. ``symflow export-dot`` writes a graph as DOT.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .artifacts import write_dot
from .config import load_config
from .errors import SymflowError
from .pipeline import Pipeline
from .types import Stage

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symflow", description="Symbolic coding of hyperbolic flows")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--jobs", type=int, help="worker thread cap")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", help="artifact directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)
    for stage in Stage.ordered():
        p = sub.add_parser(stage.value, parents=[common], help=f"run the pipeline through '{stage.value}'")
        if stage is Stage.REFINE:
            p.add_argument("--depth", type=int, help="refinement depth N")
    p = sub.add_parser("export-dot", parents=[common], help="write a graph as DOT")
    p.add_argument("--graph", choices=["gpo", "partition"], default="gpo")
    p.add_argument("--path", help="output file (default <out>/<graph>.dot)")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    overrides = {"seed": args.seed, "jobs": args.jobs, "out": args.out}
    if getattr(args, "depth", None) is not None:
        overrides["refine_depth"] = args.depth
    try:
        config = load_config(args.config, **overrides)
        pipeline = Pipeline(config)
        if args.command == "export-dot":
            pipeline.run(Stage.GRAPH if args.graph == "gpo" else Stage.REFINE)
            st = pipeline.state
            graph = st.graph.graph if args.graph == "gpo" else st.partition.edge_graph()
            path = Path(args.path) if args.path else Path(config.out) / f"{args.graph}.dot"
            write_dot(graph, path, args.graph)
            return 0
        pipeline.run(Stage(args.command))
        pipeline.write()
    except SymflowError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    failed = [c.name for c in pipeline.all_checks() if not c.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
