"""
Worker-pool helpers

Stages fan independent work (frames per orbit point, edge tests per vertex,
sample classification) out to a thread pool capped by ``--jobs``. Results
come back in input order so runs stay deterministic.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """
    Order-preserving map over ``items``.

    Args:
        fn: Pure function of one item
        items: Work items
        jobs: Worker cap; 1 runs inline

    Returns:
        ``[fn(item) for item in items]`` in input order
    """
    work = list(items)
    if jobs <= 1 or len(work) <= 1:
        return [fn(item) for item in work]
    workers = min(jobs, len(work))
    logger.debug(f"parallel_map: {len(work)} items on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, work))
