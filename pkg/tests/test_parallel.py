"""Tests for the order-preserving worker map"""
import threading

from symflow.parallel import parallel_map


def test_inline_when_single_job():
    seen = []
    assert parallel_map(lambda x: seen.append(threading.get_ident()) or x * x, range(5), jobs=1) == [0, 1, 4, 9, 16]
    assert set(seen) == {threading.get_ident()}


def test_order_preserved_across_workers():
    assert parallel_map(lambda x: -x, list(range(50)), jobs=4) == [-x for x in range(50)]


def test_empty_input():
    assert parallel_map(str, [], jobs=8) == []
