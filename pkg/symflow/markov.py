"""
Markov cover, Bowen–Sinai refinement and the second coding

All sets are sample-based. A rectangle Z(v) is the finite set of shadowed
points whose gpo window is centred at v; its fibres are the graphs of the
V^s / V^u manifolds computed for each sample. The return map H sends a
sample to the shadowed point of the next window position. Tolerances on
chart coordinates are relative to the window η of the chart they live in.
"""
import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from .charts import DoubleChart, PesinChart
from .errors import CoverageError, CoverGapError, DomainError, InputError, ShadowingError
from .gpo import GpoGraph
from .manifolds import (
    AdmissibleManifold,
    TransitionCache,
    backward_invariance_error,
    forward_contraction,
    intersect,
    invariance_error,
    shadow,
    smale_bracket,
    stable_manifold,
    unstable_manifold,
)
from .parallel import parallel_map
from .symbolic import SuspensionFlow, SymbolicShift, regular_flag
from .types import CheckResult, Direction, FibreClass, ManifoldKind

logger = logging.getLogger(__name__)

Array = np.ndarray
Box = Tuple[Array, Array]


@dataclass
class ShadowSample:
    """
    One shadowed point π(v̲) with its fibres.

    ``next`` / ``prev`` are sample indices of H(x) and H^{-1}(x) when the
    window reaches them.
    """
    index: int
    symbol: int
    point: Array
    coords: Array
    stable: AdmissibleManifold
    unstable: AdmissibleManifold
    label: str
    position: int
    next: Optional[int] = None
    prev: Optional[int] = None
    return_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "symbol": self.symbol,
            "point": self.point,
            "coords": self.coords,
            "label": self.label,
            "position": self.position,
            "next": self.next,
            "prev": self.prev,
            "return_time": self.return_time,
        }


def _graph_runs(seq: Sequence[int], graph: GpoGraph) -> List[Tuple[int, int]]:
    """Maximal index ranges [a, b] of ``seq`` that are paths of the graph"""
    runs = []
    start = None
    for n, v in enumerate(seq):
        if v not in graph.graph:
            if start is not None:
                runs.append((start, n - 1))
            start = None
            continue
        if start is None:
            start = n
        elif not graph.graph.has_edge(seq[n - 1], v):
            runs.append((start, n - 1))
            start = n
    if start is not None:
        runs.append((start, len(seq) - 1))
    return runs


@dataclass
class _RawSample:
    label: str
    position: int
    symbol: int
    point: Array
    coords: Array
    stable: AdmissibleManifold
    unstable: AdmissibleManifold


def shadow_samples(
    graph: GpoGraph,
    cache: TransitionCache,
    depth: int,
    nodes: int = 9,
    tol: float = 1e-11,
    merge_tol: float = 1e-9,
    jobs: int = 1,
) -> List[ShadowSample]:
    """
    Shadow every window position with ``depth`` graph edges on both sides.

    V^s is pulled back once from the end of each graph run and V^u pushed
    once from its start, so every interior position gets both fibres from
    a single sweep.

    Args:
        graph: Pruned gpo graph; its alphabet carries the orbit sequences
        cache: Transition cache over the alphabet
        depth: Minimal number of edges on each side of a sample
        nodes: Grid nodes of the representing functions
        tol: Newton / fixed-point tolerance
        merge_tol: Ambient distance under which samples of one symbol coincide
        jobs: Worker threads

    Returns:
        Samples with H links, duplicates (periodic revisits) merged
    """
    alphabet = graph.alphabet
    model = cache.factory.section.model
    work = []
    for label in sorted(alphabet.sequences):
        seq = alphabet.sequences[label]
        for a, b in _graph_runs(seq, graph):
            if b - a >= 2 * depth:
                work.append((label, seq, a, b))

    def sweep(item: Tuple[str, List[int], int, int]) -> List[_RawSample]:
        label, seq, a, b = item
        path = seq[a:b + 1]
        transitions = cache.along(path)
        s_hist: List[AdmissibleManifold] = []
        u_hist: List[AdmissibleManifold] = []
        stable_manifold(transitions, nodes=nodes, tol=tol, history=s_hist)
        unstable_manifold(transitions, nodes=nodes, tol=tol, history=u_hist)
        out = []
        for n in range(a + depth, b - depth + 1):
            vs, vu = s_hist[b - n], u_hist[n - a]
            coords, _ = intersect(vs, vu, tol)
            point = cache.doubles[seq[n]].chart.apply(coords)
            out.append(_RawSample(label, n - alphabet.offsets[label], seq[n], point, coords, vs, vu))
        logger.debug(f"Run {label}[{a}:{b}] gave {len(out)} samples")
        return out

    runs = parallel_map(sweep, work, jobs)
    samples: List[ShadowSample] = []
    by_symbol: Dict[int, List[int]] = {}
    links: List[Tuple[int, int]] = []
    for raw_run in runs:
        ids = []
        for raw in raw_run:
            hit = next((i for i in by_symbol.get(raw.symbol, [])
                        if model.distance(samples[i].point, raw.point) <= merge_tol), None)
            if hit is None:
                hit = len(samples)
                samples.append(ShadowSample(hit, raw.symbol, raw.point, raw.coords, raw.stable,
                                            raw.unstable, raw.label, raw.position))
                by_symbol.setdefault(raw.symbol, []).append(hit)
            ids.append(hit)
        links.extend(zip(ids, ids[1:]))
    for i, j in links:
        if samples[i].next is None:
            samples[i].next = j
        elif samples[i].next != j:
            logger.warning(f"Sample {i} has two successors ({samples[i].next}, {j}); keeping the first")
        if samples[j].prev is None:
            samples[j].prev = i
    logger.info(f"Shadowed {len(samples)} distinct samples from {len(work)} graph runs")
    return samples


# ---- rectangles and the cover ---------------------------------------------
@dataclass
class Rectangle:
    """
    Z(v): shadowed samples whose zeroth symbol is v.

    - ``members`` are sample indices into the owning cover
    - W^s(x, Z) is the set of members on the graph of V^s(x)
    """
    symbol: int
    double: DoubleChart
    members: List[int]
    samples: List[ShadowSample] = field(repr=False, default_factory=list)

    @property
    def chart(self) -> PesinChart:
        return self.double.chart

    @property
    def eta(self) -> float:
        return self.double.eta

    @property
    def disc(self) -> int:
        return self.double.chart.section.disc_index(self.double.center)

    def member_samples(self) -> List[ShadowSample]:
        return [self.samples[i] for i in self.members]

    def coords(self) -> Array:
        return np.array([self.samples[i].coords for i in self.members])

    def nearest(self, point: Array) -> ShadowSample:
        model = self.chart.section.model
        return min(self.member_samples(), key=lambda s: model.distance(s.point, point))

    def fibres(self, point: Array) -> Tuple[AdmissibleManifold, AdmissibleManifold]:
        """(V^s, V^u) of the member nearest to ``point``"""
        s = self.nearest(point)
        return s.stable, s.unstable

    def box_in(self, chart: PesinChart, members: Optional[Sequence[int]] = None) -> Optional[Box]:
        """Coordinate box of the members in another chart; None when outside it"""
        try:
            pts = np.array([chart.inverse(self.samples[i].point) for i in (members or self.members)])
        except DomainError:
            return None
        return pts.min(axis=0), pts.max(axis=0)

    def on_fibre(self, x: ShadowSample, kind: ManifoldKind, tol: float) -> List[int]:
        """Members lying on V^s(x) (or V^u(x)) within tol·η"""
        manifold = x.stable if kind is ManifoldKind.STABLE else x.unstable
        ds = manifold.chart.chart.frame.d_s
        out = []
        for i in self.members:
            c = self.samples[i].coords
            arg, val = (c[:ds], c[ds:]) if kind is ManifoldKind.STABLE else (c[ds:], c[:ds])
            if np.max(np.abs(arg)) > manifold.radius:
                continue
            if np.max(np.abs(manifold(arg)[0] - val)) <= tol * self.eta:
                out.append(i)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {"symbol": self.symbol, "eta": self.eta, "members": self.members,
                "center": self.double.center}


@dataclass
class Cover:
    """The Markov cover 𝔷 with its return map and neighbour sets 𝔍_Z"""
    graph: GpoGraph
    cache: TransitionCache
    samples: List[ShadowSample]
    rectangles: Dict[int, Rectangle]
    neighbours: Dict[int, List[int]]
    tol: float
    markov_tol: float
    measured_depth: int = 1
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def section(self):
        return self.cache.factory.section

    @property
    def model(self):
        return self.section.model

    def rectangle_of(self, sample: int) -> Rectangle:
        return self.rectangles[self.samples[sample].symbol]

    def H(self, sample: int, k: int = 1) -> Optional[int]:
        """H^k on sample indices; None once the window ends"""
        i: Optional[int] = sample
        for _ in range(abs(k)):
            if i is None:
                return None
            i = self.samples[i].next if k > 0 else self.samples[i].prev
        return i

    def future_path(self, sample: int, length: int) -> Optional[List[int]]:
        """Sample indices x, H x, …, H^length x"""
        path = [sample]
        for _ in range(length):
            nxt = self.samples[path[-1]].next
            if nxt is None:
                return None
            path.append(nxt)
        return path

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rectangles": [self.rectangles[k].to_dict() for k in sorted(self.rectangles)],
            "neighbours": {str(k): v for k, v in sorted(self.neighbours.items())},
            "samples": [s.to_dict() for s in self.samples],
            "measured_depth": self.measured_depth,
            "checks": [c.to_dict() for c in self.checks],
        }


def _expand(box: Box, pad: float) -> Box:
    return box[0] - pad, box[1] + pad


def _boxes_meet(a: Box, b: Box) -> bool:
    return bool(np.all(a[0] <= b[1]) and np.all(b[0] <= a[1]))


def _neighbour_sets(rectangles: Dict[int, Rectangle], tol: float) -> Dict[int, List[int]]:
    """𝔍_Z: rectangles on the same disc whose sample boxes meet in Z's chart"""
    by_disc: Dict[int, List[int]] = {}
    for v, rect in rectangles.items():
        by_disc.setdefault(rect.disc, []).append(v)
    out: Dict[int, List[int]] = {}
    for v, rect in rectangles.items():
        own = _expand(rect.box_in(rect.chart), tol * rect.eta)
        found = []
        for w in by_disc[rect.disc]:
            other = rectangles[w].box_in(rect.chart)
            if other is not None and _boxes_meet(own, _expand(other, tol * rect.eta)):
                found.append(w)
        out[v] = sorted(found)
    for v, ws in out.items():
        for w in ws:
            if v not in out[w]:
                out[w] = sorted(out[w] + [v])
    return out


def _return_links(cover: Cover, max_steps: int = 8) -> Tuple[int, float, List[int]]:
    """
    Flow every sample to its next section hit and match it with H(x).

    A sample without successor sits at the end of its window, so a return
    that lands outside every rectangle box is only logged and listed.

    Returns:
        (measured refinement depth, largest return time, terminal samples
        whose return leaves the sampled cover)

    Raises:
        CoverGapError: H(x) is not reached within ``max_steps`` returns
    """
    section, model = cover.section, cover.model
    depth, r_max = 1, 0.0
    strays: List[int] = []
    for s in cover.samples:
        y, r = section.poincare_return(s.point, Direction.FORWARD)
        s.return_time = r
        r_max = max(r_max, r)
        if s.next is None:
            if not any(_point_in_rect(rect, y, cover.tol) for rect in cover.rectangles.values()):
                logger.warning(f"Sample {s.index} has no successor and its return leaves the sampled cover")
                strays.append(s.index)
            continue
        target = cover.samples[s.next].point
        steps = 1
        while model.distance(y, target) > cover.tol:
            if steps >= max_steps:
                raise CoverGapError(f"sample {s.index} does not reach H(x) within {max_steps} returns")
            y, _ = section.poincare_return(y, Direction.FORWARD)
            steps += 1
        depth = max(depth, steps)
    return depth, r_max, strays


def _point_in_rect(rect: Rectangle, y: Array, tol: float) -> bool:
    try:
        c = rect.chart.inverse(y)
    except DomainError:
        return False
    return bool(np.max(np.abs(c)) <= rect.eta * (1 + tol))


def _pairs(members: Sequence[int], limit: int) -> List[Tuple[int, int]]:
    head = list(members)[:limit]
    return list(itertools.combinations(head, 2))


def build_cover(
    graph: GpoGraph,
    samples: List[ShadowSample],
    cache: TransitionCache,
    tol: float = 1e-7,
    markov_tol: float = 1e-6,
    pair_limit: int = 8,
) -> Cover:
    """
    Group samples into rectangles and run the cover checks.

    Checks: samples inside their chart windows, local product structure
    and [x, x] = x, local finiteness of the H-neighbours, the symbolic
    Markov property of the fibres, and bracket/holonomy compatibility.

    Args:
        graph: Pruned gpo graph
        samples: Output of ``shadow_samples``
        cache: Transition cache used for the fibres
        tol: Membership tolerance (relative to η in chart coordinates,
            absolute for ambient point matches)
        markov_tol: Fibre-containment tolerance relative to η
        pair_limit: Members per rectangle used for pair checks

    Raises:
        InputError: No graph vertex has a sample
        CoverGapError: A sample's return does not reach H(x)
    """
    if not samples:
        raise InputError("no shadowed samples to build a cover from")
    alphabet = graph.alphabet
    members: Dict[int, List[int]] = {}
    for s in samples:
        members.setdefault(s.symbol, []).append(s.index)
    missing = [v for v in graph.vertices if v not in members]
    if missing:
        logger.warning(f"{len(missing)} graph vertices have no shadowed sample")
    rects = {v: Rectangle(v, alphabet[v].double, idx, samples) for v, idx in sorted(members.items())}
    cover = Cover(graph, cache, samples, rects, {}, tol, markov_tol)
    cover.neighbours = _neighbour_sets(rects, tol)
    cover.measured_depth, r_max, strays = _return_links(cover)
    section = cache.factory.section
    model = section.model

    inside = [float(np.max(np.abs(s.coords)) / rects[s.symbol].eta) for s in samples]
    checks = [CheckResult("cover_membership", all(v <= 1 + tol for v in inside), len(inside),
                          sum(v > 1 + tol for v in inside), max(inside),
                          {"missing_vertices": len(missing), "max_return": r_max,
                           "stray_returns": len(strays)})]

    bad, worst, count = 0, 0.0, 0
    for rect in rects.values():
        for i in rect.members:
            x = samples[i]
            err = model.distance(smale_bracket(rect, x.point, x.point), x.point)
            worst, count = max(worst, err), count + 1
            bad += err > tol
        for i, j in _pairs(rect.members, pair_limit):
            count += 1
            try:
                z = smale_bracket(rect, samples[i].point, samples[j].point)
                c = rect.chart.inverse(z)
            except (ShadowingError, DomainError):
                bad += 1
                continue
            ratio = float(np.max(np.abs(c))) / rect.eta
            bad += ratio > 1 + tol
    checks.append(CheckResult("local_product", bad == 0, count, bad, worst))

    eps = alphabet.eps
    h = alphabet.grids.get("h", 0.0)
    window = math.exp(2.0 * (eps ** (1 / 3) + eps + h))
    sizes, bad = [], 0
    for v, rect in rects.items():
        touched: Set[int] = {v}
        for i in rect.members:
            for k in (-1, 1):
                j = cover.H(i, k)
                if j is not None:
                    touched.add(samples[j].symbol)
        sizes.append(len(touched))
        bad += sum(not (1 / window <= rects[w].eta / rect.eta <= window) for w in touched)
    checks.append(CheckResult("local_finiteness", bad == 0, len(rects), bad, float(max(sizes)),
                              {"eta_window": window}))

    bad, worst, count = 0, 0.0, 0
    for x in samples:
        if x.next is None:
            continue
        y = samples[x.next]
        tr = cache.get(x.symbol, y.symbol)
        es = invariance_error(tr, x.stable, y.stable) / rects[y.symbol].eta
        eu = backward_invariance_error(tr, x.unstable, y.unstable) / rects[x.symbol].eta
        worst, count = max(worst, es, eu), count + 1
        bad += (es > markov_tol) + (eu > markov_tol)
    checks.append(CheckResult("symbolic_markov", bad == 0, count, bad, worst))

    bad, worst, count = 0, 0.0, 0
    shift = 0.125 * section.rho
    for rect in rects.values():
        disc = section.discs[rect.disc]
        for i, j in _pairs(rect.members, pair_limit):
            zi, zj = samples[i].point, samples[j].point
            moved = model.flow(zj, shift)
            back, _ = section.flow_box_coords(disc, moved)
            err = model.distance(smale_bracket(rect, zi, zj), smale_bracket(rect, zi, back))
            worst, count = max(worst, err), count + 1
            bad += err > markov_tol
    checks.append(CheckResult("bracket_holonomy", bad == 0, count, bad, worst))

    cover.checks = checks
    logger.info(f"Cover: {len(rects)} rectangles, {len(samples)} samples, measured depth {cover.measured_depth}")
    return cover


# ---- refinement -----------------------------------------------------------
def fibre_box_distance(manifold: AdmissibleManifold, box: Box, grid: int = 5) -> float:
    """
    Smallest sup-distance between the graph of ``manifold`` and a coordinate box.

    Returns inf when the box misses the manifold's domain.
    """
    ds = manifold.chart.chart.frame.d_s
    lo, hi = box
    if manifold.kind is ManifoldKind.STABLE:
        lo_in, hi_in, lo_out, hi_out = lo[:ds], hi[:ds], lo[ds:], hi[ds:]
    else:
        lo_in, hi_in, lo_out, hi_out = lo[ds:], hi[ds:], lo[:ds], hi[:ds]
    a = np.maximum(lo_in, -manifold.radius)
    b = np.minimum(hi_in, manifold.radius)
    if np.any(a > b):
        return math.inf
    axes = [np.linspace(a[i], b[i], grid) for i in range(len(a))]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(a))
    vals = manifold(pts)
    gap = np.maximum(np.maximum(lo_out - vals, vals - hi_out), 0.0)
    return float(np.min(np.max(gap, axis=1)))


def classify(x: ShadowSample, box: Optional[Box], tol_abs: float) -> Optional[FibreClass]:
    """
    E-class of x with respect to a rectangle box; None inside the ambiguity band.
    """
    if box is None:
        return FibreClass.NONE
    box = _expand(box, tol_abs)
    hits = []
    for manifold in (x.stable, x.unstable):
        dist = fibre_box_distance(manifold, box)
        if tol_abs < dist <= 10.0 * tol_abs:
            return None
        hits.append(dist <= tol_abs)
    return {
        (True, True): FibreClass.SU,
        (True, False): FibreClass.S_ONLY,
        (False, True): FibreClass.U_ONLY,
        (False, False): FibreClass.NONE,
    }[tuple(hits)]


@dataclass
class Cell:
    """One element of the refined partition"""
    index: int
    symbol: int
    signature: Tuple[Any, ...]
    members: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "symbol": self.symbol, "members": self.members}


@dataclass
class MarkovPartition:
    """
    Cells of the ∼^N refinement of the cover.

    - ``labels`` maps each sample to its 𝔈_Z class
    - ``excluded`` lists samples flagged by the ambiguity band
    - ``flips`` lists samples whose class changes when the fibre grid is halved
    """
    cover: Cover
    cells: List[Cell]
    depth: int
    cell_of: Dict[int, int]
    labels: Dict[int, Tuple[Any, ...]]
    excluded: Dict[int, str]
    flips: List[int]
    bound_table: Dict[int, Tuple[int, int]]

    @property
    def stable(self) -> bool:
        return not self.flips

    def itinerary(self, sample: int, n: int) -> List[Optional[int]]:
        """Cells of H^k(x), |k| ≤ n (None where undefined)"""
        out = []
        for k in range(-n, n + 1):
            j = self.cover.H(sample, k)
            out.append(self.cell_of.get(j) if j is not None else None)
        return out

    def cells_in(self, symbol: int) -> List[Cell]:
        return [c for c in self.cells if c.symbol == symbol]

    def edge_graph(self) -> nx.DiGraph:
        """R → R' whenever a sample of R has H(x) in R'; ``roof`` is the mean return time"""
        g = nx.DiGraph()
        for c in self.cells:
            times = [self.cover.samples[i].return_time for i in c.members
                     if self.cover.samples[i].return_time is not None]
            g.add_node(c.index, roof=float(np.mean(times)) if times else None)
        for i, c in self.cell_of.items():
            j = self.cover.samples[i].next
            if j is not None and j in self.cell_of:
                r = self.cover.samples[i].return_time
                g.add_edge(c, self.cell_of[j], roof=r, time=r)
        return g

    def to_dict(self) -> Dict[str, Any]:
        return {
            "depth": self.depth,
            "cells": [c.to_dict() for c in self.cells],
            "excluded": {str(k): v for k, v in sorted(self.excluded.items())},
            "stable": self.stable,
            "flips": self.flips,
            "bound_table": {str(k): list(v) for k, v in sorted(self.bound_table.items())},
        }


def refine(cover: Cover, depth: int, jobs: int = 1) -> MarkovPartition:
    """
    Bowen–Sinai refinement of the cover.

    Each sample of Z is classified against every Z' ∈ 𝔍_Z; the classes
    give 𝔈_Z, and samples are grouped by their (symbol, 𝔈-class)
    signatures over H^k, |k| ≤ depth.

    Raises:
        InputError: ``depth`` is below the measured refinement depth
    """
    if depth < cover.measured_depth:
        raise InputError(f"refinement depth {depth} below measured bound {cover.measured_depth}")
    rects, samples = cover.rectangles, cover.samples

    def boxes(half: bool) -> Dict[Tuple[int, int], Optional[Box]]:
        out = {}
        for v, rect in rects.items():
            for w in cover.neighbours[v]:
                mem = rects[w].members[::2] if half else None
                out[(v, w)] = rects[w].box_in(rect.chart, mem)
        return out

    full, halved = boxes(False), boxes(True)

    def label(item: Tuple[ShadowSample, Dict[Tuple[int, int], Optional[Box]]]) -> Optional[Tuple[Any, ...]]:
        x, table = item
        rect = rects[x.symbol]
        tol_abs = cover.tol * rect.eta
        out = []
        for w in cover.neighbours[x.symbol]:
            cls = classify(x, table[(x.symbol, w)], tol_abs)
            if cls is None:
                return None
            out.append((w, cls.value))
        return tuple(out)

    first = parallel_map(label, [(x, full) for x in samples], jobs)
    second = parallel_map(label, [(x, halved) for x in samples], jobs)
    labels: Dict[int, Tuple[Any, ...]] = {}
    excluded: Dict[int, str] = {}
    for x, lab in zip(samples, first):
        if lab is None:
            excluded[x.index] = "ambiguous fibre intersection"
            logger.warning(f"Sample {x.index} excluded: fibre test inside the ambiguity band")
        else:
            labels[x.index] = lab
    flips = [x.index for x, a, b in zip(samples, first, second) if a != b]

    table: Dict[Tuple[Any, ...], Cell] = {}
    cell_of: Dict[int, int] = {}
    lock = threading.Lock()
    for x in samples:
        if x.index in excluded:
            continue
        sig = []
        for k in range(-depth, depth + 1):
            j = cover.H(x.index, k)
            sig.append(None if j is None else (samples[j].symbol, labels.get(j)))
        key = (x.symbol, tuple(sig))
        with lock:
            cell = table.get(key)
            if cell is None:
                cell = Cell(len(table), x.symbol, key[1], [])
                table[key] = cell
            cell.members.append(x.index)
            cell_of[x.index] = cell.index
    cells = sorted(table.values(), key=lambda c: c.index)

    bound_table = {}
    for v in rects:
        count = sum(1 for c in cells if c.symbol == v)
        bound = sum(4 ** len(cover.neighbours[w]) for w in cover.neighbours[v])
        bound_table[v] = (count, bound)
    logger.info(f"Refined {len(rects)} rectangles into {len(cells)} cells at depth {depth} "
                f"({len(excluded)} samples excluded, {len(flips)} label flips)")
    return MarkovPartition(cover, cells, depth, cell_of, labels, excluded, flips, bound_table)


# ---- checks -----------------------------------------------------------------
def check_markov(partition: MarkovPartition, contraction_steps: int = 10) -> List[CheckResult]:
    """
    Geometrical Markov property, product structure and fibre contraction.

    Fibres W^{s/u}(x, R) are the members of R on the parent V-fibres of x,
    together with the grid points of those fibres. Report-only.
    """
    cover = partition.cover
    samples, rects, model = cover.samples, cover.rectangles, cover.model
    tol, mtol = cover.tol, cover.markov_tol
    cells = {c.index: c for c in partition.cells}
    results = []

    for kind in (ManifoldKind.STABLE, ManifoldKind.UNSTABLE):
        bad, count, worst = 0, 0, 0.0
        for i, r0 in partition.cell_of.items():
            x = samples[i]
            if x.next is None or x.next not in partition.cell_of:
                continue
            y = samples[x.next]
            r1 = partition.cell_of[y.index]
            tr = cover.cache.get(x.symbol, y.symbol)
            if kind is ManifoldKind.STABLE:
                err = invariance_error(tr, x.stable, y.stable) / rects[y.symbol].eta
                fibre = [j for j in rects[x.symbol].on_fibre(x, kind, tol) if j in cells[r0].members]
                target, image_of = y, (lambda j: samples[j].next)
                expected = r1
            else:
                err = backward_invariance_error(tr, x.unstable, y.unstable) / rects[x.symbol].eta
                fibre = [j for j in rects[y.symbol].on_fibre(y, kind, tol) if j in cells[r1].members]
                target, image_of = x, (lambda j: samples[j].prev)
                expected = r0
            count += x.stable.nodes.shape[0] if kind is ManifoldKind.STABLE else x.unstable.nodes.shape[0]
            worst = max(worst, err)
            bad += err > mtol
            for j in fibre:
                count += 1
                img = image_of(j)
                if img is None or partition.cell_of.get(img) != expected:
                    bad += 1
                    continue
                on = rects[target.symbol].on_fibre(target, kind, tol)
                bad += img not in on
        name = "markov_stable" if kind is ManifoldKind.STABLE else "markov_unstable"
        results.append(CheckResult(name, bad == 0, count, bad, worst))

    bad, count, worst = 0, 0, 0.0
    for cell in partition.cells:
        rect = rects[cell.symbol]
        box = _expand(rect.box_in(rect.chart, cell.members), tol * rect.eta)
        for i, j in itertools.product(cell.members[:8], repeat=2):
            count += 1
            z = smale_bracket(rect, samples[i].point, samples[j].point)
            if i == j:
                err = model.distance(z, samples[i].point)
                worst = max(worst, err)
                bad += err > tol
                continue
            c = rect.chart.inverse(z)
            bad += not (np.all(c >= box[0]) and np.all(c <= box[1]))
    results.append(CheckResult("product_structure", bad == 0, count, bad, worst))

    ratios = []
    for i in partition.cell_of:
        path = cover.future_path(i, contraction_steps)
        if path is None:
            continue
        symbols = [samples[j].symbol for j in path]
        profile = forward_contraction(cover.cache.along(symbols), samples[i].stable, pairs=4)
        ratios.append(profile[-1][0])
    worst = max(ratios) if ratios else None
    results.append(CheckResult("fibre_contraction", bool(ratios) and worst < 1.0, len(ratios),
                               sum(r >= 1.0 for r in ratios), worst, {"steps": contraction_steps}))
    return results


# ---- affiliation ------------------------------------------------------------
@dataclass
class Affiliation:
    """Affiliation relation between cells and the finite-to-one table"""
    relation: Set[Tuple[int, int]]
    N: Dict[int, int]
    multiplicity: Dict[int, Tuple[int, int]]
    bowen_violations: int
    bound_violations: int

    def affiliated(self, r: int, s: int) -> bool:
        return (r, s) in self.relation

    def to_dict(self) -> Dict[str, Any]:
        return {
            "relation": sorted([list(p) for p in self.relation]),
            "N": {str(k): v for k, v in sorted(self.N.items())},
            "multiplicity": {str(k): list(v) for k, v in sorted(self.multiplicity.items())},
            "bowen_violations": self.bowen_violations,
            "bound_violations": self.bound_violations,
        }


def _point_groups(cover: Cover, indices: Sequence[int]) -> List[List[int]]:
    """Cluster samples whose points coincide within the cover tolerance"""
    groups: List[List[int]] = []
    for i in indices:
        p = cover.samples[i].point
        for g in groups:
            if cover.model.distance(cover.samples[g[0]].point, p) <= cover.tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def affiliation(partition: MarkovPartition) -> Affiliation:
    """
    R ∼ S iff the rectangles containing them are neighbours.

    N(R) counts the affiliated cells; a point whose samples carry m
    distinct zeroth cells is checked against N(R)·N(S) with S the cell of
    H(x). Coinciding points must carry affiliated zeroth cells.
    """
    cover = partition.cover
    relation: Set[Tuple[int, int]] = set()
    for r in partition.cells:
        for s in partition.cells:
            if s.symbol in cover.neighbours[r.symbol] or r.symbol in cover.neighbours[s.symbol]:
                relation.add((r.index, s.index))
    N = {c.index: sum(1 for (a, _) in relation if a == c.index) for c in partition.cells}

    multiplicity: Dict[int, Tuple[int, int]] = {}
    bowen_bad = bound_bad = 0
    for group in _point_groups(cover, sorted(partition.cell_of)):
        zeroth = sorted({partition.cell_of[i] for i in group})
        for a, b in itertools.combinations(zeroth, 2):
            bowen_bad += (a, b) not in relation
        for i in group:
            r = partition.cell_of[i]
            nxt = cover.samples[i].next
            s = partition.cell_of.get(nxt, r) if nxt is not None else r
            bound = N[r] * N[s]
            m = len(zeroth)
            prev = multiplicity.get(i)
            multiplicity[i] = (m, bound) if prev is None else prev
            bound_bad += m > bound
    return Affiliation(relation, N, multiplicity, bowen_bad, bound_bad)


# ---- second coding ----------------------------------------------------------
@dataclass
class SecondCoding:
    """Itinerary of one sample under H with its reconstruction"""
    sample: int
    word: List[int]
    symbols: List[int]
    offset: int
    roofs: List[float]
    point: Array
    reconstruction_error: float
    diameter_bound: float
    equivariance_error: float
    regular: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sample": self.sample,
            "word": self.word,
            "offset": self.offset,
            "roofs": self.roofs,
            "point": self.point,
            "reconstruction_error": self.reconstruction_error,
            "diameter_bound": self.diameter_bound,
            "equivariance_error": self.equivariance_error,
            "regular": self.regular,
        }


def second_coding(partition: MarkovPartition, sample: int, window: int, nodes: int = 5) -> SecondCoding:
    """
    Code a sample by the cells of H^n(x), |n| ≤ window.

    The point is rebuilt from the word by shadowing its symbol chain; the
    error is compared with the diameter of the depth-``window`` cylinder,
    bounded through the stable and unstable block norms along the word.

    Raises:
        CoverageError: The itinerary leaves the sampled cover
    """
    cover = partition.cover
    model = cover.model
    ids = []
    for k in range(-window, window + 1):
        j = cover.H(sample, k)
        if j is None or j not in partition.cell_of:
            raise CoverageError(f"itinerary of sample {sample} leaves the cover at step {k}")
        ids.append(j)
    word = [partition.cell_of[j] for j in ids]
    symbols = [cover.samples[j].symbol for j in ids]
    roofs = [float(cover.samples[j].return_time) for j in ids[:-1]]
    if max(roofs) >= cover.section.rho:
        raise CoverageError(f"return time {max(roofs)} is not below rho")

    rebuilt = shadow(symbols, window, cover.cache, nodes)
    x = cover.samples[sample]
    error = model.distance(rebuilt.point, x.point)
    transitions = cover.cache.along(symbols)
    fwd = float(np.prod([np.linalg.norm(t.D_s, 2) for t in transitions[window:]]))
    bwd = float(np.prod([np.linalg.norm(np.linalg.inv(t.D_u), 2) for t in transitions[:window]]))
    chart = cover.rectangles[x.symbol].chart
    diameter = 2.0 * float(np.linalg.norm(chart.lifted, 2)) * cover.rectangles[x.symbol].eta * max(fwd, bwd)

    shifted = shadow(symbols, window + 1, cover.cache, nodes)
    equivariance = model.distance(shifted.point, model.flow(rebuilt.point, roofs[window]))
    return SecondCoding(sample, word, symbols, window, roofs, rebuilt.point, error, diameter,
                        equivariance, regular_flag(word, window))


def second_coding_shift(partition: MarkovPartition) -> Tuple[SymbolicShift, SuspensionFlow]:
    """Cell graph of the second coding, suspended by the mean return time per cell"""
    g = partition.edge_graph()
    shift = SymbolicShift(g, "second_coding")
    roof = {(v,): float(g.nodes[v]["roof"]) for v in g.nodes if g.nodes[v]["roof"] is not None}
    return shift, SuspensionFlow(shift, roof, 1, partition.cover.section.rho)


def cylinder_coding_shift(partition: MarkovPartition, depth: int = 3) -> Tuple[SymbolicShift, SuspensionFlow, float]:
    """
    Higher-block presentation of the second coding on depth-k cell words.

    Vertices are the sampled words (R_0, …, R_{k-1}) read along H, edges join
    the two sub-words of every sampled word of length k + 1, and a vertex
    roof is the mean return time of the samples starting that word. Depth 1
    gives the cell graph of ``second_coding_shift``.

    Returns:
        (shift, suspension, largest deviation of a return time from its
        cylinder average)

    Raises:
        InputError: depth < 1, or no sample has a depth-k future in the partition
    """
    if depth < 1:
        raise InputError("cylinder depth must be >= 1")
    cover, cell_of = partition.cover, partition.cell_of
    buckets: Dict[Tuple[int, ...], List[float]] = {}
    edges: Set[Tuple[Tuple[int, ...], Tuple[int, ...]]] = set()
    for i in sorted(cell_of):
        head = cover.future_path(i, depth - 1)
        r = cover.samples[i].return_time
        if head is None or r is None or any(j not in cell_of for j in head):
            continue
        key = tuple(cell_of[j] for j in head)
        buckets.setdefault(key, []).append(float(r))
        nxt = cover.samples[head[-1]].next
        if nxt is not None and nxt in cell_of:
            edges.add((key, key[1:] + (cell_of[nxt],)))
    if not buckets:
        raise InputError(f"no sample has a depth-{depth} future inside the partition")
    g = nx.DiGraph()
    g.add_nodes_from(buckets)
    g.add_edges_from((a, b) for a, b in edges if b in buckets)
    roof = {(key,): float(np.mean(v)) for key, v in buckets.items()}
    spread = max(float(np.max(np.abs(np.array(v) - roof[(key,)]))) for key, v in buckets.items())
    shift = SymbolicShift(g, f"cylinder_coding_{depth}")
    logger.debug(f"Depth-{depth} presentation: {len(buckets)} words, {g.number_of_edges()} edges")
    return shift, SuspensionFlow(shift, roof, 1, cover.section.rho), spread
