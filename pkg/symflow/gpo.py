"""
ε-double-chart alphabet, edges between double charts and the gpo graph

The alphabet is built by coarse-graining sampled orbit windows: positions
are snapped to a uniform grid on each slice and the greedy parameters are
lowered onto the discrete sets I_{ε,q} = {e^{-ε²q·i}}. Symbols are
identified by (disc, snapped cell, i_s, i_u).
"""
import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from .charts import ChartFactory, DoubleChart, OverlapReport, PesinChart, overlap_report
from .config import ScaleLaws
from .errors import ConfigurationError, DomainError, InputError, WindowError
from .hyperbolicity import greedy_p, q_parameters, robustness_exponent
from .parallel import parallel_map
from .sections import OrbitWindow
from .types import Direction

logger = logging.getLogger(__name__)

Array = np.ndarray

SymbolKey = Tuple[int, Tuple[int, ...], int, int]


# ---- discrete sets I_{ε,q} ------------------------------------------------
def grid_step(eps: float, q: float) -> float:
    """Logarithmic spacing ε²q of I_{ε,q}"""
    return eps * eps * q


def grid_value(eps: float, q: float, i: int) -> float:
    return math.exp(-grid_step(eps, q) * i)


def snap_down(value: float, eps: float, q: float) -> int:
    """Index of the largest element of I_{ε,q} that is ≤ value"""
    if value <= 0:
        raise InputError("only positive values can be snapped")
    i = math.ceil(-math.log(value) / grid_step(eps, q) - 1e-9)
    while grid_value(eps, q, i) > value:
        i += 1
    return max(i, 0)


def in_grid(value: float, eps: float, q: float, rtol: float = 1e-9) -> bool:
    i = round(-math.log(value) / grid_step(eps, q))
    return i >= 0 and abs(grid_value(eps, q, i) / value - 1.0) <= rtol


@dataclass
class Symbol:
    """
    One ε-double chart of the alphabet.

    - ``i_s``, ``i_u`` index p^s, p^u in I_{ε,q}
    - ``provenance`` is (orbit label, window index) of the first sample
    """
    index: int
    key: SymbolKey
    double: DoubleChart
    q: float
    i_s: int
    i_u: int
    provenance: Tuple[str, int]

    @property
    def point(self) -> Array:
        return self.double.center

    @property
    def p_s(self) -> float:
        return self.double.p_s

    @property
    def p_u(self) -> float:
        return self.double.p_u

    @property
    def eta(self) -> float:
        return self.double.eta

    @property
    def disc(self) -> int:
        return self.key[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "disc": self.key[0],
            "cell": list(self.key[1]),
            "i_s": self.i_s,
            "i_u": self.i_u,
            "p_s": self.p_s,
            "p_u": self.p_u,
            "q": self.q,
            "Q": self.double.chart.frame.Q,
            "point": self.point,
            "provenance": list(self.provenance),
        }


@dataclass
class Alphabet:
    """
    Finite alphabet of double charts with provenance.

    ``sequences`` maps each orbit label to its symbol indices, in window
    order, so sampled orbits can be replayed as gpo paths.
    """
    symbols: List[Symbol]
    sequences: Dict[str, List[int]]
    offsets: Dict[str, int]
    grids: Dict[str, float]
    eps: float

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, i: int) -> Symbol:
        return self.symbols[i]

    def count_above(self, t: float) -> int:
        """#{symbols with p^s, p^u > t}"""
        return sum(1 for s in self.symbols if s.p_s > t and s.p_u > t)

    def cg2_ok(self, symbol: Symbol) -> bool:
        cap = self.eps * symbol.double.chart.frame.Q * (1 + 1e-12)
        return (in_grid(symbol.p_s, self.eps, symbol.q) and in_grid(symbol.p_u, self.eps, symbol.q)
                and symbol.p_s <= cap and symbol.p_u <= cap)

    def cg3_ratio(self, symbol: Symbol) -> float:
        """|log (p^s∧p^u)/q|"""
        return abs(math.log(symbol.eta / symbol.q))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "grids": self.grids,
            "symbols": [s.to_dict() for s in self.symbols],
            "sequences": self.sequences,
            "offsets": self.offsets,
        }


# ---- edges ------------------------------------------------------------------
@dataclass
class EdgeDiagnostics:
    """Outcome of the edge test with every clause measured"""
    forward_overlap: Optional[OverlapReport] = None
    backward_overlap: Optional[OverlapReport] = None
    time: Optional[float] = None
    gpo2_s: Tuple[float, float, float] = (math.nan, math.nan, math.nan)
    gpo2_u: Tuple[float, float, float] = (math.nan, math.nan, math.nan)
    failed: List[str] = field(default_factory=list)

    @property
    def is_edge(self) -> bool:
        return not self.failed

    def __bool__(self) -> bool:
        return self.is_edge

    def margin(self, clause: str) -> float:
        """Signed log-margin of a GPO2 clause (positive means satisfied)"""
        lo, val, hi = self.gpo2_s if clause == "s" else self.gpo2_u
        return min(math.log(val / lo), math.log(hi / val))


def _image_chart(factory: ChartFactory, x: Array, direction: Direction, eta: float) -> PesinChart:
    y, _ = factory.section.poincare_return(x, direction)
    return factory.chart(y, eta=eta)


def transition_time(v: DoubleChart, w: DoubleChart, factory: ChartFactory, eps: float,
                    laws: Optional[ScaleLaws] = None, nodes: int = 3) -> float:
    """
    T(v, w): minimal holonomy time over Ψ_x(R[η_v/20]) and Ψ_y(R[η_w/20]).

    Raises:
        InputError: The overlap conditions between v and w fail
    """
    laws = laws or factory.builder.laws
    fwd = overlap_report(_image_chart(factory, v.center, Direction.FORWARD, w.eta), w.chart, eps, laws)
    bwd = overlap_report(_image_chart(factory, w.center, Direction.BACKWARD, v.eta), v.chart, eps, laws)
    if not (fwd.overlaps and bwd.overlaps):
        raise InputError("transition time needs overlapping charts in both directions")
    return _transition_time(v, w, factory, nodes)


def _transition_time(v: DoubleChart, w: DoubleChart, factory: ChartFactory, nodes: int = 3) -> float:
    section = factory.section
    best = math.inf
    for chart, eta, direction, sign in ((v.chart, v.eta, Direction.FORWARD, 1.0),
                                        (w.chart, w.eta, Direction.BACKWARD, -1.0)):
        d = chart.frame.C.shape[0]
        axis = np.linspace(-eta / 20.0, eta / 20.0, nodes)
        for corner in itertools.product(axis, repeat=d):
            z = chart.apply(np.array(corner))
            _, s = section.holonomy(chart.center, direction, z)
            best = min(best, sign * s)
    return best


def gpo2_bounds(p: float, q_next: float, Q_here: float, T: float, eps: float) -> Tuple[float, float, float]:
    """(lower, value, upper) of e^{-εp}min{e^{εT}q', e^{-ε}εQ} ≤ p ≤ min{e^{εT}q', εQ}"""
    lower = math.exp(-eps * p) * min(math.exp(eps * T) * q_next, math.exp(-eps) * eps * Q_here)
    upper = min(math.exp(eps * T) * q_next, eps * Q_here)
    return lower, p, upper


def is_edge(v: DoubleChart, w: DoubleChart, factory: ChartFactory, eps: float,
            laws: Optional[ScaleLaws] = None, rtol: float = 1e-12) -> EdgeDiagnostics:
    """
    Test v → w: both overlaps (nearest-neighbour condition) and the two
    greedy-recursion inequalities. Never raises for failed clauses.
    """
    laws = laws or factory.builder.laws
    diag = EdgeDiagnostics()
    try:
        diag.forward_overlap = overlap_report(
            _image_chart(factory, v.center, Direction.FORWARD, w.eta), w.chart, eps, laws)
        diag.backward_overlap = overlap_report(
            _image_chart(factory, w.center, Direction.BACKWARD, v.eta), v.chart, eps, laws)
    except DomainError as e:
        diag.failed.append(f"overlap: {e}")
        return diag
    if not diag.forward_overlap.overlaps:
        diag.failed.append("forward_overlap")
    if not diag.backward_overlap.overlaps:
        diag.failed.append("backward_overlap")
    if diag.failed:
        return diag
    try:
        T = _transition_time(v, w, factory)
    except DomainError as e:
        diag.failed.append(f"transition_time: {e}")
        return diag
    diag.time = T
    diag.gpo2_s = gpo2_bounds(v.p_s, w.p_s, v.chart.frame.Q, T, eps)
    diag.gpo2_u = gpo2_bounds(w.p_u, v.p_u, w.chart.frame.Q, T, eps)
    for name, (lo, val, hi) in (("gpo2_s", diag.gpo2_s), ("gpo2_u", diag.gpo2_u)):
        if not (lo * (1 - rtol) <= val <= hi * (1 + rtol)):
            diag.failed.append(name)
    return diag


# ---- coarse graining -----------------------------------------------------
def _surgery(P: Array, q: Array, eps: float, lam: float) -> Tuple[Array, Array, Array]:
    """
    Lower P onto I_{ε,q} by backward induction between maximal indices.

    Returns:
        (indices i_n, values p_n, maximal mask)
    """
    n = len(P)
    maximal = np.zeros(n, dtype=bool)
    maximal[-1] = True
    maximal[:-1] = P[:-1] < lam * P[1:]
    idx = np.zeros(n, dtype=int)
    p = np.zeros(n)
    a_next = 1.0
    for k in range(n - 1, -1, -1):
        if maximal[k]:
            i = snap_down(P[k], eps, q[k])
        else:
            i = snap_down(math.exp(-0.25 * eps * P[k]) * a_next * P[k], eps, q[k])
        idx[k] = i
        p[k] = grid_value(eps, q[k], i)
        a_next = p[k] / P[k]
    return idx, p, maximal


@dataclass
class _WindowCoding:
    label: str
    offset: int
    keys: List[SymbolKey]
    points: Array
    p_s: Array
    p_u: Array
    q: Array
    maximal: int


def coarse_grain(
    windows: Sequence[OrbitWindow],
    factory: ChartFactory,
    eps: float,
    laws: Optional[ScaleLaws] = None,
    lam: Optional[float] = None,
    jobs: int = 1,
) -> Alphabet:
    """
    Build the alphabet from sampled orbit windows.

    Args:
        windows: Orbit windows on a periodic section
        factory: Chart factory (frames are computed through its builder)
        eps: ε
        laws: Scale laws (snapping cell)
        lam: Growth threshold; defaults to exp(min(ε^1.5, ε·min r/2))
        jobs: Worker threads

    Returns:
        Alphabet with one symbol per distinct (disc, cell, i_s, i_u)

    Raises:
        WindowError: A window has no interior maximal index
        ConfigurationError: Section without slice structure
    """
    section = factory.section
    model = section.model
    if not section.periodic:
        raise ConfigurationError("coarse graining needs a sliced section")
    laws = laws or factory.builder.laws
    builder = factory.builder

    def frames_of(w: OrbitWindow):
        return [builder.frame(p) for p in w.points]

    all_frames = parallel_map(frames_of, list(windows), jobs)
    params = []
    for w, frames in zip(windows, all_frames):
        if len(w) < 3:
            raise WindowError(f"window '{w.label}' has fewer than 3 points")
        Q = np.array([f.Q for f in frames])
        params.append(q_parameters(Q, w.times, eps))
    q_min = min(float(p.q.min()) for p in params)
    r_min = min(float(np.min(w.returns())) for w in windows)
    r_max = max(float(np.max(w.returns())) for w in windows)
    if lam is None:
        lam = math.exp(min(eps ** 1.5, 0.5 * eps * r_min))

    d = model.d
    g_max = max(float(np.linalg.norm(np.linalg.cholesky(model.metric(p)).T, 2))
                for w in windows for p in w.points)
    cell = laws.snap_cell(q_min)
    delta = cell / (2.0 * math.sqrt(d) * g_max * math.exp(2.0 * section.rho))
    per_axis = math.ceil(1.0 / delta)
    delta = 1.0 / per_axis
    logger.info(f"Coarse graining {len(windows)} windows: q_min = {q_min:.3e}, cell = {cell:.3e}, "
                f"{per_axis} nodes per axis, lambda = {lam:.8f}")

    def code(item: Tuple[OrbitWindow, Any]) -> _WindowCoding:
        w, par = item
        cells = np.mod(np.rint(w.points[:, :-1] / delta).astype(np.int64), per_axis)
        snapped = np.c_[cells * delta, w.points[:, -1]]
        Q = np.array([builder.frame(p).Q for p in snapped])
        P_s, P_u = greedy_p(Q, w.times, eps, (r_min, r_max))
        q = par.q
        i_s, p_s, max_s = _surgery(P_s, q, eps, lam)
        iu_rev, pu_rev, max_u = _surgery(P_u[::-1], q[::-1], eps, lam)
        i_u, p_u = iu_rev[::-1], pu_rev[::-1]
        if not (max_s[:-1].any() and max_u[:-1].any()):
            raise WindowError(f"window '{w.label}' has no interior maximal index")
        keys = []
        for n in range(len(w)):
            disc = section.disc_index(snapped[n])
            keys.append((int(disc), tuple(int(c) for c in cells[n]), int(i_s[n]), int(i_u[n])))
        return _WindowCoding(w.label, w.offset, keys, snapped, p_s, p_u, q,
                             int(max_s.sum() + max_u.sum()))

    codings = parallel_map(code, list(zip(windows, params)), jobs)
    symbols: List[Symbol] = []
    by_key: Dict[SymbolKey, int] = {}
    sequences: Dict[str, List[int]] = {}
    offsets: Dict[str, int] = {}
    for coding in codings:
        seq = []
        for n, key in enumerate(coding.keys):
            if key not in by_key:
                double = factory.double(coding.points[n], coding.p_s[n], coding.p_u[n])
                by_key[key] = len(symbols)
                symbols.append(Symbol(len(symbols), key, double, float(coding.q[n]), key[2], key[3],
                                      (coding.label, n - coding.offset)))
            seq.append(by_key[key])
        sequences[coding.label] = seq
        offsets[coding.label] = coding.offset
    grids = {"snap_cell": cell, "coord_step": delta, "lambda": lam, "q_min": q_min,
             "h": robustness_exponent(eps, section.rho, builder.beta)}
    logger.info(f"Alphabet has {len(symbols)} symbols")
    return Alphabet(symbols, sequences, offsets, grids, eps)


# ---- graph ----------------------------------------------------------------
@dataclass
class GpoGraph:
    """
    Directed graph of double charts.

    Nodes are symbol indices of ``alphabet``; each edge carries its
    transition time as the ``time`` attribute.
    """
    alphabet: Alphabet
    graph: nx.DiGraph
    pruned: int = 0
    tested: int = 0

    @property
    def vertices(self) -> List[int]:
        return sorted(self.graph.nodes)

    def edges(self) -> List[Tuple[int, int]]:
        return sorted(self.graph.edges)

    def transition_time(self, v: int, w: int) -> float:
        return float(self.graph.edges[v, w]["time"])

    def successors(self, v: int) -> List[int]:
        return sorted(self.graph.successors(v))

    def is_path(self, seq: Sequence[int]) -> bool:
        return all(self.graph.has_edge(a, b) for a, b in zip(seq, seq[1:]))

    def max_degree(self) -> int:
        return max((max(self.graph.in_degree(v), self.graph.out_degree(v)) for v in self.graph), default=0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vertices": self.vertices,
            "edges": [[v, w, self.transition_time(v, w)] for v, w in self.edges()],
            "pruned": self.pruned,
            "tested": self.tested,
        }


def _candidates(alphabet: Alphabet, factory: ChartFactory, eps: float, laws: ScaleLaws) -> List[Tuple[int, int]]:
    """Pairs (v, w) passing the η-ratio filter whose centres are near f(x_v)"""
    section = factory.section
    model = section.model
    etas = np.array([s.eta for s in alphabet.symbols])
    by_disc: Dict[int, List[int]] = {}
    for s in alphabet.symbols:
        by_disc.setdefault(s.disc, []).append(s.index)
    trees: Dict[int, Tuple[cKDTree, List[int], float]] = {}
    eta_max = float(etas.max())
    for disc, members in by_disc.items():
        pts = np.array([alphabet[i].point[:-1] for i in members])
        g = model.horizontal_metric(section.discs[disc].height)
        smin = float(np.sqrt(np.linalg.eigvalsh(g).min()))
        kappa = 2.0 * laws.overlap_radius(eta_max, eta_max) / smin
        trees[disc] = (cKDTree(np.mod(pts, 1.0), boxsize=1.0), members, kappa)
    pairs = []
    ratio = math.exp(2.0 * eps)
    for s in alphabet.symbols:
        disc, image, _ = section.first_hit(s.point, Direction.FORWARD, strict=True)
        if disc not in trees:
            continue
        tree, members, kappa = trees[disc]
        for j in sorted(tree.query_ball_point(np.mod(image[:-1], 1.0), kappa)):
            w = members[j]
            if 1.0 / ratio <= etas[s.index] / etas[w] <= ratio:
                pairs.append((s.index, w))
    return pairs


def prune(graph: nx.DiGraph) -> int:
    """Iteratively drop vertices with zero in- or out-degree; returns the count removed"""
    removed = 0
    while True:
        dead = [v for v in graph if graph.in_degree(v) == 0 or graph.out_degree(v) == 0]
        if not dead:
            return removed
        graph.remove_nodes_from(dead)
        removed += len(dead)


def build_gpo_graph(
    alphabet: Alphabet,
    factory: ChartFactory,
    eps: float,
    laws: Optional[ScaleLaws] = None,
    jobs: int = 1,
    relevance: bool = True,
) -> GpoGraph:
    """
    Edge-test all candidate pairs and prune to the relevant part.

    Raises:
        ConfigurationError: Nothing survives pruning
    """
    laws = laws or factory.builder.laws
    if len(alphabet) == 0:
        raise ConfigurationError("empty alphabet")
    pairs = _candidates(alphabet, factory, eps, laws)
    graph = nx.DiGraph()
    graph.add_nodes_from(s.index for s in alphabet.symbols)
    lock = threading.Lock()

    def test(pair: Tuple[int, int]) -> None:
        v, w = pair
        diag = is_edge(alphabet[v].double, alphabet[w].double, factory, eps, laws)
        if diag.is_edge:
            with lock:
                graph.add_edge(v, w, time=diag.time)
        else:
            logger.debug(f"Pair {v}->{w} rejected: {diag.failed}")

    parallel_map(test, pairs, jobs)
    edges_before = graph.number_of_edges()
    removed = prune(graph) if relevance else 0
    if graph.number_of_nodes() == 0:
        raise ConfigurationError(
            f"gpo graph is empty after pruning ({len(pairs)} candidate pairs, {edges_before} edges)")
    logger.info(f"gpo graph: {graph.number_of_nodes()} vertices, {graph.number_of_edges()} edges "
                f"({removed} pruned, {len(pairs)} pairs tested)")
    return GpoGraph(alphabet, graph, removed, len(pairs))
