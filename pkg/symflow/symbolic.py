"""
Topological Markov shifts and flows

Graphs are networkx digraphs whose nodes are opaque symbol identifiers.
Entropies come from the Perron eigenvalue (Collatz–Wielandt bracketed
power iteration on A + I); suspension entropies use the Parry measure.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import sparse

from .errors import InputError
from .types import EntropyRow

logger = logging.getLogger(__name__)

Array = np.ndarray


class SymbolicShift:
    """
    Topological Markov shift given by a directed graph.

    - Vertices are sorted deterministically (by repr) for matrix views
    - Finite in/out degree is automatic for finite graphs
    """

    def __init__(self, graph: nx.DiGraph, name: str = "shift"):
        self.graph = graph
        self.name = name

    @classmethod
    def from_adjacency(cls, matrix: Sequence[Sequence[int]], name: str = "shift") -> "SymbolicShift":
        a = np.asarray(matrix)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError("adjacency matrix must be square")
        if np.any(a < 0) or np.any(a > 1):
            raise InputError("vertex-shift adjacency must be 0/1; use edge_shift for multigraphs")
        g = nx.DiGraph()
        g.add_nodes_from(range(a.shape[0]))
        g.add_edges_from((int(i), int(j)) for i, j in zip(*np.nonzero(a)))
        return cls(g, name)

    @classmethod
    def edge_shift(cls, matrix: Sequence[Sequence[int]], name: str = "edge_shift") -> "SymbolicShift":
        """Vertex shift on the edges of the multigraph with non-negative integer adjacency"""
        a = np.asarray(matrix)
        if np.any(a < 0) or not np.all(np.equal(np.mod(a, 1), 0)):
            raise InputError("multigraph adjacency must be non-negative integers")
        edges = [(i, j, m) for i in range(a.shape[0]) for j in range(a.shape[1]) for m in range(int(a[i, j]))]
        g = nx.DiGraph()
        g.add_nodes_from(edges)
        for e in edges:
            for f in edges:
                if e[1] == f[0]:
                    g.add_edge(e, f)
        return cls(g, name)

    @property
    def vertices(self) -> List[Hashable]:
        return sorted(self.graph.nodes, key=repr)

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def adjacency(self) -> Array:
        return nx.to_numpy_array(self.graph, nodelist=self.vertices, weight=None)

    def is_word(self, word: Sequence[Hashable]) -> bool:
        return all(self.graph.has_edge(a, b) for a, b in zip(word, word[1:]))

    def max_degree(self) -> int:
        return max((max(self.graph.in_degree(v), self.graph.out_degree(v)) for v in self.graph), default=0)

    def path_growth(self, n: int) -> float:
        """(1/n)·log(#paths of length 2n / #paths of length n)"""
        a = self.adjacency()
        pn = np.linalg.matrix_power(a, n)
        total_n = pn.sum()
        total_2n = (pn @ pn).sum()
        if total_n == 0:
            return -math.inf
        return (math.log(total_2n) - math.log(total_n)) / n

    def subshift(self, vertices: Iterable[Hashable], name: Optional[str] = None) -> "SymbolicShift":
        return SymbolicShift(self.graph.subgraph(vertices).copy(), name or self.name)


def scc_decompose(shift: SymbolicShift) -> List[SymbolicShift]:
    """
    Irreducible components: strongly connected components with an internal edge.

    Returned largest first, ties broken by the smallest vertex repr.
    """
    comps = []
    for nodes in nx.strongly_connected_components(shift.graph):
        sub = shift.graph.subgraph(nodes)
        if sub.number_of_edges() == 0:
            continue
        comps.append(sorted(nodes, key=repr))
    comps.sort(key=lambda c: (-len(c), repr(c[0])))
    return [shift.subshift(c, f"{shift.name}[{i}]") for i, c in enumerate(comps)]


def _require_irreducible(component: SymbolicShift) -> None:
    g = component.graph
    if g.number_of_nodes() == 0 or g.number_of_edges() == 0 or not nx.is_strongly_connected(g):
        raise InputError(f"component '{component.name}' is not irreducible")


def perron_vector(matrix: Array, tol: float = 1e-10, max_iter: int = 1_000_000) -> Tuple[float, Array]:
    """
    Perron eigenvalue and positive eigenvector of an irreducible non-negative matrix.

    Power iteration on A + I, stopped when the Collatz–Wielandt bounds
    min/max (Mv)_i/v_i are within ``tol`` of each other.
    """
    n = matrix.shape[0]
    m = sparse.csr_matrix(matrix) + sparse.identity(n, format="csr")
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        w = m @ v
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        v = w / w.sum()
        if hi - lo <= tol * hi:
            return float(0.5 * (lo + hi)) - 1.0, v
    raise InputError("power iteration did not converge")


def parry_entropy(component: SymbolicShift, tol: float = 1e-10) -> float:
    """log of the spectral radius of the adjacency matrix"""
    _require_irreducible(component)
    rho, _ = perron_vector(component.adjacency(), tol)
    return math.log(rho)


@dataclass
class ParryMeasure:
    """Stationary vector and transition matrix of the maximal-entropy Markov measure"""
    vertices: List[Hashable]
    stationary: Array
    transition: Array
    eigenvalue: float

    def weight(self, vertex: Hashable) -> float:
        return float(self.stationary[self.vertices.index(vertex)])

    def entropy(self) -> float:
        """-Σ π_i P_ij log P_ij, equal to log λ"""
        p = self.transition
        logs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
        return float(-np.sum(self.stationary[:, None] * p * logs))


def parry_measure(component: SymbolicShift, tol: float = 1e-12) -> ParryMeasure:
    _require_irreducible(component)
    a = component.adjacency()
    lam, right = perron_vector(a, tol)
    _, left = perron_vector(a.T, tol)
    pi = left * right
    pi = pi / pi.sum()
    trans = a * right[None, :] / (lam * right[:, None])
    return ParryMeasure(component.vertices, pi, trans, lam)


RoofLike = Union[float, Mapping[Hashable, float]]


def _roof_vector(component: SymbolicShift, roof: RoofLike) -> Array:
    if isinstance(roof, (int, float)):
        values = np.full(len(component), float(roof))
    else:
        try:
            values = np.array([float(roof[v]) for v in component.vertices])
        except KeyError as e:
            raise InputError(f"roof missing for vertex {e}") from e
    if np.any(values <= 0):
        raise InputError("roof must be positive")
    return values


def suspension_entropy(component: SymbolicShift, roof: RoofLike, tol: float = 1e-12) -> float:
    """h(μ_max)/∫roof dμ_max for a roof constant on depth-1 cylinders"""
    mu = parry_measure(component, tol)
    values = _roof_vector(component, roof)
    return math.log(mu.eigenvalue) / float(mu.stationary @ values)


def entropy_table(shift: SymbolicShift, roof: RoofLike) -> List[EntropyRow]:
    """One row per irreducible component"""
    rows = []
    for i, comp in enumerate(scc_decompose(shift)):
        rows.append(EntropyRow(i, len(comp), parry_entropy(comp), suspension_entropy(comp, roof)))
    return rows


# ---- words, roofs and the suspension -------------------------------------
@dataclass(frozen=True)
class SuspensionPoint:
    """(word, height): ``word[offset]`` is the zeroth symbol, 0 ≤ height < roof"""
    word: Tuple[Hashable, ...]
    offset: int
    height: float


@dataclass
class SuspensionFlow:
    """
    Suspension of a shift under a roof constant on depth-k cylinders.

    ``roof`` maps words of length ``depth`` (starting at the zeroth symbol)
    to roof values.
    """
    shift: SymbolicShift
    roof: Dict[Tuple[Hashable, ...], float]
    depth: int = 1
    rho: Optional[float] = None
    _bounds: Tuple[float, float] = field(default=(0.0, 0.0), repr=False)

    def __post_init__(self):
        if not self.roof:
            raise InputError("roof table is empty")
        values = list(self.roof.values())
        lo, hi = min(values), max(values)
        if lo <= 0:
            raise InputError("roof must be bounded away from zero")
        if self.rho is not None and hi >= self.rho:
            raise InputError(f"roof supremum {hi} is not below rho = {self.rho}")
        self._bounds = (lo, hi)

    @classmethod
    def constant(cls, shift: SymbolicShift, value: float, rho: Optional[float] = None) -> "SuspensionFlow":
        return cls(shift, {(v,): value for v in shift.vertices}, 1, rho)

    @property
    def inf_roof(self) -> float:
        return self._bounds[0]

    @property
    def sup_roof(self) -> float:
        return self._bounds[1]

    def roof_at(self, word: Sequence[Hashable], position: int) -> float:
        key = tuple(word[position:position + self.depth])
        if position < 0 or len(key) < self.depth:
            raise InputError(f"word too short to evaluate the roof at position {position}")
        try:
            return self.roof[key]
        except KeyError as e:
            raise InputError(f"no roof value for cylinder {key}") from e

    def depth_one_roof(self) -> Dict[Hashable, float]:
        """Roof averaged over depth-1 cylinders, for the Abramov quotient"""
        sums: Dict[Hashable, List[float]] = {}
        for key, value in self.roof.items():
            sums.setdefault(key[0], []).append(value)
        return {k: float(np.mean(v)) for k, v in sums.items()}

    def flow(self, point: SuspensionPoint, t: float) -> SuspensionPoint:
        """σ_r^t, moving the origin of the word across roof crossings"""
        offset, height = point.offset, point.height + t
        while True:
            r = self.roof_at(point.word, offset)
            if height >= r:
                height -= r
                offset += 1
            elif height < 0:
                offset -= 1
                height += self.roof_at(point.word, offset)
            else:
                return SuspensionPoint(point.word, offset, height)


def birkhoff_roof(flow: SuspensionFlow, word: Sequence[Hashable], offset: int, n: int) -> float:
    """
    r_n at the point whose zeroth symbol is ``word[offset]``.

    r_n = Σ_{i<n} r∘σ^i for n ≥ 0 and -Σ_{n≤i<0} r∘σ^i for n < 0, so
    r_{m+n} = r_m + r_n∘σ^m.

    Raises:
        InputError: The word does not reach the needed positions
    """
    if n >= 0:
        return float(sum(flow.roof_at(word, offset + i) for i in range(n)))
    return -float(sum(flow.roof_at(word, offset + i) for i in range(n, 0)))


def cylinder_distance(a: Sequence[Hashable], b: Sequence[Hashable], offset: int, shift_by: int = 0) -> float:
    """exp(-min{|n| : a_n ≠ b_n}) with index 0 at ``offset + shift_by``; 0 on full agreement"""
    if len(a) != len(b):
        raise InputError("words must have equal length")
    origin = offset + shift_by
    mismatch = [abs(i - origin) for i, (x, y) in enumerate(zip(a, b)) if x != y]
    return math.exp(-min(mismatch)) if mismatch else 0.0


def bowen_walters_distance(z1: SuspensionPoint, z2: SuspensionPoint, flow: SuspensionFlow) -> float:
    """
    Bowen–Walters distance over the cylinder metric, with chains of at most
    one horizontal segment.

    Heights are normalized by the roof of each point; horizontal segments at
    normalized height τ over origin o cost (1-τ)d_o + τd_{o+1}, vertical ones
    cost the normalized height travelled (one per full roof).

    Raises:
        InputError: Height outside [0, roof) or words of different length
    """
    if len(z1.word) != len(z2.word):
        raise InputError("points must carry words of equal length")
    if z2.offset < z1.offset:
        z1, z2 = z2, z1
    r1 = flow.roof_at(z1.word, z1.offset)
    r2 = flow.roof_at(z2.word, z2.offset)
    for z, r in ((z1, r1), (z2, r2)):
        if not 0 <= z.height < r:
            raise InputError(f"height {z.height} outside [0, {r})")
    t1, t2 = z1.height / r1, z2.height / r2
    w1, w2 = z1.word, z2.word

    def horizontal(origin: int, tau: float) -> float:
        return (1.0 - tau) * cylinder_distance(w1, w2, origin) + tau * cylinder_distance(w1, w2, origin, 1)

    o, gap = z1.offset, z2.offset - z1.offset
    if gap == 0:
        candidates = [horizontal(o, t1) + abs(t1 - t2), horizontal(o, t2) + abs(t1 - t2)]
        if o + 1 < len(w1):
            candidates.append((1.0 - t1) + t2 + _shifted_distance(w1, w2, o))
            candidates.append((1.0 - t2) + t1 + _shifted_distance(w2, w1, o))
        return float(min(candidates))
    climb = (1.0 - t1) + (gap - 1)
    candidates = [
        climb + cylinder_distance(w1, w2, z2.offset) + t2,
        climb + t2 + horizontal(z2.offset, t2),
        horizontal(o, t1) + climb + t2,
    ]
    return float(min(candidates))


def _shifted_distance(a: Sequence[Hashable], b: Sequence[Hashable], offset: int) -> float:
    """d(σa, b) with both words read from their own origin"""
    n = min(len(a) - offset - 1, len(b) - offset)
    mismatch = [abs(i) for i in range(-offset, n) if a[offset + 1 + i] != b[offset + i]]
    return math.exp(-min(mismatch)) if mismatch else 0.0


def fit_holder(flow: SuspensionFlow, pairs: Sequence[Tuple[SuspensionPoint, SuspensionPoint]],
               times: Sequence[float]) -> Tuple[float, float]:
    """
    Fit (C, κ) with d(σ^t z, σ^t z') ≤ C·d(z, z')^κ on the given samples.

    κ is the least-squares slope in log-log coordinates (clipped to (0, 1]);
    C is the smallest constant making the bound hold on every sample.
    """
    xs, ys = [], []
    for z1, z2 in pairs:
        base = bowen_walters_distance(z1, z2, flow)
        if base <= 0:
            continue
        for t in times:
            moved = bowen_walters_distance(flow.flow(z1, t), flow.flow(z2, t), flow)
            if moved > 0:
                xs.append(math.log(base))
                ys.append(math.log(moved))
    if len(xs) < 2:
        raise InputError("not enough distinct pairs to fit Hölder constants")
    xs_a, ys_a = np.array(xs), np.array(ys)
    kappa = float(np.clip(np.polyfit(xs_a, ys_a, 1)[0], 1e-3, 1.0)) if np.ptp(xs_a) > 0 else 1.0
    c = float(np.exp(np.max(ys_a - kappa * xs_a)))
    return c, kappa


def regular_flag(word: Sequence[Hashable], offset: int) -> bool:
    """Some symbol repeats in the forward half and some symbol repeats in the backward half"""
    forward = list(word[offset:])
    backward = list(word[:offset + 1])
    return len(set(forward)) < len(forward) and len(set(backward)) < len(backward)


# ---- reference coding of toral automorphisms -----------------------------
def reference_partition_shift(matrix: Sequence[Sequence[int]], slices: int, return_time: float,
                              rho: Optional[float] = None) -> Tuple[SymbolicShift, SuspensionFlow]:
    """
    Edge shift of the base matrix, each symbol chained through ``slices``
    section copies, suspended with constant roof ``return_time``.

    Its suspension entropy is log λ_max / (slices·return_time).
    """
    base = SymbolicShift.edge_shift(matrix, "reference")
    g = nx.DiGraph()
    for e in base.vertices:
        for j in range(slices - 1):
            g.add_edge((e, j), (e, j + 1))
        g.add_node((e, slices - 1))
        for f in base.graph.successors(e):
            g.add_edge((e, slices - 1), (f, 0))
        if slices == 1:
            g.add_node((e, 0))
    shift = SymbolicShift(g, "reference_suspension")
    return shift, SuspensionFlow.constant(shift, return_time, rho)
