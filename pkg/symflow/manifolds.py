"""
Admissible manifolds, graph transforms, stable/unstable manifolds of gpo
rays, shadowing and Smale brackets

Representing functions are stored as values on a tensor grid of the
relevant axis box and evaluated by multilinear interpolation.
"""
import bisect
import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .charts import ChartFactory, ChartTransition, DoubleChart, chart_transition
from .errors import DomainError, ShadowingError, TransformError
from .types import Direction, ManifoldKind

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass
class AdmissibleManifold:
    """
    Graph of a representing function in a double chart.

    - s-kind: v_u = F(v_s) over B^{d_s}[p^s]
    - u-kind: v_s = G(v_u) over B^{d_u}[p^u]
    """
    chart: DoubleChart
    kind: ManifoldKind
    axes: List[Array]
    values: Array
    beta: float = 1.0
    _interp: Optional[RegularGridInterpolator] = field(default=None, repr=False)

    def __post_init__(self):
        self._interp = RegularGridInterpolator(tuple(self.axes), self.values, method="linear",
                                               bounds_error=False, fill_value=None)

    @classmethod
    def from_function(cls, chart: DoubleChart, kind: ManifoldKind, fn: Callable[[Array], Array],
                      nodes: int = 9, beta: float = 1.0) -> "AdmissibleManifold":
        d_s = chart.chart.frame.d_s
        d = chart.chart.frame.C.shape[0]
        dim_in, dim_out = (d_s, d - d_s) if kind is ManifoldKind.STABLE else (d - d_s, d_s)
        radius = chart.p_s if kind is ManifoldKind.STABLE else chart.p_u
        axes = [np.linspace(-radius, radius, nodes) for _ in range(dim_in)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim_in)
        vals = np.asarray(fn(grid), dtype=float).reshape([nodes] * dim_in + [dim_out])
        return cls(chart, kind, axes, vals, beta)

    @classmethod
    def zero(cls, chart: DoubleChart, kind: ManifoldKind, nodes: int = 9, beta: float = 1.0) -> "AdmissibleManifold":
        width = cls._out_dim(chart, kind)
        return cls.from_function(chart, kind, lambda g: np.zeros((len(g), width)), nodes, beta)

    @staticmethod
    def _out_dim(chart: DoubleChart, kind: ManifoldKind) -> int:
        d_s = chart.chart.frame.d_s
        d = chart.chart.frame.C.shape[0]
        return d - d_s if kind is ManifoldKind.STABLE else d_s

    @property
    def dim_in(self) -> int:
        return len(self.axes)

    @property
    def dim_out(self) -> int:
        return self.values.shape[-1]

    @property
    def radius(self) -> float:
        return float(self.axes[0][-1])

    @property
    def eta(self) -> float:
        return self.chart.eta

    @property
    def nodes(self) -> Array:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim_in)

    def __call__(self, t: Array) -> Array:
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return self._interp(t).reshape(len(t), self.dim_out)

    def jacobian(self, t: Array) -> Array:
        """Derivatives (n, dim_out, dim_in) of the interpolant at points t"""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        h = 1e-3 * (self.axes[0][1] - self.axes[0][0])
        out = np.zeros((len(t), self.dim_out, self.dim_in))
        for i in range(self.dim_in):
            e = np.zeros(self.dim_in)
            e[i] = h
            out[:, :, i] = (self(t + e) - self(t - e)) / (2 * h)
        return out

    def graph_points(self) -> Array:
        """Chart coordinates (v_s, v_u) of the grid nodes of the graph"""
        t = self.nodes
        f = self.values.reshape(-1, self.dim_out)
        return np.hstack([t, f]) if self.kind is ManifoldKind.STABLE else np.hstack([f, t])

    def to_ambient(self) -> Array:
        chart = self.chart.chart
        return np.array([chart.apply(v) for v in self.graph_points()])

    def grid_derivatives(self) -> Array:
        """Finite-difference derivatives on the grid, shape (nodes, dim_out, dim_in)"""
        spacing = [a[1] - a[0] for a in self.axes]
        grads = np.gradient(self.values, *spacing, axis=tuple(range(self.dim_in)))
        if self.dim_in == 1:
            grads = [grads]
        stacked = np.stack(grads, axis=-1)
        return stacked.reshape(-1, self.dim_out, self.dim_in)

    def norms(self) -> Dict[str, float]:
        """Grid norms behind the admissibility conditions"""
        f0 = self(np.zeros(self.dim_in))[0]
        d_all = self.grid_derivatives()
        center = np.argmin(np.linalg.norm(self.nodes, axis=1))
        nodes = self.nodes
        holder = 0.0
        exponent = self.beta / 3.0
        for i in range(len(nodes)):
            gaps = np.linalg.norm(nodes[i + 1:] - nodes[i], axis=1)
            if len(gaps):
                diffs = np.linalg.norm((d_all[i + 1:] - d_all[i]).reshape(len(gaps), -1), axis=1)
                holder = max(holder, float(np.max(diffs / gaps ** exponent)))
        return {
            "F0": float(np.linalg.norm(f0)),
            "dF0": float(np.linalg.norm(d_all[center], 2)),
            "dF_max": float(max(np.linalg.norm(m, 2) for m in d_all)),
            "holder": holder,
        }

    def admissibility(self) -> Dict[str, Any]:
        n = self.norms()
        eta = self.eta
        report = {
            "am1": n["F0"] <= 1e-3 * eta,
            "am2": n["dF0"] <= 0.5 * eta ** (self.beta / 3.0),
            "am3": n["dF_max"] + n["holder"] <= 0.5,
        }
        report.update(n)
        return report

    def is_admissible(self) -> bool:
        r = self.admissibility()
        return r["am1"] and r["am2"] and r["am3"]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "axes": self.axes, "values": self.values}


def random_admissible(chart: DoubleChart, kind: ManifoldKind, rng: np.random.Generator, nodes: int = 9,
                      beta: float = 1.0, attempts: int = 30) -> AdmissibleManifold:
    """
    Random admissible manifold: an offset, a tilt and a smooth radial bump.

    F(t) = c + L·t + a·(r/π)·(1 - cos(π|t|/r)) with |c| ≤ 5e-4·η and
    |L| ≤ η^{β/3}/4, so the first two admissibility conditions hold from
    the start. The bump amplitude is halved until the Hölder condition
    holds too; the bump keeps the graph away from affine.

    Raises:
        DomainError: No admissible amplitude within ``attempts`` halvings
    """
    width = AdmissibleManifold._out_dim(chart, kind)
    dim_in = chart.chart.frame.C.shape[0] - width
    r = chart.p_s if kind is ManifoldKind.STABLE else chart.p_u
    eta = chart.eta
    c = rng.uniform(-1.0, 1.0, width) * 5e-4 * eta / math.sqrt(width)
    slope = rng.uniform(-1.0, 1.0, (width, dim_in)) * 0.25 * eta ** (beta / 3.0) / math.sqrt(width * dim_in)
    direction = rng.normal(size=width)
    direction /= np.linalg.norm(direction)
    amplitude = rng.uniform(0.05, 0.2)

    for _ in range(attempts):
        a = amplitude

        def fn(t: Array, a: float = a) -> Array:
            bump = (r / math.pi) * (1.0 - np.cos(math.pi * np.linalg.norm(t, axis=1) / r))
            return c[None, :] + t @ slope.T + a * bump[:, None] * direction[None, :]

        m = AdmissibleManifold.from_function(chart, kind, fn, nodes, beta)
        if m.is_admissible():
            return m
        amplitude *= 0.5
    raise DomainError(f"no admissible bump amplitude after {attempts} halvings")


def compare_manifolds(m1: AdmissibleManifold, m2: AdmissibleManifold) -> Tuple[float, float]:
    """(d_C0, d_C1) between two manifolds of the same kind on the nodes of m1"""
    t = m1.nodes
    c0 = float(np.max(np.linalg.norm(m1(t) - m2(t), axis=1)))
    c1 = float(np.max(np.linalg.norm(m1.jacobian(t) - m2.jacobian(t), axis=(1, 2), ord=2)))
    return c0, c1 + c0


def _jacobians(transition: ChartTransition, v: Array) -> Array:
    if transition.affine is not None:
        return np.repeat(transition.affine[0][None, :, :], len(v), axis=0)
    return np.array([transition.jacobian(p) for p in v])


def graph_transform(
    transition: ChartTransition,
    manifold: AdmissibleManifold,
    kind: ManifoldKind,
    nodes: Optional[int] = None,
    tol: float = 1e-11,
    max_iter: int = 50,
) -> AdmissibleManifold:
    """
    Pull an s-manifold back (or push a u-manifold forward) through one edge.

    Args:
        transition: Chart transition of the edge v → w
        manifold: s-manifold at w, or u-manifold at v
        kind: Which transform to apply
        nodes: Grid nodes per axis (defaults to those of ``manifold``)
        tol: Newton step tolerance, relative to the window radius
        max_iter: Newton iteration cap

    Returns:
        s-manifold at v, or u-manifold at w

    Raises:
        TransformError: Newton failed at some grid node (carried on the error)
    """
    nodes = nodes or len(manifold.axes[0])
    ds = transition.d_s
    if kind is ManifoldKind.STABLE:
        target = _double_of(transition, source=True)
        template = AdmissibleManifold.zero(target, kind, nodes, manifold.beta)
        t = template.nodes
        u = np.zeros((len(t), template.dim_out))
        scale = max(target.p_s, 1e-300)
        for it in range(max_iter):
            v = np.hstack([t, u])
            img = transition(v)
            J = _jacobians(transition, v)
            z = img[:, :ds]
            r = img[:, ds:] - manifold(z)
            jr = J[:, ds:, ds:] - manifold.jacobian(z) @ J[:, :ds, ds:]
            step = np.linalg.solve(jr, -r[:, :, None])[:, :, 0]
            u = u + step
            worst = np.max(np.abs(step), axis=1)
            if it >= 1 and np.all(worst <= tol * scale):
                break
        else:
            node = t[int(np.argmax(worst))]
            raise TransformError(f"s graph transform did not converge at node {node}", node=node)
        values = u.reshape([nodes] * template.dim_in + [template.dim_out])
        return AdmissibleManifold(target, kind, template.axes, values, manifold.beta)

    target = _double_of(transition, source=False)
    template = AdmissibleManifold.zero(target, kind, nodes, manifold.beta)
    w = template.nodes
    sigma = np.zeros_like(w)
    scale = max(target.p_u, 1e-300)
    for it in range(max_iter):
        s = manifold(sigma)
        v = np.hstack([s, sigma])
        img = transition(v)
        J = _jacobians(transition, v)
        r = img[:, ds:] - w
        jr = J[:, ds:, :ds] @ manifold.jacobian(sigma) + J[:, ds:, ds:]
        step = np.linalg.solve(jr, -r[:, :, None])[:, :, 0]
        sigma = sigma + step
        worst = np.max(np.abs(step), axis=1)
        if it >= 1 and np.all(worst <= tol * scale):
            break
    else:
        node = w[int(np.argmax(worst))]
        raise TransformError(f"u graph transform did not converge at node {node}", node=node)
    img = transition(np.hstack([manifold(sigma), sigma]))
    values = img[:, :ds].reshape([nodes] * template.dim_in + [template.dim_out])
    return AdmissibleManifold(target, kind, template.axes, values, manifold.beta)


def _double_of(transition: ChartTransition, source: bool) -> DoubleChart:
    double = transition.source_double if source else transition.target_double
    if double is None:
        raise TransformError("transition charts must carry their double chart")
    return double


class TransitionCache:
    """Chart transitions between alphabet symbols, computed once per edge"""

    def __init__(self, factory: ChartFactory, doubles: Sequence[DoubleChart], grid: int = 3):
        self.factory = factory
        self.doubles = list(doubles)
        self.grid = grid
        self._cache: Dict[Tuple[int, int], ChartTransition] = {}
        self._lock = threading.Lock()

    def get(self, v: int, w: int) -> ChartTransition:
        with self._lock:
            hit = self._cache.get((v, w))
        if hit is not None:
            return hit
        src, dst = self.doubles[v], self.doubles[w]
        transition = chart_transition(src, dst, self.factory.builder,
                                      Direction.FORWARD, self.grid)
        with self._lock:
            self._cache.setdefault((v, w), transition)
        return transition

    def along(self, path: Sequence[int]) -> List[ChartTransition]:
        return [self.get(a, b) for a, b in zip(path, path[1:])]


def stable_manifold(
    transitions: Sequence[ChartTransition],
    seed: Optional[AdmissibleManifold] = None,
    nodes: int = 9,
    tol: float = 1e-11,
    history: Optional[List[AdmissibleManifold]] = None,
) -> AdmissibleManifold:
    """
    V^s of the forward ray v_0 → … → v_N by composed graph transforms.

    Args:
        transitions: Transitions of the edges v_0→v_1, …, v_{N-1}→v_N
        seed: s-manifold at v_N (zero graph when None)
        nodes: Grid nodes per axis
        tol: Newton tolerance
        history: When given, receives every intermediate manifold (at v_N … v_0)
    """
    if not transitions:
        raise DomainError("a ray needs at least one edge")
    m = seed or AdmissibleManifold.zero(_double_of(transitions[-1], source=False), ManifoldKind.STABLE, nodes)
    if history is not None:
        history.append(m)
    for tr in reversed(transitions):
        m = graph_transform(tr, m, ManifoldKind.STABLE, nodes, tol)
        if history is not None:
            history.append(m)
    return m


def unstable_manifold(
    transitions: Sequence[ChartTransition],
    seed: Optional[AdmissibleManifold] = None,
    nodes: int = 9,
    tol: float = 1e-11,
    history: Optional[List[AdmissibleManifold]] = None,
) -> AdmissibleManifold:
    """V^u of the backward ray v_{-N} → … → v_0 (transitions in forward order)"""
    if not transitions:
        raise DomainError("a ray needs at least one edge")
    m = seed or AdmissibleManifold.zero(_double_of(transitions[0], source=True), ManifoldKind.UNSTABLE, nodes)
    if history is not None:
        history.append(m)
    for tr in transitions:
        m = graph_transform(tr, m, ManifoldKind.UNSTABLE, nodes, tol)
        if history is not None:
            history.append(m)
    return m


def intersect(stable: AdmissibleManifold, unstable: AdmissibleManifold,
              tol: float = 1e-11, max_iter: int = 200) -> Tuple[Array, int]:
    """
    The point (t, F(t)) with t = G(F(t)), by fixed-point iteration.

    Returns:
        (chart coordinates, iterations)

    Raises:
        ShadowingError: Divergence or no convergence
    """
    ds = stable.dim_in
    t = np.zeros(ds)
    scale = max(stable.eta, 1e-300)
    bound = 10.0 * max(stable.radius, unstable.radius)
    for it in range(1, max_iter + 1):
        u = stable(t)[0]
        t_new = unstable(u)[0]
        step = float(np.max(np.abs(t_new - t), initial=0.0))
        t = t_new
        if not np.all(np.isfinite(t)) or np.max(np.abs(t), initial=0.0) > bound:
            raise ShadowingError(f"intersection iteration left the chart box after {it} steps")
        if step <= tol * scale:
            return np.r_[t, stable(t)[0]], it
    raise ShadowingError(f"intersection iteration did not converge in {max_iter} steps")


@dataclass
class ShadowResult:
    """The shadowed point of a gpo window and how its images sit in the boxes"""
    point: Array
    coords: Array
    residuals: Dict[int, float]
    iterations: int
    stable: AdmissibleManifold
    unstable: AdmissibleManifold

    @property
    def inside(self) -> bool:
        return all(r <= 0 for r in self.residuals.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point,
            "coords": self.coords,
            "residuals": {str(k): v for k, v in sorted(self.residuals.items())},
            "iterations": self.iterations,
            "inside": self.inside,
        }


def _invert(transition: ChartTransition, target: Array) -> Array:
    if transition.affine is not None:
        M, b = transition.affine
        return np.linalg.solve(M, target - b)
    v = np.linalg.solve(transition.linear, target)
    for _ in range(50):
        r = transition(v)[0] - target
        step = np.linalg.solve(transition.jacobian(v), r)
        v = v - step
        if np.max(np.abs(step)) <= 1e-14:
            break
    return v


def shadow(
    path: Sequence[int],
    offset: int,
    cache: TransitionCache,
    nodes: int = 9,
    tol: float = 1e-11,
    seeds: Optional[Tuple[AdmissibleManifold, AdmissibleManifold]] = None,
) -> ShadowResult:
    """
    Shadow the gpo window ``path`` (symbol indices, centre at ``offset``).

    Args:
        path: v_{-N} … v_N as alphabet indices
        offset: List index of v_0
        cache: Transition cache over the alphabet
        nodes: Grid nodes per axis for the representing functions
        tol: Fixed-point tolerance
        seeds: Optional (s-seed at v_N, u-seed at v_{-N})

    Returns:
        ShadowResult with residual_n = |P_n|_∞ − (p^s_n ∧ p^u_n)

    Raises:
        ShadowingError: The window is one-sided or the iteration diverges
    """
    if offset <= 0 or offset >= len(path) - 1:
        raise ShadowingError("shadowing needs edges on both sides of the centre")
    forward = cache.along(path[offset:])
    backward = cache.along(path[:offset + 1])
    s_seed, u_seed = seeds if seeds is not None else (None, None)
    vs = stable_manifold(forward, s_seed, nodes, tol)
    vu = unstable_manifold(backward, u_seed, nodes, tol)
    coords, iterations = intersect(vs, vu, tol)
    residuals: Dict[int, float] = {0: float(np.max(np.abs(coords))) - cache.doubles[path[offset]].eta}
    p = coords
    for n, tr in enumerate(forward, start=1):
        p = tr(p)[0]
        residuals[n] = float(np.max(np.abs(p))) - cache.doubles[path[offset + n]].eta
    p = coords
    for n, tr in enumerate(reversed(backward), start=1):
        p = _invert(tr, p)
        residuals[-n] = float(np.max(np.abs(p))) - cache.doubles[path[offset - n]].eta
    chart = cache.doubles[path[offset]].chart
    point = chart.apply(coords)
    return ShadowResult(point, coords, residuals, iterations, vs, vu)


def smale_bracket(rect: Any, x: Array, y: Array, tol: float = 1e-11) -> Array:
    """
    [x, y]: the intersection of V^s(x) and V^u(y) in the chart of ``rect``.

    ``rect`` provides ``fibres(point) -> (V^s, V^u)`` and ``chart``.
    """
    vs, _ = rect.fibres(x)
    _, vu = rect.fibres(y)
    coords, _ = intersect(vs, vu, tol)
    return rect.chart.apply(coords)


def nested_or_disjoint(m1: AdmissibleManifold, m2: AdmissibleManifold, tol: float = 1e-9) -> bool:
    """Two s-manifolds of one chart either coincide on the shorter domain or stay tol apart"""
    short, long_ = (m1, m2) if m1.radius <= m2.radius else (m2, m1)
    gaps = np.linalg.norm(short(short.nodes) - long_(short.nodes), axis=1)
    return bool(np.all(gaps <= tol) or np.all(gaps >= tol))


def invariance_error(transition: ChartTransition, at_source: AdmissibleManifold,
                     at_target: AdmissibleManifold) -> float:
    """Largest gap between g^+(V^s at v) and the graph of V^s at w, over images in the target window"""
    img = transition(at_source.graph_points())
    ds = transition.d_s
    inside = np.max(np.abs(img[:, :ds]), axis=1) <= at_target.radius
    if not np.any(inside):
        return 0.0
    img = img[inside]
    return float(np.max(np.linalg.norm(img[:, ds:] - at_target(img[:, :ds]), axis=1)))


def backward_invariance_error(transition: ChartTransition, at_source: AdmissibleManifold,
                              at_target: AdmissibleManifold) -> float:
    """Largest gap between (g^+)^{-1}(V^u at w) and the graph of V^u at v, inside the source window"""
    ds = transition.d_s
    pre = np.array([_invert(transition, p) for p in at_target.graph_points()])
    inside = np.max(np.abs(pre[:, ds:]), axis=1) <= at_source.radius
    if not np.any(inside):
        return 0.0
    pre = pre[inside]
    return float(np.max(np.linalg.norm(pre[:, :ds] - at_source(pre[:, ds:]), axis=1)))


def contraction_profile(
    transitions: Sequence[ChartTransition],
    first: AdmissibleManifold,
    second: AdmissibleManifold,
    nodes: int = 9,
) -> List[float]:
    """Per-edge ratios d_C0(ℱV1, ℱV2)/d_C0(V1, V2) while pulling two seeds back along a ray"""
    ratios = []
    a, b = first, second
    for tr in reversed(transitions):
        before = compare_manifolds(a, b)[0]
        a = graph_transform(tr, a, ManifoldKind.STABLE, nodes)
        b = graph_transform(tr, b, ManifoldKind.STABLE, nodes)
        after = compare_manifolds(a, b)[0]
        if before > 0:
            ratios.append(after / before)
    return ratios


def forward_contraction(transitions: Sequence[ChartTransition], vs: AdmissibleManifold,
                        pairs: int = 10, seed: int = 0) -> List[Tuple[float, float]]:
    """
    (ratio, time) of d(P_n, P'_n)/d(P_0, P'_0) for random pairs on V^s along a ray.

    ``time`` is the accumulated transition time after n edges.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(-vs.radius, vs.radius, (2 * pairs, vs.dim_in))
    pts = np.hstack([t, vs(t)])
    a, b = pts[:pairs], pts[pairs:]
    base = np.linalg.norm(a - b, axis=1)
    out = []
    elapsed = 0.0
    for tr in transitions:
        a, b = tr(a), tr(b)
        elapsed += tr.reduction.t
        out.append((float(np.max(np.linalg.norm(a - b, axis=1) / base)), elapsed))
    return out


def lifted_contraction(section: Any, y: Array, z: Array, times: Sequence[float]) -> List[float]:
    """
    Ratios d(φ^t ỹ, φ^t z̃)/d(y, z) along the cumulative-shear lift of a stable pair.

    y and z lie on one local stable leaf of the section. Once y has made n
    section returns, z is read at flow time t + Δ_n with Δ_n = r_n(z) - r_n(y),
    so both points cross the section together. Constant return times give
    Δ ≡ 0 and the plain flow.

    Raises:
        DomainError: y or z is not on the section
    """
    model = section.model
    base = model.distance(y, z)
    horizon = max(times, default=0.0)
    t_y, t_z = [0.0], [0.0]
    py, pz = np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    while t_y[-1] <= horizon:
        py, ry = section.poincare_return(py, Direction.FORWARD)
        pz, rz = section.poincare_return(pz, Direction.FORWARD)
        t_y.append(t_y[-1] + ry)
        t_z.append(t_z[-1] + rz)
    out = []
    for t in times:
        n = bisect.bisect_right(t_y, t) - 1
        shift = t_z[n] - t_y[n]
        out.append(model.distance(model.flow(y, t), model.flow(z, t + shift)) / base)
    return out
