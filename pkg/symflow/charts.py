"""
Pesin charts, ε-double charts, the overlap predicate and chart transitions

A chart Ψ_x(v) = x + B_x C(x) v lives in the flat coordinates of the model
(the exponential map of the built-in models is affine), so chart inverses
and transitions are exact up to rounding.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import block_diag, polar

from .config import ScaleLaws
from .errors import DomainError, InputError
from .hyperbolicity import FrameBuilder, PesinFrame, Reduction, reduction
from .sections import ProperSection
from .types import Direction

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class PesinChart:
    """
    Ψ_x = exp_x ∘ C(x) restricted to R[radius].

    - ``eta`` is the chart size (≤ Q(x))
    - ``radius`` is the domain bound 𝔯 of apply/inverse
    """
    frame: PesinFrame
    eta: float
    radius: float
    section: ProperSection

    @property
    def center(self) -> Array:
        return self.frame.point

    @property
    def lifted(self) -> Array:
        """C̃(x) = B_x C(x), the chart matrix in ambient coordinates"""
        return self.frame.basis @ self.frame.C

    def apply(self, v: Array) -> Array:
        v = np.asarray(v, dtype=float)
        if np.max(np.abs(v), initial=0.0) > self.radius:
            raise DomainError(f"chart argument {v} outside R[{self.radius}]")
        model = self.section.model
        return model.translate(self.center, self.lifted @ v)

    def inverse(self, y: Array) -> Array:
        model = self.section.model
        w = model.displacement(self.center, y)
        v = self.frame.C_inv @ (self.frame.basis.T @ model.metric(self.center) @ w)
        if np.max(np.abs(v), initial=0.0) > self.radius:
            raise DomainError(f"point {y} outside the chart image R[{self.radius}]")
        return v

    def apply_many(self, vs: Array) -> Array:
        return np.array([self.apply(v) for v in vs])

    def inverse_many(self, ys: Array) -> Array:
        return np.array([self.inverse(y) for y in ys])

    def to_dict(self) -> Dict[str, Any]:
        return {"center": self.center, "eta": self.eta, "radius": self.radius, "Q": self.frame.Q}


@dataclass(frozen=True)
class DoubleChart:
    """ε-double chart Ψ_x^{p^s, p^u}, windows capped at εQ(x)"""
    chart: PesinChart
    p_s: float
    p_u: float
    eps: float

    def __post_init__(self):
        cap = self.eps * self.chart.frame.Q
        if not (0 < self.p_s and 0 < self.p_u):
            raise InputError("double-chart windows must be positive")
        if max(self.p_s, self.p_u) > cap * (1 + 1e-12):
            raise InputError(f"double-chart windows exceed eps*Q = {cap}")

    @property
    def eta(self) -> float:
        return min(self.p_s, self.p_u)

    @property
    def center(self) -> Array:
        return self.chart.center


class ChartFactory:
    """Builds charts at points of a section from a FrameBuilder"""

    def __init__(self, builder: FrameBuilder, section: ProperSection):
        self.builder = builder
        self.section = section

    @property
    def eps(self) -> float:
        return self.builder.eps

    def chart(self, x: Array, eta: Optional[float] = None) -> PesinChart:
        frame = self.builder.frame(x)
        return PesinChart(frame, frame.Q if eta is None else eta, self.section.chart_radius, self.section)

    def double(self, x: Array, p_s: float, p_u: float) -> DoubleChart:
        frame = self.builder.frame(x)
        return DoubleChart(PesinChart(frame, min(p_s, p_u), self.section.chart_radius, self.section), p_s, p_u,
                           self.eps)


def lipschitz_estimate(chart: PesinChart, samples: int = 200, seed: int = 0) -> Tuple[float, float]:
    """
    Sampled Lipschitz constants of Ψ_x and Ψ_x^{-1} on R[Q(x)].

    Returns:
        (Lip(apply), Lip(inverse)) measured in the metric at x
    """
    rng = np.random.default_rng(seed)
    model = chart.section.model
    box = chart.frame.Q
    d = chart.frame.C.shape[0]
    va = rng.uniform(-box, box, (samples, d))
    vb = rng.uniform(-box, box, (samples, d))
    fwd = 0.0
    inv = 0.0
    for a, b in zip(va, vb):
        ya, yb = chart.apply(a), chart.apply(b)
        dist = model.norm(chart.center, model.displacement(ya, yb))
        gap = float(np.linalg.norm(a - b))
        fwd = max(fwd, dist / gap)
        inv = max(inv, gap / dist)
    return fwd, inv


@dataclass
class OverlapReport:
    """Every clause of the overlap predicate, measured"""
    eta_ratio: float
    ratio_ok: bool
    dims_ok: bool
    same_disc: bool
    distance: float
    frame_gap: float
    radius: float

    @property
    def overlaps(self) -> bool:
        return self.ratio_ok and self.dims_ok and self.same_disc and self.distance + self.frame_gap < self.radius


ChartLike = Union[PesinChart, DoubleChart]


def _chart(c: ChartLike) -> PesinChart:
    return c.chart if isinstance(c, DoubleChart) else c


def overlap_report(c1: ChartLike, c2: ChartLike, eps: float, laws: Optional[ScaleLaws] = None) -> OverlapReport:
    """Measure the overlap clauses between two charts of sizes eta1, eta2"""
    laws = laws or ScaleLaws.desk()
    c1, c2 = _chart(c1), _chart(c2)
    section = c1.section
    model = section.model
    eta1, eta2 = c1.eta, c2.eta
    ratio = eta1 / eta2
    ratio_ok = abs(math.log(ratio)) <= eps
    dims_ok = c1.frame.d_s == c2.frame.d_s
    i1 = section.disc_index(c1.center)
    i2 = section.disc_index(c2.center)
    same = i1 is not None and i1 == i2
    x1 = c1.center
    chol = np.linalg.cholesky(model.metric(x1))
    gap = float(np.linalg.norm(chol.T @ (c1.lifted - c2.lifted), 2))
    return OverlapReport(ratio, ratio_ok, dims_ok, same, model.distance(x1, c2.center), gap,
                         laws.overlap_radius(eta1, eta2))


def overlaps(c1: ChartLike, c2: ChartLike, eps: float, laws: Optional[ScaleLaws] = None) -> bool:
    """True iff c1 ε-overlaps c2"""
    return overlap_report(c1, c2, eps, laws).overlaps


def overlap_consequences(c1: ChartLike, c2: ChartLike, eps: float,
                         laws: Optional[ScaleLaws] = None, grid: int = 5) -> Dict[str, Any]:
    """
    Measured consequences of an overlap: C^{-1} gap, Q ratio and the
    distance of Ψ_{x2}^{-1}∘Ψ_{x1} from its orthogonal part.
    """
    laws = laws or ScaleLaws.desk()
    c1, c2 = _chart(c1), _chart(c2)
    eta1, eta2 = c1.eta, c2.eta
    f1, f2 = c1.frame, c2.frame
    model = c1.section.model
    cinv_gap = float(np.linalg.norm(f1.C_inv - f2.C_inv, 2))
    q_log = abs(math.log(f1.Q / f2.Q))
    linear = f2.C_inv @ f2.basis.T @ model.metric(c2.center) @ f1.basis @ f1.C
    orth, _ = polar(linear)
    logger.debug(f"Orthogonal part of the coordinate change: {orth.tolist()}")
    box = min(f1.Q, f2.Q)
    nodes = _grid_nodes(box, f1.C.shape[0], grid)
    change = np.array([c2.inverse(c1.apply(v)) for v in nodes]) - nodes @ orth.T
    change_norm = float(np.max(np.linalg.norm(change, axis=1)))
    return {
        "cinv_gap": cinv_gap,
        "cinv_bound": laws.cinv_control(eta1, eta2),
        "cinv_ok": cinv_gap < laws.cinv_control(eta1, eta2),
        "q_log_ratio": q_log,
        "q_bound": laws.q_control(eta1, eta2),
        "q_ok": q_log <= laws.q_control(eta1, eta2),
        "orthogonal": orth,
        "change_norm": change_norm,
        "change_bound": eps * laws.q_control(eta1, eta2),
        "change_ok": change_norm < eps * laws.q_control(eta1, eta2),
    }


def _grid_nodes(box: float, d: int, n: int) -> Array:
    axis = np.linspace(-box, box, n)
    return np.array(list(itertools.product(axis, repeat=d)))


@dataclass
class ChartTransition:
    """
    Chart representation Ψ_to^{-1} ∘ g^± ∘ Ψ_from of a holonomy.

    Evaluation is vectorized; for affine models the map is stored as
    (M, b) so that graph transforms never call back into the flow.
    """
    source: PesinChart
    target: PesinChart
    direction: Direction
    D_s: Array
    D_u: Array
    reduction: Reduction
    box: float
    grid: Array
    H_values: Array
    h0_norm: float
    dh0_norm: float
    holder: float
    grid_norm: float
    affine: Optional[Tuple[Array, Array]] = None
    source_double: Optional[DoubleChart] = None
    target_double: Optional[DoubleChart] = None
    _raw: Optional[Callable[[Array], Array]] = field(default=None, repr=False)

    @property
    def d_s(self) -> int:
        return self.D_s.shape[0]

    @property
    def linear(self) -> Array:
        return block_diag(self.D_s, self.D_u)

    def __call__(self, vs: Array) -> Array:
        vs = np.atleast_2d(np.asarray(vs, dtype=float))
        if self.affine is not None:
            M, b = self.affine
            return vs @ M.T + b
        return np.array([self._raw(v) for v in vs])

    def jacobian(self, v: Array, step: Optional[float] = None) -> Array:
        if self.affine is not None:
            return self.affine[0]
        return _fd_jacobian(self._raw, np.asarray(v, dtype=float), step or 1e-3 * self.box)

    def H(self, vs: Array) -> Array:
        vs = np.atleast_2d(vs)
        return self(vs) - vs @ self.linear.T

    def report(self) -> Dict[str, Any]:
        return {
            "direction": self.direction,
            "box": self.box,
            "D_s": self.D_s,
            "D_u": self.D_u,
            "h0_norm": self.h0_norm,
            "dh0_norm": self.dh0_norm,
            "holder": self.holder,
            "grid_norm": self.grid_norm,
            "grid": self.grid,
        }


def _fd_jacobian(fn: Callable[[Array], Array], v: Array, h: float) -> Array:
    d = len(v)
    jac = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jac[:, i] = (fn(v + e) - fn(v - e)) / (2 * h)
    return jac


def chart_transition(
    c_from: ChartLike,
    c_to: ChartLike,
    builder: FrameBuilder,
    direction: Direction = Direction.FORWARD,
    grid: int = 5,
) -> ChartTransition:
    """
    Chart transition f^±_{x,y} with its hyperbolic blocks and residual H.

    Args:
        c_from: Chart at x
        c_to: Chart at f^{±1}(x), or at a point overlapping it
        builder: Frame builder used for the frame at f^{±1}(x)
        direction: Forward (f^+) or backward (f^-)
        grid: Nodes per axis of the residual sample grid on R[10Q(x)]

    Returns:
        ChartTransition

    Raises:
        DomainError: The image of R[10Q(x)] escapes R[𝔯]
        ReductionError: Block bounds fail at x
    """
    source_double = c_from if isinstance(c_from, DoubleChart) else None
    target_double = c_to if isinstance(c_to, DoubleChart) else None
    c_from, c_to = _chart(c_from), _chart(c_to)
    section = c_from.section
    x = c_from.center
    image, r = section.poincare_return(x, direction)
    frame_image = builder.frame(image)
    chi, rho = builder.chi, builder.rho
    coc = builder.coc
    if direction is Direction.FORWARD:
        phi = coc.along(x, [r])[1][0]
        red = reduction(c_from.frame, frame_image, phi, r, chi, rho)
        D_s, D_u = red.D_s, red.D_u
    else:
        phi = coc.along(image, [r])[1][0]
        red = reduction(frame_image, c_from.frame, phi, r, chi, rho)
        D_s, D_u = np.linalg.inv(red.D_s), np.linalg.inv(red.D_u)

    def raw(v: Array) -> Array:
        y = c_from.apply(v)
        z, _ = section.holonomy(x, direction, y)
        return c_to.inverse(z)

    box = 10.0 * c_from.frame.Q
    nodes = _grid_nodes(box, len(D_s) + len(D_u), grid)
    linear = block_diag(D_s, D_u)
    affine = None
    if section.model.is_affine:
        b = raw(np.zeros(linear.shape[0]))
        M = _fd_jacobian(raw, np.zeros(linear.shape[0]), box)
        affine = (M, b)
        values = nodes @ M.T + b
        jacs = np.repeat(M[None, :, :], len(nodes), axis=0)
    else:
        values = np.array([raw(v) for v in nodes])
        jacs = np.array([_fd_jacobian(raw, v, 1e-3 * box) for v in nodes])
    H_values = values - nodes @ linear.T
    dH = jacs - linear[None, :, :]
    h0 = raw(np.zeros(linear.shape[0])) if affine is None else affine[1]
    dh0 = (affine[0] if affine is not None else _fd_jacobian(raw, np.zeros(linear.shape[0]), 1e-3 * box)) - linear
    exponent = builder.beta / 3.0
    holder = 0.0
    for i in range(len(nodes)):
        gaps = np.linalg.norm(nodes[i + 1:] - nodes[i], axis=1)
        if len(gaps) == 0:
            continue
        diffs = np.linalg.norm((dH[i + 1:] - dH[i]).reshape(len(gaps), -1), axis=1)
        holder = max(holder, float(np.max(diffs / gaps ** exponent)))
    grid_norm = (float(np.max(np.linalg.norm(H_values, axis=1)))
                 + float(np.max(np.linalg.norm(dH, axis=(1, 2), ord=2))) + holder)
    transition = ChartTransition(
        source=c_from,
        target=c_to,
        direction=direction,
        D_s=D_s,
        D_u=D_u,
        reduction=red,
        box=box,
        grid=nodes,
        H_values=H_values,
        h0_norm=float(np.linalg.norm(h0)),
        dh0_norm=float(np.linalg.norm(dh0, 2)),
        holder=holder,
        grid_norm=grid_norm,
        affine=affine,
        source_double=source_double,
        target_double=target_double,
        _raw=raw,
    )
    logger.debug(f"Transition at {x}: |H(0)| = {transition.h0_norm:.3e}, |dH0| = {transition.dh0_norm:.3e}")
    return transition


def transition_bounds_ok(transition: ChartTransition, chi: float, rho: float, r: float) -> bool:
    """e^{-4ρ} < ‖D_s‖, ‖D_u^{-1}‖ < e^{-χ r}"""
    lo, hi = math.exp(-4.0 * rho), math.exp(-chi * r)
    ds = np.linalg.norm(transition.D_s, 2) if transition.D_s.size else None
    du = np.linalg.norm(np.linalg.inv(transition.D_u), 2) if transition.D_u.size else None
    return all(lo < v < hi + 1e-12 for v in (ds, du) if v is not None)
