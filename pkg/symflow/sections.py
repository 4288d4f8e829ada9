"""
Proper sections, flow boxes, return maps, holonomies and the linear
Poincaré cocycle

For mapping tori the section is a stack of k horizontal torus slices; every
disc is a whole slice (``periodic``) so returns and holonomies are exact
integer operations. Planar discs for other flows use bracketed root finding
on the signed disc coordinate.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, DomainError, SectionError
from .models import FlowModel, MappingTorusModel
from .types import Direction, SectionRole

logger = logging.getLogger(__name__)

Array = np.ndarray


class LinearPoincareCocycle:
    """
    θ, the projection 𝔭 parallel to X and the induced cocycle Φ^t on N.

    - θ_x(v) = <v, X>/|X|² so θ(X) = 1 and Ker θ = N
    - Frames of N_x: Gram–Schmidt (metric at x) of the projected coordinate
      frame, dependent columns skipped, first nonzero component positive
    """

    def __init__(self, model: FlowModel):
        self.model = model
        self._frames: Dict[Hashable, Array] = {}
        self._lock = threading.Lock()

    def theta(self, x: Array) -> Array:
        """Covector of θ_x in coordinates"""
        g = self.model.metric(x)
        X = self.model.vector_field(x)
        gx = g @ X
        return gx / float(X @ gx)

    def project(self, x: Array, v: Array) -> Array:
        return v - float(self.theta(x) @ v) * self.model.vector_field(x)

    def projection_matrix(self, x: Array) -> Array:
        return np.eye(self.model.ambient_dim) - np.outer(self.model.vector_field(x), self.theta(x))

    def _frames_for(self, points: Array) -> Tuple[Array, Array, Array]:
        """Normal frames, metrics and vector fields for a stack of points"""
        model = self.model
        m, dim = points.shape
        g = model.metric_many(points)
        X = np.array([model.vector_field(p) for p in points])
        gx = np.einsum("nij,nj->ni", g, X)
        theta = gx / np.einsum("ni,ni->n", X, gx)[:, None]
        cols = np.eye(dim)[None, :, :] - X[:, :, None] * theta[:, None, :]
        basis = np.zeros((m, dim, model.d))
        count = np.zeros(m, dtype=int)
        for i in range(dim):
            w = cols[:, :, i].copy()
            for j in range(model.d):
                active = count > j
                if not np.any(active):
                    break
                b = basis[:, :, j]
                coef = np.einsum("ni,nij,nj->n", w, g, b) * active
                w = w - coef[:, None] * b
            nrm = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", w, g, w), 0.0))
            accept = (nrm > 1e-9) & (count < model.d)
            idx = np.nonzero(accept)[0]
            basis[idx, :, count[idx]] = w[idx] / nrm[idx, None]
            count[idx] += 1
        if np.any(count < model.d):
            raise DomainError("normal frame is degenerate at a sampled point")
        for j in range(model.d):
            col = basis[:, :, j]
            scale = np.max(np.abs(col), axis=1, keepdims=True)
            first = np.argmax(np.abs(col) > 1e-12 * scale, axis=1)
            sign = np.sign(col[np.arange(m), first])
            sign[sign == 0] = 1.0
            basis[:, :, j] = col * sign[:, None]
        return basis, g, X

    def normal_frame(self, x: Array) -> Array:
        """(d+1)×d coordinate matrix whose columns are an orthonormal basis of N_x"""
        key = self.model.cocycle_key(x)
        if key is not None:
            with self._lock:
                cached = self._frames.get(key)
            if cached is not None:
                return cached
        frame = self._frames_for(np.asarray(x, dtype=float)[None, :])[0][0]
        if key is not None:
            with self._lock:
                self._frames.setdefault(key, frame)
        return frame

    def along(self, x: Array, times: Sequence[float]) -> Tuple[Array, Array]:
        """
        Orbit points and Φ^t matrices (frames of N_x → N_{φ^t x}) for all times.

        Returns:
            (points (m, d+1), matrices (m, d, d))
        """
        x = np.asarray(x, dtype=float)
        pts, ders = self.model.orbit(x, times)
        bx = self.normal_frame(x)
        by, gy, Xy = self._frames_for(pts)
        theta_y = np.einsum("nij,nj->ni", gy, Xy) / np.einsum("ni,nij,nj->n", Xy, gy, Xy)[:, None]
        pushed = np.einsum("nij,jk->nik", ders, bx)
        projected = pushed - Xy[:, :, None] * np.einsum("ni,nik->nk", theta_y, pushed)[:, None, :]
        phis = np.einsum("nji,njk,nkl->nil", by, gy, projected)
        return pts, phis

    def frame_coordinates(self, x: Array, v: Array) -> Array:
        """Coefficients of a normal vector v in the frame of N_x"""
        b = self.normal_frame(x)
        return b.T @ self.model.metric(x) @ v


def linear_poincare(coc: LinearPoincareCocycle, x: Array, t: float) -> Array:
    """
    Matrix of Φ^t_x : N_x → N_{φ^t x} in the deterministic normal frames.

    Args:
        coc: Cocycle of the model
        x: Base point
        t: Time

    Returns:
        d×d matrix
    """
    return coc.along(x, [t])[1][0]


def project_to_normal(coc: LinearPoincareCocycle, x: Array, v: Array) -> Array:
    """Project v to N_x parallel to X(x)"""
    return coc.project(np.asarray(x, dtype=float), np.asarray(v, dtype=float))


@dataclass(frozen=True)
class TransverseDisc:
    """
    A codimension-one disc transverse to the flow.

    Periodic discs are whole torus slices at a fixed height; they have no
    boundary, so ``radius`` is the covering radius of the slice.
    """
    index: int
    center: Array
    basis: Array
    radius: float
    parent_slice: int
    normal: Array
    periodic: bool = False
    height: Optional[float] = None
    diameter: float = 0.0

    def offset(self, model: FlowModel, y: Array) -> float:
        """Signed flow-direction coordinate of y relative to the disc"""
        if self.periodic:
            c = model.roof
            d = float(y[-1]) - float(self.height)
            return d - c * math.floor(d / c + 0.5)
        delta = model.displacement(self.center, y)
        return float(self.normal @ model.metric(self.center) @ delta)

    def in_plane_distance(self, model: FlowModel, y: Array) -> float:
        if self.periodic:
            return 0.0
        delta = model.displacement(self.center, y)
        coords = self.basis.T @ model.metric(self.center) @ delta
        return float(np.linalg.norm(coords))

    def contains(self, model: FlowModel, y: Array, tol: float = 1e-9) -> bool:
        return abs(self.offset(model, y)) <= tol and self.in_plane_distance(model, y) <= self.radius

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "center": self.center,
            "basis": self.basis,
            "radius": self.radius,
            "parent_slice": self.parent_slice,
            "periodic": self.periodic,
            "height": self.height,
            "diameter": self.diameter,
        }


@dataclass
class ProperSection:
    """
    Finite union of transverse discs of a given size.

    - Every orbit meets some disc within time ρ
    - Partial order between discs checked with the 4·size flow window
    - ``return_time`` is set when all returns are equal (mapping tori)
    """
    model: FlowModel
    discs: List[TransverseDisc]
    size: float
    role: SectionRole
    rho: float
    return_time: Optional[float] = None
    margin: float = math.inf
    _heights: Optional[Array] = field(default=None, repr=False)

    @property
    def chart_radius(self) -> float:
        return self.rho / 4.0

    @property
    def periodic(self) -> bool:
        return all(d.periodic for d in self.discs)

    @property
    def slices(self) -> int:
        return len(self.discs)

    # ---- slice arithmetic (periodic sections) -------------------------
    def _slice_step(self, x: Array, steps: int) -> Tuple[int, Array]:
        """Move a point lying on slice j to slice j+steps exactly"""
        model = self.model
        k = self.slices
        j = self.disc_index(x)
        if j is None:
            raise DomainError(f"point {x} is not on the section")
        target = j + steps
        laps = target // k
        u = model._apply_power(np.asarray(x[:-1], dtype=float), laps)
        y = np.r_[model._wrap_unit(u), self.discs[target % k].height]
        return target % k, y

    def disc_index(self, x: Array, tol: float = 1e-9) -> Optional[int]:
        """Index of the disc containing x, or None"""
        if self.periodic:
            k = self.slices
            c = self.model.roof
            pos = float(x[-1]) * k / c
            j = int(round(pos)) % k
            if abs(self.discs[j].offset(self.model, x)) <= tol:
                return j
            return None
        for disc in self.discs:
            if disc.contains(self.model, x, tol):
                return disc.index
        return None

    def contains(self, x: Array, tol: float = 1e-9) -> bool:
        return self.disc_index(x, tol) is not None

    def first_hit(self, x: Array, direction: Direction = Direction.FORWARD,
                  strict: bool = True) -> Tuple[int, Array, float]:
        """
        First intersection of the orbit of x with the section.

        Returns:
            (disc index, hit point, time) with time > 0 forward (< 0 backward)
        """
        model = self.model
        x = np.asarray(x, dtype=float)
        if self.periodic:
            k = self.slices
            c = model.roof
            pos = float(x[-1]) * k / c
            near = int(round(pos))
            on_slice = abs(pos - near) * c / k <= 1e-12
            if direction is Direction.FORWARD:
                J = near + 1 if (on_slice and strict) else (near if on_slice else math.floor(pos) + 1)
            else:
                J = near - 1 if (on_slice and strict) else (near if on_slice else math.floor(pos))
            laps = J // k
            height_unwrapped = J * c / k
            t = (height_unwrapped - float(x[-1])) / model.speed_scale
            u = model._apply_power(x[:-1], laps)
            return J % k, np.r_[model._wrap_unit(u), self.discs[J % k].height], t
        return self._scan_hit(x, direction, strict)

    def _scan_hit(self, x: Array, direction: Direction, strict: bool) -> Tuple[int, Array, float]:
        model = self.model
        horizon = 2.0 * self.rho
        steps = 200
        sign = direction.sign
        grid = sign * np.linspace(0.0, horizon, steps + 1)
        pts, _ = model.orbit(x, grid)
        best: Optional[Tuple[float, int]] = None
        for disc in self.discs:
            offs = np.array([disc.offset(model, p) for p in pts])
            for i in range(steps):
                a, b = offs[i], offs[i + 1]
                if i == 0 and strict and abs(a) <= 1e-12:
                    continue
                if a == 0.0 or a * b < 0:
                    t = grid[i] if a == 0.0 else brentq(
                        lambda s: disc.offset(model, model.flow(x, s)), grid[i], grid[i + 1], xtol=1e-12)
                    if disc.in_plane_distance(model, model.flow(x, t)) <= disc.radius:
                        if best is None or abs(t) < abs(best[0]):
                            best = (t, disc.index)
                        break
        if best is None:
            raise SectionError(f"no return of {x} within horizon {horizon}")
        t, idx = best
        return idx, model.flow(x, t), t

    def flow_box_coords(self, disc: TransverseDisc, x: Array) -> Tuple[Array, float]:
        """
        Flow-box coordinates (q, t) of x with φ^{-t}(x) = q ∈ disc.

        Raises:
            DomainError: x is outside the 4·size flow box of the disc
        """
        model = self.model
        x = np.asarray(x, dtype=float)
        window = 4.0 * self.size
        if disc.periodic:
            off = disc.offset(model, x)
            t = off / model.speed_scale
            if abs(t) > window:
                raise DomainError(f"point {x} is {abs(t):.3g} away from disc {disc.index} in flow time")
            unwrapped = float(x[-1]) - off
            laps = int(round((unwrapped - disc.height) / model.roof))
            u = model._apply_power(x[:-1], laps)
            return np.r_[model._wrap_unit(u), disc.height], t

        def signed(s: float) -> float:
            return disc.offset(model, model.flow(x, -s))

        grid = np.linspace(-window, window, 81)
        vals = np.array([signed(s) for s in grid])
        zero = np.nonzero(vals == 0.0)[0]
        if len(zero):
            t = float(grid[zero[np.argmin(np.abs(grid[zero]))]])
        else:
            roots = [brentq(signed, grid[i], grid[i + 1], xtol=1e-12)
                     for i in range(len(grid) - 1) if vals[i] * vals[i + 1] < 0]
            if not roots:
                raise DomainError(f"point {x} is outside the flow box of disc {disc.index}")
            t = float(min(roots, key=abs))
        q = model.flow(x, -t)
        if disc.in_plane_distance(model, q) > disc.radius:
            raise DomainError(f"projection of {x} leaves disc {disc.index}")
        return q, t

    def poincare_return(self, x: Array, direction: Direction = Direction.FORWARD) -> Tuple[Array, float]:
        """
        f(x) (or f⁻¹(x)) and the return time r_Λ(x) > 0.

        Raises:
            DomainError: x is not on the section
            SectionError: no return within 2ρ
        """
        if not self.contains(x):
            raise DomainError(f"point {x} is not on the section")
        _, y, t = self.first_hit(x, direction, strict=True)
        r = abs(t)
        if not 0 < r < self.rho:
            raise SectionError(f"return time {r} outside (0, {self.rho})")
        return y, r

    def target_disc(self, x: Array, direction: Direction) -> TransverseDisc:
        idx, _, _ = self.first_hit(x, direction, strict=True)
        return self.discs[idx]

    def holonomy(self, x: Array, direction: Direction, y: Array) -> Tuple[Array, float]:
        """
        Holonomy g^±_x(y): slide y along the flow to the disc of f^{±1}(x).

        Returns:
            (z, s) with z = φ^s(y) on the target disc

        Raises:
            DomainError: y too far from x or outside the target flow box
        """
        model = self.model
        if model.distance(x, y) > 2.0 * self.chart_radius:
            raise DomainError(f"holonomy argument {y} is farther than 2r from {x}")
        target = self.target_disc(x, direction)
        z, t = self.flow_box_coords(target, y)
        s = -t
        if abs(s) >= self.rho:
            raise DomainError(f"holonomy time {s} exceeds rho")
        return z, s

    def step(self, x: Array, steps: int) -> Array:
        """f^steps(x) for points on a periodic section"""
        if self.periodic:
            return self._slice_step(x, steps)[1]
        y = np.asarray(x, dtype=float)
        direction = Direction.FORWARD if steps >= 0 else Direction.BACKWARD
        for _ in range(abs(steps)):
            y, _ = self.poincare_return(y, direction)
        return y

    def to_dict(self) -> Dict[str, Any]:
        return {
            "role": self.role,
            "size": self.size,
            "rho": self.rho,
            "return_time": self.return_time,
            "margin": self.margin,
            "discs": [d.to_dict() for d in self.discs],
        }


def slice_diameter(model: MappingTorusModel, height: float) -> float:
    """Upper estimate 2·(covering radius) of the torus slice at a height"""
    d = model.torus_dim
    per_axis = 9 if d <= 2 else 4
    axis = np.arange(per_axis) / per_axis
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    shifts = np.stack(np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * d), indexing="ij"), axis=-1).reshape(-1, d)
    g = model.horizontal_metric(height)
    best = np.full(len(grid), np.inf)
    for n in shifts:
        v = grid - n
        best = np.minimum(best, np.einsum("ni,ij,nj->n", v, g, v))
    return float(2.0 * np.sqrt(best.max()))


def build_proper_section(
    model: FlowModel,
    rho: float,
    samples: int = 400,
    seed: int = 0,
) -> Tuple[ProperSection, ProperSection]:
    """
    Build the reference section Λ and its security section Λ̂.

    Args:
        model: Mapping-torus model
        rho: Section scale; both sections have size rho/2
        samples: Number of random points used to verify the cover property
        seed: Seed for the cover samples

    Returns:
        (Λ, Λ̂)

    Raises:
        ConfigurationError: Model without automatic section placement
        SectionError: Cover, partial order or transversality fails
    """
    if not isinstance(model, MappingTorusModel):
        raise ConfigurationError("automatic sections are only built for mapping-torus models")
    c = model.roof
    speed = model.speed_scale
    k = max(1, math.ceil(2.0 * c / (speed * rho) - 1e-9))
    r = c / (k * speed)
    size = rho / 2.0
    if not 0 < r < rho:
        raise SectionError(f"return time {r} not in (0, {rho})")
    if c / speed <= 4.0 * rho:
        raise SectionError(f"partial order fails: roof time {c / speed} <= 4*rho")

    coc = LinearPoincareCocycle(model)
    heights = model.slice_heights(k)
    normal = np.zeros(model.ambient_dim)
    normal[-1] = 1.0
    discs_hat: List[TransverseDisc] = []
    discs: List[TransverseDisc] = []
    for j, h in enumerate(heights):
        center = np.r_[np.full(model.torus_dim, 0.5), h]
        basis = coc.normal_frame(center)
        diam = slice_diameter(model, float(h))
        X = model.vector_field(center)
        if diam >= 4.0 * size:
            spacing = r * model.norm(center, X)
            clamped = min(0.9 * 4.0 * rho, spacing)
            logger.warning(f"Slice {j} has diameter {diam:.4f} >= 4*size = {4 * size:.4f}; "
                           f"disc diameter set to {clamped:.4f}")
            diam = clamped
        g = model.metric(center)
        cosines = np.abs(basis.T @ g @ X) / model.norm(center, X)
        if np.max(cosines) >= math.sin(rho):
            raise SectionError(f"slice {j} is not rho-transverse")
        radius_hat = min(0.5 * diam, 0.9 * 2.0 * size)
        discs_hat.append(TransverseDisc(j, center, basis, radius_hat, j, normal, True, float(h), diam))
        discs.append(TransverseDisc(j, center, basis, 0.9 * radius_hat, j, normal, True, float(h), diam))

    section = ProperSection(model, discs, size, SectionRole.REFERENCE, rho, return_time=r)
    security = ProperSection(model, discs_hat, size, SectionRole.SECURITY, rho, return_time=r)

    rng = np.random.default_rng(seed)
    pts = np.c_[rng.random((samples, model.torus_dim)), rng.random(samples) * c]
    for p in pts:
        _, _, t = section.first_hit(p, Direction.FORWARD, strict=False)
        if not 0 <= t < rho:
            raise SectionError(f"sample {p} does not hit the section within rho (t = {t})")

    for i in range(k):
        for j in range(i + 1, k):
            gap = ((heights[i] - heights[j]) % c) / speed
            forward = gap <= 4.0 * size
            backward = ((c / speed) - gap) <= 4.0 * size
            if forward and backward:
                raise SectionError(f"partial order fails between slices {i} and {j}")

    logger.info(f"Built proper section: {k} slices, return time {r:.6f}, size {size}")
    return section, security


@dataclass
class OrbitWindow:
    """
    Consecutive section points x_{-n}, ..., x_{n} of one orbit.

    ``times[i]`` is the flow time from the centre point to ``points[i]``;
    ``offset`` is the list index of the centre.
    """
    points: Array
    times: Array
    offset: int
    label: str = ""

    def __len__(self) -> int:
        return len(self.points)

    @property
    def center(self) -> Array:
        return self.points[self.offset]

    def index_range(self) -> range:
        return range(-self.offset, len(self.points) - self.offset)

    def at(self, n: int) -> Array:
        return self.points[self.offset + n]

    def returns(self) -> Array:
        return np.diff(self.times)

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "offset": self.offset, "points": self.points, "times": self.times}


def orbit_window(section: ProperSection, x: Array, back: int, forward: int, label: str = "") -> OrbitWindow:
    """
    Sample f^n(x) for -back ≤ n ≤ forward.

    Args:
        section: Proper section; x is first moved to its next hit if off-section
        x: Start point
        back: Number of backward returns
        forward: Number of forward returns
        label: Tag carried into artifacts

    Returns:
        OrbitWindow centred on the (projected) start point
    """
    x = np.asarray(x, dtype=float)
    if not section.contains(x):
        _, x, _ = section.first_hit(x, Direction.FORWARD, strict=False)
    pts = [x]
    times = [0.0]
    y = x
    for _ in range(forward):
        y, r = section.poincare_return(y, Direction.FORWARD)
        pts.append(y)
        times.append(times[-1] + r)
    y = x
    before: List[Array] = []
    before_t: List[float] = []
    t = 0.0
    for _ in range(back):
        y, r = section.poincare_return(y, Direction.BACKWARD)
        t -= r
        before.append(y)
        before_t.append(t)
    points = np.array(before[::-1] + pts)
    return OrbitWindow(points, np.array(before_t[::-1] + times), back, label)
