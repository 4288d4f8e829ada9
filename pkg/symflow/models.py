"""
Flow models: mapping-torus suspensions of hyperbolic toral automorphisms and
a generic ODE hook, each with flow evaluation and derivative cocycle
"""
import logging
import math
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Callable, Dict, Hashable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from .config import ModelSpec
from .errors import ConfigurationError, DomainError, IntegrationError
from .types import FlowKind

logger = logging.getLogger(__name__)

Array = np.ndarray


class FlowModel(ABC):
    """
    A non-singular smooth flow on a (d+1)-dimensional manifold.

    Subclasses supply the unscaled vector field, flow and cocycle; the base
    class adds metric helpers (norms, operator norms between tangent
    spaces) and the periodic-coordinate bookkeeping shared by both kinds.
    """

    kind: FlowKind

    def __init__(self, ambient_dim: int, beta: float = 1.0):
        self.ambient_dim = ambient_dim
        self.beta = beta
        self.speed_scale = 1.0

    @property
    def d(self) -> int:
        """Dimension of the normal bundle"""
        return self.ambient_dim - 1

    @property
    def is_affine(self) -> bool:
        """True when holonomies are affine in chart coordinates"""
        return False

    @abstractmethod
    def vector_field(self, x: Array) -> Array:
        ...

    @abstractmethod
    def flow(self, x: Array, t: float) -> Array:
        ...

    @abstractmethod
    def cocycle(self, x: Array, t: float) -> Array:
        ...

    def orbit(self, x: Array, times: Sequence[float]) -> Tuple[Array, Array]:
        """Points φ^t(x) and derivatives dφ^t_x for every t in ``times``"""
        times = np.asarray(times, dtype=float)
        pts = np.array([self.flow(x, t) for t in times])
        ders = np.array([self.cocycle(x, t) for t in times])
        return pts, ders

    def metric(self, x: Array) -> Array:
        return np.eye(self.ambient_dim)

    def metric_many(self, points: Array) -> Array:
        return np.array([self.metric(p) for p in points])

    def normalize(self, x: Array) -> Array:
        return np.asarray(x, dtype=float).copy()

    def displacement(self, x: Array, y: Array) -> Array:
        """Coordinate vector from x to y (shortest representative)"""
        return np.asarray(y, dtype=float) - np.asarray(x, dtype=float)

    def translate(self, x: Array, w: Array) -> Array:
        return self.normalize(np.asarray(x, dtype=float) + w)

    def cocycle_key(self, x: Array) -> Optional[Hashable]:
        """Key under which frames at x can be shared, or None"""
        return None

    def norm(self, x: Array, v: Array) -> float:
        g = self.metric(x)
        return float(math.sqrt(max(v @ g @ v, 0.0)))

    def distance(self, x: Array, y: Array) -> float:
        return self.norm(x, self.displacement(x, y))

    def operator_norm(self, x: Array, y: Array, m: Array) -> float:
        """Norm of m : T_x -> T_y measured with the metrics at x and y"""
        lx = np.linalg.cholesky(self.metric(x))
        ly = np.linalg.cholesky(self.metric(y))
        return float(np.linalg.norm(ly.T @ m @ np.linalg.inv(lx.T), 2))

    def gradient_norm(self, x: Array, h: float = 1e-6) -> float:
        """Finite-difference estimate of ‖∇X‖ at x (flat metric)"""
        jac = np.zeros((self.ambient_dim, self.ambient_dim))
        for i in range(self.ambient_dim):
            e = np.zeros(self.ambient_dim)
            e[i] = h
            jac[:, i] = (self.vector_field(x + e) - self.vector_field(x - e)) / (2 * h)
        return float(np.linalg.norm(jac, 2))


class MappingTorusModel(FlowModel):
    """
    Suspension of a hyperbolic toral automorphism A with constant roof c.

    - Points are (u, s) with u in [0,1)^d and height s in [0, c)
    - (u, c) is identified with (A u mod 1, 0)
    - The metric is blockdiag(L² E^-T diag|λ_i|^(2s/c) E^-1, 1), smooth
      across the seam; horizontal derivatives are exact integer powers
    """

    kind = FlowKind.MAPPING_TORUS

    def __init__(
        self,
        matrix: Sequence[Sequence[int]],
        roof: float = 1.0,
        torus_scale: float = 0.2,
        speed_scale: Optional[float] = None,
        beta: float = 1.0,
    ):
        a = np.array(matrix)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise ConfigurationError("base matrix must be square of size >= 2")
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ConfigurationError("base matrix must have integer entries")
        a = a.astype(np.int64)
        det = int(round(np.linalg.det(a)))
        if abs(det) != 1:
            raise ConfigurationError(f"base matrix must be unimodular, det = {det}")
        vals, vecs = np.linalg.eig(a.astype(float))
        if np.max(np.abs(vals.imag)) > 1e-12:
            raise ConfigurationError("base matrix must have a real spectrum")
        vals = vals.real
        vecs = vecs.real
        log_abs = np.log(np.abs(vals))
        if np.min(np.abs(log_abs)) < 1e-9:
            raise ConfigurationError("base matrix has an eigenvalue on the unit circle")
        if log_abs.max() <= 0 or log_abs.min() >= 0:
            raise ConfigurationError("base matrix must both expand and contract")

        super().__init__(ambient_dim=a.shape[0] + 1, beta=beta)
        self.A = a
        self.A_inv = np.rint(np.linalg.inv(a.astype(float))).astype(np.int64)
        if not np.array_equal(self.A @ self.A_inv, np.eye(a.shape[0], dtype=np.int64)):
            raise ConfigurationError("integer inverse of the base matrix is inexact")
        order = np.argsort(-log_abs, kind="stable")
        self.eigenvalues = vals[order]
        self.log_abs = log_abs[order]
        vecs = vecs[:, order]
        self.E = vecs / np.linalg.norm(vecs, axis=0)
        self.E_inv = np.linalg.inv(self.E)
        self.roof = float(roof)
        self.torus_scale = float(torus_scale)

        if speed_scale is None:
            estimate = max(self.gradient_norm(np.r_[np.zeros(self.torus_dim), s])
                           for s in np.linspace(0.05, 0.95, 7) * self.roof)
            speed_scale = min(1.0, 1.0 / estimate)
            logger.debug(f"Estimated |grad X| = {estimate:.6f}, speed scale {speed_scale:.6f}")
        if speed_scale <= 0:
            raise ConfigurationError("speed_scale must be positive")
        self.speed_scale = float(speed_scale)

    @property
    def torus_dim(self) -> int:
        return self.A.shape[0]

    @property
    def is_affine(self) -> bool:
        return True

    @property
    def exponents(self) -> Array:
        """Lyapunov exponents of the flow, one per torus direction"""
        return self.speed_scale * self.log_abs / self.roof

    def horizontal_metric(self, s: float) -> Array:
        weights = np.exp(2.0 * s * self.log_abs / self.roof)
        return self.torus_scale ** 2 * (self.E_inv.T * weights) @ self.E_inv

    def metric(self, x: Array) -> Array:
        return block_diag(self.horizontal_metric(float(x[-1])), 1.0)

    def metric_many(self, points: Array) -> Array:
        s = np.asarray(points)[:, -1]
        weights = np.exp(2.0 * np.outer(s, self.log_abs) / self.roof)
        gh = self.torus_scale ** 2 * np.einsum("ki,ni,kj->nij", self.E_inv, weights, self.E_inv)
        out = np.zeros((len(s), self.ambient_dim, self.ambient_dim))
        out[:, :-1, :-1] = gh
        out[:, -1, -1] = 1.0
        return out

    def gradient_norm(self, x: Array, h: float = 1e-5) -> float:
        """‖∇X‖ for the unit-speed field: ½G⁻¹∂G/∂s measured in the metric"""
        s = float(x[-1])
        g = self.horizontal_metric(s)
        dg = (self.horizontal_metric(s + h) - self.horizontal_metric(s - h)) / (2 * h)
        k = 0.5 * np.linalg.solve(g, dg)
        chol = np.linalg.cholesky(g)
        return float(np.linalg.norm(chol.T @ k @ np.linalg.inv(chol.T), 2))

    @lru_cache(maxsize=256)
    def matrix_power(self, n: int) -> Array:
        """A^n as a float matrix (negative n uses the integer inverse)"""
        base = self.A if n >= 0 else self.A_inv
        return np.linalg.matrix_power(base.astype(float), abs(n))

    def _apply_power(self, u: Array, n: int) -> Array:
        base = self.A if n >= 0 else self.A_inv
        u = np.asarray(u, dtype=float)
        for _ in range(abs(n)):
            u = np.mod(base @ u, 1.0)
        return u

    def _split_height(self, s: float) -> Tuple[int, float]:
        n = math.floor(s / self.roof)
        s = s - n * self.roof
        if s >= self.roof:
            s -= self.roof
            n += 1
        if s < 0:
            s = 0.0
        return n, s

    def _wrap_unit(self, u: Array) -> Array:
        u = np.mod(u, 1.0)
        u[u >= 1.0] = 0.0
        return u + 0.0

    def normalize(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        n, s = self._split_height(float(x[-1]))
        u = self._wrap_unit(self._apply_power(x[:-1], n))
        return np.r_[u, s]

    def vector_field(self, x: Array) -> Array:
        v = np.zeros(self.ambient_dim)
        v[-1] = self.speed_scale
        return v

    def flow(self, x: Array, t: float) -> Array:
        x = np.asarray(x, dtype=float)
        return self.normalize(np.r_[x[:-1], x[-1] + self.speed_scale * t])

    def cocycle(self, x: Array, t: float) -> Array:
        n, _ = self._split_height(float(x[-1]) + self.speed_scale * t)
        return block_diag(self.matrix_power(n), 1.0)

    def orbit(self, x: Array, times: Sequence[float]) -> Tuple[Array, Array]:
        x = np.asarray(x, dtype=float)
        times = np.asarray(times, dtype=float)
        heights = x[-1] + self.speed_scale * times
        split = [self._split_height(float(h)) for h in heights]
        crossings = sorted({n for n, _ in split})
        positions: Dict[int, Array] = {0: x[:-1].copy()}
        if crossings:
            for n in range(1, max(crossings[-1], 0) + 1):
                positions[n] = np.mod(self.A @ positions[n - 1], 1.0)
            for n in range(-1, min(crossings[0], 0) - 1, -1):
                positions[n] = np.mod(self.A_inv @ positions[n + 1], 1.0)
        pts = np.empty((len(times), self.ambient_dim))
        ders = np.zeros((len(times), self.ambient_dim, self.ambient_dim))
        for i, (n, s) in enumerate(split):
            pts[i, :-1] = self._wrap_unit(positions[n].copy())
            pts[i, -1] = s
            ders[i, :-1, :-1] = self.matrix_power(n)
            ders[i, -1, -1] = 1.0
        return pts, ders

    def displacement(self, x: Array, y: Array) -> Array:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        uy = y[:-1]
        ds = y[-1] - x[-1]
        if ds > 0.5 * self.roof:
            uy = self.A @ uy
            ds -= self.roof
        elif ds < -0.5 * self.roof:
            uy = self.A_inv @ uy
            ds += self.roof
        du = uy - x[:-1]
        du = du - np.round(du)
        return np.r_[du, ds]

    def cocycle_key(self, x: Array) -> Optional[Hashable]:
        return round(float(x[-1]) / self.roof, 9) % 1.0

    def slice_heights(self, k: int) -> Array:
        return np.arange(k) * self.roof / k


class OdeFlowModel(FlowModel):
    """
    Numeric flow of a user vector field.

    Fixed-step RK4 (step ``h``) for the flow; the derivative cocycle comes
    from integrating the variational equation alongside the state. A
    Jacobian callable is optional; finite differences are used otherwise.
    """

    kind = FlowKind.NUMERIC

    def __init__(
        self,
        field: Callable[[Array], Array],
        dim: int,
        jacobian: Optional[Callable[[Array], Array]] = None,
        step: float = 1e-3,
        horizon: float = 50.0,
        speed_scale: Optional[float] = None,
        beta: float = 1.0,
        periods: Optional[Sequence[float]] = None,
        sample_points: Optional[Array] = None,
        name: str = "ode",
    ):
        super().__init__(ambient_dim=dim, beta=beta)
        self._field = field
        self._jacobian = jacobian
        self.step = float(step)
        self.horizon = float(horizon)
        self.name = name
        self.periods = np.full(dim, np.inf) if periods is None else np.asarray(periods, dtype=float)

        if speed_scale is None:
            if sample_points is None:
                sample_points = np.random.default_rng(0).normal(size=(32, dim))
            estimate = max(self._raw_gradient_norm(p) for p in sample_points)
            speed_scale = min(1.0, 1.0 / estimate) if estimate > 0 else 1.0
            logger.debug(f"{name}: estimated |grad X| = {estimate:.6f}, speed scale {speed_scale:.6f}")
        self.speed_scale = float(speed_scale)

    def _raw_jacobian(self, x: Array, h: float = 1e-6) -> Array:
        if self._jacobian is not None:
            return np.asarray(self._jacobian(x), dtype=float)
        jac = np.zeros((self.ambient_dim, self.ambient_dim))
        for i in range(self.ambient_dim):
            e = np.zeros(self.ambient_dim)
            e[i] = h
            jac[:, i] = (np.asarray(self._field(x + e)) - np.asarray(self._field(x - e))) / (2 * h)
        return jac

    def _raw_gradient_norm(self, x: Array) -> float:
        return float(np.linalg.norm(self._raw_jacobian(x), 2))

    def vector_field(self, x: Array) -> Array:
        return self.speed_scale * np.asarray(self._field(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x: Array) -> Array:
        return self.speed_scale * self._raw_jacobian(np.asarray(x, dtype=float))

    def normalize(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float).copy()
        finite = np.isfinite(self.periods)
        x[finite] = np.mod(x[finite], self.periods[finite])
        return x

    def displacement(self, x: Array, y: Array) -> Array:
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        finite = np.isfinite(self.periods)
        d[finite] -= self.periods[finite] * np.round(d[finite] / self.periods[finite])
        return d

    def _rhs(self, state: Array) -> Array:
        dim = self.ambient_dim
        x = state[:dim]
        y = state[dim:].reshape(dim, dim)
        return np.r_[self.vector_field(x), (self.jacobian(x) @ y).ravel()]

    def _integrate(self, x: Array, t: float) -> Tuple[Array, Array]:
        if abs(t) > self.horizon:
            raise DomainError(f"|t| = {abs(t)} exceeds the integration horizon {self.horizon}")
        dim = self.ambient_dim
        state = np.r_[np.asarray(x, dtype=float), np.eye(dim).ravel()]
        steps = int(math.ceil(abs(t) / self.step - 1e-12))
        if steps == 0:
            return np.asarray(x, dtype=float).copy(), np.eye(dim)
        h = t / steps
        for _ in range(steps):
            k1 = self._rhs(state)
            k2 = self._rhs(state + 0.5 * h * k1)
            k3 = self._rhs(state + 0.5 * h * k2)
            k4 = self._rhs(state + h * k3)
            state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise IntegrationError(f"non-finite state integrating {self.name} from {x} for t={t}")
        return self.normalize(state[:dim]), state[dim:].reshape(dim, dim)

    def flow(self, x: Array, t: float) -> Array:
        return self._integrate(x, t)[0]

    def cocycle(self, x: Array, t: float) -> Array:
        return self._integrate(x, t)[1]

    def orbit(self, x: Array, times: Sequence[float]) -> Tuple[Array, Array]:
        times = np.asarray(times, dtype=float)
        pts = np.empty((len(times), self.ambient_dim))
        ders = np.empty((len(times), self.ambient_dim, self.ambient_dim))
        for sign in (1.0, -1.0):
            idx = [i for i in np.argsort(sign * times, kind="stable") if sign * times[i] >= 0]
            point, der, clock = np.asarray(x, dtype=float), np.eye(self.ambient_dim), 0.0
            for i in idx:
                p, m = self._integrate(point, times[i] - clock)
                point, der, clock = p, m @ der, times[i]
                pts[i], ders[i] = point, der
        return pts, ders


def saddle_circle(a: float = 0.5, **kwargs) -> OdeFlowModel:
    """ẋ = a x, ẏ = −a y, θ̇ = 1 on ℝ² × S¹"""
    def field(p: Array) -> Array:
        return np.array([a * p[0], -a * p[1], 1.0])

    def jacobian(p: Array) -> Array:
        return np.diag([a, -a, 0.0])

    return OdeFlowModel(field, dim=3, jacobian=jacobian, periods=[np.inf, np.inf, 2 * np.pi],
                        name="saddle_circle", **kwargs)


ODE_SYSTEMS: Dict[str, Callable[..., OdeFlowModel]] = {
    "saddle_circle": saddle_circle,
}


def build_model(spec: ModelSpec) -> FlowModel:
    """
    Instantiate the model described by a ModelSpec.

    Raises:
        ConfigurationError: Unknown ODE system or invalid matrix
    """
    if spec.kind is FlowKind.MAPPING_TORUS:
        return MappingTorusModel(
            spec.matrix,
            roof=spec.roof,
            torus_scale=spec.torus_scale,
            speed_scale=spec.speed_scale,
            beta=spec.beta,
        )
    factory = ODE_SYSTEMS.get(spec.system)
    if factory is None:
        raise ConfigurationError(f"unknown ODE system {spec.system!r}; known: {sorted(ODE_SYSTEMS)}")
    return factory(**spec.system_params, step=spec.step, horizon=spec.horizon,
                   speed_scale=spec.speed_scale, beta=spec.beta)


def _check_point(model: FlowModel, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.ambient_dim,) or not np.all(np.isfinite(x)):
        raise DomainError(f"point {x} is not a finite {model.ambient_dim}-vector")
    return x


def flow_at(model: FlowModel, x: Array, t: float) -> Array:
    """
    Evaluate φ^t(x).

    Args:
        model: Flow model
        x: Point on the manifold
        t: Time

    Returns:
        The point φ^t(x)

    Raises:
        DomainError: Malformed point or time beyond the integration horizon
        IntegrationError: Non-finite numeric state
    """
    return model.flow(_check_point(model, x), float(t))


def derivative_cocycle(model: FlowModel, x: Array, t: float) -> Array:
    """
    Evaluate dφ^t_x in the model's fixed local frames.

    Args:
        model: Flow model
        x: Point on the manifold
        t: Time

    Returns:
        (d+1)×(d+1) derivative matrix
    """
    return model.cocycle(_check_point(model, x), float(t))
