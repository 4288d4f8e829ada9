"""
Hyperbolicity estimates along orbits

Splitting of the normal bundle from finite-time singular directions,
truncated Lyapunov Gram matrices, the change of coordinates C(x), the
block reduction D(x,t) and the parameters Q, q, q^s, q^u, p^s, p^u.
"""
import dataclasses
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .config import ScaleLaws
from .errors import HorizonError, InputError, NUHRejectionError, ReductionError
from .parallel import parallel_map
from .sections import LinearPoincareCocycle
from .types import CheckResult

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class Splitting:
    """
    N_x = N^s ⊕ N^u in normal-frame coordinates.

    Columns of ``stable_basis`` / ``unstable_basis`` are orthonormal in the
    frame of N_x. ``exponents`` are the finite-time exponents at the
    horizon, sorted ascending.
    """
    stable_basis: Array
    unstable_basis: Array
    exponents: Array
    horizon: float

    @property
    def d_s(self) -> int:
        return self.stable_basis.shape[1]

    @property
    def d_u(self) -> int:
        return self.unstable_basis.shape[1]

    @property
    def d(self) -> int:
        return self.d_s + self.d_u


@dataclass(frozen=True)
class PesinFrame:
    """
    Lyapunov data at one point.

    - ``C`` maps ℝ^d (Euclidean) to the Lyapunov inner product on N_x
    - ``basis`` is the coordinate frame of N_x the matrices act on
    """
    point: Array
    basis: Array
    splitting: Splitting
    gram_s: Array
    gram_u: Array
    C: Array
    C_inv: Array
    C_inv_norm: float
    Q: float
    s_value: float
    u_value: float
    tail: float

    @property
    def d_s(self) -> int:
        return self.splitting.d_s

    def lyapunov_inner(self, v: Array, w: Array) -> float:
        """⟪v, w⟫ for frame coordinates v, w of N_x"""
        return float((self.C_inv @ v) @ (self.C_inv @ w))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point,
            "d_s": self.splitting.d_s,
            "d_u": self.splitting.d_u,
            "exponents": self.splitting.exponents,
            "C": self.C,
            "C_inv_norm": self.C_inv_norm,
            "Q": self.Q,
            "s": self.s_value,
            "u": self.u_value,
            "tail": self.tail,
        }


@dataclass
class QParameters:
    """Per-orbit-point Q, q, q^s, q^u and the greedy p^s, p^u on one return grid"""
    times: Array
    Q: Array
    q: Array
    q_s: Array
    q_u: Array
    p_s: Array
    p_u: Array
    refinement_error: float
    eps: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "times": self.times,
            "Q": self.Q,
            "q": self.q,
            "q_s": self.q_s,
            "q_u": self.q_u,
            "p_s": self.p_s,
            "p_u": self.p_u,
            "refinement_error": self.refinement_error,
            "eps": self.eps,
        }


@dataclass
class Reduction:
    """Block form D = C(φ^t x)^{-1} Φ^t C(x) and its measured bounds"""
    D: Array
    D_s: Array
    D_u: Array
    t: float
    off_block: float
    cinv_ratio: float
    bounds: Dict[str, float] = field(default_factory=dict)


def finite_time_exponents(coc: LinearPoincareCocycle, x: Array, horizon: float) -> Array:
    """Sorted log singular values of Φ^T at x divided by T"""
    if horizon <= 0:
        raise InputError("horizon must be positive")
    phi = coc.along(x, [horizon])[1][0]
    sv = np.linalg.svd(phi, compute_uv=False)
    return np.sort(np.log(sv) / horizon)


def estimate_splitting(coc: LinearPoincareCocycle, x: Array, horizon: float, chi: float) -> Splitting:
    """
    Estimate N^s ⊕ N^u at x from the singular directions of Φ^{±T}.

    Args:
        coc: Linear Poincaré cocycle
        x: Base point
        horizon: Time T over which singular directions are taken
        chi: Hyperbolicity threshold

    Returns:
        Splitting with d_s counted from exponents below -chi

    Raises:
        NUHRejectionError: Some finite-time exponent lies in [-chi, chi]
    """
    _, phis = coc.along(x, [horizon, -horizon])
    fwd, bwd = phis
    _, sv, vt = np.linalg.svd(fwd)
    exps = np.log(sv) / horizon
    if np.any(np.abs(exps) <= chi):
        raise NUHRejectionError(f"point {x} has an exponent within ±{chi}", exponents=np.sort(exps))
    d_s = int(np.sum(exps < -chi))
    d_u = len(exps) - d_s
    stable = vt[len(exps) - d_s:].T if d_s else np.zeros((len(exps), 0))
    _, _, vt_b = np.linalg.svd(bwd)
    unstable = vt_b[len(exps) - d_u:].T if d_u else np.zeros((len(exps), 0))
    return Splitting(stable[:, ::-1].copy(), unstable[:, ::-1].copy(), np.sort(exps), horizon)


def equivariance_angle(coc: LinearPoincareCocycle, x: Array, t: float,
                       split_x: Splitting, split_y: Splitting) -> float:
    """Largest principal angle between Φ^t N^s_x and N^s_{φ^t x} (and likewise for N^u)"""
    phi = coc.along(x, [t])[1][0]
    worst = 0.0
    for a, b in ((split_x.stable_basis, split_y.stable_basis), (split_x.unstable_basis, split_y.unstable_basis)):
        if a.shape[1] == 0:
            continue
        q, _ = np.linalg.qr(phi @ a)
        sv = np.linalg.svd(q.T @ b, compute_uv=False)
        worst = max(worst, float(np.arccos(np.clip(sv.min(), -1.0, 1.0))))
    return worst


def lyapunov_gram(times: Array, images: Array, chi: float, rho: float) -> Tuple[Array, Array]:
    """
    Truncated Gram matrix 4e^{2ρ}∫₀^T e^{2χt}⟨Φ^t e_i, Φ^t e_j⟩dt and its tail.

    Args:
        times: Increasing nodes on [0, T] (odd count, composite Simpson)
        images: Array (m, d, k) of Φ^t applied to the k basis vectors
        chi: Weight exponent
        rho: Section scale

    Returns:
        (gram k×k, absolute tail estimate per basis vector)

    Raises:
        HorizonError: The measured decay at T does not beat chi
    """
    times = np.asarray(times, dtype=float)
    weight = 4.0 * math.exp(2.0 * rho) * np.exp(2.0 * chi * times)
    integrand = np.einsum("n,nij,nik->njk", weight, images, images)
    gram = simpson(integrand, x=times, axis=0)
    T = float(times[-1])
    end = np.linalg.norm(images[-1], axis=0)
    rate = -np.log(np.maximum(end, 1e-300)) / T
    if np.any(rate <= chi):
        raise HorizonError(f"decay rate {rate.min():.4f} at horizon {T} does not exceed chi = {chi}")
    tail = 4.0 * math.exp(2.0 * rho) * math.exp(2.0 * chi * T) * end ** 2 / (2.0 * (rate - chi))
    return 0.5 * (gram + gram.T), tail


def lyapunov_frame(
    coc: LinearPoincareCocycle,
    x: Array,
    splitting: Splitting,
    chi: float,
    rho: float,
    eps: float,
    beta: float = 1.0,
    horizon: float = 16.0,
    nodes: int = 1601,
    laws: Optional[ScaleLaws] = None,
    tail_tol: float = 1e-8,
) -> PesinFrame:
    """
    Lyapunov Gram data, C(x) and Q(x) at a point.

    Raises:
        HorizonError: Relative tail above ``tail_tol``
    """
    laws = laws or ScaleLaws.desk()
    x = np.asarray(x, dtype=float)
    times = np.linspace(0.0, horizon, nodes)
    _, fwd = coc.along(x, times)
    _, bwd = coc.along(x, -times)
    gram_s, tail_s = lyapunov_gram(times, fwd @ splitting.stable_basis, chi, rho)
    gram_u, tail_u = lyapunov_gram(times, bwd @ splitting.unstable_basis, chi, rho)
    rel = max(float(np.max(tail_s / np.diag(gram_s), initial=0.0)),
              float(np.max(tail_u / np.diag(gram_u), initial=0.0)))
    if rel > tail_tol:
        raise HorizonError(f"relative tail {rel:.3e} above {tail_tol} at horizon {horizon}")

    blocks = []
    for basis, gram in ((splitting.stable_basis, gram_s), (splitting.unstable_basis, gram_u)):
        if basis.shape[1] == 0:
            continue
        chol = np.linalg.cholesky(gram)
        blocks.append(basis @ np.linalg.inv(chol.T))
    C = np.hstack(blocks)
    C_inv = np.linalg.inv(C)
    c_inv_norm = float(np.linalg.norm(C_inv, 2))
    s_value = math.sqrt(float(np.linalg.eigvalsh(gram_s).max())) if gram_s.size else 0.0
    u_value = math.sqrt(float(np.linalg.eigvalsh(gram_u).max())) if gram_u.size else 0.0
    return PesinFrame(
        point=x,
        basis=coc.normal_frame(x),
        splitting=splitting,
        gram_s=gram_s,
        gram_u=gram_u,
        C=C,
        C_inv=C_inv,
        C_inv_norm=c_inv_norm,
        Q=laws.Q(eps, c_inv_norm, beta),
        s_value=s_value,
        u_value=u_value,
        tail=rel,
    )


class FrameBuilder:
    """
    Computes Pesin frames with a cache keyed by ``model.cocycle_key``.

    Points sharing a key share their splitting and Gram data; the cached
    frame is re-centred on the requested point.
    """

    def __init__(
        self,
        coc: LinearPoincareCocycle,
        chi: float,
        rho: float,
        eps: float,
        beta: float = 1.0,
        splitting_horizon: float = 2.0,
        frame_horizon: float = 16.0,
        nodes: int = 1601,
        laws: Optional[ScaleLaws] = None,
        tail_tol: float = 1e-8,
    ):
        self.coc = coc
        self.chi = chi
        self.rho = rho
        self.eps = eps
        self.beta = beta
        self.splitting_horizon = splitting_horizon
        self.frame_horizon = frame_horizon
        self.nodes = nodes
        self.laws = laws or ScaleLaws.desk()
        self.tail_tol = tail_tol
        self._cache: Dict[Hashable, PesinFrame] = {}
        self._lock = threading.Lock()
        self.computed = 0

    def frame(self, x: Array) -> PesinFrame:
        x = np.asarray(x, dtype=float)
        key = self.coc.model.cocycle_key(x)
        if key is not None:
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return dataclasses.replace(hit, point=x)
        split = estimate_splitting(self.coc, x, self.splitting_horizon, self.chi)
        frame = lyapunov_frame(self.coc, x, split, self.chi, self.rho, self.eps, self.beta,
                               self.frame_horizon, self.nodes, self.laws, self.tail_tol)
        with self._lock:
            self.computed += 1
            if key is not None:
                self._cache.setdefault(key, frame)
        logger.debug(f"Frame at {x}: |C^-1| = {frame.C_inv_norm:.4f}, Q = {frame.Q:.3e}")
        return frame

    def frames(self, points: Sequence[Array], jobs: int = 1) -> List[PesinFrame]:
        return parallel_map(self.frame, list(points), jobs)


def resolve_chi(coc: LinearPoincareCocycle, points: Sequence[Array], horizon: float) -> float:
    """A quarter of the smallest |finite-time exponent| over sample points"""
    smallest = min(float(np.min(np.abs(finite_time_exponents(coc, p, horizon)))) for p in points)
    chi = 0.25 * smallest
    logger.info(f"Resolved chi = {chi:.6f} from {len(points)} samples")
    return chi


def reduction(
    frame_x: PesinFrame,
    frame_y: PesinFrame,
    phi: Array,
    t: float,
    chi: float,
    rho: float,
    off_block_tol: float = 1e-6,
    slack: float = 1e-12,
) -> Reduction:
    """
    Oseledets–Pesin reduction D(x,t) = C(φ^t x)^{-1} Φ^t C(x).

    Raises:
        ReductionError: Off-diagonal blocks or singular-value bounds violated
    """
    if t < -slack or t > 2.0 * rho + slack:
        raise ReductionError(f"reduction time {t} outside [0, 2*rho]")
    D = frame_y.C_inv @ phi @ frame_x.C
    ds = frame_x.d_s
    if frame_y.d_s != ds:
        raise ReductionError("stable dimensions differ between the two frames")
    off = max(float(np.linalg.norm(D[:ds, ds:])) if D[:ds, ds:].size else 0.0,
              float(np.linalg.norm(D[ds:, :ds])) if D[ds:, :ds].size else 0.0)
    if off >= off_block_tol:
        raise ReductionError(f"off-diagonal block of norm {off:.3e}")
    D_s, D_u = D[:ds, :ds], D[ds:, ds:]
    sv_s = np.linalg.svd(D_s, compute_uv=False) if ds else np.array([])
    sv_u = np.linalg.svd(D_u, compute_uv=False) if D_u.size else np.array([])
    bounds = {
        "s_max": float(sv_s.max(initial=0.0)),
        "s_min": float(sv_s.min(initial=math.inf)),
        "u_max": float(sv_u.max(initial=0.0)),
        "u_min": float(sv_u.min(initial=math.inf)),
    }
    lo, hi = math.exp(-4.0 * rho), math.exp(-chi * t)
    if ds and not (bounds["s_min"] > lo - slack and bounds["s_max"] < hi + slack):
        raise ReductionError(f"stable block singular values {sv_s} outside ({lo:.6f}, {hi:.6f})")
    lo, hi = math.exp(chi * t), math.exp(4.0 * rho)
    if D_u.size and not (bounds["u_min"] > lo - slack and bounds["u_max"] < hi + slack):
        raise ReductionError(f"unstable block singular values {sv_u} outside ({lo:.6f}, {hi:.6f})")
    return Reduction(D, D_s, D_u, t, off, frame_y.C_inv_norm / frame_x.C_inv_norm, bounds)


def _check_grid(times: Array, values: Array, r_bounds: Optional[Tuple[float, float]]) -> None:
    if times.ndim != 1 or len(times) != len(values) or len(times) == 0:
        raise InputError("times and values must be 1-d of equal non-zero length")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise InputError("Q values must be finite and positive")
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        raise InputError("return grid must be strictly increasing")
    if r_bounds is not None and len(gaps):
        r_min, r_max = r_bounds
        if gaps.min() < 0.5 * r_min - 1e-12 or gaps.max() > 2.0 * r_max + 1e-12:
            raise InputError(f"grid spacing outside [{0.5 * r_min}, {2.0 * r_max}]")


def _backward_min(times: Array, caps: Array, eps: float) -> Array:
    out = caps.copy()
    for n in range(len(out) - 2, -1, -1):
        out[n] = min(out[n], math.exp(eps * (times[n + 1] - times[n])) * out[n + 1])
    return out


def _forward_min(times: Array, caps: Array, eps: float) -> Array:
    out = caps.copy()
    for n in range(1, len(out)):
        out[n] = min(out[n], math.exp(eps * (times[n] - times[n - 1])) * out[n - 1])
    return out


def greedy_p(
    Q_values: Sequence[float],
    times: Sequence[float],
    eps: float,
    r_bounds: Optional[Tuple[float, float]] = None,
) -> Tuple[Array, Array]:
    """
    Greedy sequences p^s (backward recursion) and p^u (forward recursion).

    p^s(n) = min{e^{ε(t_{n+1}-t_n)} p^s(n+1), εQ(x_n)}, seeded with εQ at the
    window end; p^u mirrors it forward.

    Raises:
        InputError: Malformed grid, non-positive Q or spacing outside r_bounds
    """
    Q = np.asarray(Q_values, dtype=float)
    t = np.asarray(times, dtype=float)
    _check_grid(t, Q, r_bounds)
    caps = eps * Q
    return _backward_min(t, caps, eps), _forward_min(t, caps, eps)


def q_parameters(Q_values: Sequence[float], times: Sequence[float], eps: float) -> QParameters:
    """
    q^s, q^u and q on a return grid, with the greedy p sequences.

    The grid-refinement error compares against the same recursion run on
    every other grid point.
    """
    Q = np.asarray(Q_values, dtype=float)
    t = np.asarray(times, dtype=float)
    _check_grid(t, Q, None)
    q_s, q_u = greedy_p(Q, t, eps)
    p_s, p_u = greedy_p(Q, t, eps)
    error = 0.0
    if len(t) >= 3:
        cs, cu = greedy_p(Q[::2], t[::2], eps)
        coarse = np.minimum(cs, cu)
        fine = np.minimum(q_s, q_u)[::2]
        error = float(np.max(np.abs(np.log(coarse / fine))))
    return QParameters(t, Q, np.minimum(q_s, q_u), q_s, q_u, p_s, p_u, error, eps)


def robustness_exponent(eps: float, rho: float, beta: float = 1.0) -> float:
    """𝔥 = ερ + 288ρ/β bounding log p/q ratios"""
    return eps * rho + 288.0 * rho / beta


def q_variation_bound(rho: float, beta: float = 1.0) -> float:
    """Bound on |log Q(φ^t x)/Q(x)| for 0 ≤ t ≤ 2ρ"""
    return 288.0 * rho / beta


def maximal_frequency(p_s: Array, Q: Array, eps: float, rtol: float = 1e-12) -> float:
    """Fraction of indices where p^s(n) = εQ(x_n)"""
    hits = np.abs(p_s - eps * Q) <= rtol * eps * Q
    return float(np.mean(hits))


def recurrence_flag(params: QParameters, threshold: float) -> bool:
    """
    Finite-window surrogate for limsup q > 0 in both time directions.

    True when q exceeds the threshold somewhere in the forward half and
    somewhere in the backward half of the window.
    """
    mid = len(params.q) // 2
    return bool(np.any(params.q[mid:] > threshold) and np.any(params.q[:mid + 1] > threshold))


def pesin_inequalities(
    frames: Sequence[PesinFrame],
    eps: float,
    beta: float = 1.0,
    laws: Optional[ScaleLaws] = None,
) -> List[CheckResult]:
    """
    Check Q ≤ ε^{a/β} and ‖C(f(x))^{-1}‖Q(x)^{β/12} ≤ ε^{1/4} along consecutive frames.

    Q is recomputed from ‖C^{-1}‖ with the given laws, so the literal
    exponents can be checked on frames built with the desk laws.
    """
    laws = laws or ScaleLaws.literal()
    Qs = [laws.Q(eps, f.C_inv_norm, beta) for f in frames]
    cap = eps ** (laws.q_eps_power / beta)
    q_viol = [q / cap for q in Qs if q > cap]
    ratios = [frames[i + 1].C_inv_norm * Qs[i] ** (beta / 12.0) for i in range(len(frames) - 1)]
    bound = eps ** 0.25
    r_viol = [r for r in ratios if r > bound]
    return [
        CheckResult("Q_cap", not q_viol, len(Qs), len(q_viol), max(q / cap for q in Qs) if Qs else None),
        CheckResult("frame_ratio", not r_viol, len(ratios), len(r_viol),
                    max(ratios) / bound if ratios else None),
    ]
