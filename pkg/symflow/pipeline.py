"""
Staged pipeline: model → section → frames → alphabet → graph → shadowing
→ cover → partition → entropy

Every stage is a deterministic function of the configuration and the
objects built by earlier stages. ``Pipeline.run(stage)`` recomputes the
prefix up to ``stage``; each stage leaves a JSON-ready payload and a list
of invariant checks.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .artifacts import write_dot, write_json
from .charts import ChartFactory
from .config import PipelineConfig
from .errors import ConfigurationError, DomainError, ReductionError, StageError, SymflowError, TransformError
from .gpo import Alphabet, GpoGraph, build_gpo_graph, coarse_grain
from .hyperbolicity import (
    FrameBuilder,
    finite_time_exponents,
    pesin_inequalities,
    q_parameters,
    reduction,
    resolve_chi,
)
from .manifolds import AdmissibleManifold, TransitionCache, contraction_profile, random_admissible, shadow
from .markov import (
    Affiliation,
    Cover,
    MarkovPartition,
    ShadowSample,
    affiliation,
    build_cover,
    check_markov,
    cylinder_coding_shift,
    refine,
    second_coding,
    second_coding_shift,
    shadow_samples,
)
from .models import FlowModel, MappingTorusModel, build_model
from .sections import LinearPoincareCocycle, OrbitWindow, ProperSection, build_proper_section, orbit_window
from .symbolic import (
    SuspensionFlow,
    SymbolicShift,
    entropy_table,
    reference_partition_shift,
    regular_flag,
    scc_decompose,
    suspension_entropy,
)
from .types import CheckResult, ManifoldKind, Stage

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass
class PipelineState:
    """Objects built so far; fields stay None until their stage has run"""
    model: Optional[FlowModel] = None
    section: Optional[ProperSection] = None
    security: Optional[ProperSection] = None
    cocycle: Optional[LinearPoincareCocycle] = None
    chi: Optional[float] = None
    windows: List[OrbitWindow] = field(default_factory=list)
    builder: Optional[FrameBuilder] = None
    factory: Optional[ChartFactory] = None
    alphabet: Optional[Alphabet] = None
    graph: Optional[GpoGraph] = None
    cache: Optional[TransitionCache] = None
    samples: List[ShadowSample] = field(default_factory=list)
    cover: Optional[Cover] = None
    partition: Optional[MarkovPartition] = None
    affiliation: Optional[Affiliation] = None
    entropy: Dict[str, Any] = field(default_factory=dict)


def seed_points(model: FlowModel, config: PipelineConfig) -> List[Tuple[str, Array]]:
    """
    Periodic seeds (the rational grid with the configured denominator) then
    uniformly random points, all at height 0.
    """
    if not isinstance(model, MappingTorusModel):
        raise ConfigurationError("orbit seeding needs a mapping-torus model")
    d = model.torus_dim
    out: List[Tuple[str, Array]] = []
    den = config.periodic_denominator
    if den:
        grid = np.stack(np.meshgrid(*[np.arange(den)] * d, indexing="ij"), axis=-1).reshape(-1, d)
        for cell in grid:
            label = "periodic-" + "-".join(str(int(c)) for c in cell)
            out.append((label, np.r_[cell / den, 0.0]))
    rng = np.random.default_rng(config.seed)
    for k in range(config.random_orbits):
        out.append((f"random-{k}", np.r_[rng.uniform(0.0, 1.0, d), 0.0]))
    return out


def reference_matrix(model: MappingTorusModel) -> Optional[np.ndarray]:
    """
    Transition matrix of the product Markov partition for block-diagonal
    automorphisms with non-negative 2×2 blocks; None otherwise.
    """
    a = model.A
    n = a.shape[0]
    if n % 2:
        return None
    blocks = []
    for i in range(0, n, 2):
        rest = np.delete(a[i:i + 2], [i, i + 1], axis=1)
        if np.any(rest != 0):
            return None
        blocks.append(a[i:i + 2, i:i + 2])
    out = np.array([[1]])
    for b in blocks:
        if np.any(b < 0):
            return None
        out = np.kron(out, b)
    return out


class Pipeline:
    """
    Runs the stages of one configuration.

    - ``payloads[stage]`` holds the JSON-ready artifact of each stage run
    - ``checks[stage]`` holds its invariant table
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.state = PipelineState()
        self.payloads: Dict[str, Dict[str, Any]] = {}
        self.checks: Dict[str, List[CheckResult]] = {}
        self._done: List[Stage] = []
        self._rng = np.random.default_rng(config.seed)

    @property
    def stages(self) -> Dict[Stage, Callable[[], Tuple[Dict[str, Any], List[CheckResult]]]]:
        return {
            Stage.ORBIT: self._orbit,
            Stage.FRAMES: self._frames,
            Stage.ALPHABET: self._alphabet,
            Stage.GRAPH: self._graph,
            Stage.SHADOW: self._shadow,
            Stage.COVER: self._cover,
            Stage.REFINE: self._refine,
            Stage.ENTROPY: self._entropy,
            Stage.CHECK: self._check,
        }

    def run(self, until: Stage = Stage.CHECK) -> PipelineState:
        """
        Run every stage up to and including ``until``.

        Raises:
            StageError: A stage failed; carries the stage name and cause
        """
        for stage in Stage.ordered():
            if stage in self._done:
                if stage == until:
                    break
                continue
            logger.info(f"Stage {stage.value}")
            try:
                payload, checks = self.stages[stage]()
            except StageError:
                raise
            except (SymflowError, ValueError, ArithmeticError) as e:
                logger.error(f"Stage {stage.value} failed: {e}")
                raise StageError(stage.value, e) from e
            self.payloads[stage.value] = payload
            self.checks[stage.value] = checks
            self._done.append(stage)
            for c in checks:
                log = logger.info if c.passed else logger.warning
                log(f"  {c.name}: {'pass' if c.passed else 'FAIL'} ({c.violations}/{c.samples})")
            if stage == until:
                break
        return self.state

    def all_checks(self) -> List[CheckResult]:
        return [c for stage in self._done for c in self.checks.get(stage.value, [])]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.all_checks())

    def write(self, out: Optional[Path] = None) -> List[Path]:
        """Write every stage artifact (and DOT graphs) under ``out``"""
        out = Path(out or self.config.out)
        paths = []
        for stage in self._done:
            payload = dict(self.payloads[stage.value])
            payload["checks"] = [c.to_dict() for c in self.checks[stage.value]]
            paths.append(write_json(out, stage.value, payload))
        if self.state.graph is not None:
            paths.append(write_dot(self.state.graph.graph, out / "gpo_graph.dot", "gpo_graph"))
        if self.state.partition is not None:
            paths.append(write_dot(self.state.partition.edge_graph(), out / "partition.dot", "partition"))
        return paths

    # ---- stages ---------------------------------------------------------
    def _orbit(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        st.model = build_model(cfg.model)
        st.section, st.security = build_proper_section(st.model, cfg.rho, cfg.section_samples, cfg.seed)
        st.cocycle = LinearPoincareCocycle(st.model)
        r = st.section.return_time
        seeds = seed_points(st.model, cfg)
        st.chi = cfg.chi if cfg.chi is not None else resolve_chi(
            st.cocycle, [p for _, p in seeds], cfg.splitting_returns * r)
        back = cfg.window // 2
        st.windows = [orbit_window(st.section, p, back, cfg.window - back, label) for label, p in seeds]

        checks = [self._exponent_recovery(seeds), *self._cocycle_sanity()]
        payload = {
            "model": cfg.model.model_dump(),
            "chi": st.chi,
            "section": st.section.to_dict(),
            "windows": [w.to_dict() for w in st.windows],
        }
        return payload, checks

    def _exponent_recovery(self, seeds: Sequence[Tuple[str, Array]]) -> CheckResult:
        st = self.state
        model = st.model
        expected = np.sort(model.exponents)
        horizon = 50 * st.section.return_time
        worst = 0.0
        for _, p in seeds:
            measured = finite_time_exponents(st.cocycle, p, horizon)
            worst = max(worst, float(np.max(np.abs(measured - expected))))
        return CheckResult("exponent_recovery", worst < 1e-3, len(seeds), int(worst >= 1e-3), worst,
                           {"expected": expected, "horizon": horizon})

    def _cocycle_sanity(self) -> List[CheckResult]:
        cfg, st = self.config, self.state
        rng = self._rng
        model, coc, rho = st.model, st.cocycle, cfg.rho
        law_bad = norm_bad = 0
        law_worst = 0.0
        for _ in range(cfg.sanity_samples):
            x = np.r_[rng.uniform(0.0, 1.0, model.torus_dim), rng.uniform(0.0, model.roof)]
            t, s = rng.uniform(-2 * rho, 2 * rho, 2)
            pts, phis = coc.along(x, [t, t + s])
            _, later = coc.along(pts[0], [s])
            err = float(np.max(np.abs(phis[1] - later[0] @ phis[0])))
            law_worst = max(law_worst, err)
            law_bad += err > cfg.tolerances.group_law
            norm = float(np.linalg.norm(phis[0], 2))
            bound = math.exp(rho + abs(t))
            norm_bad += not (1.0 / bound <= norm <= bound)
        n = cfg.sanity_samples
        return [
            CheckResult("cocycle_law", law_bad == 0, n, law_bad, law_worst),
            CheckResult("cocycle_norm", norm_bad == 0, n, norm_bad),
        ]

    def _frames(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        st.builder = FrameBuilder(
            st.cocycle, st.chi, cfg.rho, cfg.eps, cfg.beta,
            splitting_horizon=cfg.splitting_returns * st.section.return_time,
            frame_horizon=cfg.frame_horizon,
            nodes=cfg.quadrature_nodes,
            laws=cfg.laws,
            tail_tol=cfg.tolerances.tail,
        )
        st.factory = ChartFactory(st.builder, st.section)
        frames = {w.label: st.builder.frames(list(w.points), cfg.jobs) for w in st.windows}
        flat = [f for fs in frames.values() for f in fs]
        s_bad = sum(min(f.s_value, f.u_value) < math.sqrt(2) for f in flat)
        checks = [CheckResult("s_value", s_bad == 0, len(flat), s_bad,
                              min(min(f.s_value, f.u_value) for f in flat))]
        checks += pesin_inequalities(flat, cfg.eps, cfg.beta)
        checks.append(self._q_variation(frames))
        checks.append(self._reduction_bounds())
        distinct = {st.model.cocycle_key(f.point): f for f in flat}
        payload = {
            "chi": st.chi,
            "computed": st.builder.computed,
            "frames": [distinct[k].to_dict() for k in sorted(distinct)],
        }
        return payload, checks

    def _q_variation(self, frames: Dict[str, list]) -> CheckResult:
        eps = self.config.eps
        bad = count = 0
        worst = 0.0
        for w in self.state.windows:
            params = q_parameters([f.Q for f in frames[w.label]], w.times, eps)
            logs = np.abs(np.diff(np.log(params.q)))
            slack = eps * np.diff(w.times) * (1 + 1e-9)
            worst = max(worst, float(np.max(logs / slack)))
            bad += int(np.sum(logs > slack))
            count += len(logs)
        return CheckResult("q_variation", bad == 0, count, bad, worst)

    def _reduction_bounds(self) -> CheckResult:
        cfg, st = self.config, self.state
        rng = self._rng
        points = [p for w in st.windows for p in w.points]
        pick = rng.choice(len(points), size=min(cfg.reduction_points, len(points)), replace=False)
        bad = count = 0
        worst_off = 0.0
        for i in sorted(pick):
            x = points[i]
            fx = st.builder.frame(x)
            times = rng.uniform(0.0, 2.0 * cfg.rho, cfg.reduction_times)
            pts, phis = st.cocycle.along(x, times)
            for t, y, phi in zip(times, pts, phis):
                count += 1
                try:
                    red = reduction(fx, st.builder.frame(y), phi, float(t), st.chi, cfg.rho,
                                    cfg.tolerances.off_block)
                except ReductionError as e:
                    logger.debug(f"Reduction rejected at t = {t}: {e}")
                    bad += 1
                    continue
                worst_off = max(worst_off, red.off_block)
                ds = fx.d_s
                vs = rng.normal(size=(20, ds))
                vu = rng.normal(size=(20, red.D_u.shape[0]))
                ns = np.linalg.norm(vs @ red.D_s.T, axis=1) / np.linalg.norm(vs, axis=1)
                nu = np.linalg.norm(vu @ red.D_u.T, axis=1) / np.linalg.norm(vu, axis=1)
                ok = (np.all(ns > math.exp(-4 * cfg.rho)) and np.all(ns < math.exp(-st.chi * t))
                      and np.all(nu > math.exp(st.chi * t)) and np.all(nu < math.exp(4 * cfg.rho)))
                bad += not ok
        return CheckResult("reduction_bounds", bad == 0, count, bad, worst_off)

    def _alphabet(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        st.alphabet = coarse_grain(st.windows, st.factory, cfg.eps, cfg.laws, jobs=cfg.jobs)
        a = st.alphabet
        cg2_bad = sum(not a.cg2_ok(s) for s in a.symbols)
        h = a.grids["h"]
        cg3 = [a.cg3_ratio(s) for s in a.symbols]
        cg3_bad = sum(r > h for r in cg3)
        checks = [
            CheckResult("cg2_grid", cg2_bad == 0, len(a), cg2_bad),
            CheckResult("cg3_ratio", cg3_bad == 0, len(a), cg3_bad, max(cg3, default=0.0)),
        ]
        payload = a.to_dict()
        payload["regular"] = {label: regular_flag(seq, a.offsets[label]) for label, seq in a.sequences.items()}
        return payload, checks

    def _graph(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        st.graph = build_gpo_graph(st.alphabet, st.factory, cfg.eps, cfg.laws, cfg.jobs)
        g = st.graph
        periodic_bad = 0
        for label, seq in st.alphabet.sequences.items():
            if label.startswith("periodic"):
                periodic_bad += not g.is_path(seq)
        checks = [
            CheckResult("finite_degree", g.max_degree() < len(st.alphabet) + 1, len(g.vertices), 0,
                        float(g.max_degree())),
            CheckResult("periodic_paths", periodic_bad == 0, len(st.alphabet.sequences), periodic_bad),
        ]
        return g.to_dict(), checks

    def _shadow(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        doubles = [s.double for s in st.alphabet.symbols]
        st.cache = TransitionCache(st.factory, doubles, grid=3)
        st.samples = shadow_samples(st.graph, st.cache, cfg.manifold_depth, cfg.grid_nodes,
                                    cfg.tolerances.newton, cfg.tolerances.membership, cfg.jobs)
        if not st.samples:
            raise ConfigurationError("no window run is long enough to shadow")
        checks = [self._shadow_fidelity(), self._seed_independence(), self._transform_contraction()]
        payload = {"samples": [s.to_dict() for s in st.samples], "depth": cfg.manifold_depth}
        return payload, checks

    def _shadow_fidelity(self) -> CheckResult:
        st = self.state
        by_label = {w.label: w for w in st.windows}
        bad, worst = 0, 0.0
        for s in st.samples:
            w = by_label[s.label]
            double = st.alphabet[s.symbol].double
            coords = double.chart.inverse(w.at(s.position))
            ratio = float(np.max(np.abs(coords - s.coords))) / (double.eta / 50.0)
            worst = max(worst, ratio)
            bad += ratio > 1.0
        return CheckResult("shadow_fidelity", bad == 0, len(st.samples), bad, worst)

    def _ray(self, sample: ShadowSample) -> Optional[Tuple[List[int], int]]:
        cfg, st = self.config, self.state
        seq = st.alphabet.sequences[sample.label]
        n = sample.position + st.alphabet.offsets[sample.label]
        depth = cfg.manifold_depth
        if n - depth < 0 or n + depth >= len(seq):
            return None
        return seq[n - depth:n + depth + 1], depth

    def _seed_independence(self) -> CheckResult:
        cfg, st = self.config, self.state
        bad, worst, count = 0, 0.0, 0
        for s in st.samples[:cfg.shadow_checks]:
            ray = self._ray(s)
            if ray is None:
                continue
            path, offset = ray
            end, start = st.alphabet[path[-1]].double, st.alphabet[path[0]].double
            amp_s, amp_u = 0.1 * end.eta, 0.1 * start.eta
            s_seed = AdmissibleManifold.from_function(
                end, ManifoldKind.STABLE, lambda t: np.full((len(t), end.chart.frame.C.shape[0] - t.shape[1]), amp_s),
                cfg.grid_nodes, cfg.beta)
            u_seed = AdmissibleManifold.from_function(
                start, ManifoldKind.UNSTABLE, lambda t: np.full((len(t), start.chart.frame.C.shape[0] - t.shape[1]), -amp_u),
                cfg.grid_nodes, cfg.beta)
            moved = shadow(path, offset, st.cache, cfg.grid_nodes, cfg.tolerances.newton, (s_seed, u_seed))
            err = st.model.distance(moved.point, s.point)
            worst, count = max(worst, err), count + 1
            bad += err >= 1e-8
        return CheckResult("seed_independence", bad == 0, count, bad, worst)

    def _transform_contraction(self) -> CheckResult:
        """C0 contraction of the stable graph transform on random admissible pairs over random edges"""
        cfg, st = self.config, self.state
        r_min = st.section.return_time
        bound = math.exp(-st.chi * r_min / 2.0) + 1e-6
        edges = st.graph.edges()
        bad, worst, count = 0, 0.0, 0
        if not edges:
            return CheckResult("graph_transform_contraction", False, 0, 0, None, {"bound": bound})
        for k in self._rng.integers(len(edges), size=cfg.contraction_pairs):
            v, w = edges[int(k)]
            target = st.alphabet[w].double
            count += 1
            try:
                first = random_admissible(target, ManifoldKind.STABLE, self._rng, cfg.grid_nodes, cfg.beta)
                second = random_admissible(target, ManifoldKind.STABLE, self._rng, cfg.grid_nodes, cfg.beta)
                ratios = contraction_profile([st.cache.get(v, w)], first, second, cfg.grid_nodes)
            except (DomainError, TransformError) as e:
                logger.warning(f"Contraction sample on edge {v}->{w} failed: {e}")
                bad += 1
                continue
            if not ratios:
                continue
            worst = max(worst, ratios[0])
            bad += ratios[0] > bound
        return CheckResult("graph_transform_contraction", bad == 0, count, bad, worst, {"bound": bound})

    def _cover(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        st.cover = build_cover(st.graph, st.samples, st.cache, cfg.tolerances.membership,
                               cfg.tolerances.markov, cfg.fibre_samples)
        return st.cover.to_dict(), list(st.cover.checks)

    def _refine(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        depth = max(cfg.refine_depth, st.cover.measured_depth)
        st.partition = refine(st.cover, depth, cfg.jobs)
        p = st.partition
        members = [i for c in p.cells for i in c.members]
        covered = set(members) | set(p.excluded)
        axioms = len(members) == len(set(members)) and covered == {s.index for s in st.samples}
        over = sum(count > bound for count, bound in p.bound_table.values())
        st.affiliation = affiliation(p)
        aff = st.affiliation
        degree, degree_bad = self._partition_degree(p)
        checks = [
            CheckResult("partition_axioms", axioms, len(st.samples), 0 if axioms else 1),
            CheckResult("cell_count_bound", over == 0, len(p.bound_table), over),
            CheckResult("classification_stable", p.stable, len(p.labels), len(p.flips), detail={"flips": p.flips}),
            *check_markov(p),
            CheckResult("finite_to_one", aff.bound_violations == 0, len(aff.multiplicity), aff.bound_violations,
                        float(max((m for m, _ in aff.multiplicity.values()), default=0))),
            CheckResult("bowen_relation", aff.bowen_violations == 0, len(aff.multiplicity), aff.bowen_violations),
            CheckResult("affiliation_finite", all(math.isfinite(n) for n in aff.N.values()), len(aff.N), 0,
                        float(max(aff.N.values(), default=0))),
            CheckResult("partition_degree", degree_bad == 0, len(p.cells), degree_bad, float(degree)),
        ]
        payload = {"partition": p.to_dict(), "affiliation": aff.to_dict()}
        return payload, checks

    def _partition_degree(self, p: MarkovPartition) -> Tuple[int, int]:
        """
        Largest cell degree, and the cells whose degree exceeds what the gpo
        graph allows: out-degree at most the cells over the symbol's
        successors, in-degree at most the cells over its predecessors.
        """
        g = self.state.graph.graph
        per_symbol: Dict[int, int] = {}
        for c in p.cells:
            per_symbol[c.symbol] = per_symbol.get(c.symbol, 0) + 1
        graph = p.edge_graph()
        degree, bad = 0, 0
        for c in p.cells:
            out_cap = sum(per_symbol.get(w, 0) for w in g.successors(c.symbol)) if c.symbol in g else 0
            in_cap = sum(per_symbol.get(u, 0) for u in g.predecessors(c.symbol)) if c.symbol in g else 0
            out_deg, in_deg = graph.out_degree(c.index), graph.in_degree(c.index)
            degree = max(degree, out_deg, in_deg)
            bad += out_deg > out_cap or in_deg > in_cap
        return degree, bad

    def _entropy(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        cfg, st = self.config, self.state
        model = st.model
        oracle = float(np.sum(model.exponents[model.exponents > 0]))
        checks: List[CheckResult] = []
        payload: Dict[str, Any] = {"oracle": oracle}

        matrix = reference_matrix(model)
        if matrix is not None:
            shift, _ = reference_partition_shift(matrix, st.section.slices, st.section.return_time, cfg.rho)
            rows = entropy_table(shift, st.section.return_time)
            top = max(r.suspension_entropy for r in rows)
            payload["reference"] = {"rows": [r.to_dict() for r in rows], "relative_error": abs(top - oracle) / oracle}
        else:
            logger.info("No reference partition for this base matrix; skipping the reference shift")

        p = st.partition
        returns = [float(p.cover.samples[i].return_time) for i in p.cell_of
                   if p.cover.samples[i].return_time is not None]
        roof_bad = sum(r >= cfg.rho for r in returns)
        checks.append(CheckResult("second_roof_below_rho", roof_bad == 0, len(returns), roof_bad,
                                  max(returns, default=None)))
        shift, flow = second_coding_shift(p)
        cell_rows = self._component_rows(shift, flow)
        words, word_flow, spread = cylinder_coding_shift(p, cfg.cylinder_depth)
        rows = self._component_rows(words, word_flow)
        sampled = rows[0]["suspension_entropy"] if rows else 0.0
        rel = abs(sampled - oracle) / oracle if oracle > 0 else math.inf
        checks.append(CheckResult("sampled_entropy", rel <= 0.05, len(rows), int(rel > 0.05), rel,
                                  {"entropy": sampled, "oracle": oracle, "depth": cfg.cylinder_depth}))

        codings = []
        for cell in p.cells[:cfg.coding_samples]:
            try:
                codings.append(second_coding(p, cell.members[0], cfg.window, cfg.grid_nodes))
            except SymflowError as e:
                logger.warning(f"Second coding of cell {cell.index} skipped: {e}")
        recon_bad = sum(c.reconstruction_error > max(c.diameter_bound, cfg.tolerances.membership) for c in codings)
        equiv_bad = sum(c.equivariance_error > 1e-6 for c in codings)
        r = st.section.return_time
        const_bad = sum(any(abs(x - r) > 1e-9 for x in c.roofs) for c in codings) if st.section.periodic else 0
        checks += [
            CheckResult("reconstruction", recon_bad == 0, len(codings), recon_bad,
                        max((c.reconstruction_error for c in codings), default=None)),
            CheckResult("coding_equivariance", equiv_bad == 0, len(codings), equiv_bad,
                        max((c.equivariance_error for c in codings), default=None)),
            CheckResult("constant_return", const_bad == 0, len(codings), const_bad),
        ]
        payload.update({
            "second_coding": {"rows": rows, "cell_rows": cell_rows, "relative_error": rel,
                              "cylinder_depth": cfg.cylinder_depth, "cylinder_error": spread,
                              "cylinders": len(words)},
            "codings": [c.to_dict() for c in codings],
        })
        st.entropy = payload
        return payload, checks

    @staticmethod
    def _component_rows(shift: SymbolicShift, flow: SuspensionFlow) -> List[Dict[str, Any]]:
        """Suspension entropy per irreducible component, largest component first"""
        rows = []
        for i, comp in enumerate(scc_decompose(shift)):
            roof = {v: flow.roof[(v,)] for v in comp.vertices}
            rows.append({"component": i, "size": len(comp), "suspension_entropy": suspension_entropy(comp, roof)})
        return rows

    def _check(self) -> Tuple[Dict[str, Any], List[CheckResult]]:
        table = [c.to_dict() | {"stage": stage.value}
                 for stage in self._done for c in self.checks.get(stage.value, [])]
        failed = [row["name"] for row in table if not row["passed"]]
        return {"table": table, "failed": failed, "passed": not failed}, []


def run_pipeline(config: PipelineConfig, until: Stage = Stage.CHECK) -> Pipeline:
    """Build and run a pipeline; the returned object holds state, payloads and checks"""
    pipeline = Pipeline(config)
    pipeline.run(until)
    return pipeline
