"""Vector consistency: the cheapest set of independent bound relaxations.

For relaxation coefficients c_s >= 0 (zero freezes a bound), the measure is

    minimize   sum of relaxations Delta_s >= 0
    over       x and Delta
    subject to violation_s(x) <= c_s * Delta_s     for every bound s,

so for fixed x the optimal relaxations are the positive parts of the bound
violations divided by their coefficients.  The local side minimizes that
exact penalty over x by multi-start subgradient descent with an epigraph
polish and a final coordinatewise sweep; the lifted conic relaxation gives
a certified lower bound, and a strictly positive lower bound proves the
dataset inconsistent.

At any local optimum the reported relaxations inherit two structural
properties: no constraint has both of its bounds relaxed (the violations of
the two sides of one interval cannot both be positive), and every relaxed
bound is met with equality at the witness (the relaxation is exactly the
violation).  `check_structure` verifies both numerically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from ._assembly import SdpOptions, build_vcm_problem, facet_rows, quad_rows
from .conic import ConicProblem, ConicSolution, SolverOptions, solve_lp, solve_sdp
from .dataset import Dataset, RelaxationScheme
from .scalar import SearchOptions

__all__ = [
    "VcmDual",
    "VcmResult",
    "RelaxedDataset",
    "StructureReport",
    "SupportResult",
    "NullInfeasibleError",
    "vcm_local",
    "vcm_sdp_lower",
    "vcm",
    "apply_relaxations",
    "check_structure",
    "vcm_exact_support",
]

_HARD_TOL = 1e-9

# same rationale as the scalar side: value tolerances are 1e-6-scale
_MEASURE_SOLVER = SolverOptions(feas_tol=1e-7, gap_tol=1e-7)


class NullInfeasibleError(RuntimeError):
    """No feasible parameter vector exists under the null (frozen) bounds."""


@dataclass
class VcmDual:
    conic: ConicSolution
    var_labels: list[tuple]
    row_labels: list[tuple]

    @property
    def optimal(self) -> bool:
        return self.conic.optimal


@dataclass
class VcmResult:
    value_upper: float
    value_lower: float | None
    delta_L: np.ndarray
    delta_U: np.ndarray
    delta_l: np.ndarray
    delta_u: np.ndarray
    delta_facets: np.ndarray
    x_witness: np.ndarray
    scheme: RelaxationScheme
    status_lower: str | None = None
    status_upper: str = "ok"
    lower_dual: VcmDual | None = None

    def signed_qoi_shifts(self) -> np.ndarray:
        """Single-variable view: effective shift R_U dU - R_L dL per QOI."""
        return self.scheme.R_U * self.delta_U - self.scheme.R_L * self.delta_L

    def nonzero_tol(self, dataset: Dataset) -> np.ndarray:
        widths = np.array([q.width if math.isfinite(q.width) else 1.0
                           for q in dataset.qois])
        return 1e-6 * np.maximum(1.0, widths)


class _Sides:
    """Flattened per-bound machinery for the exact penalty objective."""

    def __init__(self, dataset: Dataset, scheme: RelaxationScheme):
        scheme.check_shape(dataset)
        self.dataset = dataset
        self.scheme = scheme
        coef_of = {
            "qoi_upper": scheme.R_U, "qoi_lower": scheme.R_L,
            "param_upper": scheme.r_u, "param_lower": scheme.r_l,
            "facet": scheme.r_facets,
        }
        self.labels: list[tuple] = []
        self.coef: list[float] = []
        mats = []
        for label, q, _w in quad_rows(dataset):
            self.labels.append(label)
            self.coef.append(float(coef_of[label[0]][label[1]]))
            mats.append(q)
        n = dataset.n
        for label, a in facet_rows(dataset):
            self.labels.append(label)
            self.coef.append(float(coef_of[label[0]][label[1]]))
            m = np.zeros((n + 1, n + 1))
            m[0, :] = m[:, 0] = 0.5 * a
            m[0, 0] = a[0]
            mats.append(m)
        self.mats = np.array(mats) if mats else np.zeros((0, n + 1, n + 1))
        self.coef = np.array(self.coef)
        self.soft = self.coef > 0.0
        self.lin = 2.0 * self.mats[:, 1:, 0]
        self.quad = 2.0 * self.mats[:, 1:, 1:]
        # hard box sides become plain clipping bounds for the search
        self.clip_lo = np.full(n, -np.inf)
        self.clip_hi = np.full(n, np.inf)
        for s, label in enumerate(self.labels):
            if self.soft[s]:
                continue
            kind, idx = label[0], label[1]
            if kind == "param_lower":
                self.clip_lo[idx] = dataset.box.lower[idx]
            elif kind == "param_upper":
                self.clip_hi[idx] = dataset.box.upper[idx]

    def violations(self, x: np.ndarray) -> np.ndarray:
        z = np.concatenate(([1.0], x))
        return np.einsum("i,sij,j->s", z, self.mats, z)

    def penalty(self, x: np.ndarray, hard_weight: float = 1e6) -> float:
        v = np.maximum(self.violations(x), 0.0)
        soft = float(np.sum(v[self.soft] / self.coef[self.soft]))
        hard = float(np.sum(v[~self.soft]))
        return soft + hard_weight * hard

    def subgradient(self, x: np.ndarray, hard_weight: float = 1e6) -> np.ndarray:
        v = self.violations(x)
        active = v > 0
        weights = np.where(self.soft, 1.0 / np.where(self.soft, self.coef, 1.0), hard_weight)
        w = np.where(active, weights, 0.0)
        return w @ (self.lin + self.quad @ x)

    def hard_violation(self, x: np.ndarray) -> float:
        v = self.violations(x)
        hard = v[~self.soft]
        return float(np.max(hard, initial=0.0))

    def deltas(self, x: np.ndarray) -> np.ndarray:
        v = np.maximum(self.violations(x), 0.0)
        out = np.zeros(len(self.labels))
        out[self.soft] = v[self.soft] / self.coef[self.soft]
        return out

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.clip_lo, self.clip_hi)


def vcm_local(dataset: Dataset, scheme: RelaxationScheme,
              options: SearchOptions | None = None) -> VcmResult:
    """Upper bound: best local minimizer of the exact relaxation penalty.

    Raises NullInfeasibleError when no start can satisfy the frozen bounds.
    """
    options = options or SearchOptions()
    sides = _Sides(dataset, scheme)
    n = dataset.n
    slo, shi = dataset.box.sampling_bounds(options.sample_fallback)
    sampler = qmc.LatinHypercube(d=n, seed=options.seed)
    starts = qmc.scale(sampler.random(options.starts), slo, shi)
    span = float(np.max(shi - slo))

    best_x = None
    best_val = math.inf
    for x0 in starts:
        x = sides.clip(x0)
        step0 = 0.25 * max(span, 1.0)
        val = sides.penalty(x)
        xb, vb = x.copy(), val
        for it in range(1, 81):
            g = sides.subgradient(x)
            norm = float(np.linalg.norm(g))
            if norm < 1e-14:
                break
            x = sides.clip(x - (step0 / (math.sqrt(it) * norm)) * g)
            val = sides.penalty(x)
            if val < vb:
                xb, vb = x.copy(), val
        x = _polish_penalty(xb, sides)
        x = _coordinate_sweeps(x, sides, span)
        if sides.hard_violation(x) > _HARD_TOL * max(1.0, span):
            continue
        val = float(np.sum(sides.deltas(x)))
        if val < best_val - 0.0:
            best_val = val
            best_x = x
    if best_x is None:
        raise NullInfeasibleError(
            "no feasible parameter vector found under the null (zero-coefficient) "
            "bounds; loosen the scheme or raise the start count"
        )
    return _package_local(dataset, scheme, sides, best_x, best_val)


def _package_local(dataset: Dataset, scheme: RelaxationScheme, sides: _Sides,
                   x: np.ndarray, value: float) -> VcmResult:
    deltas = sides.deltas(x)
    out = {
        "qoi_lower": np.zeros(dataset.N), "qoi_upper": np.zeros(dataset.N),
        "param_lower": np.zeros(dataset.n), "param_upper": np.zeros(dataset.n),
        "facet": np.zeros(dataset.n_facets),
    }
    for label, d in zip(sides.labels, deltas):
        out[label[0]][label[1]] = d
    return VcmResult(
        value_upper=float(value), value_lower=None,
        delta_L=out["qoi_lower"], delta_U=out["qoi_upper"],
        delta_l=out["param_lower"], delta_u=out["param_upper"],
        delta_facets=out["facet"], x_witness=x, scheme=scheme,
    )


def _polish_penalty(x0: np.ndarray, sides: _Sides) -> np.ndarray:
    """Epigraph form: min sum(t) s.t. t_s >= violation_s(x)/c_s, t >= 0,
    hard violations <= 0, hard box sides as bounds."""
    n = x0.size
    soft_idx = np.where(sides.soft)[0]
    hard_idx = np.where(~sides.soft)[0]
    # hard box sides are encoded in clip bounds; keep only non-box hard rows
    hard_rows = [s for s in hard_idx
                 if sides.labels[s][0] not in ("param_lower", "param_upper")]
    k = soft_idx.size
    v0 = np.concatenate([x0, np.maximum(sides.violations(x0)[soft_idx], 0.0)
                         / sides.coef[soft_idx]])

    def objective(v):
        return float(np.sum(v[n:]))

    def objective_grad(v):
        g = np.zeros_like(v)
        g[n:] = 1.0
        return g

    cons = [{
        "type": "ineq",
        "fun": lambda v: v[n:] - sides.violations(v[:n])[soft_idx] / sides.coef[soft_idx],
        "jac": lambda v: np.hstack([
            -(sides.lin[soft_idx] + sides.quad[soft_idx] @ v[:n])
            / sides.coef[soft_idx, None],
            np.eye(k),
        ]),
    }]
    if hard_rows:
        cons.append({
            "type": "ineq",
            "fun": lambda v: -sides.violations(v[:n])[hard_rows],
            "jac": lambda v: np.hstack([
                -(sides.lin[hard_rows] + sides.quad[hard_rows] @ v[:n]),
                np.zeros((len(hard_rows), k)),
            ]),
        })
    bounds = [(l if math.isfinite(l) else None, u if math.isfinite(u) else None)
              for l, u in zip(sides.clip_lo, sides.clip_hi)]
    bounds += [(0.0, None)] * k
    res = optimize.minimize(objective, v0, jac=objective_grad, method="SLSQP",
                            bounds=bounds, constraints=cons,
                            options={"maxiter": 200, "ftol": 1e-12})
    x = res.x[:n] if np.all(np.isfinite(res.x)) else x0
    x = sides.clip(x)
    if sides.penalty(x) <= sides.penalty(x0):
        return x
    return x0


def _coordinate_sweeps(x0: np.ndarray, sides: _Sides, span: float,
                       sweeps: int = 2) -> np.ndarray:
    x = x0.copy()
    radius = max(1.0, span)
    for _ in range(sweeps):
        for i in range(x.size):
            lo = max(sides.clip_lo[i], x[i] - radius)
            hi = min(sides.clip_hi[i], x[i] + radius)
            if not lo < hi:
                continue

            def f(t, i=i):
                xt = x.copy()
                xt[i] = t
                return sides.penalty(xt)

            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-12})
            if res.fun < f(x[i]):
                x[i] = res.x
    return x


def vcm_sdp_lower(dataset: Dataset, scheme: RelaxationScheme,
                  sdp_options: SdpOptions | None = None,
                  solver_options: SolverOptions | None = None) -> tuple[float, VcmDual]:
    """Certified lower bound via the lifted relaxation.

    Zero is always valid, so the certified side is clipped at zero; a value
    above zero proves inconsistency for any relaxation cheaper than it.
    """
    problem, var_labels, row_labels = build_vcm_problem(dataset, scheme, sdp_options)
    sol = solve_sdp(problem, solver_options or _MEASURE_SOLVER)
    dual = VcmDual(conic=sol, var_labels=var_labels, row_labels=row_labels)
    value = sol.dual_objective if math.isfinite(sol.dual_objective) else math.nan
    if math.isfinite(value):
        value = max(0.0, value)
    return value, dual


def vcm(dataset: Dataset, scheme: RelaxationScheme,
        options: SearchOptions | None = None,
        sdp_options: SdpOptions | None = None,
        solver_options: SolverOptions | None = None) -> VcmResult:
    """Both sides: local relaxations with witness plus the certified lower bound."""
    result = vcm_local(dataset, scheme, options)
    lower, dual = vcm_sdp_lower(dataset, scheme, sdp_options, solver_options)
    return replace(result, value_lower=lower, status_lower=dual.conic.status,
                   lower_dual=dual)


@dataclass
class RelaxedDataset:
    dataset: Dataset
    warnings: list[str] = field(default_factory=list)


def apply_relaxations(dataset: Dataset, result: VcmResult) -> RelaxedDataset:
    """Expand the bounds by the coefficient-scaled relaxations.

    The witness satisfies every expanded constraint, so the relaxed dataset
    is consistent by construction.  Expanding parameter bounds invalidates
    any surrogate fit performed on the original box; a warning records that.
    """
    scheme = result.scheme
    qois = tuple(
        replace(q,
                lower=q.lower - scheme.R_L[e] * result.delta_L[e],
                upper=q.upper + scheme.R_U[e] * result.delta_U[e])
        for e, q in enumerate(dataset.qois)
    )
    box = dataset.box
    new_box = replace(
        box,
        lower=box.lower - scheme.r_l * result.delta_l,
        upper=box.upper + scheme.r_u * result.delta_u,
    )
    facets = np.array(dataset.facets)
    for j in range(dataset.n_facets):
        facets[j, 0] -= scheme.r_facets[j] * result.delta_facets[j]
    warnings = []
    if np.any(scheme.r_l * result.delta_l > 0) or np.any(scheme.r_u * result.delta_u > 0):
        warnings.append(
            "parameter bounds were expanded; surrogate models fit on the original "
            "box should be refit before reusing downstream results"
        )
    relaxed = replace(dataset, box=new_box, qois=qois, facets=facets,
                      name=dataset.name + "_relaxed")
    return RelaxedDataset(dataset=relaxed, warnings=warnings)


@dataclass
class StructureReport:
    both_bounds: list[str] = field(default_factory=list)
    slack_at_relaxed: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.both_bounds and not self.slack_at_relaxed

    def __bool__(self) -> bool:
        return self.ok


def check_structure(dataset: Dataset, result: VcmResult, tol: float = 1e-6
                    ) -> StructureReport:
    """Verify the two local-optimality signatures of a relaxation vector:
    no doubly-relaxed interval, and equality at every relaxed bound."""
    report = StructureReport()
    nz = result.nonzero_tol(dataset)
    z = np.concatenate(([1.0], result.x_witness))
    scheme = result.scheme
    for e, q in enumerate(dataset.qois):
        if min(result.delta_L[e], result.delta_U[e]) > nz[e]:
            report.both_bounds.append(q.name)
        m = float(z @ q.model.coeff @ z)
        scale = max(1.0, abs(q.upper), abs(q.lower))
        if result.delta_U[e] > nz[e]:
            target = q.upper + scheme.R_U[e] * result.delta_U[e]
            if abs(m - target) > tol * scale:
                report.slack_at_relaxed.append(f"{q.name}:upper")
        if result.delta_L[e] > nz[e]:
            target = q.lower - scheme.R_L[e] * result.delta_L[e]
            if abs(m - target) > tol * scale:
                report.slack_at_relaxed.append(f"{q.name}:lower")
    for i in range(dataset.n):
        x_i = result.x_witness[i]
        scale = max(1.0, abs(x_i))
        if result.delta_u[i] > 1e-6:
            target = dataset.box.upper[i] + scheme.r_u[i] * result.delta_u[i]
            if abs(x_i - target) > tol * scale:
                report.slack_at_relaxed.append(f"{dataset.param_names[i]}:upper")
        if result.delta_l[i] > 1e-6:
            target = dataset.box.lower[i] - scheme.r_l[i] * result.delta_l[i]
            if abs(x_i - target) > tol * scale:
                report.slack_at_relaxed.append(f"{dataset.param_names[i]}:lower")
    for j in range(dataset.n_facets):
        if result.delta_facets[j] > 1e-6:
            val = float(dataset.facets[j] @ z)
            target = scheme.r_facets[j] * result.delta_facets[j]
            if abs(val - target) > tol:
                report.slack_at_relaxed.append(f"facet{j}")
    return report


@dataclass
class SupportResult:
    count: int
    supports: list[tuple[tuple, ...]]
    certainty: str  # exact | upper_bound
    total_bounds: int


def vcm_exact_support(dataset: Dataset, scheme: RelaxationScheme, max_support: int,
                      options: SearchOptions | None = None,
                      solver_options: SolverOptions | None = None,
                      enumeration_budget: int = 10**6) -> SupportResult:
    """Smallest number of freed bounds that restores feasibility.

    Enumerates subsets of the non-null bounds by increasing cardinality; a
    subset succeeds when dropping exactly those bounds (all others hard)
    leaves a feasible parameter vector.  All-linear datasets decide
    feasibility by LP, making the count exact; quadratic ones use the
    multi-start search and the count is an upper bound.
    """
    options = options or SearchOptions()
    sides = _Sides(dataset, scheme)
    free_idx = [s for s in range(len(sides.labels)) if sides.soft[s]]
    total = len(free_idx)
    if math.comb(total, max_support) > enumeration_budget:
        raise ValueError(
            f"enumeration budget exceeded: C({total}, {max_support}) > "
            f"{enumeration_budget}"
        )
    all_linear = bool(np.all(sides.quad == 0.0))

    def feasible_without(dropped: tuple[int, ...]) -> bool:
        keep = [s for s in range(len(sides.labels)) if s not in dropped]
        if not keep:
            return True
        if all_linear:
            return _linear_feasible(sides, keep, solver_options)
        return _search_feasible(dataset, sides, keep, options)

    hits: list[tuple[tuple, ...]] = []
    for size in range(0, max_support + 1):
        for combo in itertools.combinations(free_idx, size):
            if feasible_without(combo):
                hits.append(tuple(sides.labels[s] for s in combo))
        if hits:
            return SupportResult(count=size, supports=hits,
                                 certainty="exact" if all_linear else "upper_bound",
                                 total_bounds=total)
    return SupportResult(count=-1, supports=[], certainty="none", total_bounds=total)


def _linear_feasible(sides: _Sides, keep: list[int], solver_options) -> bool:
    """min t s.t. violation_s(x) <= t for kept rows; feasible iff t* <= 0."""
    n = sides.clip_lo.size
    consts = sides.mats[keep][:, 0, 0]
    lins = 2.0 * sides.mats[keep][:, 1:, 0]
    k = len(keep)
    # min t s.t. lin @ x - t <= -const, with x and t unrestricted
    prob = ConicProblem.lp(c=np.zeros(0), a_ub=np.zeros((k, 0)), b_ub=-consts,
                           c_free=np.concatenate([np.zeros(n), [1.0]]),
                           a_ub_free=np.hstack([lins, -np.ones((k, 1))]))
    sol = solve_lp(prob, solver_options)
    if sol.status == "dual_infeasible":
        return True  # t unbounded below: strictly feasible directions exist
    if not sol.optimal:
        return False
    return sol.primal_objective <= _HARD_TOL


def _search_feasible(dataset: Dataset, sides: _Sides, keep: list[int],
                     options: SearchOptions) -> bool:
    slo, shi = dataset.box.sampling_bounds(options.sample_fallback)
    sampler = qmc.LatinHypercube(d=dataset.n, seed=options.seed)
    starts = qmc.scale(sampler.random(max(8, options.starts // 2)), slo, shi)
    mats = sides.mats[keep]
    lin = 2.0 * mats[:, 1:, 0]
    quad = 2.0 * mats[:, 1:, 1:]

    def worst(x):
        z = np.concatenate(([1.0], x))
        return float(np.max(np.einsum("i,sij,j->s", z, mats, z)))

    for x0 in starts:
        res = optimize.minimize(
            lambda x: _softmax_violation(x, mats, lin, quad),
            x0, jac=True, method="L-BFGS-B", options={"maxiter": 150},
        )
        candidates = [res.x]
        v = np.concatenate(([1.0], res.x))
        if worst(res.x) > 0:
            slsqp = optimize.minimize(
                lambda x: 0.0, res.x, method="SLSQP",
                constraints=[{"type": "ineq",
                              "fun": lambda x: -np.einsum(
                                  "i,sij,j->s", np.concatenate(([1.0], x)), mats,
                                  np.concatenate(([1.0], x)))}],
                options={"maxiter": 100},
            )
            candidates.append(slsqp.x)
        for x in candidates:
            if worst(x) <= _HARD_TOL:
                return True
    return False


def _softmax_violation(x, mats, lin, quad, beta: float = 32.0):
    z = np.concatenate(([1.0], x))
    v = np.einsum("i,sij,j->s", z, mats, z)
    shift = v.max()
    wts = np.exp(beta * (v - shift))
    total = wts.sum()
    val = shift + math.log(total) / beta
    grad = (wts / total) @ (lin + quad @ x)
    return val, grad
