"""Scalar consistency: how much can every QOI interval tighten at once?

The measure is the optimum of

    maximize   gamma
    over       x in the (perturbed) box, extra facets respected
    subject to L_e + w_e gamma <= M_e(x) <= U_e - w_e gamma,

with w_e the half width of interval e (1 for one-sided constraints), i.e.
the largest uniform normalized tightening that keeps some parameter vector
feasible.  Positive values certify consistency, and a negative upper bound
certifies inconsistency.

Two sides are computed: a multi-start local maximization of the exact
min-margin objective (a lower bound with a witness), and the lifted conic
relaxation (a certified upper bound).  The dual multipliers of the upper
bound, scaled by the corresponding interval widths, bound the measure's
response to bound perturbations from above; these are the sensitivities
used to rank constraints when hunting for the sources of inconsistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from ._assembly import SdpOptions, build_scm_problem, facet_rows, quad_rows
from .conic import ConicSolution, SolverOptions, solve_sdp
from .dataset import Dataset, PerturbationVector, normalized_slack

__all__ = [
    "SearchOptions",
    "ScmDual",
    "ScmResult",
    "SensitivityEntry",
    "SensitivityReport",
    "RemovalRound",
    "RemovalTrace",
    "scm_local",
    "scm_sdp_upper",
    "scm_perturbed",
    "scm",
    "sensitivities",
    "iterative_scm",
]

_FACET_TOL = 1e-9

# measure-level solves: the acceptance tolerances on values are 1e-6-scale,
# and the degenerate lifted problems bottom out near 1e-8 in double
# precision, so the bound computations target 1e-7
_MEASURE_SOLVER = SolverOptions(feas_tol=1e-7, gap_tol=1e-7)


@dataclass(frozen=True)
class SearchOptions:
    starts: int = 30
    seed: int = 0
    betas: tuple[float, ...] = (4.0, 32.0, 256.0)
    sample_fallback: float = 1.0  # half range used for unbounded parameters


@dataclass
class LocalResult:
    gamma: float
    x: np.ndarray
    all_same_basin: bool


@dataclass
class ScmDual:
    """Upper-bound solve: conic solution plus the row labeling for duals."""

    conic: ConicSolution
    labels: list[tuple]
    dataset: Dataset
    rho: PerturbationVector | None = None

    @property
    def optimal(self) -> bool:
        return self.conic.optimal

    @property
    def has_products(self) -> bool:
        return any(label[0] == "product" for label in self.labels)


@dataclass
class ScmResult:
    gamma_lower: float
    gamma_upper: float
    x_witness: np.ndarray
    dual: ScmDual
    status_lower: str  # ok | single_basin
    status_upper: str  # conic solver status

    @property
    def consistent(self) -> bool | None:
        """True/False when proven either way, None when undetermined."""
        if self.gamma_lower >= 0:
            return True
        if self.status_upper == "optimal" and self.gamma_upper < 0:
            return False
        return None


def _margin_terms(dataset: Dataset, rho: PerturbationVector | None):
    """Per-side matrices P_s with margin_s(x) = [1;x]' P_s [1;x] (>= 0 ok)."""
    mats = []
    for _label, q, w in quad_rows(dataset, rho):
        mats.append(-q / w)
    return np.array(mats)


def _perturbed_box(dataset: Dataset, rho: PerturbationVector | None):
    if rho is None:
        return dataset.box.lower, dataset.box.upper
    return dataset.box.lower - rho.rho_l, dataset.box.upper + rho.rho_u


def _lift(x: np.ndarray) -> np.ndarray:
    return np.concatenate(([1.0], x))


def scm_local(dataset: Dataset, options: SearchOptions | None = None,
              rho: PerturbationVector | None = None) -> LocalResult:
    """Multi-start maximization of min_e margin_e(x) over the box.

    Each start runs a smoothed soft-min ascent (log-sum-exp with increasing
    sharpness) followed by a polish of the exact epigraph problem.  Extra
    facets enter as hard constraints.  Deterministic for a fixed seed; ties
    go to the earliest start.
    """
    options = options or SearchOptions()
    if rho is not None:
        rho.check_shape(dataset)
    n = dataset.n
    mats = _margin_terms(dataset, rho)
    if len(mats) == 0:
        slo, shi = dataset.box.sampling_bounds(options.sample_fallback)
        return LocalResult(math.inf, 0.5 * (slo + shi), True)
    lin = 2.0 * mats[:, 1:, 0]        # margin gradients: lin + 2 quad @ x
    quad = 2.0 * mats[:, 1:, 1:]
    facets = [a for _lab, a in facet_rows(dataset, rho) if _lab[0] == "facet"]
    facets = np.array(facets) if facets else np.zeros((0, n + 1))

    lo, hi = _perturbed_box(dataset, rho)
    slo, shi = np.array(lo), np.array(hi)
    bad = ~np.isfinite(slo)
    slo[bad] = np.where(np.isfinite(shi[bad]), shi[bad] - 2 * options.sample_fallback,
                        -options.sample_fallback)
    bad = ~np.isfinite(shi)
    shi[bad] = slo[bad] + 2 * options.sample_fallback

    def margins(x):
        z = _lift(x)
        return np.einsum("i,sij,j->s", z, mats, z)

    def exact(x):
        if facets.size and np.max(facets @ _lift(x)) > _FACET_TOL:
            return -math.inf
        return float(np.min(margins(x)))

    pen = 1e3

    def smooth_neg(x, beta):
        m = margins(x)
        shift = m.min()
        wts = np.exp(-beta * (m - shift))
        total = wts.sum()
        val = shift - math.log(total) / beta
        grad = (wts / total) @ (lin + quad @ x)
        out_v, out_g = -val, -grad
        if facets.size:
            viol = facets @ _lift(x)
            act = viol > 0
            if np.any(act):
                out_v += pen * float(viol[act] @ viol[act])
                out_g += 2 * pen * (viol[act] @ facets[act, 1:])
        return out_v, out_g

    sampler = qmc.LatinHypercube(d=n, seed=options.seed)
    starts = qmc.scale(sampler.random(options.starts), slo, shi)
    bounds = [(l if math.isfinite(l) else None, u if math.isfinite(u) else None)
              for l, u in zip(lo, hi)]

    best_val = -math.inf
    best_x = starts[0].copy()
    finals = []
    for x0 in starts:
        x = x0
        for beta in options.betas:
            res = optimize.minimize(smooth_neg, x, args=(beta,), jac=True,
                                    method="L-BFGS-B", bounds=bounds,
                                    options={"maxiter": 120})
            x = res.x
        x = _polish_epigraph(x, mats, lin, quad, facets, bounds)
        val = exact(x)
        finals.append(x)
        if val > best_val:
            best_val = val
            best_x = x
    spread = max(float(np.max(np.abs(f - best_x))) for f in finals)
    same = spread <= 1e-6 * (1.0 + float(np.max(np.abs(best_x))))
    return LocalResult(best_val, best_x, same)


def _polish_epigraph(x0, mats, lin, quad, facets, bounds):
    """SLSQP on max gamma s.t. margin_s(x) >= gamma, facets <= 0."""
    n = x0.size
    z0 = _lift(x0)
    g0 = float(np.min(np.einsum("i,sij,j->s", z0, mats, z0)))
    v0 = np.concatenate([x0, [g0]])

    def neg_gamma(v):
        return -v[-1]

    def neg_gamma_grad(v):
        g = np.zeros_like(v)
        g[-1] = -1.0
        return g

    cons = [{
        "type": "ineq",
        "fun": lambda v: np.einsum("i,sij,j->s", _lift(v[:n]), mats, _lift(v[:n])) - v[-1],
        "jac": lambda v: np.hstack([lin + quad @ v[:n], -np.ones((mats.shape[0], 1))]),
    }]
    if facets.size:
        cons.append({
            "type": "ineq",
            "fun": lambda v: -(facets @ _lift(v[:n])),
            "jac": lambda v: np.hstack([-facets[:, 1:], np.zeros((facets.shape[0], 1))]),
        })
    res = optimize.minimize(neg_gamma, v0, jac=neg_gamma_grad, method="SLSQP",
                            bounds=list(bounds) + [(None, None)], constraints=cons,
                            options={"maxiter": 200, "ftol": 1e-12})
    x = res.x[:n] if res.success or np.all(np.isfinite(res.x)) else x0
    # clip back into the box against SLSQP tolerance drift
    for i, (l, u) in enumerate(bounds):
        if l is not None:
            x[i] = max(x[i], l)
        if u is not None:
            x[i] = min(x[i], u)
    return x


def scm_sdp_upper(dataset: Dataset, rho: PerturbationVector | None = None,
                  sdp_options: SdpOptions | None = None,
                  solver_options: SolverOptions | None = None) -> tuple[float, ScmDual]:
    """Certified upper bound via the lifted relaxation; the dual multipliers
    feed the sensitivity report."""
    if rho is not None:
        rho.check_shape(dataset)
    problem, labels = build_scm_problem(dataset, rho, sdp_options)
    sol = solve_sdp(problem, solver_options or _MEASURE_SOLVER)
    dual = ScmDual(conic=sol, labels=labels, dataset=dataset, rho=rho)
    value = -sol.dual_objective if math.isfinite(sol.dual_objective) else math.nan
    return value, dual


def scm_perturbed(dataset: Dataset, rho: PerturbationVector | None = None,
                  options: SearchOptions | None = None,
                  sdp_options: SdpOptions | None = None,
                  solver_options: SolverOptions | None = None) -> ScmResult:
    """Both sides of the measure for a perturbed dataset (rho=None: original).

    Bound shifts follow the sign convention of PerturbationVector (positive
    relaxes); the normalization widths w_e stay those of the original
    intervals.
    """
    local = scm_local(dataset, options, rho)
    upper, dual = scm_sdp_upper(dataset, rho, sdp_options, solver_options)
    if len(dataset.qois) and math.isfinite(local.gamma):
        slack = _slack_under(dataset, local.x, rho)
        gamma_lower = float(np.min(slack))
    else:
        gamma_lower = local.gamma
    return ScmResult(
        gamma_lower=gamma_lower,
        gamma_upper=upper,
        x_witness=local.x,
        dual=dual,
        status_lower="ok" if not local.all_same_basin else "single_basin",
        status_upper=dual.conic.status,
    )


def _slack_under(dataset: Dataset, x, rho: PerturbationVector | None):
    if rho is None:
        return normalized_slack(dataset, x)
    mats = _margin_terms(dataset, rho)
    z = _lift(np.asarray(x, dtype=float))
    per_side = np.einsum("i,sij,j->s", z, mats, z)
    out = np.full(dataset.N, math.inf)
    for (kind, e), m in zip((lab for lab, *_ in quad_rows(dataset, rho)), per_side):
        out[e] = min(out[e], m)
    return out


def scm(dataset: Dataset, options: SearchOptions | None = None,
        sdp_options: SdpOptions | None = None,
        solver_options: SolverOptions | None = None) -> ScmResult:
    return scm_perturbed(dataset, None, options, sdp_options, solver_options)


@dataclass(frozen=True)
class SensitivityEntry:
    kind: str       # qoi_upper | qoi_lower | param_upper | param_lower | facet
    name: str
    sensitivity: float
    multiplier: float


@dataclass
class SensitivityReport:
    entries: list[SensitivityEntry] = field(default_factory=list)
    upper_bound: float = math.nan  # intercept of the affine bound
    exact: bool = True             # False when falling back to a tightened dual

    @property
    def ranked(self) -> list[SensitivityEntry]:
        return sorted(self.entries, key=lambda s: -s.sensitivity)

    def value(self, kind: str, name: str) -> float:
        for s in self.entries:
            if s.kind == kind and s.name == name:
                return s.sensitivity
        raise KeyError(f"no sensitivity entry for {kind}:{name}")

    def per_qoi(self, dataset: Dataset) -> np.ndarray:
        """Max of the two bound sensitivities per QOI, for removal ranking."""
        out = np.zeros(dataset.N)
        for s in self.entries:
            if s.kind in ("qoi_upper", "qoi_lower"):
                e = dataset.qoi_index(s.name)
                out[e] = max(out[e], s.sensitivity)
        return out


def sensitivities(dataset: Dataset, dual: ScmDual) -> SensitivityReport:
    """Scaled dual multipliers: lambda * (interval width) per bound.

    Paired with relative perturbations rho / width, these are the slopes of
    an affine upper bound on the perturbed measure, with the report's
    upper_bound as intercept.  The slopes are only globally valid for the
    product-free relaxation (the product rows move bilinearly with the
    perturbations), so when the supplied dual carries product rows the
    plain relaxation is re-solved here; if that solve fails (for example
    an unbounded one-sided dataset held together only by its products),
    the supplied multipliers are used as-is and the report is marked
    inexact.  Requires an optimal upper-bound solve.
    """
    if not dual.optimal:
        raise ValueError(f"sensitivities need an optimal dual, solver status is "
                         f"'{dual.conic.status}'")
    report = SensitivityReport()
    source = dual
    report.upper_bound = -dual.conic.dual_objective
    if dual.has_products:
        problem, labels = build_scm_problem(dataset, dual.rho, include_products=False)
        basic = solve_sdp(problem, _MEASURE_SOLVER)
        if basic.optimal:
            source = ScmDual(conic=basic, labels=labels, dataset=dataset, rho=dual.rho)
            report.upper_bound = -basic.dual_objective
        else:
            report.exact = False
    lam = source.conic.lam
    for label, mult in zip(source.labels, lam):
        kind = label[0]
        if kind in ("qoi_upper", "qoi_lower"):
            q = dataset.qois[label[1]]
            report.entries.append(SensitivityEntry(
                kind, q.name, float(mult * 2.0 * q.half_width), float(mult)))
        elif kind in ("param_upper", "param_lower"):
            i = label[1]
            width = dataset.box.width[i]
            scale = width if math.isfinite(width) else 1.0
            report.entries.append(SensitivityEntry(
                kind, dataset.param_names[i], float(mult * scale), float(mult)))
        elif kind == "facet":
            report.entries.append(SensitivityEntry(
                kind, f"facet{label[1]}", float(mult), float(mult)))
    return report


@dataclass
class RemovalRound:
    removed: list[str]
    gamma_lower: float
    gamma_upper: float


@dataclass
class RemovalTrace:
    rounds: list[RemovalRound]
    final: Dataset
    consistent: bool

    @property
    def removed(self) -> list[str]:
        return [name for r in self.rounds for name in r.removed]


def iterative_scm(dataset: Dataset, strategy: str = "top_k", k: int = 1,
                  threshold: float = 1e-6, max_rounds: int | None = None,
                  options: SearchOptions | None = None,
                  sdp_options: SdpOptions | None = None,
                  solver_options: SolverOptions | None = None) -> RemovalTrace:
    """Repeatedly drop the most sensitivity-laden QOIs until consistent.

    strategy 'top_k' removes the k highest-ranked QOIs per round;
    'all_nonzero' removes every QOI whose sensitivity exceeds threshold
    times the round maximum.  Ties break toward the lowest QOI index.
    """
    if strategy not in ("top_k", "all_nonzero"):
        raise ValueError(f"unknown strategy '{strategy}'")
    current = dataset
    max_rounds = max_rounds if max_rounds is not None else dataset.N
    rounds: list[RemovalRound] = []
    consistent = False
    for _ in range(max_rounds + 1):
        result = scm(current, options, sdp_options, solver_options)
        if result.gamma_lower >= 0:
            consistent = True
            rounds.append(RemovalRound([], result.gamma_lower, result.gamma_upper))
            break
        if current.N == 0:
            raise RuntimeError("all QOIs removed and the box is still inconsistent")
        if len(rounds) >= max_rounds:
            rounds.append(RemovalRound([], result.gamma_lower, result.gamma_upper))
            break
        per_qoi = sensitivities(current, result.dual).per_qoi(current)
        top = float(np.max(per_qoi))
        order = sorted(range(current.N), key=lambda e: (-per_qoi[e], e))
        if strategy == "top_k":
            chosen = order[: min(k, current.N)]
        else:
            chosen = [e for e in order if per_qoi[e] > threshold * max(top, 1e-300)]
            if not chosen:
                chosen = order[:1]
        chosen_names = [current.qois[e].name for e in chosen]
        keep = tuple(q for e, q in enumerate(current.qois) if e not in set(chosen))
        rounds.append(RemovalRound(chosen_names, result.gamma_lower, result.gamma_upper))
        current = replace(current, qois=keep)
    return RemovalTrace(rounds=rounds, final=current, consistent=consistent)
