"""Error recovery study for linear constraint systems.

Starting from a feasible system A x <= b, an error vector t of 0/1 entries
tightens it to A x <= b - alpha t until infeasible.  The weighted 1-norm
recovery

    minimize ||delta||_1  subject to  A x <= b - alpha t + diag(r) delta,
    delta >= 0

is solved exactly by LP, and the recovered support is compared against the
injected one through two ratios: phi_E, the fraction of injected errors
flagged, and phi_delta, the fraction of flags that are injected errors.
Random trials quantify how reliably sparse recovery identifies the culprit
rows; a fixed two-row instance shows it can be fooled for every error
magnitude until the coefficients r reweight the relaxation costs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem, ConicSolution, SolverOptions, solve_lp

__all__ = [
    "TrialInstance",
    "RatioPair",
    "LinearVcmResult",
    "TrialConfig",
    "TrialStatistics",
    "linear_vcm",
    "feasible_system",
    "counterexample_instance",
    "phi_ratios",
    "make_trial",
    "run_trials",
]

_LP_OPTIONS = SolverOptions(max_iter=100)


@dataclass(frozen=True, eq=False)
class TrialInstance:
    """One tightened system: A x <= b - alpha t."""

    A: np.ndarray
    b: np.ndarray
    t: np.ndarray
    alpha: float
    seed: int = -1

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).ravel())

    @property
    def b_alpha(self) -> np.ndarray:
        return self.b - self.alpha * self.t

    @property
    def n_errors(self) -> int:
        return int(np.sum(self.t != 0))

    @property
    def consistent_warning(self) -> bool:
        """True when the tightened system is still feasible (no recovery to do)."""
        return feasible_system(self.A, self.b_alpha)


@dataclass(frozen=True)
class RatioPair:
    phi_E: float
    phi_delta: float


@dataclass
class LinearVcmResult:
    delta: np.ndarray
    x: np.ndarray
    value: float
    status: str
    solution: ConicSolution


def _free_lp(c_x: np.ndarray, c_rest: np.ndarray, a_x: np.ndarray,
             a_rest: np.ndarray, b_ub: np.ndarray,
             options: SolverOptions) -> ConicSolution:
    """LP with unrestricted x and nonnegative remaining variables."""
    prob = ConicProblem.lp(c=c_rest, a_ub=a_rest, b_ub=b_ub,
                           c_free=c_x, a_ub_free=a_x)
    return solve_lp(prob, options)


def linear_vcm(A: np.ndarray, b: np.ndarray, r: np.ndarray | None = None,
               solver_options: SolverOptions | None = None) -> LinearVcmResult:
    """Exact minimum-1-norm relaxation of A x <= b with weights r (default 1).

    Rows with r_i = 0 stay hard; if they are jointly infeasible the result
    status is 'primal_infeasible' with a Farkas certificate attached.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m, n = A.shape
    r = np.ones(m) if r is None else np.asarray(r, dtype=float).ravel()
    if r.size != m or np.any(r < 0):
        raise ValueError(f"coefficients must be {m} nonnegative values")
    sol = _free_lp(np.zeros(n), np.ones(m), A, -np.diag(r), b,
                   solver_options or _LP_OPTIONS)
    if not sol.optimal:
        return LinearVcmResult(delta=np.full(m, math.nan), x=np.full(n, math.nan),
                               value=math.nan, status=sol.status, solution=sol)
    x = np.array(sol.free)
    delta = np.maximum(np.diag(sol.X), 0.0)
    return LinearVcmResult(delta=delta, x=x, value=float(np.sum(delta)),
                           status=sol.status, solution=sol)


def feasible_system(A: np.ndarray, b: np.ndarray,
                    solver_options: SolverOptions | None = None,
                    tol: float = 1e-9) -> bool:
    """LP feasibility of {x : A x <= b} via min over x of the worst violation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m, n = A.shape
    # min tau s.t. A x - tau <= b, with both x and tau unrestricted
    sol = _free_lp(np.concatenate([np.zeros(n), [1.0]]), np.zeros(0),
                   np.hstack([A, -np.ones((m, 1))]), np.zeros((m, 0)), b,
                   solver_options or SolverOptions(max_iter=60))
    if sol.status == "dual_infeasible":
        return True  # worst violation unbounded below
    good = sol.optimal or (sol.primal_residual <= 1e-7 and sol.rel_gap <= 1e-7)
    if not good:
        raise RuntimeError(f"feasibility probe failed with status '{sol.status}'")
    return sol.primal_objective <= tol


def counterexample_instance(alpha: float) -> TrialInstance:
    """The fixed two-row system whose sparse recovery always blames row 2.

    The error sits on row 1, and the tightened system is infeasible for any
    alpha > 2.5; unit-weight recovery still relaxes row 2 only, because the
    row-1 slope makes that the cheaper escape for every error size.
    """
    return TrialInstance(
        A=np.array([[1.5], [-1.0]]),
        b=np.array([1.0, 1.0]),
        t=np.array([1.0, 0.0]),
        alpha=float(alpha),
    )


def phi_ratios(delta_star: np.ndarray, t: np.ndarray, zero_tol: float = 1e-7
               ) -> RatioPair:
    """Support-overlap ratios between the recovery and the injected errors."""
    delta_star = np.asarray(delta_star, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    supp_d = set(np.flatnonzero(np.abs(delta_star) > zero_tol).tolist())
    supp_t = set(np.flatnonzero(t != 0).tolist())
    n_e = len(supp_t)
    if n_e < 1:
        raise ValueError("the error vector must have at least one nonzero entry")
    hit = len(supp_d & supp_t)
    phi_e = hit / n_e
    phi_d = hit / len(supp_d) if supp_d else 0.0
    return RatioPair(phi_E=phi_e, phi_delta=phi_d)


@dataclass(frozen=True)
class TrialConfig:
    m: int = 50
    n: int = 15
    n_E: int = 1
    trials: int = 1000
    alpha_policy: tuple = ("bisect", 5.0)  # or ("fixed", value)
    seed: int = 0
    slack_range: tuple[float, float] = (0.1, 1.1)
    zero_tol: float = 1e-7
    coefficients: np.ndarray | None = None  # default all-ones
    threads: int = 1
    bisect_rel_tol: float = 0.02
    max_doublings: int = 30


def make_trial(seed: int, m: int = 50, n: int = 15, n_E: int = 1,
               alpha_policy: tuple = ("bisect", 5.0),
               slack_range: tuple[float, float] = (0.1, 1.1),
               max_doublings: int = 30, bisect_rel_tol: float = 0.02
               ) -> TrialInstance | None:
    """Draw one random tightened system; None when the policy cannot reach
    infeasibility within its budget.

    A has uniform [-1, 1] entries; b = A x0 + s with x0 uniform in [-1, 1]
    and slacks s uniform in slack_range, so the base system is feasible by
    construction.  Under the bisect policy alpha is the infeasibility
    threshold (located by doubling and bisection with LP feasibility
    checks) times the policy factor.
    """
    if not (m > n >= 1):
        raise ValueError(f"need m > n >= 1, got m={m}, n={n}")
    if not (1 <= n_E <= m):
        raise ValueError(f"need 1 <= n_E <= m, got n_E={n_E}")
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, (m, n))
    x0 = rng.uniform(-1.0, 1.0, n)
    s = rng.uniform(slack_range[0], slack_range[1], m)
    b = A @ x0 + s
    t = np.zeros(m)
    t[rng.choice(m, size=n_E, replace=False)] = 1.0

    mode, value = alpha_policy
    if mode == "fixed":
        inst = TrialInstance(A=A, b=b, t=t, alpha=float(value), seed=seed)
        return None if inst.consistent_warning else inst
    if mode != "bisect":
        raise ValueError(f"unknown alpha policy '{mode}'")

    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if not feasible_system(A, b - hi * t):
            break
        lo, hi = hi, 2.0 * hi
    else:
        return None
    while hi - lo > bisect_rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible_system(A, b - mid * t):
            lo = mid
        else:
            hi = mid
    alpha = float(value) * hi
    inst = TrialInstance(A=A, b=b, t=t, alpha=alpha, seed=seed)
    if value >= 1.0:
        return inst  # tightening is monotone in alpha, still infeasible
    return None if inst.consistent_warning else inst


@dataclass
class TrialRow:
    trial: int
    phi_E: float
    phi_delta: float
    alpha: float
    skipped: bool


@dataclass
class TrialStatistics:
    config: TrialConfig
    rows: list[TrialRow]
    hist_phi_E: np.ndarray      # 20 bins over [0, 1]
    hist_phi_delta: np.ndarray
    bin_edges: np.ndarray

    @property
    def skipped(self) -> int:
        return sum(r.skipped for r in self.rows)

    @property
    def completed(self) -> int:
        return len(self.rows) - self.skipped

    def _vals(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.rows if not r.skipped])

    @property
    def fraction_perfect(self) -> float:
        pe, pd = self._vals("phi_E"), self._vals("phi_delta")
        if pe.size == 0:
            return math.nan
        return float(np.mean((pe >= 1.0 - 1e-9) & (pd >= 1.0 - 1e-9)))

    @property
    def median_phi_E(self) -> float:
        v = self._vals("phi_E")
        return float(np.median(v)) if v.size else math.nan

    @property
    def median_phi_delta(self) -> float:
        v = self._vals("phi_delta")
        return float(np.median(v)) if v.size else math.nan

    def summary(self) -> dict:
        return {
            "trials": len(self.rows),
            "completed": self.completed,
            "skipped": self.skipped,
            "fraction_perfect": self.fraction_perfect,
            "median_phi_E": self.median_phi_E,
            "median_phi_delta": self.median_phi_delta,
        }


def _one_trial(index: int, config: TrialConfig) -> TrialRow:
    inst = make_trial(
        seed=config.seed + index, m=config.m, n=config.n, n_E=config.n_E,
        alpha_policy=config.alpha_policy, slack_range=config.slack_range,
        max_doublings=config.max_doublings, bisect_rel_tol=config.bisect_rel_tol,
    )
    if inst is None:
        return TrialRow(index, math.nan, math.nan, math.nan, True)
    res = linear_vcm(inst.A, inst.b_alpha, config.coefficients)
    if res.status != "optimal":
        return TrialRow(index, math.nan, math.nan, inst.alpha, True)
    ratios = phi_ratios(res.delta, inst.t, config.zero_tol)
    return TrialRow(index, ratios.phi_E, ratios.phi_delta, inst.alpha, False)


def run_trials(config: TrialConfig) -> TrialStatistics:
    """Run the configured batch; per-trial seeds are seed + trial index, so
    results are independent of thread count and identical across reruns."""
    indices = range(config.trials)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(lambda i: _one_trial(i, config), indices))
    else:
        rows = [_one_trial(i, config) for i in indices]
    edges = np.linspace(0.0, 1.0, 21)
    pe = np.array([r.phi_E for r in rows if not r.skipped])
    pd = np.array([r.phi_delta for r in rows if not r.skipped])
    hist_e, _ = np.histogram(pe, bins=edges)
    hist_d, _ = np.histogram(pd, bins=edges)
    return TrialStatistics(config=config, rows=rows, hist_phi_E=hist_e,
                           hist_phi_delta=hist_d, bin_edges=edges)
