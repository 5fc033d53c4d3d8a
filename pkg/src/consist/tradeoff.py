"""Trade-off scans between two relaxable bounds.

With every other bound frozen, sampling relaxation-coefficient directions
(r1, r2) over the positive quadrant and recording the optimal effective
expansions (r1 d1, r2 d2) traces the frontier of cheapest repairs between
the two bounds.  Each sample's certified lower bound also rules out a
half-plane: expansions (y1, y2) with y1/r1 + y2/r2 below the bound cannot
restore consistency, so the union of those half-planes is a certified
infeasible region under the frontier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._assembly import SdpOptions
from .conic import SolverOptions
from .dataset import Dataset, RelaxationScheme, build_scheme
from .scalar import SearchOptions
from .vector import NullInfeasibleError, vcm_local, vcm_sdp_lower

__all__ = ["BoundRef", "TradeoffPoint", "TradeoffScan", "tradeoff_scan"]

_KINDS = ("qoi_lower", "qoi_upper", "param_lower", "param_upper", "facet")


@dataclass(frozen=True)
class BoundRef:
    """One relaxable bound: kind + QOI/parameter name (or facet index)."""

    kind: str
    name: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown bound kind '{self.kind}'; expected one of {_KINDS}")

    def key(self) -> str:
        return f"{self.kind}:{self.name}"


@dataclass
class TradeoffPoint:
    r1: float
    r2: float
    d1: float
    d2: float
    eff1: float
    eff2: float
    rvcm_lower: float
    feasible: bool
    note: str = ""


@dataclass
class TradeoffScan:
    bounds: tuple[BoundRef, BoundRef]
    points: list[TradeoffPoint]
    infeasible_halfplanes: list[tuple[float, float, float]] = field(default_factory=list)
    """(1/r1, 1/r2, bound): expansions y >= 0 with y1/r1 + y2/r2 < bound are
    certified infeasible."""

    def in_infeasible_region(self, y1: float, y2: float, tol: float = 1e-6) -> bool:
        return any(c1 * y1 + c2 * y2 < bound - tol
                   for c1, c2, bound in self.infeasible_halfplanes)


def _pair_deltas(dataset: Dataset, result, pair: tuple[BoundRef, BoundRef]):
    out = []
    for ref in pair:
        if ref.kind == "qoi_lower":
            out.append(result.delta_L[dataset.qoi_index(ref.name)])
        elif ref.kind == "qoi_upper":
            out.append(result.delta_U[dataset.qoi_index(ref.name)])
        elif ref.kind == "param_lower":
            out.append(result.delta_l[dataset.param_index(ref.name)])
        elif ref.kind == "param_upper":
            out.append(result.delta_u[dataset.param_index(ref.name)])
        else:
            out.append(result.delta_facets[int(ref.name)])
    return out


def tradeoff_scan(dataset: Dataset, bound_pair: tuple[BoundRef, BoundRef],
                  n_samples: int = 64, seed: int = 0,
                  options: SearchOptions | None = None,
                  sdp_options: SdpOptions | None = None,
                  solver_options: SolverOptions | None = None) -> TradeoffScan:
    """Scan coefficient directions for one pair of bounds, all others frozen.

    Directions are evenly spaced on the positive quadrant arc plus the two
    axis cases; per-sample failures (for instance an axis case whose single
    relaxable bound cannot restore feasibility) are recorded and skipped.
    """
    a, b = bound_pair
    if a.key() == b.key():
        raise ValueError("the two bounds of a trade-off scan must differ")
    options = options or SearchOptions(starts=12, seed=seed)
    base = build_scheme(dataset, "null", "null")

    thetas = [math.pi / 2 * (k + 1) / (n_samples + 1) for k in range(n_samples)]
    directions = [(1.0, 0.0), (0.0, 1.0)] + [(math.cos(t), math.sin(t)) for t in thetas]

    points: list[TradeoffPoint] = []
    halfplanes: list[tuple[float, float, float]] = []
    for r1, r2 in directions:
        scheme = base.with_overrides(dataset, {a.key(): r1, b.key(): r2})
        try:
            local = vcm_local(dataset, scheme, options)
            lower, dual = vcm_sdp_lower(dataset, scheme, sdp_options, solver_options)
            if not dual.optimal:
                lower = 0.0  # only an optimal certified bound may cut the plane
            d1, d2 = _pair_deltas(dataset, local, bound_pair)
            points.append(TradeoffPoint(
                r1=r1, r2=r2, d1=float(d1), d2=float(d2),
                eff1=float(r1 * d1), eff2=float(r2 * d2),
                rvcm_lower=float(lower), feasible=True,
            ))
            if lower > 1e-9 and r1 > 0.0 and r2 > 0.0:
                halfplanes.append((1.0 / r1, 1.0 / r2, float(lower)))
        except NullInfeasibleError:
            points.append(TradeoffPoint(
                r1=r1, r2=r2, d1=math.nan, d2=math.nan, eff1=math.nan,
                eff2=math.nan, rvcm_lower=math.nan, feasible=False,
                note="no feasible point under this pair alone",
            ))
    return TradeoffScan(bounds=(a, b), points=points,
                        infeasible_halfplanes=halfplanes)
