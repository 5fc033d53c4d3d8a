"""Assembly of the lifted conic relaxations for the consistency measures.

Both relaxations lift a vector v to the rank-one matrix [1; v][1; v]' and
drop the rank constraint, keeping Z(1,1) = 1 and Z >= 0:

  * scalar side: v = [x; gamma], maximize the gamma entry Z[d-1, 0] subject
    to the lifted QOI rows trace(Q_side Z) + w_e Z[d-1, 0] <= 0 and facet
    rows a @ Z[:n+1, 0] <= 0;
  * vector side: v = [x; relaxations], minimize the sum of the relaxation
    entries Y[idx, 0] subject to lifted rows with the bound coefficients and
    sign constraints Y[idx, 0] >= 0.  Null coefficients carry no variable,
    leaving the bound hard.

The relaxations are tightened by lifted pairwise products of the facet rows,
(a_i @ [1; v])(a_j @ [1; v]) >= 0; with relaxation variables the facet vector
extends to [a_i; -c_i e_idx] and the same outer-product form applies.

Lifted diagonal entries corresponding to gamma^2 or to squared relaxations
appear in no constraint, so the optimal face is unbounded along them and the
dual has empty interior.  A vanishing diagonal regularization (flat_reg)
selects the bounded representative and restores a central path; the induced
objective bias is O(flat_reg).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conic import ConicProblem
from .dataset import Dataset, PerturbationVector, RelaxationScheme

__all__ = ["SdpOptions", "facet_rows", "quad_rows", "product_pairs",
           "build_scm_problem", "build_vcm_problem"]

QOI_UPPER = "qoi_upper"
QOI_LOWER = "qoi_lower"
PARAM_UPPER = "param_upper"
PARAM_LOWER = "param_lower"
FACET = "facet"


@dataclass(frozen=True)
class SdpOptions:
    pair_cap: int = 40        # all facet pairs when the facet count is at most this
    extra_pairs: int = 200    # random pairs kept beyond the cap
    pair_seed: int = 0
    flat_reg: float = 1e-10


def facet_rows(dataset: Dataset, rho: PerturbationVector | None = None
               ) -> list[tuple[tuple, np.ndarray]]:
    """Linear rows a @ [1; x] <= 0: box bounds first (lower, upper per
    parameter, finite sides only), then extra facets."""
    n = dataset.n
    rho_l = rho.rho_l if rho is not None else np.zeros(n)
    rho_u = rho.rho_u if rho is not None else np.zeros(n)
    rows = []
    for i in range(n):
        lo = dataset.box.lower[i]
        hi = dataset.box.upper[i]
        if math.isfinite(lo):
            a = np.zeros(n + 1)
            a[0] = lo - rho_l[i]
            a[i + 1] = -1.0
            rows.append(((PARAM_LOWER, i), a))
        if math.isfinite(hi):
            a = np.zeros(n + 1)
            a[0] = -hi - rho_u[i]
            a[i + 1] = 1.0
            rows.append(((PARAM_UPPER, i), a))
    for j in range(dataset.n_facets):
        rows.append(((FACET, j), np.array(dataset.facets[j])))
    return rows


def quad_rows(dataset: Dataset, rho: PerturbationVector | None = None
              ) -> list[tuple[tuple, np.ndarray, float]]:
    """Lifted QOI rows (label, Q, w) meaning [1;x]' Q [1;x] <= -w * gamma.

    Bounds are folded into the constant entry; w is the original half width
    even under perturbation, so the tightening stays normalized to the
    unperturbed intervals.
    """
    n = dataset.n
    rho_u = rho.rho_U if rho is not None else np.zeros(dataset.N)
    rho_l = rho.rho_L if rho is not None else np.zeros(dataset.N)
    rows = []
    for e, q in enumerate(dataset.qois):
        w = q.half_width
        if math.isfinite(q.upper):
            m = np.array(q.model.coeff)
            m[0, 0] -= q.upper + rho_u[e]
            rows.append(((QOI_UPPER, e), m, w))
        if math.isfinite(q.lower):
            m = -np.array(q.model.coeff)
            m[0, 0] += q.lower - rho_l[e]
            rows.append(((QOI_LOWER, e), m, w))
    return rows


def product_pairs(labels: list[tuple], options: SdpOptions) -> list[tuple[int, int]]:
    """Facet index pairs whose lifted products are kept.

    All pairs up to the cap; beyond it, the self pairs, the (lower, upper)
    pair of each box parameter, and a seeded random selection.
    """
    m = len(labels)
    if m <= options.pair_cap:
        return [(i, j) for i in range(m) for j in range(i, m)]
    pairs = [(i, i) for i in range(m)]
    lower_of = {lab[1]: i for i, lab in enumerate(labels) if lab[0] == PARAM_LOWER}
    upper_of = {lab[1]: i for i, lab in enumerate(labels) if lab[0] == PARAM_UPPER}
    for p, i in lower_of.items():
        if p in upper_of:
            pairs.append((min(i, upper_of[p]), max(i, upper_of[p])))
    chosen = set(pairs)
    rng = np.random.default_rng(options.pair_seed)
    budget = options.extra_pairs
    tries = 0
    while budget > 0 and tries < 50 * options.extra_pairs:
        i, j = sorted(rng.integers(0, m, size=2))
        tries += 1
        if (i, j) not in chosen:
            chosen.add((i, j))
            pairs.append((int(i), int(j)))
            budget -= 1
    return pairs


def _sym_outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return 0.5 * (np.outer(u, v) + np.outer(v, u))


def build_scm_problem(dataset: Dataset, rho: PerturbationVector | None = None,
                      options: SdpOptions | None = None,
                      include_products: bool = True):
    """Lifted upper-bound problem for the scalar measure.

    Returns (problem, labels) with labels aligned to the inequality rows;
    the optimal value of the original maximization is minus the conic
    optimum.  Without the product rows the relaxation coincides with the
    plain Lagrangian dual, whose multipliers give valid affine bounds in
    the perturbations (the product rows move bilinearly with them).
    """
    options = options or SdpOptions()
    n = dataset.n
    d = n + 2
    e0 = np.zeros(d)
    e0[0] = 1.0
    eg = np.zeros(d)
    eg[-1] = 1.0

    objective = -_sym_outer(eg, e0) + options.flat_reg * np.outer(eg, eg)
    e00 = np.zeros((d, d))
    e00[0, 0] = 1.0

    ineqs: list[tuple[np.ndarray, float]] = []
    labels: list[tuple] = []
    for label, q, w in quad_rows(dataset, rho):
        g = np.zeros((d, d))
        g[: n + 1, : n + 1] = q
        g += w * _sym_outer(eg, e0)
        ineqs.append((g, 0.0))
        labels.append(label)

    rows = facet_rows(dataset, rho)
    lifted = []
    for label, a in rows:
        v = np.zeros(d)
        v[: n + 1] = a
        lifted.append(v)
        ineqs.append((_sym_outer(v, e0), 0.0))
        labels.append(label)
    if include_products:
        for i, j in product_pairs([lab for lab, _ in rows], options):
            ineqs.append((-_sym_outer(lifted[i], lifted[j]), 0.0))
            labels.append(("product", i, j))

    problem = ConicProblem(blocks=(d,), objective=objective,
                           equalities=[(e00, 1.0)], inequalities=ineqs)
    return problem, labels


def build_vcm_problem(dataset: Dataset, scheme: RelaxationScheme,
                      options: SdpOptions | None = None):
    """Lifted lower-bound problem for the vector measure.

    Returns (problem, var_labels, row_labels).  var_labels names the
    relaxation variable behind each lifted coordinate n+1+k; bounds with
    null coefficients have no variable and stay hard.
    """
    options = options or SdpOptions()
    scheme.check_shape(dataset)
    n = dataset.n

    quads = quad_rows(dataset)
    facets = facet_rows(dataset)

    def coefficient(label: tuple) -> float:
        kind, idx = label[0], label[1]
        return {
            QOI_UPPER: lambda: scheme.R_U[idx],
            QOI_LOWER: lambda: scheme.R_L[idx],
            PARAM_UPPER: lambda: scheme.r_u[idx],
            PARAM_LOWER: lambda: scheme.r_l[idx],
            FACET: lambda: scheme.r_facets[idx],
        }[kind]()

    var_labels: list[tuple] = []
    var_coef: list[float] = []
    var_of: dict[tuple, int] = {}
    for label, *_ in quads + facets:
        c = float(coefficient(label))
        if c > 0.0:
            var_of[label] = len(var_labels)
            var_labels.append(label)
            var_coef.append(c)

    d = 1 + n + len(var_labels)
    e0 = np.zeros(d)
    e0[0] = 1.0

    def evar(label: tuple) -> np.ndarray:
        v = np.zeros(d)
        v[1 + n + var_of[label]] = 1.0
        return v

    objective = np.zeros((d, d))
    for label in var_labels:
        ev = evar(label)
        objective += _sym_outer(ev, e0) + options.flat_reg * np.outer(ev, ev)

    e00 = np.zeros((d, d))
    e00[0, 0] = 1.0

    ineqs: list[tuple[np.ndarray, float]] = []
    row_labels: list[tuple] = []
    for label, q, _w in quads:
        g = np.zeros((d, d))
        g[: n + 1, : n + 1] = q
        if label in var_of:
            g -= coefficient(label) * _sym_outer(evar(label), e0)
        ineqs.append((g, 0.0))
        row_labels.append(label)

    extended = []
    for label, a in facets:
        v = np.zeros(d)
        v[: n + 1] = a
        if label in var_of:
            v -= coefficient(label) * evar(label)
        extended.append(v)
        ineqs.append((_sym_outer(v, e0), 0.0))
        row_labels.append(label)
    for i, j in product_pairs([lab for lab, _ in facets], options):
        ineqs.append((-_sym_outer(extended[i], extended[j]), 0.0))
        row_labels.append(("product", i, j))
    for label in var_labels:
        ineqs.append((-_sym_outer(evar(label), e0), 0.0))
        row_labels.append(("sign",) + label)

    problem = ConicProblem(blocks=(d,), objective=objective,
                           equalities=[(e00, 1.0)], inequalities=ineqs)
    return problem, var_labels, row_labels
