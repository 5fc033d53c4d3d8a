"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from consist.dataset import (Dataset, ParameterBox, QoiConstraint, QuadraticModel,
                             load_dataset)

REPO = Path(__file__).resolve().parents[1]
DATASETS = REPO / "datasets"


@pytest.fixture(scope="session")
def golden_dataset() -> Dataset:
    """Two one-sided quadratic constraints + two facets; the scalar conic
    bound proves inconsistency while the vector bound stays at zero."""
    return load_dataset(DATASETS / "sdp_gap.json")


@pytest.fixture(scope="session")
def conflict_1d() -> Dataset:
    """M1 = M2 = x forced into [0.5, 1] and [-1, -0.5]: inconsistent."""
    return load_dataset(DATASETS / "conflict_1d.json")


@pytest.fixture(scope="session")
def single_interval() -> Dataset:
    return load_dataset(DATASETS / "single_interval.json")


def linear_model(coeffs, constant=0.0) -> QuadraticModel:
    return QuadraticModel.from_terms(constant, np.asarray(coeffs, dtype=float))


def scm_conflict_dataset() -> Dataset:
    """M1 = M2 = x with intervals [1, 2] and [-2, -1] on x in [-3, 3].

    Closed form: feasibility of 1 + gamma/2 <= x <= -1 - gamma/2 gives the
    scalar measure -2, attained at x = 0.
    """
    lin = linear_model([1.0])
    return Dataset(
        box=ParameterBox([-3.0], [3.0]),
        qois=(QoiConstraint("q1", lin, 1.0, 2.0),
              QoiConstraint("q2", lin, -2.0, -1.0)),
        name="scm_conflict",
    )


def random_dataset(seed: int, n: int | None = None, N: int | None = None,
                   inconsistent_bias: float = 0.5) -> Dataset:
    """Random quadratic dataset with a controllable mix of (in)consistency.

    Intervals are centered on the model value at a random box point, then a
    fraction of them is shifted away by 1-3 interval widths; bounds are
    nudged off zero so the |bound| coefficient scheme stays well defined.
    """
    rng = np.random.default_rng(seed)
    n = int(n if n is not None else rng.integers(1, 7))
    N = int(N if N is not None else rng.integers(2, 11))
    center = rng.uniform(-0.5, 0.5, n)
    half = rng.uniform(0.3, 1.0, n)
    box = ParameterBox(center - half, center + half)
    x0 = rng.uniform(box.lower, box.upper)
    qois = []
    for e in range(N):
        q = rng.standard_normal((n + 1, n + 1))
        q = 0.5 * (q + q.T) * rng.uniform(0.2, 1.0)
        model = QuadraticModel(q)
        v0 = model(x0)
        width = rng.uniform(0.3, 1.2)
        mid = v0 + rng.uniform(-0.2, 0.2) * width
        if rng.random() < inconsistent_bias:
            mid += rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 3.0) * width
        lo, hi = mid - 0.5 * width, mid + 0.5 * width
        # keep both bounds away from zero for the |bound| scheme
        if abs(lo) < 0.05:
            lo -= 0.1
        if abs(hi) < 0.05:
            hi += 0.1
        if not lo < hi:
            lo, hi = min(lo, hi) - 0.1, max(lo, hi) + 0.1
        qois.append(QoiConstraint(f"q{e+1}", model, lo, hi))
    return Dataset(box=box, qois=tuple(qois), name=f"random_{seed}")


# ---------------------------------------------------------------------------
# independent oracles


def vertex_lp_min(c, a_ub, b_ub, tol: float = 1e-9):
    """Exact LP minimum over {v : a_ub v <= b_ub} by vertex enumeration.

    Assumes the optimum is attained at a vertex (full-dimensional random
    data); returns (value, argmin).
    """
    c = np.asarray(c, dtype=float)
    a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.asarray(b_ub, dtype=float)
    m, n = a_ub.shape
    best, best_v = np.inf, None
    for rows in itertools.combinations(range(m), n):
        sub = a_ub[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b_ub[list(rows)])
        if np.all(a_ub @ v <= b_ub + tol):
            val = float(c @ v)
            if val < best:
                best, best_v = val, v
    return best, best_v


def vertex_linear_vcm(A, b, r=None, tol: float = 1e-9):
    """Vertex-enumeration oracle for min 1'delta, A x <= b + diag(r) delta,
    delta >= 0 (x unrestricted)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    r = np.ones(m) if r is None else np.asarray(r, dtype=float)
    a_ub = np.block([
        [A, -np.diag(r)],
        [np.zeros((m, n)), -np.eye(m)],
    ])
    b_ub = np.concatenate([b, np.zeros(m)])
    c = np.concatenate([np.zeros(n), np.ones(m)])
    val, v = vertex_lp_min(c, a_ub, b_ub, tol)
    if v is None:
        return np.inf, None, None
    return val, v[n:], v[:n]


def scipy_feasible(A, b) -> bool:
    """Independent feasibility oracle (different solver family)."""
    from scipy.optimize import linprog

    A = np.atleast_2d(np.asarray(A, dtype=float))
    res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=np.asarray(b, dtype=float),
                  bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 0
