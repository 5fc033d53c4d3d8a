"""Vector consistency: local relaxations, certified lower bound, structure."""

import math

import numpy as np
import pytest

from consist.dataset import (Dataset, ParameterBox, QoiConstraint, RelaxationScheme,
                             build_scheme)
from consist.linear import linear_vcm
from consist.scalar import SearchOptions, scm_local, scm_sdp_upper
from consist.vector import (NullInfeasibleError, apply_relaxations, check_structure,
                            vcm, vcm_exact_support, vcm_local, vcm_sdp_lower)

from conftest import linear_model, random_dataset

FAST = SearchOptions(starts=8, seed=0)
INF = float("inf")


def vcm_conflict_dataset() -> Dataset:
    """M1 = M2 = x forced into [0.5, 1] and [-1, -0.5] over x in [-1, 1]."""
    lin = linear_model([1.0])
    return Dataset(box=ParameterBox([-1.0], [1.0]),
                   qois=(QoiConstraint("q1", lin, 0.5, 1.0),
                         QoiConstraint("q2", lin, -1.0, -0.5)),
                   name="vcm_conflict")


def skewed_pair_dataset(alpha: float = 4.0) -> Dataset:
    """The two-row recovery counterexample as upper-bounded linear QOIs."""
    return Dataset(
        box=ParameterBox([-INF], [INF]),
        qois=(QoiConstraint("c1", linear_model([1.5]), -INF, 1.0 - alpha),
              QoiConstraint("c2", linear_model([-1.0]), -INF, 1.0)),
        name="skewed_pair",
    )


def test_local_consistent_zero(single_interval):
    scheme = build_scheme(single_interval, "unit", "unit")
    res = vcm_local(single_interval, scheme, FAST)
    assert res.value_upper == pytest.approx(0.0, abs=1e-9)
    assert np.all(res.delta_L == 0) and np.all(res.delta_U == 0)


def test_local_conflict_value_one():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_local(d, scheme, FAST)
    assert res.value_upper == pytest.approx(1.0, abs=1e-7)
    # only the two inner bounds move, and their relaxations sum to the value
    assert res.delta_L[0] + res.delta_U[1] == pytest.approx(1.0, abs=1e-7)
    assert res.delta_U[0] == pytest.approx(0.0, abs=1e-9)
    assert res.delta_L[1] == pytest.approx(0.0, abs=1e-9)
    assert -0.5 - 1e-6 <= res.x_witness[0] <= 0.5 + 1e-6


def test_local_skewed_pair_weighted():
    d = skewed_pair_dataset(4.0)
    scheme = RelaxationScheme(R_L=np.zeros(2), R_U=np.array([2.0, 1.0]),
                              r_l=np.zeros(1), r_u=np.zeros(1))
    res = vcm_local(d, scheme, FAST)
    assert res.value_upper == pytest.approx(0.75, abs=1e-7)
    assert res.delta_U[0] == pytest.approx(0.75, abs=1e-6)
    assert res.delta_U[1] == pytest.approx(0.0, abs=1e-7)
    assert res.x_witness[0] == pytest.approx(-1.0, abs=1e-5)


def test_local_null_infeasible_raises():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "null", "null")
    with pytest.raises(NullInfeasibleError):
        vcm_local(d, scheme, FAST)


def test_lower_bound_golden_zero(golden_dataset):
    scheme = build_scheme(golden_dataset, "unit", "unit")
    lower, dual = vcm_sdp_lower(golden_dataset, scheme)
    assert dual.optimal
    assert lower == pytest.approx(0.0, abs=1e-6)
    assert len(dual.var_labels) == 4  # two one-sided rows + two facets


def test_lower_bound_consistent_zero(single_interval):
    scheme = build_scheme(single_interval, "unit", "unit")
    lower, dual = vcm_sdp_lower(single_interval, scheme)
    assert dual.optimal
    assert lower == pytest.approx(0.0, abs=1e-8)


def test_lower_bound_conflict_lp_exact():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    lower, dual = vcm_sdp_lower(d, scheme)
    assert dual.optimal
    assert 0.0 < lower <= 1.0 + 1e-9
    # cross-check against the exact LP on the linear encoding
    A = np.array([[-1.0], [1.0], [1.0], [-1.0]])
    b = np.array([-0.5, -0.5, 1.0, 1.0])
    r = np.array([1.0, 1.0, 0.0, 0.0])
    ref = linear_vcm(A, b, r)
    assert ref.status == "optimal"
    assert lower == pytest.approx(ref.value, abs=1e-6)


def test_vcm_combined_sides():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm(d, scheme, FAST)
    assert res.value_lower is not None
    assert res.value_lower <= res.value_upper + 1e-6


def test_apply_relaxations_zero_noop(single_interval):
    scheme = build_scheme(single_interval, "unit", "unit")
    res = vcm_local(single_interval, scheme, FAST)
    relaxed = apply_relaxations(single_interval, res)
    assert relaxed.warnings == []
    q0, q1 = single_interval.qois[0], relaxed.dataset.qois[0]
    assert q1.lower == pytest.approx(q0.lower, abs=1e-9)
    assert q1.upper == pytest.approx(q0.upper, abs=1e-9)


def test_apply_relaxations_restores_consistency():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_local(d, scheme, FAST)
    relaxed = apply_relaxations(d, res)
    gamma = scm_local(relaxed.dataset, FAST).gamma
    assert gamma >= -1e-8
    # witness satisfies every relaxed constraint, relaxed ones with equality
    report = check_structure(relaxed.dataset, res, tol=1e-6)
    x = res.x_witness[0]
    assert relaxed.dataset.qois[0].lower - 1e-8 <= x <= relaxed.dataset.qois[0].upper + 1e-8


def test_apply_relaxations_skewed_pair():
    d = skewed_pair_dataset(4.0)
    scheme = RelaxationScheme(R_L=np.zeros(2), R_U=np.array([2.0, 1.0]),
                              r_l=np.zeros(1), r_u=np.zeros(1))
    res = vcm_local(d, scheme, FAST)
    relaxed = apply_relaxations(d, res)
    # relaxed upper of c1 moved by 2 * 0.75, binding at x = -1
    assert relaxed.dataset.qois[0].upper == pytest.approx(-3.0 + 1.5, abs=1e-5)
    x = -1.0
    assert 1.5 * x <= relaxed.dataset.qois[0].upper + 1e-6
    assert -x <= relaxed.dataset.qois[1].upper + 1e-9


def test_apply_relaxations_param_warning():
    # the interval sits above the box, so only a box expansion can help
    d = Dataset(box=ParameterBox([-1.0], [1.0]),
                qois=(QoiConstraint("q", linear_model([1.0]), 2.0, 3.0),))
    scheme = build_scheme(d, "null", "unit")  # only parameter bounds may move
    res = vcm_local(d, scheme, SearchOptions(starts=16, seed=0))
    assert res.value_upper == pytest.approx(1.0, abs=1e-7)
    assert res.delta_u[0] == pytest.approx(1.0, abs=1e-6)
    relaxed = apply_relaxations(d, res)
    assert relaxed.warnings


def test_check_structure_clean_at_optimum():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_local(d, scheme, FAST)
    report = check_structure(d, res)
    assert report.ok


def test_check_structure_flags_both_bounds():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_local(d, scheme, FAST)
    bad = res
    bad.delta_L[0] = 0.6
    bad.delta_U[0] = 0.6
    report = check_structure(d, bad)
    assert "q1" in report.both_bounds


def test_check_structure_flags_slack():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_local(d, scheme, FAST)
    bad = res
    bad.delta_L[0] = bad.delta_L[0] + 0.5  # more relaxation than needed
    report = check_structure(d, bad)
    assert any(s.startswith("q1") for s in report.slack_at_relaxed)


def test_exact_support_consistent_zero(single_interval):
    scheme = build_scheme(single_interval, "unit", "unit")
    res = vcm_exact_support(single_interval, scheme, max_support=2, options=FAST)
    assert res.count == 0
    assert res.supports == [()]


def test_exact_support_skewed_pair_both_minimal():
    d = skewed_pair_dataset(4.0)
    scheme = RelaxationScheme(R_L=np.zeros(2), R_U=np.ones(2),
                              r_l=np.zeros(1), r_u=np.zeros(1))
    res = vcm_exact_support(d, scheme, max_support=2, options=FAST)
    assert res.count == 1
    assert res.certainty == "exact"  # all-linear instance decided by LP
    freed = {labels[0] for labels in res.supports}
    assert freed == {("qoi_upper", 0), ("qoi_upper", 1)}


def test_exact_support_conflict():
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm_exact_support(d, scheme, max_support=2, options=FAST)
    assert res.count == 1
    assert res.certainty == "exact"


def test_exact_support_budget_guard():
    d = random_dataset(1, n=4, N=10)
    scheme = build_scheme(d, "unit", "unit")
    with pytest.raises(ValueError, match="budget"):
        vcm_exact_support(d, scheme, max_support=20, options=FAST,
                          enumeration_budget=10)


def test_support_size_vs_one_norm_support():
    """The exact minimal support is never larger than the 1-norm solution's."""
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    res = vcm(d, scheme, FAST)
    nz = res.nonzero_tol(d)
    one_norm_support = int(np.sum(res.delta_L > nz) + np.sum(res.delta_U > nz))
    exact = vcm_exact_support(d, scheme, max_support=2, options=FAST)
    assert exact.count <= one_norm_support


def test_weak_duality_random_batch():
    for seed in range(10):
        d = random_dataset(seed, n=3, N=5)
        for kinds in (("unit", "unit"), ("interval", "interval")):
            scheme = build_scheme(d, *kinds)
            res = vcm(d, scheme, FAST)
            assert res.value_lower <= res.value_upper + 1e-6


def test_theorem_nonnegative_scalar_bound_forces_zero_lower():
    """Whenever the scalar relaxation cannot prove inconsistency, the vector
    relaxation's certified bound vanishes for every coefficient scheme."""
    hits = 0
    for seed in range(30):
        d = random_dataset(seed, n=2, N=3, inconsistent_bias=0.2)
        upper, dual = scm_sdp_upper(d)
        if not dual.optimal or upper < 0:
            continue
        hits += 1
        for kinds in (("unit", "unit"), ("interval", "interval"), ("bound", "bound")):
            scheme = build_scheme(d, *kinds)
            lower, vdual = vcm_sdp_lower(d, scheme)
            assert vdual.optimal
            assert lower <= 1e-6
    assert hits >= 3  # the batch must actually exercise the implication


def test_null_coefficient_monotonicity():
    """Freezing more bounds never decreases the certified lower bound."""
    rng = np.random.default_rng(0)
    checked = 0
    for seed in range(20):
        d = random_dataset(seed, n=2, N=4, inconsistent_bias=0.9)
        scheme = build_scheme(d, "unit", "unit")
        lower, dual = vcm_sdp_lower(d, scheme)
        if not dual.optimal:
            continue
        parts = {k: np.array(getattr(scheme, k))
                 for k in ("R_L", "R_U", "r_l", "r_u", "r_facets")}
        for attr in ("R_L", "r_u"):
            if parts[attr].size == 0:
                continue
            nulled = dict(parts)
            nulled[attr] = parts[attr].copy()
            nulled[attr][rng.integers(0, parts[attr].size)] = 0.0
            lower2, dual2 = vcm_sdp_lower(d, RelaxationScheme(**nulled))
            if dual2.optimal:
                assert lower2 >= lower - 1e-6
                checked += 1
    assert checked >= 10


def test_coefficient_scaling_invariance():
    """Scaling all coefficients by c scales the value by 1/c and leaves the
    effective expansions unchanged."""
    d = vcm_conflict_dataset()
    base = build_scheme(d, "unit", "null")
    res1 = vcm_local(d, base, FAST)
    for c in (0.5, 2.0, 10.0):
        scaled = RelaxationScheme(R_L=c * base.R_L, R_U=c * base.R_U,
                                  r_l=c * base.r_l, r_u=c * base.r_u)
        res2 = vcm_local(d, scaled, FAST)
        assert c * res2.value_upper == pytest.approx(res1.value_upper, abs=1e-6)
        eff1 = base.R_L * res1.delta_L + base.R_U * res1.delta_U
        eff2 = scaled.R_L * res2.delta_L + scaled.R_U * res2.delta_U
        assert np.allclose(eff1, eff2, atol=1e-6)


def test_infeasibility_certificate_blocks_cheaper_relaxations():
    """Any relaxation with weighted 1-norm below the certified bound leaves
    the dataset inconsistent when implemented."""
    d = vcm_conflict_dataset()
    scheme = build_scheme(d, "unit", "null")
    lower, dual = vcm_sdp_lower(d, scheme)
    assert lower > 0.1
    res = vcm_local(d, scheme, FAST)
    cheap = res
    cheap.delta_L = 0.4 * lower * np.array([1.0, 0.0])
    cheap.delta_U = 0.4 * lower * np.array([0.0, 1.0])  # 1-norm = 0.8 * lower
    relaxed = apply_relaxations(d, cheap)
    upper, rdual = scm_sdp_upper(relaxed.dataset)
    assert rdual.optimal
    assert upper < 0
