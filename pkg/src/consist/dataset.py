"""Dataset model: parameter box, quadratic QOI constraints, relaxation schemes.

A dataset couples prior parameter bounds (a box, optionally refined by extra
linear facets a @ [1; x] <= 0) with a collection of quantity-of-interest
constraints L_e <= M_e(x) <= U_e, where each model M_e is a quadratic stored
as a symmetric (n+1) x (n+1) coefficient matrix acting on the lifted vector
[1; x].  One-sided constraints are expressed with an infinite lower or upper
bound; unbounded parameters likewise.

All types are immutable after construction and safe to share across threads.
Construction checks shapes only; semantic invariants (nonempty intervals,
symmetry, unique names) are the business of `validate_dataset`, and files
that violate them are rejected by `load_dataset`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadraticModel",
    "ParameterBox",
    "QoiConstraint",
    "Dataset",
    "RelaxationScheme",
    "PerturbationVector",
    "ValidationReport",
    "SCHEME_KINDS",
    "evaluate_quadratic",
    "normalized_slack",
    "build_scheme",
    "validate_dataset",
    "load_dataset",
    "save_dataset",
]

SCHEME_KINDS = ("unit", "interval", "bound", "null")

_SYM_RTOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class QuadraticModel:
    """Quadratic form [1; x]' @ coeff @ [1; x] with symmetric coeff."""

    coeff: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeff", _freeze(self.coeff))
        if self.coeff.ndim != 2 or self.coeff.shape[0] != self.coeff.shape[1]:
            raise ValueError(f"coeff must be square, got shape {self.coeff.shape}")

    @property
    def n(self) -> int:
        return self.coeff.shape[0] - 1

    def __call__(self, x: np.ndarray) -> float:
        return evaluate_quadratic(self, x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = self.coeff
        return 2.0 * (q[1:, 0] + q[1:, 1:] @ x)

    @property
    def is_linear(self) -> bool:
        return bool(np.all(self.coeff[1:, 1:] == 0.0))

    @staticmethod
    def from_terms(constant: float, linear: np.ndarray, quadratic: np.ndarray | None = None
                   ) -> "QuadraticModel":
        linear = np.asarray(linear, dtype=float)
        n = linear.size
        q = np.zeros((n + 1, n + 1))
        q[0, 0] = constant
        q[0, 1:] = q[1:, 0] = 0.5 * linear
        if quadratic is not None:
            quadratic = np.asarray(quadratic, dtype=float)
            q[1:, 1:] = 0.5 * (quadratic + quadratic.T)
        return QuadraticModel(q)


def evaluate_quadratic(model: QuadraticModel, x: np.ndarray) -> float:
    """Evaluate [1; x]' @ coeff @ [1; x]."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n:
        raise ValueError(f"parameter vector has length {x.size}, model expects n={model.n}")
    z = np.concatenate(([1.0], x))
    return float(z @ model.coeff @ z)


@dataclass(frozen=True, eq=False)
class ParameterBox:
    """Hyper-rectangle l <= x <= u; infinite entries mark unbounded sides."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _freeze(np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", _freeze(np.atleast_1d(self.upper)))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError(
                f"box bounds must be equal-length vectors, got {self.lower.shape} "
                f"and {self.upper.shape}"
            )

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sampling_bounds(self, fallback: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Finite bounds for start-point sampling; unbounded sides fall back
        to +-fallback around the opposite bound (or 0 if both are infinite)."""
        lo = self.lower.copy()
        hi = self.upper.copy()
        both = ~np.isfinite(lo) & ~np.isfinite(hi)
        lo[both], hi[both] = -fallback, fallback
        only_lo = ~np.isfinite(lo) & np.isfinite(hi)
        lo[only_lo] = hi[only_lo] - 2.0 * fallback
        only_hi = np.isfinite(lo) & ~np.isfinite(hi)
        hi[only_hi] = lo[only_hi] + 2.0 * fallback
        return lo, hi


@dataclass(frozen=True, eq=False)
class QoiConstraint:
    """Named interval constraint lower <= model(x) <= upper."""

    name: str
    model: QuadraticModel
    lower: float
    upper: float

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def half_width(self) -> float:
        """Tightening scale: half the interval width, or 1 for one-sided bounds."""
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            return 0.5 * (self.upper - self.lower)
        return 1.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Parameter box + QOI constraints + optional extra linear facets.

    Extra facets use the convention a @ [1; x] <= 0 with a of length n+1.
    """

    box: ParameterBox
    qois: tuple[QoiConstraint, ...]
    facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    param_names: tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "qois", tuple(self.qois))
        n = self.box.n
        facets = np.asarray(self.facets, dtype=float)
        if facets.size == 0:
            facets = np.zeros((0, n + 1))
        facets = np.atleast_2d(facets)
        if facets.shape[1] != n + 1:
            raise ValueError(
                f"facets must have {n + 1} columns for n={n} parameters, "
                f"got {facets.shape[1]}"
            )
        object.__setattr__(self, "facets", _freeze(facets))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"x{i+1}" for i in range(n)))
        if len(self.param_names) != n:
            raise ValueError(f"{len(self.param_names)} parameter names for n={n} parameters")
        for q in self.qois:
            if q.model.n != n:
                raise ValueError(
                    f"QOI '{q.name}' has model dimension n={q.model.n}, dataset has n={n}"
                )

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def N(self) -> int:
        return len(self.qois)

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    def qoi_index(self, name: str) -> int:
        for i, q in enumerate(self.qois):
            if q.name == name:
                return i
        raise KeyError(f"no QOI named '{name}'")

    def param_index(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named '{name}'") from None


def normalized_slack(dataset: Dataset, x: np.ndarray) -> np.ndarray:
    """Per-QOI margin to the nearest bound, scaled by the half width.

    For a two-sided QOI this is 2 min(U - M(x), M(x) - L) / (U - L): 1 when
    the model sits at the interval midpoint, 0 on either bound, negative
    outside.  One-sided constraints use the absolute margin.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != dataset.n:
        raise ValueError(f"parameter vector has length {x.size}, dataset expects n={dataset.n}")
    z = np.concatenate(([1.0], x))
    out = np.empty(dataset.N)
    for e, q in enumerate(dataset.qois):
        m = float(z @ q.model.coeff @ z)
        w = q.half_width
        margin = math.inf
        if math.isfinite(q.upper):
            margin = min(margin, (q.upper - m) / w)
        if math.isfinite(q.lower):
            margin = min(margin, (m - q.lower) / w)
        out[e] = margin
    return out


@dataclass(frozen=True, eq=False)
class RelaxationScheme:
    """Nonnegative per-bound relaxation coefficients; zero freezes the bound.

    R_L/R_U weight the QOI lower/upper bounds, r_l/r_u the box bounds, and
    r_facets the extra linear facets (empty when the dataset has none).
    """

    R_L: np.ndarray
    R_U: np.ndarray
    r_l: np.ndarray
    r_u: np.ndarray
    r_facets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for attr in ("R_L", "R_U", "r_l", "r_u", "r_facets"):
            v = _freeze(np.atleast_1d(getattr(self, attr)))
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{attr} must be finite and nonnegative")
            object.__setattr__(self, attr, v)

    def check_shape(self, dataset: Dataset) -> None:
        expect = {
            "R_L": dataset.N, "R_U": dataset.N,
            "r_l": dataset.n, "r_u": dataset.n,
            "r_facets": dataset.n_facets,
        }
        for attr, want in expect.items():
            got = getattr(self, attr).size
            if got != want:
                raise ValueError(f"scheme.{attr} has length {got}, dataset expects {want}")

    def with_overrides(self, dataset: Dataset, overrides: dict[str, float]) -> "RelaxationScheme":
        """Return a copy with named bounds overridden, keys 'kind:name' with
        kind in {qoi_lower, qoi_upper, param_lower, param_upper, facet}."""
        parts = {k: np.array(getattr(self, k)) for k in
                 ("R_L", "R_U", "r_l", "r_u", "r_facets")}
        table = {"qoi_lower": ("R_L", dataset.qoi_index),
                 "qoi_upper": ("R_U", dataset.qoi_index),
                 "param_lower": ("r_l", dataset.param_index),
                 "param_upper": ("r_u", dataset.param_index)}
        for key, value in overrides.items():
            kind, _, name = key.partition(":")
            if kind == "facet":
                parts["r_facets"][int(name)] = float(value)
            elif kind in table:
                attr, lookup = table[kind]
                parts[attr][lookup(name)] = float(value)
            else:
                raise KeyError(f"unknown bound kind in override '{key}'")
        return RelaxationScheme(**parts)


@dataclass(frozen=True, eq=False)
class PerturbationVector:
    """Signed shifts of the dataset bounds; positive entries relax."""

    rho_U: np.ndarray
    rho_L: np.ndarray
    rho_u: np.ndarray
    rho_l: np.ndarray

    def __post_init__(self):
        for attr in ("rho_U", "rho_L", "rho_u", "rho_l"):
            v = _freeze(np.atleast_1d(getattr(self, attr)))
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{attr} must be finite")
            object.__setattr__(self, attr, v)

    @staticmethod
    def zeros(dataset: Dataset) -> "PerturbationVector":
        return PerturbationVector(
            np.zeros(dataset.N), np.zeros(dataset.N),
            np.zeros(dataset.n), np.zeros(dataset.n),
        )

    def check_shape(self, dataset: Dataset) -> None:
        for attr, want in (("rho_U", dataset.N), ("rho_L", dataset.N),
                           ("rho_u", dataset.n), ("rho_l", dataset.n)):
            got = getattr(self, attr).size
            if got != want:
                raise ValueError(f"{attr} has length {got}, dataset expects {want}")


def _coef_for(kind: str, lo: float, hi: float, what: str) -> tuple[float, float]:
    """Lower/upper coefficients for one interval under a named scheme kind."""
    if kind == "unit":
        c_lo, c_hi = 1.0, 1.0
    elif kind == "null":
        c_lo, c_hi = 0.0, 0.0
    elif kind == "interval":
        width = hi - lo
        if not math.isfinite(width):
            raise ValueError(f"interval coefficients need finite bounds on {what}")
        c_lo, c_hi = width, width
    elif kind == "bound":
        c_lo, c_hi = abs(lo), abs(hi)
        if (math.isfinite(lo) and c_lo == 0.0) or (math.isfinite(hi) and c_hi == 0.0):
            raise ValueError(
                f"bound coefficients on {what} would freeze a zero-valued bound; "
                "override that side explicitly"
            )
        if not math.isfinite(c_lo):
            c_lo = 0.0
        if not math.isfinite(c_hi):
            c_hi = 0.0
    else:
        raise ValueError(f"unknown scheme kind '{kind}'; expected one of {SCHEME_KINDS}")
    # absent (infinite) sides carry no relaxation variable; zero the coefficient
    if not math.isfinite(lo):
        c_lo = 0.0
    if not math.isfinite(hi):
        c_hi = 0.0
    return c_lo, c_hi


def build_scheme(dataset: Dataset, qoi_kind: str, param_kind: str | None = None
                 ) -> RelaxationScheme:
    """Standard relaxation-coefficient schemes for a whole dataset.

    unit: 1 per bound (absolute changes); interval: the interval width, so a
    unit relaxation is a 100% widening; bound: |bound| value, so relaxations
    read as fractional bound changes; null: frozen.  Extra facets follow the
    parameter kind but have no width/bound scale, so any non-null kind gives
    them unit coefficients.
    """
    if param_kind is None:
        param_kind = qoi_kind
    R_L = np.zeros(dataset.N)
    R_U = np.zeros(dataset.N)
    for e, q in enumerate(dataset.qois):
        R_L[e], R_U[e] = _coef_for(qoi_kind, q.lower, q.upper, f"QOI '{q.name}'")
    r_l = np.zeros(dataset.n)
    r_u = np.zeros(dataset.n)
    for i in range(dataset.n):
        r_l[i], r_u[i] = _coef_for(
            param_kind, dataset.box.lower[i], dataset.box.upper[i],
            f"parameter '{dataset.param_names[i]}'",
        )
    r_facets = np.full(dataset.n_facets, 0.0 if param_kind == "null" else 1.0)
    return RelaxationScheme(R_L, R_U, r_l, r_u, r_facets)


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "ok" if self.ok else "\n".join(self.problems)


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check all semantic invariants; returns a report, never raises."""
    report = ValidationReport()
    box = dataset.box
    for i in range(dataset.n):
        if not box.lower[i] < box.upper[i]:
            report.problems.append(
                f"parameter '{dataset.param_names[i]}': empty box side "
                f"[{box.lower[i]}, {box.upper[i]}]"
            )
        if math.isnan(box.lower[i]) or math.isnan(box.upper[i]):
            report.problems.append(f"parameter '{dataset.param_names[i]}': NaN bound")
    seen: set[str] = set()
    for q in dataset.qois:
        if q.name in seen:
            report.problems.append(f"duplicate QOI name '{q.name}'")
        seen.add(q.name)
        if not q.lower < q.upper:
            report.problems.append(
                f"QOI '{q.name}': degenerate interval [{q.lower}, {q.upper}]"
            )
        if not (math.isfinite(q.lower) or math.isfinite(q.upper)):
            report.problems.append(f"QOI '{q.name}': both bounds infinite")
        coeff = q.model.coeff
        asym = np.abs(coeff - coeff.T).max()
        scale = max(np.abs(coeff).max(), 1.0)
        if asym > _SYM_RTOL * scale:
            report.problems.append(
                f"QOI '{q.name}': coefficient matrix asymmetric "
                f"(max deviation {asym:.3g})"
            )
        if not np.all(np.isfinite(coeff)):
            report.problems.append(f"QOI '{q.name}': non-finite model coefficients")
    if dataset.n_facets and not np.all(np.isfinite(dataset.facets)):
        report.problems.append("non-finite facet coefficients")
    return report


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed or violates invariants."""


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise DatasetFormatError(f"{where}: missing field '{key}'")
    return obj[key]


def load_dataset(path) -> Dataset:
    """Read a dataset from the JSON interchange format.

    Asymmetric coefficient matrices are symmetrized as (Q + Q') / 2 with a
    warning; other invariant violations are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise DatasetFormatError(f"{path}: top level must be an object")
    name = doc.get("name", "dataset")
    params = _require(doc, "parameters", path)
    lower, upper, pnames = [], [], []
    for i, p in enumerate(params):
        where = f"{path}: parameters[{i}]"
        pnames.append(str(_require(p, "name", where)))
        lower.append(float(_require(p, "lower", where)))
        upper.append(float(_require(p, "upper", where)))
    n = len(pnames)
    box = ParameterBox(np.array(lower), np.array(upper))

    facets = np.asarray(doc.get("linear_facets", []), dtype=float)
    if facets.size and facets.shape[1] != n + 1:
        raise DatasetFormatError(
            f"{path}: linear_facets rows must have length {n + 1}, got {facets.shape[1]}"
        )

    qois = []
    for e, q in enumerate(doc.get("qois", [])):
        where = f"{path}: qois[{e}]"
        qname = str(_require(q, "name", where))
        lo = float(_require(q, "lower", where))
        hi = float(_require(q, "upper", where))
        coeff = np.asarray(_require(q, "coeff", where), dtype=float)
        if coeff.size != (n + 1) ** 2:
            raise DatasetFormatError(
                f"{where}: coeff has {coeff.size} entries, expected {(n + 1) ** 2}"
            )
        coeff = coeff.reshape(n + 1, n + 1)
        asym = np.abs(coeff - coeff.T).max()
        if asym > _SYM_RTOL * max(np.abs(coeff).max(), 1.0):
            warnings.warn(
                f"{where}: symmetrizing asymmetric coefficient matrix "
                f"(max deviation {asym:.3g})"
            )
            coeff = 0.5 * (coeff + coeff.T)
        qois.append(QoiConstraint(qname, QuadraticModel(coeff), lo, hi))

    dataset = Dataset(box=box, qois=tuple(qois), facets=facets,
                      param_names=tuple(pnames), name=name)
    report = validate_dataset(dataset)
    if not report.ok:
        raise DatasetFormatError(f"{path}: invalid dataset:\n{report}")
    return dataset


def save_dataset(dataset: Dataset, path) -> None:
    """Write the JSON interchange format; round-trips all finite doubles exactly."""
    doc = {
        "name": dataset.name,
        "parameters": [
            {"name": nm, "lower": float(lo), "upper": float(hi)}
            for nm, lo, hi in zip(dataset.param_names, dataset.box.lower, dataset.box.upper)
        ],
        "qois": [
            {
                "name": q.name,
                "lower": q.lower,
                "upper": q.upper,
                "coeff": [float(v) for v in q.model.coeff.ravel()],
            }
            for q in dataset.qois
        ],
    }
    if dataset.n_facets:
        doc["linear_facets"] = [[float(v) for v in row] for row in dataset.facets]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
