"""Command-line interface.

    consist validate --dataset d.json
    consist scalar   --dataset d.json --out results/
    consist vector   --dataset d.json --scheme unit --param-scheme null
    consist iterate  --dataset d.json --strategy top_k --k 1
    consist tradeoff --dataset d.json --bound qoi_lower:q1 --bound qoi_upper:q2
    consist trials   --n-errors 4 --trials 1000 --out results/

Exit codes: 0 consistency proven, 1 inconsistency proven, 2 undetermined,
3 input/usage error, 4 computation error.  All reports are deterministic
functions of (inputs, seed); reruns produce byte-identical files.  The
CONSIST_THREADS environment variable caps worker threads for the trial
harness.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import reports
from ._assembly import SdpOptions, build_scm_problem, build_vcm_problem
from .conic import SolverOptions, dump_problem
from .dataset import (Dataset, DatasetFormatError, RelaxationScheme, SCHEME_KINDS,
                      build_scheme, load_dataset, save_dataset, validate_dataset)
from .linear import TrialConfig, run_trials
from .scalar import SearchOptions, iterative_scm, scm, sensitivities
from .tradeoff import BoundRef, tradeoff_scan
from .vector import NullInfeasibleError, apply_relaxations, vcm

EXIT_CONSISTENT = 0
EXIT_INCONSISTENT = 1
EXIT_UNDETERMINED = 2
EXIT_INPUT_ERROR = 3
EXIT_COMPUTE_ERROR = 4

# keep exit code 2 reserved for "undetermined"
click.UsageError.exit_code = EXIT_INPUT_ERROR


@click.group()
def cli():
    """Consistency analysis of interval-constrained quadratic models."""


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(dataset_path: str) -> Dataset:
    try:
        return load_dataset(dataset_path)
    except (OSError, DatasetFormatError) as exc:
        _fail(str(exc), EXIT_INPUT_ERROR)


def _scheme(dataset: Dataset, qoi_kind: str, param_kind: str | None,
            overrides_path: str | None) -> RelaxationScheme:
    try:
        scheme = build_scheme(dataset, qoi_kind, param_kind or qoi_kind)
        if overrides_path:
            with open(overrides_path, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
            scheme = scheme.with_overrides(dataset, overrides)
        return scheme
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail(f"bad scheme specification: {exc}", EXIT_INPUT_ERROR)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CONSIST_THREADS", "1")))
    except ValueError:
        return 1


dataset_opt = click.option("--dataset", "dataset_path", required=True,
                           type=click.Path(), help="Dataset JSON file.")
out_opt = click.option("--out", "out_dir", default=".", type=click.Path(),
                       help="Directory for report files.")
seed_opt = click.option("--seed", default=0, type=int, show_default=True)
starts_opt = click.option("--starts", default=30, type=int, show_default=True,
                          help="Multi-start count for local searches.")
tol_opt = click.option("--tol", default=1e-6, type=float, show_default=True,
                       help="Threshold for the proven/undetermined exit codes.")
scheme_opt = click.option("--scheme", "qoi_kind", default="unit",
                          type=click.Choice(SCHEME_KINDS), show_default=True,
                          help="Relaxation coefficients for QOI bounds.")
param_scheme_opt = click.option("--param-scheme", "param_kind", default=None,
                                type=click.Choice(SCHEME_KINDS),
                                help="Coefficients for parameter bounds "
                                     "(default: same as --scheme).")
overrides_opt = click.option("--overrides", "overrides_path", default=None,
                             type=click.Path(),
                             help="JSON file mapping 'kind:name' to coefficients.")
dump_opt = click.option("--dump-problem", "dump_path", default=None,
                        type=click.Path(),
                        help="Write the assembled conic problem in sparse text form.")


@cli.command()
@dataset_opt
@out_opt
def validate(dataset_path, out_dir):
    """Check a dataset file against all invariants."""
    try:
        dataset = load_dataset(dataset_path)
        problems = []
    except DatasetFormatError as exc:
        text = str(exc)
        if "invalid dataset" in text:
            problems = [line for line in text.splitlines()[1:]]
            dataset = None
        else:
            _fail(text, EXIT_INPUT_ERROR)
    except OSError as exc:
        _fail(str(exc), EXIT_INPUT_ERROR)
    if dataset is not None:
        problems = validate_dataset(dataset).problems
    reports.write_json(Path(out_dir) / "validate.json", {
        "dataset": dataset_path,
        "ok": not problems,
        "problems": problems,
    })
    if problems:
        for p in problems:
            click.echo(p, err=True)
        sys.exit(EXIT_INCONSISTENT)
    click.echo("dataset ok")
    sys.exit(EXIT_CONSISTENT)


@cli.command()
@dataset_opt
@out_opt
@seed_opt
@starts_opt
@tol_opt
@dump_opt
def scalar(dataset_path, out_dir, seed, starts, tol, dump_path):
    """Scalar consistency interval, witness, and bound sensitivities."""
    dataset = _load(dataset_path)
    options = SearchOptions(starts=starts, seed=seed)
    try:
        result = scm(dataset, options)
        if dump_path:
            problem, _ = build_scm_problem(dataset)
            dump_problem(problem, dump_path)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(f"scalar consistency failed: {exc}", EXIT_COMPUTE_ERROR)
    out = Path(out_dir)
    reports.write_json(out / "scm.json", reports.scm_report(dataset, result, seed, starts))
    if result.dual.optimal:
        rows = reports.sensitivity_rows(sensitivities(dataset, result.dual))
    else:
        rows = []
    reports.write_csv(out / "sensitivities.csv", ["kind", "name", "sensitivity"], rows)
    click.echo(f"gamma in [{result.gamma_lower:.6g}, {result.gamma_upper:.6g}]")
    if result.gamma_lower >= -tol:
        sys.exit(EXIT_CONSISTENT)
    if result.dual.optimal and result.gamma_upper < -tol:
        sys.exit(EXIT_INCONSISTENT)
    sys.exit(EXIT_UNDETERMINED)


@cli.command()
@dataset_opt
@out_opt
@seed_opt
@starts_opt
@tol_opt
@scheme_opt
@param_scheme_opt
@overrides_opt
@dump_opt
@click.option("--apply", "apply_path", default=None, type=click.Path(),
              help="Write the relaxed dataset to this file.")
def vector(dataset_path, out_dir, seed, starts, tol, qoi_kind, param_kind,
           overrides_path, dump_path, apply_path):
    """Vector consistency: minimal weighted relaxations restoring feasibility."""
    dataset = _load(dataset_path)
    scheme = _scheme(dataset, qoi_kind, param_kind, overrides_path)
    options = SearchOptions(starts=starts, seed=seed)
    warnings: list[str] = []
    try:
        result = vcm(dataset, scheme, options)
        if dump_path:
            problem, _, _ = build_vcm_problem(dataset, scheme)
            dump_problem(problem, dump_path)
        if apply_path:
            relaxed = apply_relaxations(dataset, result)
            warnings = relaxed.warnings
            save_dataset(relaxed.dataset, apply_path)
    except NullInfeasibleError as exc:
        _fail(f"null-coefficient infeasibility: {exc}", EXIT_COMPUTE_ERROR)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(f"vector consistency failed: {exc}", EXIT_COMPUTE_ERROR)
    out = Path(out_dir)
    reports.write_json(out / "vcm.json",
                       reports.vcm_report(dataset, result, seed, starts, warnings))
    reports.write_csv(
        out / "relaxations.csv",
        ["kind", "name", "relaxation", "coefficient", "effective_expansion",
         "percent_of_width"],
        reports.relaxation_rows(dataset, result),
    )
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"vcm in [{result.value_lower:.6g}, {result.value_upper:.6g}]")
    if result.value_upper <= tol:
        sys.exit(EXIT_CONSISTENT)
    if result.value_lower is not None and result.value_lower > tol:
        sys.exit(EXIT_INCONSISTENT)
    sys.exit(EXIT_UNDETERMINED)


@cli.command()
@dataset_opt
@out_opt
@seed_opt
@starts_opt
@click.option("--strategy", default="top_k",
              type=click.Choice(["top_k", "all_nonzero"]), show_default=True)
@click.option("--k", default=1, type=int, show_default=True,
              help="Removals per round under top_k.")
@click.option("--threshold", default=1e-6, type=float, show_default=True,
              help="Fraction of the round maximum under all_nonzero.")
@click.option("--max-rounds", default=None, type=int,
              help="Round cap (default: the QOI count).")
def iterate(dataset_path, out_dir, seed, starts, strategy, k, threshold, max_rounds):
    """Iteratively remove the most sensitive QOIs until consistent."""
    dataset = _load(dataset_path)
    options = SearchOptions(starts=starts, seed=seed)
    try:
        trace = iterative_scm(dataset, strategy=strategy, k=k, threshold=threshold,
                              max_rounds=max_rounds, options=options)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(f"iterative removal failed: {exc}", EXIT_COMPUTE_ERROR)
    reports.write_json(Path(out_dir) / "iterate.json", reports.iterate_report(trace))
    click.echo(f"removed {len(trace.removed)} QOI(s); consistent: {trace.consistent}")
    sys.exit(EXIT_CONSISTENT if trace.consistent else EXIT_INCONSISTENT)


@cli.command()
@dataset_opt
@out_opt
@seed_opt
@click.option("--bound", "bounds", multiple=True, required=True,
              help="Bound as kind:name (give exactly twice), e.g. qoi_lower:q1.")
@click.option("--samples", default=64, type=int, show_default=True)
def tradeoff(dataset_path, out_dir, seed, bounds, samples):
    """Frontier scan of relaxations between two bounds."""
    dataset = _load(dataset_path)
    if len(bounds) != 2:
        _fail("give exactly two --bound options", EXIT_INPUT_ERROR)
    try:
        refs = tuple(BoundRef(*b.split(":", 1)) for b in bounds)
    except (TypeError, ValueError) as exc:
        _fail(f"bad bound reference: {exc}", EXIT_INPUT_ERROR)
    try:
        scan = tradeoff_scan(dataset, refs, n_samples=samples, seed=seed)
    except (ValueError, KeyError) as exc:
        _fail(str(exc), EXIT_INPUT_ERROR)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(f"trade-off scan failed: {exc}", EXIT_COMPUTE_ERROR)
    reports.write_csv(
        Path(out_dir) / "tradeoff.csv",
        ["r1", "r2", "d1", "d2", "eff1", "eff2", "rvcm_lower", "feasible"],
        reports.tradeoff_rows(scan),
    )
    ok = sum(p.feasible for p in scan.points)
    click.echo(f"{ok}/{len(scan.points)} samples solved; "
               f"{len(scan.infeasible_halfplanes)} certified half-planes")
    sys.exit(EXIT_CONSISTENT)


@cli.command()
@out_opt
@seed_opt
@click.option("--m", default=50, type=int, show_default=True)
@click.option("--n", default=15, type=int, show_default=True)
@click.option("--n-errors", default=1, type=int, show_default=True)
@click.option("--trials", "n_trials", default=1000, type=int, show_default=True)
@click.option("--alpha", default=None, type=float,
              help="Fixed tightening magnitude (default: per-trial bisection).")
@click.option("--alpha-factor", default=5.0, type=float, show_default=True,
              help="Multiple of the infeasibility threshold under bisection.")
@click.option("--slack-lo", default=0.1, type=float, show_default=True)
@click.option("--slack-hi", default=1.1, type=float, show_default=True)
def trials(out_dir, seed, m, n, n_errors, n_trials, alpha, alpha_factor,
           slack_lo, slack_hi):
    """Random error-injection trials for the linear recovery study."""
    policy = ("fixed", alpha) if alpha is not None else ("bisect", alpha_factor)
    config = TrialConfig(m=m, n=n, n_E=n_errors, trials=n_trials,
                         alpha_policy=policy, seed=seed,
                         slack_range=(slack_lo, slack_hi), threads=_threads())
    try:
        stats = run_trials(config)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(f"trials failed: {exc}", EXIT_COMPUTE_ERROR)
    out = Path(out_dir)
    reports.write_csv(out / "trials.csv",
                      ["trial", "phi_E", "phi_delta", "alpha", "skipped"],
                      reports.trial_rows(stats))
    for which in ("phi_E", "phi_delta"):
        reports.write_csv(out / f"hist_{which}.csv", ["bin_lo", "bin_hi", "count"],
                          reports.histogram_rows(stats, which))
    reports.write_json(out / "trials.json", stats.summary())
    s = stats.summary()
    click.echo(f"completed {s['completed']}/{s['trials']} "
               f"(perfect {s['fraction_perfect']:.3f}, "
               f"median phi_E {s['median_phi_E']:.3f}, "
               f"median phi_delta {s['median_phi_delta']:.3f})")
    sys.exit(EXIT_CONSISTENT)


def main():
    cli(prog_name="consist")


if __name__ == "__main__":
    main()
