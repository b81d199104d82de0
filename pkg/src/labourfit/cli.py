"""Command-line surface: one subcommand per pipeline stage plus the full run.

Each stage reads and writes the documented CSV formats, so a downstream stage
re-run from cached upstream files matches a full pipeline run.
"""

from __future__ import annotations

import csv
import logging
import sys
from pathlib import Path

import click
import pandas as pd

from .econometrics import RegressionSpec, fit_twoway_fe, leave_one_out
from .efc import add_dummy_row, rank_fitness, read_scores, run_efc, write_scores
from .null_model import SpecializationMatrix, WeightedMatrix, build_ica_matrix, fit_biwcm, write_matrix_csv
from .outcomes import CONTROLS, assemble_panel, read_panel_csv, write_panel_csv
from .panels import _fmt, load_employment_panel, load_macro_panel, load_wage_panel
from .pipeline import (
    OUTCOME_CHOICES,
    StageError,
    compute_decomposition,
    load_config,
    read_decomposition_csv,
    run_pipeline,
    write_decomposition_csv,
)
from .reconstruct import DEFAULT_MASK_FRACTIONS, evaluate_strategies, reconstruct_panel

log = logging.getLogger(__name__)


def _comma_separated(cast):
    def parse(ctx, param, value):
        if value is None:
            return None
        return tuple(cast(v) for v in str(value).split(",") if v != "")

    return parse


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool) -> None:
    """Structural-change analysis from country-industry employment panels."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--strategy", type=click.IntRange(1, 7), default=1, show_default=True)
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def reconstruct(strategy: int, input_path: str, output_path: str) -> None:
    """Fill gaps in an employment panel with one strategy."""
    panel = load_employment_panel(input_path)
    filled, excluded = reconstruct_panel(panel, strategy)
    filled.write_csv(output_path)
    click.echo(f"wrote {output_path} ({len(excluded)} series excluded)")


@main.command("validate-reconstruction")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--fractions", callback=_comma_separated(float), default=",".join(map(str, DEFAULT_MASK_FRACTIONS)), show_default=True)
@click.option("--seeds", callback=_comma_separated(int), default="0", show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
def validate_reconstruction(input_path: str, fractions, seeds, report_path: str) -> None:
    """Score all 7 strategies by MAE on randomly masked complete series."""
    panel = load_employment_panel(input_path)
    report = evaluate_strategies(panel, fractions, seeds)
    report.write_csv(report_path)
    click.echo(f"wrote {report_path}; best strategy by mean MAE: {report.best_strategy()}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True), help="Gap-free employment panel CSV.")
@click.option("--year", type=int, required=True)
@click.option("--mode", type=click.Choice(["ratio", "pvalue"]), default="ratio", show_default=True)
@click.option("--threshold", type=float, default=1.0, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pvals-out", type=click.Path(), default=None, help="Optionally emit the p-value matrix.")
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
def ica(input_path, year, mode, threshold, alpha, out_path, pvals_out, tol, max_iter) -> None:
    """Fit the null model for one year and emit the binary ICA matrix."""
    panel = load_employment_panel(input_path)
    matrix = WeightedMatrix.from_panel(panel, year)
    solution = fit_biwcm(matrix, tol=tol, max_iter=max_iter)
    ica_matrix = build_ica_matrix(matrix, solution, mode=mode, threshold=threshold, alpha=alpha)
    ica_matrix.write_csv(out_path)
    click.echo(f"wrote {out_path} (provenance {ica_matrix.provenance}, residual {solution.residual:.2e})")
    if pvals_out:
        write_matrix_csv(pvals_out, solution.row_labels, solution.col_labels, solution.pvalues)
        click.echo(f"wrote {pvals_out}")


@main.command()
@click.option("--matrix", "matrix_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--year", type=int, default=None)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
def efc(matrix_path, out_path, year, tol, max_iter) -> None:
    """Run the fixed point on a specialization matrix (dummy row added here)."""
    matrix = SpecializationMatrix.read_csv(matrix_path)
    scores = run_efc(add_dummy_row(matrix.drop_empty()), max_iter=max_iter, tol=tol, year=year)
    write_scores(scores, out_path)
    state = "converged" if scores.converged else "NOT converged"
    click.echo(f"wrote {out_path} ({state} after {scores.iterations} iterations, delta {scores.delta:.2e})")


@main.command()
@click.option("--scores-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
def ranks(scores_dir, out_path) -> None:
    """Collect per-year scores files into a fitness rank table."""
    scores = {}
    for path in sorted(Path(scores_dir).glob("scores_*.csv")):
        year = int(path.stem.split("_")[1])
        scores[year] = read_scores(path, year=year)
    if not scores:
        raise click.ClickException(f"no scores_*.csv files in {scores_dir}")
    rank_fitness(scores).write_csv(out_path)
    click.echo(f"wrote {out_path}")


@main.command("decompose")
@click.option("--k", "k_windows", callback=_comma_separated(int), default="1", show_default=True)
@click.option("--scores-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--panel", "panel_path", required=True, type=click.Path(exists=True), help="Gap-free employment panel.")
@click.option("--out", "out_path", required=True, type=click.Path())
def decompose_cmd(k_windows, scores_dir, panel_path, out_path) -> None:
    """Within/between decomposition records for every (t-k, t) window."""
    panel = load_employment_panel(panel_path)
    scores = {}
    for path in sorted(Path(scores_dir).glob("scores_*.csv")):
        year = int(path.stem.split("_")[1])
        scores[year] = read_scores(path, year=year)
    if not scores:
        raise click.ClickException(f"no scores_*.csv files in {scores_dir}")
    records = compute_decomposition(panel, scores, k_windows)
    write_decomposition_csv(records, out_path)
    click.echo(f"wrote {out_path} ({len(records)} records)")


@main.command("panel")
@click.option("--decomp", "decomp_path", required=True, type=click.Path(exists=True))
@click.option("--macro", "macro_path", required=True, type=click.Path(exists=True))
@click.option("--wages", "wages_path", required=True, type=click.Path(exists=True))
@click.option("--lag", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def panel_cmd(decomp_path, macro_path, wages_path, lag, out_path) -> None:
    """Assemble the regression dataset from decomposition + outcomes."""
    records = read_decomposition_csv(decomp_path)
    macro = load_macro_panel(macro_path)
    wages = load_wage_panel(wages_path)
    frame = assemble_panel(
        [r for r in records if r.measure == "Q"],
        macro,
        wages,
        entropy_decomposition=[r for r in records if r.measure == "S"],
        lag=lag,
    )
    write_panel_csv(frame, out_path)
    click.echo(f"wrote {out_path} ({len(frame)} rows)")


_MODEL_REGRESSORS = {1: ("between",), 2: ("within",), 3: ("dlwf",), 4: ("between", "within")}


@main.command()
@click.option("--panel", "panel_path", required=True, type=click.Path(exists=True))
@click.option("--outcome", type=click.Choice(OUTCOME_CHOICES), required=True)
@click.option("--model", type=click.IntRange(1, 4), default=1, show_default=True)
@click.option("--cluster", type=click.Choice(["country", "year", "twoway", "cell"]), default="twoway", show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True, help="Multiply the regressors before fitting.")
@click.option("--use-t", is_flag=True, help="t p-values with min(G)-1 df instead of the normal approximation.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def regress(panel_path, outcome, model, cluster, scale, use_t, out_path) -> None:
    """Fit one of the four models for an outcome with clustered errors."""
    frame = read_panel_csv(panel_path)
    spec = RegressionSpec(outcome=outcome, regressors=(*_MODEL_REGRESSORS[model], *CONTROLS), cluster=cluster)
    fit = fit_twoway_fe(frame, spec, scale=scale, use_t=use_t)
    rows = [
        [term, _fmt(fit.params[term]), _fmt(fit.se[term]), fit.stars[term], fit.n, _fmt(fit.r2), _fmt(fit.within_r2)]
        for term in spec.regressors
    ]
    if out_path:
        with open(out_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["term", "estimate", "se", "stars", "n", "r2", "within_r2"])
            writer.writerows(rows)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(f"outcome={outcome} model=({model}) n={fit.n} r2={fit.r2:.3f} within_r2={fit.within_r2:.3f}")
        for term, estimate, se, stars, *_ in rows:
            click.echo(f"  {term:<12} {float(estimate):>14.6g}{stars:<3} ({float(se):.6g})")


@main.command()
@click.option("--panel", "panel_path", required=True, type=click.Path(exists=True))
@click.option("--outcome", type=click.Choice(OUTCOME_CHOICES), required=True)
@click.option("--model", type=click.IntRange(1, 4), default=1, show_default=True)
@click.option("--target", default="between", show_default=True)
@click.option("--cluster", type=click.Choice(["country", "year", "twoway", "cell"]), default="twoway", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def loo(panel_path, outcome, model, target, cluster, out_path) -> None:
    """Leave-one-out sweep over countries for one model."""
    frame = read_panel_csv(panel_path)
    spec = RegressionSpec(outcome=outcome, regressors=(*_MODEL_REGRESSORS[model], *CONTROLS), cluster=cluster)
    results = leave_one_out(frame, spec, target=target)
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["excluded", "estimate", "se", "significant", "error"])
        for res in results:
            writer.writerow([res.excluded, _fmt(res.estimate), _fmt(res.se), int(res.significant), res.error or ""])
    click.echo(f"wrote {out_path} ({len(results)} fits)")


@main.group()
def pipeline() -> None:
    """Full-run orchestration."""


@pipeline.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--threads", type=int, default=1, show_default=True)
def pipeline_run(config_path, out_dir, threads) -> None:
    """Run ingest -> reconstruct -> ICA -> fixed point -> decompose -> panel -> regress."""
    config = load_config(config_path)
    try:
        manifest = run_pipeline(config, out_dir, threads=threads)
    except StageError as exc:
        raise click.ClickException(f"[stage {exc.stage}] {exc.cause}") from exc
    click.echo(f"ok: {len(manifest.stages)} stages, manifest at {Path(out_dir) / 'manifest.json'}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--id-cols", default="country,industry", show_default=True, callback=_comma_separated(str))
@click.option("--value-name", default="employment", show_default=True)
def melt(input_path, output_path, id_cols, value_name) -> None:
    """Convert a wide table (one column per year) to the canonical long CSV."""
    wide = pd.read_csv(input_path)
    id_cols = list(id_cols)
    frame = wide.melt(id_vars=id_cols, var_name="year", value_name=value_name)
    frame["year"] = frame["year"].astype(int)
    frame = frame.sort_values([*id_cols, "year"])
    frame.to_csv(output_path, index=False)
    click.echo(f"wrote {output_path} ({len(frame)} rows)")


if __name__ == "__main__":
    main()
