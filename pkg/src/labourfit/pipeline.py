"""End-to-end pipeline: ingest -> reconstruct -> ICA -> fixed point ->
decompose -> panel -> regressions, driven by one declarative TOML config.

Every stage writes its artifacts under the output directory and the run
manifest records a SHA-256 per input and output, so two runs with the same
config and inputs are byte-identical. A stage failure halts the run, tags the
stage, and persists the partial manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__
from .decomposition import DecompositionRecord, decompose, decompose_entropy, industry_entropy, labour_shares
from .econometrics import leave_one_out, run_table, standard_specs
from .efc import DUMMY_CODE, add_dummy_row, rank_fitness, read_scores, run_efc, write_scores
from .null_model import WeightedMatrix, build_ica_matrix, fit_biwcm, write_matrix_csv
from .outcomes import assemble_panel, write_panel_csv
from .panels import _fmt, load_employment_panel, load_macro_panel, load_wage_panel, restrict_sample
from .reconstruct import DEFAULT_MASK_FRACTIONS, evaluate_strategies, reconstruct_panel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTCOME_CHOICES = ("g", "g_pct", "r91", "r51", "r95", "labshare")


class PipelineError(RuntimeError):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    """Declarative description of one full run; the seed is mandatory and is
    the only source of randomness (the masking validation)."""

    employment: Path
    macro: Path
    wages: Path
    seed: int
    countries: tuple[str, ...] | None = None
    year_start: int | None = None
    year_end: int | None = None
    strategy: int = 1
    ica_mode: str = "ratio"
    ica_threshold: float = 1.0
    ica_alpha: float = 0.05
    biwcm_tol: float = 1e-8
    biwcm_max_iter: int = 100_000
    efc_tol: float = 1e-9
    efc_max_iter: int = 100_000
    k_windows: tuple[int, ...] = (1,)
    lag: int = 0
    scale: float = 1.0
    cluster: str = "twoway"
    outcomes: tuple[str, ...] = ("g_pct", "r91", "r51", "r95", "labshare")
    loo_outcomes: tuple[str, ...] = ("g_pct",)
    validate_reconstruction: bool = False
    mae_fractions: tuple[float, ...] = DEFAULT_MASK_FRACTIONS
    mae_seeds: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        for path in (self.employment, self.macro, self.wages):
            if not Path(path).exists():
                raise PipelineError(f"config references a missing file: {path}")
        unknown = [o for o in (*self.outcomes, *self.loo_outcomes) if o not in OUTCOME_CHOICES]
        if unknown:
            raise PipelineError(f"unknown outcomes {unknown}; expected among {OUTCOME_CHOICES}")

    @property
    def years(self) -> range | None:
        if self.year_start is None or self.year_end is None:
            return None
        return range(self.year_start, self.year_end + 1)

    def as_dict(self) -> dict:
        data = asdict(self)
        for key in ("employment", "macro", "wages"):
            data[key] = str(data[key])
        return data


def load_config(path: Path | str) -> RunConfig:
    """Parse a TOML run config; relative input paths resolve against it."""
    path = Path(path)
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else path.parent / candidate

    inputs = raw.get("inputs", {})
    sample = raw.get("sample", {})
    reconstruction = raw.get("reconstruction", {})
    ica = raw.get("ica", {})
    biwcm = raw.get("biwcm", {})
    efc_cfg = raw.get("efc", {})
    decomposition = raw.get("decomposition", {})
    regression = raw.get("regression", {})
    if "seed" not in raw:
        raise PipelineError("config must set a seed (stochastic steps refuse to run without one)")
    missing = [k for k in ("employment", "macro", "wages") if k not in inputs]
    if missing:
        raise PipelineError(f"config [inputs] lacks {missing}")
    return RunConfig(
        employment=resolve(inputs["employment"]),
        macro=resolve(inputs["macro"]),
        wages=resolve(inputs["wages"]),
        seed=int(raw["seed"]),
        countries=tuple(sample["countries"]) if "countries" in sample else None,
        year_start=sample.get("year_start"),
        year_end=sample.get("year_end"),
        strategy=int(reconstruction.get("strategy", 1)),
        validate_reconstruction=bool(reconstruction.get("validate", False)),
        mae_fractions=tuple(reconstruction.get("fractions", DEFAULT_MASK_FRACTIONS)),
        mae_seeds=tuple(reconstruction["seeds"]) if "seeds" in reconstruction else None,
        ica_mode=ica.get("mode", "ratio"),
        ica_threshold=float(ica.get("threshold", 1.0)),
        ica_alpha=float(ica.get("alpha", 0.05)),
        biwcm_tol=float(biwcm.get("tol", 1e-8)),
        biwcm_max_iter=int(biwcm.get("max_iter", 100_000)),
        efc_tol=float(efc_cfg.get("tol", 1e-9)),
        efc_max_iter=int(efc_cfg.get("max_iter", 100_000)),
        k_windows=tuple(decomposition.get("k", (1,))),
        lag=int(regression.get("lag", 0)),
        scale=float(regression.get("scale", 1.0)),
        cluster=regression.get("cluster", "twoway"),
        outcomes=tuple(regression.get("outcomes", ("g_pct", "r91", "r51", "r95", "labshare"))),
        loo_outcomes=tuple(regression.get("loo_outcomes", ("g_pct",))),
    )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


@dataclass
class RunManifest:
    """Hashes of everything a run read and wrote, plus collected warnings."""

    config_hash: str
    config: dict
    versions: dict
    stages: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    error: dict | None = None

    def record(self, name: str, inputs: dict[str, Path], outputs: dict[str, Path]) -> None:
        self.stages.append(
            {
                "name": name,
                "inputs": {key: _sha256(Path(p)) for key, p in sorted(inputs.items())},
                "outputs": {key: _sha256(Path(p)) for key, p in sorted(outputs.items())},
            }
        )

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(
                {
                    "config_hash": self.config_hash,
                    "config": self.config,
                    "versions": self.versions,
                    "stages": self.stages,
                    # sorted: emission order is interleaving-dependent under --threads
                    "warnings": sorted(self.warnings),
                    "error": self.error,
                },
                handle,
                indent=2,
                sort_keys=True,
            )
            handle.write("\n")


class _WarningCollector(logging.Handler):
    def __init__(self, sink: list):
        super().__init__(level=logging.WARNING)
        self.sink = sink

    def emit(self, record: logging.LogRecord) -> None:
        self.sink.append(f"{record.name}: {record.getMessage()}")


def _versions() -> dict:
    return {
        "labourfit": __version__,
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
    }


def write_decomposition_csv(records: Sequence[DecompositionRecord], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["country", "t0", "t1", "dlwf", "within", "between", "measure"])
        for rec in records:
            writer.writerow(
                [rec.country, rec.year_start, rec.year_end, _fmt(rec.dlwf), _fmt(rec.within), _fmt(rec.between), rec.measure]
            )


def read_decomposition_csv(path: Path | str) -> list[DecompositionRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            t0, t1 = int(row["t0"]), int(row["t1"])
            records.append(
                DecompositionRecord(
                    country=row["country"],
                    year_start=t0,
                    year_end=t1,
                    k=t1 - t0,
                    dlwf=float(row["dlwf"]),
                    within=float(row["within"]),
                    between=float(row["between"]),
                    measure=row["measure"],
                )
            )
    return records


def compute_decomposition(
    panel,
    scores_by_year: dict[int, object],
    k_windows: Sequence[int],
    dummy_code: str = DUMMY_CODE,
) -> list[DecompositionRecord]:
    """All windows (t-k, t) per country for both the complexity measure and
    the entropy baseline, from a gap-free panel and per-year scores."""
    years = sorted(scores_by_year)
    entropy_by_year = {
        year: industry_entropy(WeightedMatrix.from_panel(panel, year), year) for year in years
    }
    records: list[DecompositionRecord] = []
    for country in panel.countries:
        theta = {year: labour_shares(panel, country, year) for year in years}
        for k in sorted(k_windows):
            for t0 in years:
                t1 = t0 + k
                if t1 not in theta:
                    continue
                q0 = scores_by_year[t0].complexity_map
                q1 = scores_by_year[t1].complexity_map
                records.append(decompose(theta[t0], theta[t1], q0, q1))
                records.append(decompose_entropy(theta[t0], theta[t1], entropy_by_year[t0], entropy_by_year[t1]))
    return records


def run_pipeline(config: RunConfig, out_dir: Path | str, threads: int = 1) -> RunManifest:
    """Run every stage, writing artifacts and the manifest under ``out_dir``.

    Deterministic: identical config and inputs produce byte-identical
    artifacts and manifest. Any stage error halts the run with the stage name
    and persists the partial manifest (manifest.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plots").mkdir(exist_ok=True)

    config_blob = json.dumps(config.as_dict(), sort_keys=True).encode()
    manifest = RunManifest(
        config_hash="sha256:" + hashlib.sha256(config_blob).hexdigest(),
        config=config.as_dict(),
        versions=_versions(),
    )
    collector = _WarningCollector(manifest.warnings)
    package_logger = logging.getLogger("labourfit")
    package_logger.addHandler(collector)
    try:
        _run_stages(config, out_dir, manifest, threads)
    except Exception as exc:
        stage = exc.stage if isinstance(exc, StageError) else "unknown"
        manifest.error = {"stage": stage, "message": str(exc)}
        manifest.write(out_dir / "manifest.json")
        raise
    finally:
        package_logger.removeHandler(collector)
    manifest.write(out_dir / "manifest.json")
    return manifest


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        return run

    return wrap


def _run_stages(config: RunConfig, out_dir: Path, manifest: RunManifest, threads: int) -> None:
    inputs = {"employment": config.employment, "macro": config.macro, "wages": config.wages}

    @_stage("ingest")
    def ingest():
        employment = load_employment_panel(config.employment)
        macro = load_macro_panel(config.macro)
        wages = load_wage_panel(config.wages)
        years = config.years
        if config.countries or years:
            employment = restrict_sample(employment, config.countries, years)
            macro = restrict_sample(macro, config.countries, years)
            wages = restrict_sample(wages, config.countries, years)
        employment.validate_for_analysis()
        manifest.record("ingest", inputs, {})
        return employment, macro, wages

    employment, macro, wages = ingest()

    @_stage("reconstruct")
    def reconstruct():
        filled, excluded = reconstruct_panel(employment, config.strategy)
        if excluded:
            # fully missing series stay NaN; drop the affected industries from the analysis copy
            log.warning("%d series excluded by reconstruction", len(excluded))
        path = out_dir / "filled.csv"
        filled.write_csv(path)
        manifest.record("reconstruct", {"employment": config.employment}, {"filled.csv": path})
        return filled

    filled = reconstruct()

    if config.validate_reconstruction:

        @_stage("reconstruction-validation")
        def validate_reconstruction():
            seeds = config.mae_seeds if config.mae_seeds is not None else (config.seed,)
            report = evaluate_strategies(filled, config.mae_fractions, seeds)
            path = out_dir / "mae.csv"
            report.write_csv(path)
            manifest.record("reconstruction-validation", {"filled.csv": out_dir / "filled.csv"}, {"mae.csv": path})
            return report

        validate_reconstruction()

    @_stage("null-model")
    def null_model_stage():
        years = list(filled.years)

        def fit_year(year: int):
            matrix = WeightedMatrix.from_panel(filled, year)
            solution = fit_biwcm(matrix, tol=config.biwcm_tol, max_iter=config.biwcm_max_iter)
            ica = build_ica_matrix(
                matrix,
                solution,
                mode=config.ica_mode,
                threshold=config.ica_threshold,
                alpha=config.ica_alpha,
            )
            return matrix, solution, ica

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                fitted = dict(zip(years, pool.map(fit_year, years)))
        else:
            fitted = {year: fit_year(year) for year in years}

        outputs = {}
        for year in years:
            _, solution, ica = fitted[year]
            m_path = out_dir / f"m_{year}.csv"
            p_path = out_dir / f"pvals_{year}.csv"
            ica.write_csv(m_path)
            write_matrix_csv(p_path, solution.row_labels, solution.col_labels, solution.pvalues)
            outputs[m_path.name] = m_path
            outputs[p_path.name] = p_path
        manifest.record("null-model", {"filled.csv": out_dir / "filled.csv"}, outputs)
        return fitted

    fitted = null_model_stage()

    @_stage("efc")
    def efc_stage():
        scores_by_year = {}
        outputs = {}
        for year, (_, _, ica) in sorted(fitted.items()):
            matrix = add_dummy_row(ica.drop_empty())
            scores = run_efc(matrix, max_iter=config.efc_max_iter, tol=config.efc_tol, year=year)
            if not scores.converged:
                log.warning("fixed point for %d not converged (delta=%.2e)", year, scores.delta)
            scores_by_year[year] = scores
            path = out_dir / f"scores_{year}.csv"
            write_scores(scores, path)
            outputs[path.name] = path
        ranks = rank_fitness(scores_by_year)
        ranks_path = out_dir / "ranks.csv"
        ranks.write_csv(ranks_path)
        outputs["ranks.csv"] = ranks_path
        manifest.record("efc", {f"m_{y}.csv": out_dir / f"m_{y}.csv" for y in fitted}, outputs)
        return scores_by_year

    scores_by_year = efc_stage()

    @_stage("decompose")
    def decompose_stage():
        records = compute_decomposition(filled, scores_by_year, config.k_windows)
        path = out_dir / "decomp.csv"
        write_decomposition_csv(records, path)
        manifest.record(
            "decompose",
            {"filled.csv": out_dir / "filled.csv", **{f"scores_{y}.csv": out_dir / f"scores_{y}.csv" for y in scores_by_year}},
            {"decomp.csv": path},
        )
        return records

    records = decompose_stage()

    @_stage("panel")
    def panel_stage():
        q_records = [r for r in records if r.measure == "Q"]
        s_records = [r for r in records if r.measure == "S"]
        frame = assemble_panel(q_records, macro, wages, entropy_decomposition=s_records, lag=config.lag)
        path = out_dir / "panel.csv"
        write_panel_csv(frame, path)
        manifest.record("panel", {"decomp.csv": out_dir / "decomp.csv", "macro": config.macro, "wages": config.wages}, {"panel.csv": path})
        return frame

    frame = panel_stage()

    @_stage("regress")
    def regress_stage():
        tables = []
        for outcome in config.outcomes:
            tables.append(run_table(frame, standard_specs(outcome, cluster=config.cluster), scale=config.scale))
            tables.append(run_table(frame, standard_specs(outcome, cluster=config.cluster, entropy=True), scale=config.scale))
        table = pd.concat(tables, ignore_index=True)
        reg_path = out_dir / "regressions.csv"
        table.to_csv(reg_path, index=False, float_format="%.17g")

        loo_rows = []
        for outcome in config.loo_outcomes:
            spec = standard_specs(outcome, cluster=config.cluster)[0]
            for res in leave_one_out(frame, spec, target="between", scale=config.scale):
                loo_rows.append(
                    {
                        "outcome": outcome,
                        "excluded": res.excluded,
                        "estimate": res.estimate,
                        "se": res.se,
                        "significant": res.significant,
                        "error": res.error or "",
                    }
                )
        loo_path = out_dir / "loo.csv"
        pd.DataFrame(loo_rows).to_csv(loo_path, index=False, float_format="%.17g")
        manifest.record("regress", {"panel.csv": out_dir / "panel.csv"}, {"regressions.csv": reg_path, "loo.csv": loo_path})

    regress_stage()

    @_stage("plots")
    def plots_stage():
        outputs = emit_plot_data(out_dir)
        manifest.record("plots", {"decomp.csv": out_dir / "decomp.csv"}, outputs)

    plots_stage()


def emit_plot_data(out_dir: Path | str) -> dict[str, Path]:
    """Emit one tidy CSV per figure analogue from completed stage outputs.

    Raises naming the stage whose output is missing. The specialisation
    p-value sheet is ordered by descending fitness (rows) and ascending
    complexity (columns) for the earliest year.
    """
    out_dir = Path(out_dir)
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    outputs: dict[str, Path] = {}

    ranks_path = out_dir / "ranks.csv"
    if not ranks_path.exists():
        raise PipelineError("missing stage output ranks.csv (stage 'efc' has not run)")
    ranks = pd.read_csv(ranks_path)
    path = plots / "fitness_ranks.csv"
    ranks.to_csv(path, index=False)
    outputs["plots/fitness_ranks.csv"] = path

    decomp_path = out_dir / "decomp.csv"
    if not decomp_path.exists():
        raise PipelineError("missing stage output decomp.csv (stage 'decompose' has not run)")
    decomp = pd.read_csv(decomp_path)
    path = plots / "decomposition.csv"
    decomp.to_csv(path, index=False)
    outputs["plots/decomposition.csv"] = path

    loo_path = out_dir / "loo.csv"
    if not loo_path.exists():
        raise PipelineError("missing stage output loo.csv (stage 'regress' has not run)")
    path = plots / "leave_one_out.csv"
    pd.read_csv(loo_path).to_csv(path, index=False)
    outputs["plots/leave_one_out.csv"] = path

    pval_files = sorted(out_dir.glob("pvals_*.csv"))
    if not pval_files:
        raise PipelineError("missing stage output pvals_*.csv (stage 'null-model' has not run)")
    first = pval_files[0]
    year = int(first.stem.split("_")[1])
    scores_path = out_dir / f"scores_{year}.csv"
    if not scores_path.exists():
        raise PipelineError(f"missing stage output {scores_path.name} (stage 'efc' has not run)")
    scores = read_scores(scores_path, year=year)
    # keep_default_na: a literal country code "NA" must stay a string
    matrix = pd.read_csv(first, index_col=0, keep_default_na=False)
    matrix = matrix.apply(pd.to_numeric)
    fitness = scores.fitness_map
    complexity = scores.complexity_map
    countries = sorted(
        matrix.index,
        key=lambda c: (-fitness.get(str(c), -np.inf), str(c)),
    )
    industries = sorted(matrix.columns, key=lambda i: (complexity.get(str(i), np.inf), str(i)))
    rows = [
        {"country": c, "industry": i, "pvalue": matrix.loc[c, i]}
        for c in countries
        for i in industries
    ]
    path = plots / "specialisation_pvalues.csv"
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")
    outputs["plots/specialisation_pvalues.csv"] = path
    return outputs
