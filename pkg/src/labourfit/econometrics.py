"""Two-way fixed-effects OLS with clustered covariance, leave-one-out sweeps,
and the regression-table layout.

Country and year intercepts are absorbed by iterated demeaning; the
coefficient covariance is a cluster sandwich, by default the two-way
combination V(country) + V(year) - V(country x year) with a per-component
small-sample correction G/(G-1) * (N-1)/(N-K). A non-positive-semidefinite
combined covariance is repaired by clipping negative eigenvalues, and the
repair is counted and flagged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .outcomes import CONTROLS

log = logging.getLogger(__name__)

CLUSTER_SCHEMES = ("country", "year", "twoway", "cell")

DECOMPOSITION_FAMILIES = (("between", "within", "dlwf"), ("between_s", "within_s", "dlws"))

TERM_LABELS = {
    "between": "Between",
    "within": "Within",
    "dlwf": "Delta LWF",
    "between_s": "Between (Entropy)",
    "within_s": "Within (Entropy)",
    "dlws": "Delta LWS",
    "log_pop": "Population (log)",
    "log_gdppc": "GDPpc (log)",
    "rd_gdp": "R&D (% GDP)",
    "exports_gdp": "Exports (% GDP)",
}

STAR_THRESHOLDS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))


class EconometricsError(ValueError):
    pass


class RankDeficiencyError(EconometricsError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design is rank deficient; collinear columns: {list(columns)}")
        self.columns = tuple(columns)


@dataclass(frozen=True)
class RegressionSpec:
    """One model: outcome, regressors, absorbed dimensions, cluster scheme."""

    outcome: str
    regressors: tuple[str, ...]
    fixed_effects: tuple[str, ...] = ("country", "year")
    cluster: str = "twoway"

    def __post_init__(self) -> None:
        if not self.regressors:
            raise EconometricsError("spec needs at least one regressor")
        if self.cluster not in CLUSTER_SCHEMES:
            raise EconometricsError(f"unknown cluster scheme {self.cluster!r}; expected one of {CLUSTER_SCHEMES}")
        got = set(self.regressors)
        for between, within, total in DECOMPOSITION_FAMILIES:
            if {between, within, total} <= got:
                raise EconometricsError(
                    f"{between} + {within} + {total} are perfectly collinear ({total} = {between} + {within})"
                )
            if {between, total} <= got:
                raise EconometricsError(f"{between} and {total} must not be jointly included")


@dataclass
class RegressionResult:
    """Estimates, clustered covariance and fit statistics for one spec."""

    spec: RegressionSpec
    params: pd.Series
    se: pd.Series
    pvalues: pd.Series
    stars: dict[str, str]
    cov: np.ndarray
    n: int
    n_params: int
    df_resid: int
    r2: float
    within_r2: float
    n_countries: int
    n_years: int
    country_effects: pd.Series
    year_effects: pd.Series
    intercept: float
    cluster_scheme: str
    psd_repaired: bool
    n_negative_eigenvalues: int
    demean_sweeps: int
    # retained for covariance re-estimation under other schemes
    design: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    country_codes: np.ndarray = field(repr=False)
    year_codes: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ClusterCovariance:
    cov: np.ndarray
    scheme: str
    psd_repaired: bool
    n_negative_eigenvalues: int


@dataclass(frozen=True)
class LooResult:
    excluded: str
    estimate: float
    se: float
    significant: bool
    error: str | None = None


def _group_means(values: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    sums = np.zeros((n_groups, values.shape[1]))
    np.add.at(sums, codes, values)
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    return sums / counts[:, None]


def _demean_two_way(
    z: np.ndarray, c_codes: np.ndarray, t_codes: np.ndarray, tol: float, max_sweeps: int
) -> tuple[np.ndarray, int]:
    """Alternating projection onto the two-way-demeaned subspace."""
    n_c = int(c_codes.max()) + 1
    n_t = int(t_codes.max()) + 1
    scale = 1.0 + float(np.abs(z).max())
    out = z.astype(float).copy()
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        before = out.copy()
        out -= _group_means(out, c_codes, n_c)[c_codes]
        out -= _group_means(out, t_codes, n_t)[t_codes]
        if np.abs(out - before).max() <= tol * scale:
            break
    else:
        log.warning("two-way demeaning hit max_sweeps=%d without converging", max_sweeps)
    return out, sweeps


def _collinear_columns(x: np.ndarray, names: Sequence[str]) -> list[str]:
    _, r, pivots = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    threshold = diag.max() * max(x.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > threshold).sum())
    return [names[p] for p in pivots[rank:]]


def _one_way_sandwich(design: np.ndarray, residuals: np.ndarray, codes: np.ndarray, n_params: int) -> np.ndarray:
    n, k = design.shape
    n_groups = int(codes.max()) + 1
    bread = np.linalg.inv(design.T @ design)
    scores = design * residuals[:, None]
    cluster_scores = np.zeros((n_groups, k))
    np.add.at(cluster_scores, codes, scores)
    meat = cluster_scores.T @ cluster_scores
    correction = (n_groups / (n_groups - 1)) * ((n - 1) / (n - n_params))
    return correction * bread @ meat @ bread


def _repair_psd(cov: np.ndarray) -> tuple[np.ndarray, bool, int]:
    cov = (cov + cov.T) / 2.0
    eigenvalues, vectors = np.linalg.eigh(cov)
    negative = int((eigenvalues < 0).sum())
    if negative == 0:
        return cov, False, 0
    repaired = vectors @ np.diag(np.clip(eigenvalues, 0.0, None)) @ vectors.T
    return (repaired + repaired.T) / 2.0, True, negative


def cluster_covariance(result: RegressionResult, scheme: str) -> ClusterCovariance:
    """Cluster-sandwich covariance of the regressors under the given scheme.

    ``twoway`` combines the country- and year-clustered sandwiches minus the
    country x year intersection term; ``cell`` clusters on the intersection
    itself. Any dimension with fewer than 2 clusters raises.
    """
    if scheme not in CLUSTER_SCHEMES:
        raise EconometricsError(f"unknown cluster scheme {scheme!r}")
    design, residuals = result.design, result.residuals
    c_codes, t_codes = result.country_codes, result.year_codes
    cell_codes = np.unique(np.stack([c_codes, t_codes], axis=1), axis=0, return_inverse=True)[1].reshape(-1)

    def check(codes: np.ndarray, name: str) -> None:
        if len(np.unique(codes)) < 2:
            raise EconometricsError(f"fewer than 2 clusters along {name}")

    if scheme == "country":
        check(c_codes, "country")
        cov = _one_way_sandwich(design, residuals, c_codes, result.n_params)
    elif scheme == "year":
        check(t_codes, "year")
        cov = _one_way_sandwich(design, residuals, t_codes, result.n_params)
    elif scheme == "cell":
        check(cell_codes, "country x year")
        cov = _one_way_sandwich(design, residuals, cell_codes, result.n_params)
    else:
        check(c_codes, "country")
        check(t_codes, "year")
        cov = (
            _one_way_sandwich(design, residuals, c_codes, result.n_params)
            + _one_way_sandwich(design, residuals, t_codes, result.n_params)
            - _one_way_sandwich(design, residuals, cell_codes, result.n_params)
        )
    cov, repaired, negative = _repair_psd(cov)
    if repaired:
        log.warning("clustered covariance repaired: %d negative eigenvalues clipped", negative)
    return ClusterCovariance(cov, scheme, repaired, negative)


def _stars(p: float) -> str:
    for threshold, symbol in STAR_THRESHOLDS:
        if p < threshold:
            return symbol
    return ""


def fit_twoway_fe(
    frame: pd.DataFrame,
    spec: RegressionSpec,
    demean_tol: float = 1e-10,
    max_sweeps: int = 10_000,
    use_t: bool = False,
    scale: float = 1.0,
) -> RegressionResult:
    """OLS of the spec's outcome on its regressors with absorbed country and
    year intercepts.

    Rows missing any of the spec's variables are dropped for this fit only
    (per-regression casewise deletion). The within R-squared is computed on
    the demeaned data; the raw R-squared uses recovered fixed effects.
    ``scale`` multiplies the regressors (reporting convenience); p-values use
    the normal approximation unless ``use_t`` (t with min(G)-1 df).
    """
    needed = [spec.outcome, *spec.regressors, "country", "year"]
    missing_cols = [c for c in needed if c not in frame.columns]
    if missing_cols:
        raise EconometricsError(f"panel lacks columns {missing_cols}")
    data = frame[needed].dropna().reset_index(drop=True)
    n = len(data)
    if n == 0:
        raise EconometricsError(f"no complete rows for outcome {spec.outcome!r}")

    countries, c_codes = np.unique(data["country"].to_numpy(), return_inverse=True)
    years, t_codes = np.unique(data["year"].to_numpy(), return_inverse=True)
    n_params = len(spec.regressors) + len(countries) + len(years) - 1
    if n <= n_params:
        raise EconometricsError(f"{n} rows cannot identify {n_params} parameters")
    for name, codes, labels in (("country", c_codes, countries), ("year", t_codes, years)):
        singles = [str(labels[g]) for g, count in zip(*np.unique(codes, return_counts=True)) if count == 1]
        if singles:
            log.warning("%s groups with a single observation: %s", name, singles)

    y = data[spec.outcome].to_numpy(dtype=float)
    x = data[list(spec.regressors)].to_numpy(dtype=float) * scale
    stacked = np.column_stack([y, x])
    demeaned, sweeps = _demean_two_way(stacked, c_codes, t_codes, demean_tol, max_sweeps)
    y_d, x_d = demeaned[:, 0], demeaned[:, 1:]

    collinear = _collinear_columns(x_d, list(spec.regressors))
    if collinear:
        raise RankDeficiencyError(collinear)

    # normal equations: order-insensitive sums keep integer fixtures exact
    xtx = x_d.T @ x_d
    xty = x_d.T @ y_d
    try:
        beta = scipy.linalg.solve(xtx, xty, assume_a="pos")
    except np.linalg.LinAlgError:
        beta, *_ = np.linalg.lstsq(x_d, y_d, rcond=None)
    residuals = y_d - x_d @ beta

    result = RegressionResult(
        spec=spec,
        params=pd.Series(beta, index=list(spec.regressors)),
        se=pd.Series(dtype=float),
        pvalues=pd.Series(dtype=float),
        stars={},
        cov=np.empty((0, 0)),
        n=n,
        n_params=n_params,
        df_resid=n - n_params,
        r2=np.nan,
        within_r2=np.nan,
        n_countries=len(countries),
        n_years=len(years),
        country_effects=pd.Series(dtype=float),
        year_effects=pd.Series(dtype=float),
        intercept=np.nan,
        cluster_scheme=spec.cluster,
        psd_repaired=False,
        n_negative_eigenvalues=0,
        demean_sweeps=sweeps,
        design=x_d,
        residuals=residuals,
        country_codes=c_codes,
        year_codes=t_codes,
    )

    clustered = cluster_covariance(result, spec.cluster)
    se = np.sqrt(np.diag(clustered.cov))
    t_stats = np.divide(beta, se, out=np.full_like(beta, np.inf), where=se > 0)
    if use_t:
        df = min(len(countries), len(years)) - 1
        p = 2 * (1 - stats.t.cdf(np.abs(t_stats), df))
    else:
        p = 2 * (1 - stats.norm.cdf(np.abs(t_stats)))

    # within R2 on the transformed data
    tss_within = float(((y_d - y_d.mean()) ** 2).sum())
    within_r2 = 1.0 - float((residuals**2).sum()) / tss_within if tss_within > 0 else np.nan

    # raw R2 with recovered fixed effects
    mu, alpha, tau = _recover_effects(y - x @ beta, c_codes, t_codes)
    fitted = x @ beta + mu + alpha[c_codes] + tau[t_codes]
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - fitted) ** 2).sum()) / tss if tss > 0 else np.nan

    result.se = pd.Series(se, index=list(spec.regressors))
    result.pvalues = pd.Series(p, index=list(spec.regressors))
    result.stars = {term: _stars(pv) for term, pv in result.pvalues.items()}
    result.cov = clustered.cov
    result.r2 = r2
    result.within_r2 = within_r2
    result.country_effects = pd.Series(alpha, index=[str(c) for c in countries])
    result.year_effects = pd.Series(tau, index=[int(t) for t in years])
    result.intercept = mu
    result.psd_repaired = clustered.psd_repaired
    result.n_negative_eigenvalues = clustered.n_negative_eigenvalues
    return result


def _recover_effects(residual: np.ndarray, c_codes: np.ndarray, t_codes: np.ndarray, sweeps: int = 200) -> tuple[float, np.ndarray, np.ndarray]:
    """Additive country/year effects of y - x*beta by alternating means."""
    n_c = int(c_codes.max()) + 1
    n_t = int(t_codes.max()) + 1
    mu = float(residual.mean())
    alpha = np.zeros(n_c)
    tau = np.zeros(n_t)
    column = residual[:, None]
    for _ in range(sweeps):
        alpha_new = _group_means(column - mu - tau[t_codes][:, None], c_codes, n_c)[:, 0]
        tau_new = _group_means(column - mu - alpha_new[c_codes][:, None], t_codes, n_t)[:, 0]
        change = max(np.abs(alpha_new - alpha).max(), np.abs(tau_new - tau).max())
        alpha, tau = alpha_new, tau_new
        if change < 1e-13:
            break
    return mu, alpha, tau


def leave_one_out(
    frame: pd.DataFrame,
    spec: RegressionSpec,
    target: str = "between",
    countries: Sequence[str] | None = None,
    **fit_kwargs,
) -> list[LooResult]:
    """Refit the spec excluding one country at a time (in country order).

    A failing fit is recorded with its error and the sweep continues. The
    significance flag is a two-sided 5% test on the target regressor.
    """
    present = sorted(frame["country"].unique())
    if len(present) < 3:
        raise EconometricsError("leave-one-out needs at least 3 countries")
    if countries is None:
        countries = present
    else:
        unknown = [c for c in countries if c not in present]
        if unknown:
            raise EconometricsError(f"countries absent from the panel: {unknown}")
    if target not in spec.regressors:
        raise EconometricsError(f"target {target!r} is not a regressor of the spec")

    results = []
    for excluded in countries:
        subset = frame[frame["country"] != excluded]
        try:
            fit = fit_twoway_fe(subset, spec, **fit_kwargs)
            results.append(
                LooResult(
                    excluded=excluded,
                    estimate=float(fit.params[target]),
                    se=float(fit.se[target]),
                    significant=bool(fit.pvalues[target] < 0.05),
                )
            )
        except Exception as exc:  # recorded, sweep continues
            log.warning("leave-one-out fit without %s failed: %s", excluded, exc)
            results.append(LooResult(excluded=excluded, estimate=np.nan, se=np.nan, significant=False, error=str(exc)))
    return results


def standard_specs(
    outcome: str,
    controls: Sequence[str] = CONTROLS,
    cluster: str = "twoway",
    entropy: bool = False,
) -> list[RegressionSpec]:
    """The four-model layout per outcome: between / within / total change /
    between + within, each with the controls. The entropy variant is the
    single joint model with the entropy-based terms."""
    if entropy:
        families = [("between_s", "within_s")]
    else:
        families = [("between",), ("within",), ("dlwf",), ("between", "within")]
    return [
        RegressionSpec(outcome=outcome, regressors=(*family, *controls), cluster=cluster)
        for family in families
    ]


def run_table(frame: pd.DataFrame, specs: Sequence[RegressionSpec], **fit_kwargs) -> pd.DataFrame:
    """Fit every spec and lay the results out as a tidy table.

    Columns: outcome, model, term, label, estimate, se, stars, n, r2,
    within_r2. Failures are logged per model and the table carries on.
    """
    if not specs:
        raise EconometricsError("empty spec set")
    rows = []
    for model_no, spec in enumerate(specs, start=1):
        try:
            fit = fit_twoway_fe(frame, spec, **fit_kwargs)
        except Exception as exc:
            log.warning("model %d for %s failed: %s", model_no, spec.outcome, exc)
            rows.append(
                {
                    "outcome": spec.outcome,
                    "model": model_no,
                    "term": "<error>",
                    "label": str(exc),
                    "estimate": np.nan,
                    "se": np.nan,
                    "stars": "",
                    "n": 0,
                    "r2": np.nan,
                    "within_r2": np.nan,
                }
            )
            continue
        for term in spec.regressors:
            rows.append(
                {
                    "outcome": spec.outcome,
                    "model": model_no,
                    "term": term,
                    "label": TERM_LABELS.get(term, term),
                    "estimate": float(fit.params[term]),
                    "se": float(fit.se[term]),
                    "stars": fit.stars[term],
                    "n": fit.n,
                    "r2": fit.r2,
                    "within_r2": fit.within_r2,
                }
            )
    return pd.DataFrame(rows)
