"""Outcome variables and the regression dataset.

Assembles, per country-year: employment growth (ratio of consecutive
employment rates, plus the percent transform), the three wage-decile ratios,
the labour share (compensation over gross value added), the k=1 decomposition
regressors, and the controls (log population, log GDP per capita, R&D and
exports shares of GDP). Missingness stays explicit (NaN); rows are dropped
per regression, never globally.
"""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .decomposition import DecompositionRecord
from .panels import MacroPanel, WagePanel

log = logging.getLogger(__name__)

CONTROLS = ("log_pop", "log_gdppc", "rd_gdp", "exports_gdp")

PANEL_COLUMNS = (
    "country",
    "year",
    "g",
    "g_pct",
    "r91",
    "r51",
    "r95",
    "labshare",
    "between",
    "within",
    "dlwf",
    "between_s",
    "within_s",
    "dlws",
    *CONTROLS,
)


class OutcomeError(ValueError):
    pass


def employment_growth(macro: MacroPanel) -> dict[tuple[str, int], float]:
    """g[c,t] = emprate[c,t] / emprate[c,t-1]; undefined for each country's
    first year and wherever a rate (or the previous year's) is missing."""
    growth: dict[tuple[str, int], float] = {}
    for rec in macro:
        prev = macro.get(rec.country, rec.year - 1)
        if prev is None or rec.emprate is None or prev.emprate is None:
            continue
        if prev.emprate == 0:
            log.warning("zero employment rate for %s-%s; growth left missing", rec.country, rec.year - 1)
            continue
        growth[(rec.country, rec.year)] = rec.emprate / prev.emprate
    return growth


def wage_ratios(wages: WagePanel) -> dict[tuple[str, int], tuple[float, float, float]]:
    """Decile ratios (r91, r51, r95) per complete country-year.

    r51 = d5/d1 and r95 = d9/d5 directly; r91 is assembled as their product
    so the identity r91 == r51 * r95 holds exactly in floating point (it
    agrees with d9/d1 to one ulp). Any missing decile makes all three missing.
    """
    ratios = {}
    for rec in wages:
        if rec.incomplete:
            continue
        r51 = rec.d5 / rec.d1
        r95 = rec.d9 / rec.d5
        ratios[(rec.country, rec.year)] = (r51 * r95, r51, r95)
    return ratios


def labour_share(macro: MacroPanel) -> dict[tuple[str, int], float]:
    """Compensation of employees over gross value added, both at constant
    prices. Values outside the (0, 2) sanity band are kept with a warning."""
    shares = {}
    for rec in macro:
        if rec.compensation is None or rec.gva is None:
            continue
        if rec.gva <= 0:
            log.warning("non-positive GVA for %s-%s; labour share left missing", rec.country, rec.year)
            continue
        value = rec.compensation / rec.gva
        if not 0 < value < 2:
            log.warning("labour share %.3f for %s-%s outside (0, 2) sanity band; kept", value, rec.country, rec.year)
        shares[(rec.country, rec.year)] = value
    return shares


def assemble_panel(
    decomposition: Iterable[DecompositionRecord],
    macro: MacroPanel,
    wages: WagePanel,
    entropy_decomposition: Iterable[DecompositionRecord] | None = None,
    lag: int = 0,
) -> pd.DataFrame:
    """Merge k=1 decomposition terms, outcomes and controls per country-year.

    Rows are keyed by the decomposition's end year; ``lag`` shifts the
    regressors forward so outcomes at t are matched with terms from t - lag.
    Raises when the join is empty or the keys are disjoint; emits the row
    count. Missing fields stay NaN for per-regression deletion downstream.
    """
    records = [r for r in decomposition if r.k == 1]
    if not records:
        raise OutcomeError("no k=1 decomposition records to assemble")
    toolkit = {
        "growth": employment_growth(macro),
        "ratios": wage_ratios(wages),
        "labshare": labour_share(macro),
    }
    entropy_by_key: dict[tuple[str, int], DecompositionRecord] = {}
    for rec in entropy_decomposition or ():
        if rec.k == 1:
            entropy_by_key[(rec.country, rec.year_end)] = rec

    rows = []
    for rec in sorted(records, key=lambda r: (r.country, r.year_end)):
        year = rec.year_end + lag
        key = (rec.country, year)
        macro_rec = macro.get(*key)
        ratios = toolkit["ratios"].get(key)
        growth = toolkit["growth"].get(key)
        entropy_rec = entropy_by_key.get((rec.country, rec.year_end))
        row = {
            "country": rec.country,
            "year": year,
            "g": growth if growth is not None else np.nan,
            "g_pct": (growth - 1.0) * 100.0 if growth is not None else np.nan,
            "r91": ratios[0] if ratios else np.nan,
            "r51": ratios[1] if ratios else np.nan,
            "r95": ratios[2] if ratios else np.nan,
            "labshare": toolkit["labshare"].get(key, np.nan),
            "between": rec.between,
            "within": rec.within,
            "dlwf": rec.dlwf,
            "between_s": entropy_rec.between if entropy_rec else np.nan,
            "within_s": entropy_rec.within if entropy_rec else np.nan,
            "dlws": entropy_rec.dlwf if entropy_rec else np.nan,
            "log_pop": np.log(macro_rec.population) if macro_rec and macro_rec.population else np.nan,
            "log_gdppc": np.log(macro_rec.gdppc) if macro_rec and macro_rec.gdppc else np.nan,
            "rd_gdp": macro_rec.rd_gdp if macro_rec and macro_rec.rd_gdp is not None else np.nan,
            "exports_gdp": macro_rec.exports_gdp if macro_rec and macro_rec.exports_gdp is not None else np.nan,
        }
        rows.append(row)

    frame = pd.DataFrame(rows, columns=list(PANEL_COLUMNS))
    if frame.empty:
        raise OutcomeError("empty join: no country-years shared across sources")
    shared = frame.drop(columns=["country", "year", "between", "within", "dlwf", "between_s", "within_s", "dlws"])
    if shared.isna().all(axis=None):
        raise OutcomeError("join keys disjoint: no outcome or control matched any decomposition row")
    _sanity_check(frame)
    log.info("assembled panel with %d rows (%d countries x years)", len(frame), frame["country"].nunique())
    return frame


def _sanity_check(frame: pd.DataFrame) -> None:
    bad_g = frame["g"].dropna() <= 0
    if bad_g.any():
        raise OutcomeError("employment growth must be positive where defined")
    for col in ("r91", "r51", "r95"):
        bad = frame[col].dropna() < 1
        if bad.any():
            raise OutcomeError(f"{col} below 1 despite decile ordering")
    outside = frame["labshare"].dropna()
    outside = outside[(outside <= 0) | (outside >= 2)]
    if len(outside):
        log.warning("%d labour-share values outside the (0, 2) sanity band", len(outside))


def write_panel_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def read_panel_csv(path) -> pd.DataFrame:
    # empty string is the only missing marker; "NA" is a valid country code
    return pd.read_csv(path, keep_default_na=False, na_values=[""])
