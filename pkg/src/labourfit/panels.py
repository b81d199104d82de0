"""Canonical in-memory panels and their CSV ingestion.

All inputs are long-format UTF-8 CSV with a header row. The empty string is
the missing-value marker; decimal point, no thousands separators.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

MACRO_INDICATORS = (
    "population",
    "gdppc",
    "compensation",
    "gva",
    "emprate",
    "rd_gdp",
    "exports_gdp",
)

WAGE_DECILES = (1, 5, 9)


class PanelError(ValueError):
    """An input file or panel operation violated its contract."""


def _fmt(value: float) -> str:
    """Shortest round-trip decimal form, deterministic across runs."""
    return repr(float(value))


def _parse_float(raw: str, *, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise PanelError(f"row {row}: column '{column}' is not a number: {raw!r}") from None
    if not np.isfinite(value):
        raise PanelError(f"row {row}: column '{column}' is not finite: {raw!r}")
    return value


def _parse_int(raw: str, *, row: int, column: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise PanelError(f"row {row}: column '{column}' is not an integer: {raw!r}") from None


def _read_rows(path: Path, required: Sequence[str]) -> Iterator[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise PanelError(f"{path}: missing required columns {missing} (header: {header})")
        for row_no, row in enumerate(reader, start=2):
            if all(v is None or v.strip() == "" for v in row.values()):
                continue
            if any(v is None for v in row.values()) or None in row:
                raise PanelError(f"row {row_no}: wrong number of fields")
            yield row_no, row


@dataclass(frozen=True)
class EmploymentPanel:
    """Country x industry x year employment counts with explicit missing cells.

    ``values`` has shape (n_countries, n_industries, n_years) with NaN marking
    missing cells; axis labels are unique and sorted. Instances are immutable
    after construction and safe to share across threads.
    """

    countries: tuple[str, ...]
    industries: tuple[str, ...]
    years: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        for name, labels in (("countries", self.countries), ("industries", self.industries), ("years", self.years)):
            if len(set(labels)) != len(labels):
                raise PanelError(f"{name} contain duplicates")
            if tuple(sorted(labels)) != tuple(labels):
                raise PanelError(f"{name} are not sorted")
        expected = (len(self.countries), len(self.industries), len(self.years))
        if self.values.shape != expected:
            raise PanelError(f"values shape {self.values.shape} != axes {expected}")
        present = self.values[~np.isnan(self.values)]
        if present.size and (present < 0).any():
            raise PanelError("employment values must be non-negative")
        self.values.setflags(write=False)

    # -- lookups ----------------------------------------------------------

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.values).sum())

    @property
    def n_present(self) -> int:
        return int((~np.isnan(self.values)).sum())

    def series(self, country: str, industry: str) -> np.ndarray:
        """The (possibly gappy) time series for one country-industry pair."""
        c = self.countries.index(country)
        i = self.industries.index(industry)
        return self.values[c, i, :].copy()

    def iter_series(self) -> Iterator[tuple[str, str, np.ndarray]]:
        for c, country in enumerate(self.countries):
            for i, industry in enumerate(self.industries):
                yield country, industry, self.values[c, i, :]

    def year_slice(self, year: int) -> np.ndarray:
        """Country x industry matrix for one year (NaN where missing)."""
        try:
            t = self.years.index(year)
        except ValueError:
            raise PanelError(f"year {year} not in panel (have {self.years[0]}..{self.years[-1]})") from None
        return self.values[:, :, t].copy()

    def with_values(self, values: np.ndarray) -> "EmploymentPanel":
        return EmploymentPanel(self.countries, self.industries, self.years, np.array(values, dtype=float))

    # -- contracts ---------------------------------------------------------

    def validate_for_analysis(self) -> "EmploymentPanel":
        """Gate for the analysis pipeline: needs >= 2 labels on every axis."""
        for name, labels in (("countries", self.countries), ("industries", self.industries), ("years", self.years)):
            if len(labels) < 2:
                raise PanelError(f"panel has fewer than 2 {name}: {list(labels)}")
        return self

    def restrict(self, countries: Sequence[str] | None = None, years: Sequence[int] | None = None) -> "EmploymentPanel":
        """Slice to the requested countries/years, preserving all invariants."""
        c_idx = _restrict_axis(self.countries, countries, "countries")
        t_idx = _restrict_axis(self.years, years, "years")
        return EmploymentPanel(
            tuple(self.countries[i] for i in c_idx),
            self.industries,
            tuple(self.years[i] for i in t_idx),
            self.values[np.ix_(c_idx, range(len(self.industries)), t_idx)].copy(),
        )

    # -- I/O ----------------------------------------------------------------

    def write_csv(self, path: Path | str) -> None:
        """Write the full cell grid back to long CSV (empty string = missing)."""
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["country", "industry", "year", "employment"])
            for c, country in enumerate(self.countries):
                for i, industry in enumerate(self.industries):
                    for t, year in enumerate(self.years):
                        v = self.values[c, i, t]
                        writer.writerow([country, industry, year, "" if np.isnan(v) else _fmt(v)])


def _restrict_axis(axis: tuple, wanted: Sequence | None, name: str) -> list[int]:
    if wanted is None:
        return list(range(len(axis)))
    unknown = [w for w in wanted if w not in axis]
    if unknown:
        raise PanelError(f"unknown {name}: {unknown}")
    keep = set(wanted)
    idx = [i for i, label in enumerate(axis) if label in keep]
    if not idx:
        raise PanelError(f"restriction leaves no {name}")
    return idx


def load_employment_panel(path: Path | str, columns: Mapping[str, str] | None = None) -> EmploymentPanel:
    """Read a long-format employment file into an EmploymentPanel.

    ``columns`` maps the canonical names (country, industry, year, employment)
    to the file's header names; defaults to the canonical names themselves.
    Rejects negative employment and duplicate (country, industry, year) keys,
    naming the offending row.
    """
    cols = {k: k for k in ("country", "industry", "year", "employment")}
    cols.update(columns or {})
    cells: dict[tuple[str, str, int], float] = {}
    for row_no, row in _read_rows(Path(path), list(cols.values())):
        country = row[cols["country"]].strip()
        industry = row[cols["industry"]].strip()
        year = _parse_int(row[cols["year"]].strip(), row=row_no, column=cols["year"])
        if not country or not industry:
            raise PanelError(f"row {row_no}: empty country or industry code")
        raw = row[cols["employment"]].strip()
        if raw == "":
            value = np.nan
        else:
            value = _parse_float(raw, row=row_no, column=cols["employment"])
            if value < 0:
                raise PanelError(f"row {row_no}: negative employment {raw!r} for ({country}, {industry}, {year})")
        key = (country, industry, year)
        if key in cells:
            raise PanelError(f"row {row_no}: duplicate key (country={country}, industry={industry}, year={year})")
        cells[key] = value

    if not cells:
        raise PanelError(f"{path}: no data rows")
    countries = tuple(sorted({k[0] for k in cells}))
    industries = tuple(sorted({k[1] for k in cells}))
    years = tuple(sorted({k[2] for k in cells}))
    values = np.full((len(countries), len(industries), len(years)), np.nan)
    c_pos = {c: i for i, c in enumerate(countries)}
    i_pos = {i: j for j, i in enumerate(industries)}
    t_pos = {t: k for k, t in enumerate(years)}
    for (country, industry, year), value in cells.items():
        values[c_pos[country], i_pos[industry], t_pos[year]] = value
    return EmploymentPanel(countries, industries, years, values)


@dataclass(frozen=True)
class MacroRecord:
    """One country-year of macro indicators; None marks a missing indicator."""

    country: str
    year: int
    population: float | None = None
    gdppc: float | None = None
    compensation: float | None = None
    gva: float | None = None
    emprate: float | None = None
    rd_gdp: float | None = None
    exports_gdp: float | None = None

    @property
    def incomplete(self) -> bool:
        return any(getattr(self, name) is None for name in MACRO_INDICATORS)


@dataclass(frozen=True)
class WageRecord:
    """Average labour income at deciles 1, 5 and 9 for one country-year."""

    country: str
    year: int
    d1: float | None = None
    d5: float | None = None
    d9: float | None = None

    @property
    def incomplete(self) -> bool:
        return self.d1 is None or self.d5 is None or self.d9 is None


class _RecordPanel:
    """Shared behaviour of the (country, year)-keyed record panels."""

    def __init__(self, records: Mapping[tuple[str, int], object]):
        self._records = dict(sorted(records.items()))

    @property
    def records(self) -> dict:
        return dict(self._records)

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(sorted({c for c, _ in self._records}))

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted({y for _, y in self._records}))

    def get(self, country: str, year: int):
        return self._records.get((country, year))

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    def restrict(self, countries: Sequence[str] | None = None, years: Sequence[int] | None = None):
        if countries is not None:
            unknown = [c for c in countries if c not in self.countries]
            if unknown:
                raise PanelError(f"unknown countries: {unknown}")
        if years is not None:
            unknown_y = [y for y in years if y not in self.years]
            if unknown_y:
                raise PanelError(f"unknown years: {unknown_y}")
        keep = {
            key: rec
            for key, rec in self._records.items()
            if (countries is None or key[0] in countries) and (years is None or key[1] in years)
        }
        if not keep:
            raise PanelError("restriction leaves no records")
        return type(self)(keep)


class MacroPanel(_RecordPanel):
    """Country-year macro indicators (population, GDP pc, compensation, GVA,
    employment rate, R&D and exports shares of GDP)."""


class WagePanel(_RecordPanel):
    """Country-year wage deciles with the ordering invariant d1 <= d5 <= d9."""


_MACRO_SHARES = ("emprate", "rd_gdp", "exports_gdp")


def _check_macro_value(indicator: str, value: float, row_no: int) -> None:
    if indicator == "population":
        if value <= 0:
            raise PanelError(f"row {row_no}: population must be > 0, got {value}")
    elif indicator in _MACRO_SHARES:
        if not 0 <= value <= 200:
            raise PanelError(f"row {row_no}: {indicator} outside [0, 200] (% units): {value}")
    else:
        if value < 0:
            raise PanelError(f"row {row_no}: {indicator} must be non-negative, got {value}")


def load_macro_panel(path: Path | str, columns: Mapping[str, str] | None = None) -> MacroPanel:
    """Read ``country,year,indicator,value`` rows into a MacroPanel.

    Unknown indicators and invariant violations error with the row number;
    country-years with missing indicators are kept and flagged incomplete.
    """
    cols = {k: k for k in ("country", "year", "indicator", "value")}
    cols.update(columns or {})
    seen: dict[tuple[str, int, str], int] = {}
    data: dict[tuple[str, int], dict] = {}
    for row_no, row in _read_rows(Path(path), list(cols.values())):
        country = row[cols["country"]].strip()
        year = _parse_int(row[cols["year"]].strip(), row=row_no, column=cols["year"])
        indicator = row[cols["indicator"]].strip()
        if indicator not in MACRO_INDICATORS:
            raise PanelError(f"row {row_no}: unknown indicator {indicator!r} (expected one of {MACRO_INDICATORS})")
        key = (country, year, indicator)
        if key in seen:
            raise PanelError(f"row {row_no}: duplicate (country={country}, year={year}, indicator={indicator}), first at row {seen[key]}")
        seen[key] = row_no
        raw = row[cols["value"]].strip()
        if raw == "":
            continue
        value = _parse_float(raw, row=row_no, column=cols["value"])
        _check_macro_value(indicator, value, row_no)
        data.setdefault((country, year), {})[indicator] = value

    records = {}
    for (country, year) in sorted({k[:2] for k in seen}):
        rec = MacroRecord(country=country, year=year, **data.get((country, year), {}))
        if rec.incomplete:
            log.warning("macro record %s-%s incomplete (missing %s)", country, year,
                        [n for n in MACRO_INDICATORS if getattr(rec, n) is None])
        records[(country, year)] = rec
    if not records:
        raise PanelError(f"{path}: no data rows")
    return MacroPanel(records)


def load_wage_panel(path: Path | str, columns: Mapping[str, str] | None = None) -> WagePanel:
    """Read ``country,year,decile,wage`` rows into a WagePanel.

    Deciles are restricted to {1, 5, 9}; a complete country-year must satisfy
    0 < d1 <= d5 <= d9, otherwise the error names the country-year.
    """
    cols = {k: k for k in ("country", "year", "decile", "wage")}
    cols.update(columns or {})
    seen: dict[tuple[str, int, int], int] = {}
    data: dict[tuple[str, int], dict] = {}
    for row_no, row in _read_rows(Path(path), list(cols.values())):
        country = row[cols["country"]].strip()
        year = _parse_int(row[cols["year"]].strip(), row=row_no, column=cols["year"])
        decile = _parse_int(row[cols["decile"]].strip(), row=row_no, column=cols["decile"])
        if decile not in WAGE_DECILES:
            raise PanelError(f"row {row_no}: decile must be one of {WAGE_DECILES}, got {decile}")
        key = (country, year, decile)
        if key in seen:
            raise PanelError(f"row {row_no}: duplicate (country={country}, year={year}, decile={decile})")
        seen[key] = row_no
        raw = row[cols["wage"]].strip()
        if raw == "":
            continue
        value = _parse_float(raw, row=row_no, column=cols["wage"])
        if value <= 0:
            raise PanelError(f"row {row_no}: wage must be > 0, got {value}")
        data.setdefault((country, year), {})[f"d{decile}"] = value

    records = {}
    for (country, year) in sorted({k[:2] for k in seen}):
        rec = WageRecord(country=country, year=year, **data.get((country, year), {}))
        if rec.incomplete:
            log.warning("wage record %s-%s incomplete", country, year)
        elif not rec.d1 <= rec.d5 <= rec.d9:
            raise PanelError(f"decile ordering violated for {country}-{year}: d1={rec.d1}, d5={rec.d5}, d9={rec.d9}")
        records[(country, year)] = rec
    if not records:
        raise PanelError(f"{path}: no data rows")
    return WagePanel(records)


def restrict_sample(panel, countries: Sequence[str] | None = None, years: Sequence[int] | None = None):
    """Restrict any panel to a country list and/or year set.

    Idempotent; unknown labels raise listing them. ``years`` may be any
    iterable of years (e.g. ``range(2010, 2019)``).
    """
    if years is not None:
        years = list(years)
        if not years:
            raise PanelError("empty year range")
    return panel.restrict(countries=countries, years=years)
