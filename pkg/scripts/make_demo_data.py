#!/usr/bin/env python3
"""Regenerate the bundled synthetic demo dataset (data/demo/).

Five countries x twelve industries x nine years with a nested specialisation
pattern: the most capable country is active everywhere, the least capable only
in the simplest industries, and labour drifts toward complex industries at
country-specific rates. Employment has ~12% missing cells (never a fully
missing series); macro indicators and wage deciles are complete. Everything
is deterministic from the seed below.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

SEED = 20180101
COUNTRIES = ["AT", "BG", "CZ", "DK", "ES"]
INDUSTRIES = ["1011", "1320", "1629", "2222", "2451", "2611", "2829", "3101", "4520", "5829", "6201", "7112"]
YEARS = list(range(2010, 2019))
OUT_DIR = Path(__file__).resolve().parent.parent / "data" / "demo"

# countries ordered by capability: AT does everything, ES only the simplest
CAPABILITY = {"AT": 12, "CZ": 9, "DK": 7, "BG": 5, "ES": 3}
SIZE = {"AT": 280_000, "CZ": 160_000, "DK": 90_000, "BG": 60_000, "ES": 40_000}
SHIFT_RATE = {"AT": 0.012, "CZ": 0.020, "DK": 0.006, "BG": -0.004, "ES": 0.010}


def employment_rows(rng: np.random.Generator) -> list[list]:
    rows = []
    profile = np.linspace(1.6, 0.45, len(INDUSTRIES))  # simple industries absorb more labour
    cells = []
    for country in COUNTRIES:
        cap = CAPABILITY[country]
        for j, industry in enumerate(INDUSTRIES):
            active = 1.0 if j < cap else 0.12
            base = SIZE[country] * profile[j] * active / sum(profile)
            drift = SHIFT_RATE[country] * (j / len(INDUSTRIES) - 0.4)
            for t, year in enumerate(YEARS):
                level = base * (1.0 + drift) ** t * rng.lognormal(0.0, 0.05)
                cells.append((country, industry, year, max(int(round(level)), 1)))

    mask = np.zeros(len(cells), dtype=bool)
    n_mask = int(round(0.12 * len(cells)))
    order = rng.permutation(len(cells))
    per_series: dict[tuple[str, str], int] = {}
    for idx in order:
        if mask.sum() >= n_mask:
            break
        country, industry, _, _ = cells[idx]
        key = (country, industry)
        if per_series.get(key, 0) >= len(YEARS) - 2:  # keep >= 2 observed per series
            continue
        mask[idx] = True
        per_series[key] = per_series.get(key, 0) + 1

    for masked, (country, industry, year, value) in zip(mask, cells):
        rows.append([country, industry, year, "" if masked else value])
    return rows


def macro_rows(rng: np.random.Generator) -> list[list]:
    rows = []
    base_gdppc = {"AT": 41_000, "CZ": 24_000, "DK": 47_000, "BG": 12_000, "ES": 27_000}
    base_emprate = {"AT": 71.0, "CZ": 66.0, "DK": 73.0, "BG": 60.0, "ES": 58.0}
    for country in COUNTRIES:
        population = SIZE[country] * rng.uniform(28, 36)
        gdppc = float(base_gdppc[country])
        emprate = base_emprate[country]
        rd = rng.uniform(0.9, 3.2)
        exports = rng.uniform(40, 85)
        for year in YEARS:
            population *= 1 + rng.normal(0.003, 0.002)
            gdppc *= 1 + rng.normal(0.015, 0.01)
            emprate = float(np.clip(emprate + rng.normal(0.25, 0.45), 45, 85))
            rd = float(np.clip(rd + rng.normal(0.03, 0.08), 0.4, 4.5))
            exports = float(np.clip(exports + rng.normal(0.3, 1.2), 20, 95))
            gva = population * gdppc / 1e3 * rng.uniform(0.85, 0.95)
            compensation = gva * rng.uniform(0.52, 0.60)
            for indicator, value in [
                ("population", round(population)),
                ("gdppc", round(gdppc, 2)),
                ("compensation", round(compensation, 2)),
                ("gva", round(gva, 2)),
                ("emprate", round(emprate, 3)),
                ("rd_gdp", round(rd, 3)),
                ("exports_gdp", round(exports, 3)),
            ]:
                rows.append([country, year, indicator, value])
    return rows


def wage_rows(rng: np.random.Generator) -> list[list]:
    rows = []
    for country in COUNTRIES:
        d1 = SIZE[country] ** 0.25 * rng.uniform(28, 40)
        spread51 = rng.uniform(1.7, 2.2)
        spread95 = rng.uniform(1.4, 1.8)
        for year in YEARS:
            d1 *= 1 + rng.normal(0.02, 0.01)
            spread51 = float(np.clip(spread51 * (1 + rng.normal(0, 0.01)), 1.2, 3.0))
            spread95 = float(np.clip(spread95 * (1 + rng.normal(0, 0.01)), 1.2, 3.0))
            d5 = d1 * spread51
            d9 = d5 * spread95
            for decile, wage in [(1, d1), (5, d5), (9, d9)]:
                rows.append([country, year, decile, round(wage, 2)])
    return rows


RUN_TOML = """\
seed = 20180101

[inputs]
employment = "employment.csv"
macro = "macro.csv"
wages = "wages.csv"

[sample]
year_start = 2010
year_end = 2018

[reconstruction]
strategy = 1
validate = true
fractions = [0.09, 0.14, 0.19, 0.24, 0.50]

[ica]
mode = "ratio"
threshold = 1.0

[decomposition]
k = [1, 4, 8]

[regression]
cluster = "twoway"
outcomes = ["g_pct", "r91", "r51", "r95", "labshare"]
loo_outcomes = ["g_pct"]
"""


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    write_csv(OUT_DIR / "employment.csv", ["country", "industry", "year", "employment"], employment_rows(rng))
    write_csv(OUT_DIR / "macro.csv", ["country", "year", "indicator", "value"], macro_rows(rng))
    write_csv(OUT_DIR / "wages.csv", ["country", "year", "decile", "wage"], wage_rows(rng))
    (OUT_DIR / "run.toml").write_text(RUN_TOML, encoding="utf-8")
    print(f"wrote {OUT_DIR / 'run.toml'}")


if __name__ == "__main__":
    main()
