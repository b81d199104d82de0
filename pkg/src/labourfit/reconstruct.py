"""Gap filling for employment time series and its masking/MAE validation.

Seven reconstruction strategies share the same skeleton: internal gaps (cells
between the first and last observed year) are linearly interpolated, external
gaps (before the first / after the last observation) are extrapolated by a
strategy-specific rule. Strategy 6 is the exception: it replaces the whole
series with a straight-line fit. Growth rates are multiplicative ratios
v[t+1]/v[t]; a rate that cannot be computed (zero denominator, or no rates at
all) degrades the affected edge to constant extrapolation. Every output is
floored at zero.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .panels import EmploymentPanel, _fmt

log = logging.getLogger(__name__)

STRATEGIES = (1, 2, 3, 4, 5, 6, 7)

DEFAULT_MASK_FRACTIONS = (0.09, 0.14, 0.19, 0.24, 0.50)


class ReconstructionError(ValueError):
    pass


class SeriesExcludedError(ReconstructionError):
    """The series is fully missing and is excluded from reconstruction."""


def _interpolate_internal(values: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Linearly fill gaps between the first and last observed points."""
    obs = ~np.isnan(values)
    first = int(obs.argmax())
    last = int(len(values) - 1 - obs[::-1].argmax())
    out = values.astype(float).copy()
    idx = np.arange(len(values))
    inner = slice(first, last + 1)
    out[inner] = np.interp(idx[inner], idx[obs], values[obs])
    return out, first, last


def _ratios(segment: np.ndarray) -> np.ndarray:
    """Consecutive growth ratios of a gap-free segment; non-finite where undefined."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return segment[1:] / segment[:-1]


def _first_finite(rates: np.ndarray) -> float | None:
    finite = rates[np.isfinite(rates)]
    return float(finite[0]) if finite.size else None


def _last_finite(rates: np.ndarray) -> float | None:
    finite = rates[np.isfinite(rates)]
    return float(finite[-1]) if finite.size else None


def _mean_finite(rates: np.ndarray) -> float | None:
    finite = rates[np.isfinite(rates)]
    return float(finite.mean()) if finite.size else None


def _fill_left(out: np.ndarray, first: int, rate: float | None) -> None:
    """Extrapolate out[:first] backwards by repeated division; constant if the
    rate is unavailable or the extrapolation blows up."""
    anchor = out[first]
    if rate is None or rate == 0 or not np.isfinite(rate):
        out[:first] = anchor
        return
    with np.errstate(over="ignore"):
        for j in range(first - 1, -1, -1):
            out[j] = out[j + 1] / rate
    if not np.isfinite(out[:first]).all():
        out[:first] = anchor


def _fill_right(out: np.ndarray, last: int, rate: float | None) -> None:
    anchor = out[last]
    if rate is None or not np.isfinite(rate):
        out[last + 1 :] = anchor
        return
    with np.errstate(over="ignore"):
        for j in range(last + 1, len(out)):
            out[j] = out[j - 1] * rate
    if not np.isfinite(out[last + 1 :]).all():
        out[last + 1 :] = anchor


def _line_fit(values: np.ndarray) -> tuple[float, float]:
    """Least-squares (intercept, slope) on the observed points."""
    obs = ~np.isnan(values)
    t = np.arange(len(values), dtype=float)[obs]
    v = values[obs]
    slope, intercept = np.polyfit(t, v, 1)
    return float(intercept), float(slope)


def _rolling_edge_rates(rates: np.ndarray) -> tuple[float | None, float | None]:
    """Left/right edge rates for strategy 5.

    Trailing 3-year moving average of growth ratios with the short-window
    start rule: the first rate stands alone, the second averages the first
    two. The left edge uses the single adjacent rate, the right edge the
    moving average at the last year.
    """
    finite_mask = np.isfinite(rates)
    if not finite_mask.any():
        return None, None
    left = _first_finite(rates)
    window = rates[-3:] if len(rates) >= 3 else rates
    right = _mean_finite(window)
    return left, right


def reconstruct_series(values: Sequence[float] | np.ndarray, strategy: int) -> np.ndarray:
    """Fill NaN gaps in one time series with the requested strategy (1-7).

    A fully missing series raises SeriesExcludedError ("excluded"); a series
    with a single observation is returned constant at that value for every
    strategy. Observed cells are preserved exactly except under strategy 6,
    which replaces the whole series by its straight-line fit.
    """
    if strategy not in STRATEGIES:
        raise ReconstructionError(f"unknown strategy {strategy}; expected 1-7")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) < 2:
        raise ReconstructionError("series must be one-dimensional with length >= 2")
    n_obs = int((~np.isnan(values)).sum())
    if n_obs == 0:
        raise SeriesExcludedError("excluded: series is fully missing")
    if n_obs == 1:
        return np.full(len(values), float(values[~np.isnan(values)][0]))

    if strategy == 6:
        intercept, slope = _line_fit(values)
        out = intercept + slope * np.arange(len(values), dtype=float)
        return np.maximum(out, 0.0)

    out, first, last = _interpolate_internal(values)
    segment = out[first : last + 1]
    rates = _ratios(segment)

    if strategy == 1:
        left = right = None
    elif strategy == 2:
        left, right = _first_finite(rates), _last_finite(rates)
    elif strategy == 3:
        left = right = _mean_finite(rates)
    elif strategy == 4:
        left = right = _first_finite(rates)
    elif strategy == 5:
        left, right = _rolling_edge_rates(rates)
    else:  # strategy == 7
        intercept, slope = _line_fit(values)
        t = np.arange(len(values), dtype=float)
        out[:first] = intercept + slope * t[:first]
        out[last + 1 :] = intercept + slope * t[last + 1 :]
        return np.maximum(out, 0.0)

    _fill_left(out, first, left)
    _fill_right(out, last, right)
    return np.maximum(out, 0.0)


def reconstruct_panel(panel: EmploymentPanel, strategy: int) -> tuple[EmploymentPanel, list[tuple[str, str]]]:
    """Reconstruct every country-industry series of a panel.

    Fully missing series are excluded (dropped cells stay NaN) and returned
    as a list of (country, industry) pairs alongside the filled panel.
    """
    filled = panel.values.astype(float).copy()
    excluded: list[tuple[str, str]] = []
    for c, country in enumerate(panel.countries):
        for i, industry in enumerate(panel.industries):
            try:
                filled[c, i, :] = reconstruct_series(panel.values[c, i, :], strategy)
            except SeriesExcludedError:
                excluded.append((country, industry))
    if excluded:
        log.warning("excluded %d fully missing series (e.g. %s)", len(excluded), excluded[:3])
    return panel.with_values(filled), excluded


# -- masking validation harness ------------------------------------------------


def mask_random(panel: EmploymentPanel, na_fraction: float, seed: int) -> tuple[EmploymentPanel, np.ndarray]:
    """Mask round(na_fraction * n_cells) cells of the complete-series subset.

    Only fully observed series are eligible (series that already have gaps
    are left untouched; the validation design masks the complete subset). The
    draw is uniform, deterministic for a fixed seed, and never leaves a
    series fully masked: an all-masked series has one cell restored and the
    mask re-drawn elsewhere, keeping the count exact.
    Returns (masked panel, boolean mask array aligned with panel.values).
    """
    if not 0 <= na_fraction <= 1:
        raise ReconstructionError(f"na_fraction outside [0, 1]: {na_fraction}")
    n_c, n_i, n_t = panel.values.shape
    flat_series = panel.values.reshape(n_c * n_i, n_t)
    complete = ~np.isnan(flat_series).any(axis=1)
    n_series = int(complete.sum())
    if n_series == 0:
        raise ReconstructionError("mask_random needs at least one fully observed series")
    eligible = np.flatnonzero(np.repeat(complete, n_t))
    total = n_series * n_t
    n_mask = int(np.rint(na_fraction * total))
    if n_mask > total - n_series:
        raise ReconstructionError(
            f"cannot mask {n_mask} of {total} complete-series cells without fully masking a series"
        )

    rng = np.random.default_rng(seed)
    flat = np.zeros(panel.values.size, dtype=bool)
    flat[rng.choice(eligible, size=n_mask, replace=False)] = True
    mask = flat.reshape(panel.values.shape)

    guard = 0
    while True:
        per_series = mask.reshape(n_c * n_i, n_t).sum(axis=1)
        bad = np.flatnonzero(per_series == n_t)
        if bad.size == 0:
            break
        guard += 1
        if guard > 100 * n_series:
            raise ReconstructionError("mask re-draw did not terminate")
        series_mask = mask.reshape(n_c * n_i, n_t)
        for s in bad:
            series_mask[s, rng.integers(n_t)] = False
        free = eligible[~mask.reshape(-1)[eligible]]
        mask.reshape(-1)[rng.choice(free, size=bad.size, replace=False)] = True

    masked_values = panel.values.copy()
    masked_values[mask] = np.nan
    return panel.with_values(masked_values), mask


@dataclass(frozen=True)
class MaeRow:
    strategy: int
    fraction: float
    seed: int
    mae: float
    n_masked: int
    n_excluded: int


@dataclass(frozen=True)
class MaeReport:
    """Mean absolute reconstruction errors per strategy x masking subsample."""

    rows: tuple[MaeRow, ...]

    def best_strategy(self) -> int:
        by_strategy: dict[int, list[float]] = {}
        for row in self.rows:
            by_strategy.setdefault(row.strategy, []).append(row.mae)
        return min(by_strategy, key=lambda s: float(np.mean(by_strategy[s])))

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["strategy", "fraction", "seed", "mae", "n_masked"])
            for row in self.rows:
                writer.writerow([row.strategy, _fmt(row.fraction), row.seed, _fmt(row.mae), row.n_masked])


def evaluate_strategies(
    panel: EmploymentPanel,
    fractions: Sequence[float] = DEFAULT_MASK_FRACTIONS,
    seeds: Sequence[int] = (0,),
    strategies: Sequence[int] = STRATEGIES,
) -> MaeReport:
    """Score every strategy on randomly masked copies of a complete panel.

    The MAE for a (strategy, fraction, seed) cell is taken over the masked
    cells only, against the held-out truth. Series that a strategy cannot
    reconstruct are counted as exclusions and skipped. Bit-reproducible for
    fixed fractions/seeds: series are processed in panel order and the error
    sum is accumulated in that fixed order.
    """
    rows = []
    for fraction in fractions:
        for seed in seeds:
            masked, mask = mask_random(panel, fraction, seed)
            n_masked = int(mask.sum())
            for strategy in strategies:
                abs_err = 0.0
                n_cells = 0
                n_excluded = 0
                for c in range(len(panel.countries)):
                    for i in range(len(panel.industries)):
                        cell_mask = mask[c, i, :]
                        if not cell_mask.any():
                            continue
                        try:
                            filled = reconstruct_series(masked.values[c, i, :], strategy)
                        except SeriesExcludedError:
                            n_excluded += 1
                            continue
                        err = np.abs(filled[cell_mask] - panel.values[c, i, cell_mask])
                        abs_err += float(err.sum())
                        n_cells += int(cell_mask.sum())
                mae = abs_err / n_cells if n_cells else 0.0
                rows.append(MaeRow(strategy, float(fraction), int(seed), mae, n_masked, n_excluded))
                if n_excluded:
                    log.warning("strategy %d fraction %s seed %s: %d series excluded", strategy, fraction, seed, n_excluded)
    return MaeReport(tuple(rows))
