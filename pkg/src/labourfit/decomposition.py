"""Labour shares, labour-weighted fitness, and its within/between split.

The change of the labour-weighted score between two years splits exactly into
a within term (industries getting more complex at frozen labour shares) and a
between term (labour reallocating toward more complex industries):

    within  = sum_i theta[i, t-k] * (Q[i, t] - Q[i, t-k])
    between = sum_i Q[i, t] * (theta[i, t] - theta[i, t-k])

and within + between equals the change of the weighted sum identically. The
between term is the structural-change signal carried into the regressions.
The same algebra applies verbatim with the per-industry Shannon entropy in
place of complexity (the robustness baseline).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .null_model import WeightedMatrix
from .panels import EmploymentPanel

log = logging.getLogger(__name__)


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class LabourShares:
    """Industry employment shares for one country-year; sums to 1."""

    country: str
    year: int
    industries: tuple[str, ...]
    shares: np.ndarray

    def __post_init__(self) -> None:
        if self.shares.shape != (len(self.industries),):
            raise DecompositionError("shares shape does not match industries")
        if (self.shares < 0).any():
            raise DecompositionError("shares must be non-negative")
        total = float(self.shares.sum())
        if abs(total - 1.0) > 1e-12:
            raise DecompositionError(f"shares for {self.country}-{self.year} sum to {total}, not 1")
        self.shares.setflags(write=False)

    def as_map(self) -> dict[str, float]:
        return dict(zip(self.industries, self.shares.tolist()))


@dataclass(frozen=True)
class IndustryEntropy:
    """Shannon entropy of each industry's employment distribution across
    countries (natural log); bounded by log(n_countries)."""

    year: int | None
    industries: tuple[str, ...]
    values: np.ndarray

    def as_map(self) -> dict[str, float]:
        return dict(zip(self.industries, self.values.tolist()))


@dataclass(frozen=True)
class DecompositionRecord:
    """Within/between split of the weighted-score change over one window."""

    country: str
    year_start: int
    year_end: int
    k: int
    dlwf: float
    within: float
    between: float
    measure: str = "Q"
    imputed_start: tuple[str, ...] = ()
    imputed_end: tuple[str, ...] = ()


def labour_shares(panel: EmploymentPanel, country: str, year: int) -> LabourShares:
    """Employment shares theta_i = L[c,i,t] / sum_i' L[c,i',t] for one country-year.

    Requires a reconstructed (gap-free) panel slice for that country-year;
    industries missing that year are excluded from the share base.
    """
    if country not in panel.countries:
        raise DecompositionError(f"unknown country {country!r}")
    c = panel.countries.index(country)
    t = panel.years.index(year) if year in panel.years else None
    if t is None:
        raise DecompositionError(f"unknown year {year}")
    row = panel.values[c, :, t]
    present = ~np.isnan(row)
    total = float(row[present].sum())
    if total <= 0:
        raise DecompositionError(f"zero total employment for {country}-{year}")
    industries = tuple(i for i, ok in zip(panel.industries, present) if ok)
    return LabourShares(country, year, industries, row[present] / total)


def align_scores(industries: Sequence[str], scores: Mapping[str, float]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Score vector aligned to ``industries``; gaps get the year's minimum.

    Industries without a score (dropped by the binarization that year) are
    imputed at the minimum observed score and reported, keeping the
    decomposition identity exact while flagging imputation pressure.
    """
    if not scores:
        raise DecompositionError("no scores available for alignment")
    floor = min(scores.values())
    imputed = tuple(i for i in industries if i not in scores)
    values = np.array([scores.get(i, floor) for i in industries])
    return values, imputed


def lwf(theta: LabourShares, scores: Mapping[str, float]) -> float:
    """Labour-weighted score sum_i theta_i * Q_i (invariant to zero-share
    industries and to industry ordering)."""
    values, imputed = align_scores(theta.industries, scores)
    if imputed:
        log.warning("%s-%s: %d industries lack a score; imputed at the minimum", theta.country, theta.year, len(imputed))
    return float(theta.shares @ values)


def _union_shares(theta: LabourShares, industries: Sequence[str]) -> np.ndarray:
    as_map = theta.as_map()
    return np.array([as_map.get(i, 0.0) for i in industries])


def decompose(
    theta_start: LabourShares,
    theta_end: LabourShares,
    scores_start: Mapping[str, float],
    scores_end: Mapping[str, float],
    measure: str = "Q",
) -> DecompositionRecord:
    """Exact within/between split of the weighted-score change.

    Industry sets are aligned on the union of the two periods' labels
    (missing shares are zero, missing scores are min-imputed per year), so
    within + between equals the difference of the two weighted sums to
    floating-point accuracy.
    """
    if theta_start.country != theta_end.country:
        raise DecompositionError("decomposition crosses two different countries")
    if theta_end.year <= theta_start.year:
        raise DecompositionError("end year must exceed start year")
    industries = tuple(sorted(set(theta_start.industries) | set(theta_end.industries)))
    t0 = _union_shares(theta_start, industries)
    t1 = _union_shares(theta_end, industries)
    q0, imputed0 = align_scores(industries, scores_start)
    q1, imputed1 = align_scores(industries, scores_end)
    within = float(t0 @ (q1 - q0))
    between = float(q1 @ (t1 - t0))
    dlwf = float(t1 @ q1 - t0 @ q0)
    return DecompositionRecord(
        country=theta_start.country,
        year_start=theta_start.year,
        year_end=theta_end.year,
        k=theta_end.year - theta_start.year,
        dlwf=dlwf,
        within=within,
        between=between,
        measure=measure,
        imputed_start=imputed0,
        imputed_end=imputed1,
    )


def decompose_entropy(
    theta_start: LabourShares,
    theta_end: LabourShares,
    entropy_start: "IndustryEntropy | Mapping[str, float]",
    entropy_end: "IndustryEntropy | Mapping[str, float]",
) -> DecompositionRecord:
    """Within/between split with Shannon entropy in place of complexity."""
    s0 = entropy_start.as_map() if isinstance(entropy_start, IndustryEntropy) else dict(entropy_start)
    s1 = entropy_end.as_map() if isinstance(entropy_end, IndustryEntropy) else dict(entropy_end)
    return decompose(theta_start, theta_end, s0, s1, measure="S")


def industry_entropy(matrix: WeightedMatrix, year: int | None = None) -> IndustryEntropy:
    """Shannon entropy of each industry's distribution across countries.

    With p_c = L[c,i] / sum_c' L[c',i]: S_i = -sum_c p_c * ln(p_c), using
    0*ln(0) := 0. This is the ubiquity-analog distribution; natural log, so
    0 <= S_i <= ln(n_countries).
    """
    sums = matrix.weights.sum(axis=0)
    if (sums <= 0).any():
        raise DecompositionError("entropy requires strictly positive column sums")
    p = matrix.weights / sums[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return IndustryEntropy(year, matrix.col_labels, -terms.sum(axis=0))
