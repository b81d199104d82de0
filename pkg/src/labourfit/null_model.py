"""Balassa specialization, the discrete bipartite weighted configuration
model, and statistically validated (ICA) specialization matrices.

The null model fixes every country's total labour and every industry's total
strength in expectation. With integer weights the per-cell weight law is
geometric with parameter x_c * y_i (support 0, 1, 2, ...), expected weight
x_c*y_i / (1 - x_c*y_i), and survival probability P(W >= w) = (x_c*y_i)^w.
The multipliers are found by alternating exact row/column solves of the
strength equations (a damped block fixed point; each block solve is a
safeguarded Newton iteration), which is coordinate ascent on the concave
log-likelihood and keeps x_c*y_i < 1 by construction.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import false_discovery_control

from .panels import EmploymentPanel, _fmt

log = logging.getLogger(__name__)


class NullModelError(ValueError):
    pass


class BiwcmConvergenceError(NullModelError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class WeightedMatrix:
    """One year's non-negative country x industry labour matrix."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.shape != (len(self.row_labels), len(self.col_labels)):
            raise NullModelError("weights shape does not match labels")
        if len(set(self.row_labels)) != len(self.row_labels) or len(set(self.col_labels)) != len(self.col_labels):
            raise NullModelError("duplicate row or column labels")
        if not np.isfinite(self.weights).all():
            raise NullModelError("weights must be finite (reconstruct the panel first)")
        if (self.weights < 0).any():
            raise NullModelError("weights must be non-negative")
        self.weights.setflags(write=False)

    @classmethod
    def from_panel(cls, panel: EmploymentPanel, year: int) -> "WeightedMatrix":
        """Extract one year's matrix, dropping zero rows/columns with a warning.

        Cells of series excluded by reconstruction (still NaN) carry zero
        weight: an excluded pair contributes no strength.
        """
        weights = panel.year_slice(year)
        gaps = np.isnan(weights)
        if gaps.any():
            log.warning("year %d: %d excluded cells treated as zero weight", year, int(gaps.sum()))
            weights = np.where(gaps, 0.0, weights)
        return cls(panel.countries, panel.industries, weights).drop_zero_lines()

    def drop_zero_lines(self) -> "WeightedMatrix":
        row_ok = self.weights.sum(axis=1) > 0
        col_ok = self.weights.sum(axis=0) > 0
        if row_ok.all() and col_ok.all():
            return self
        dropped_rows = [l for l, ok in zip(self.row_labels, row_ok) if not ok]
        dropped_cols = [l for l, ok in zip(self.col_labels, col_ok) if not ok]
        log.warning("dropping zero rows %s and zero columns %s", dropped_rows, dropped_cols)
        return WeightedMatrix(
            tuple(l for l, ok in zip(self.row_labels, row_ok) if ok),
            tuple(l for l, ok in zip(self.col_labels, col_ok) if ok),
            self.weights[np.ix_(row_ok, col_ok)].copy(),
        )

    def _require_positive_sums(self, op: str) -> None:
        if (self.weights.sum(axis=1) == 0).any() or (self.weights.sum(axis=0) == 0).any():
            raise NullModelError(f"{op}: zero row/column sums present; drop them upstream")


@dataclass(frozen=True)
class SpecializationMatrix:
    """Binary country x industry specialization matrix with its provenance tag."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    entries: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        if self.entries.shape != (len(self.row_labels), len(self.col_labels)):
            raise NullModelError("entries shape does not match labels")
        if not np.isin(self.entries, (0, 1)).all():
            raise NullModelError("entries must be 0/1")
        self.entries.setflags(write=False)

    def drop_empty(self) -> "SpecializationMatrix":
        """Drop all-zero rows/columns (with a warning) before feeding downstream."""
        row_ok = self.entries.sum(axis=1) > 0
        col_ok = self.entries.sum(axis=0) > 0
        if row_ok.all() and col_ok.all():
            return self
        log.warning(
            "dropping empty rows %s / columns %s from specialization matrix",
            [l for l, ok in zip(self.row_labels, row_ok) if not ok],
            [l for l, ok in zip(self.col_labels, col_ok) if not ok],
        )
        return SpecializationMatrix(
            tuple(l for l, ok in zip(self.row_labels, row_ok) if ok),
            tuple(l for l, ok in zip(self.col_labels, col_ok) if ok),
            self.entries[np.ix_(row_ok, col_ok)].copy(),
            self.provenance,
        )

    def write_csv(self, path: Path | str) -> None:
        _write_matrix_csv(path, self.row_labels, self.col_labels, self.entries, "country", str)

    @classmethod
    def read_csv(cls, path: Path | str, provenance: str = "file") -> "SpecializationMatrix":
        rows, cols, values = _read_matrix_csv(path)
        return cls(rows, cols, values.astype(np.uint8), provenance)


@dataclass(frozen=True)
class BiwcmSolution:
    """Fitted multipliers, expectations and p-values for one year's matrix.

    ``weights`` is the integer matrix the fit actually used (inputs are
    rounded half-to-even, recorded by ``rounded_input``).
    """

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    expected: np.ndarray
    pvalues: np.ndarray
    weights: np.ndarray
    iterations: int
    residual: float
    rounded_input: bool

    @property
    def products(self) -> np.ndarray:
        """Gauge-free per-cell geometric parameters x_c * y_i."""
        return np.outer(self.x, self.y)


def compute_rca(matrix: WeightedMatrix) -> np.ndarray:
    """Balassa index: country share of an industry over the global share.

    RCA[c,i] = (L[c,i] / sum_i' L[c,i']) / (sum_c' L[c',i] / sum L). Finite
    everywhere as long as no zero rows/columns are present.
    """
    matrix._require_positive_sums("compute_rca")
    w = matrix.weights
    row_share = w / w.sum(axis=1, keepdims=True)
    col_share = w.sum(axis=0) / w.sum()
    return row_share / col_share[None, :]


def binarize_rca(matrix: WeightedMatrix, threshold: float = 1.0) -> SpecializationMatrix:
    """Binary filter of the RCA: 1 strictly above the threshold."""
    rca = compute_rca(matrix)
    return SpecializationMatrix(
        matrix.row_labels,
        matrix.col_labels,
        (rca > threshold).astype(np.uint8),
        f"rca:threshold={threshold}",
    )


def _solve_blocks(x: np.ndarray, y: np.ndarray, targets: np.ndarray, inner_tol: float) -> np.ndarray:
    """Solve sum_j f(x_i * y_j) = targets_i for each x_i, holding y fixed.

    f(t) = t/(1-t). Each scalar equation is monotone increasing and convex on
    (0, 1/max(y)); Newton from the previous solution with a bisection
    fallback keeps every iterate inside the bracket.
    """
    hi_bound = (1.0 - 1e-12) / y.max()
    lo = np.zeros_like(x)
    hi = np.full_like(x, hi_bound)
    x = np.clip(x, hi_bound * 1e-8, hi_bound * (1 - 1e-8))
    for _ in range(200):
        p = x[:, None] * y[None, :]
        g = (p / (1.0 - p)).sum(axis=1) - targets
        if (np.abs(g) <= inner_tol * targets).all():
            break
        above = g > 0
        hi = np.where(above, np.minimum(hi, x), hi)
        lo = np.where(above, lo, np.maximum(lo, x))
        slope = (y[None, :] / (1.0 - p) ** 2).sum(axis=1)
        step = x - g / slope
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        x = np.where(bad, 0.5 * (lo + hi), step)
    return x


def fit_biwcm(matrix: WeightedMatrix, tol: float = 1e-8, max_iter: int = 100_000) -> BiwcmSolution:
    """Fit the discrete BiWCM to an integer-rounded weighted matrix.

    Matches every row strength sum_i E[L][c,i] = s_c and column strength
    sum_c E[L][c,i] = s_i to a maximum relative residual of ``tol``, where
    E[L][c,i] = x_c*y_i / (1 - x_c*y_i). Raises on degenerate matrices
    (single row/column, zero lines) and on non-convergence.
    """
    matrix._require_positive_sums("fit_biwcm")
    if len(matrix.row_labels) < 2 or len(matrix.col_labels) < 2:
        raise NullModelError(
            f"degenerate matrix {len(matrix.row_labels)}x{len(matrix.col_labels)}: need >= 2 rows and columns"
        )
    w = np.rint(matrix.weights)
    rounded = bool((w != matrix.weights).any())
    if (w.sum(axis=1) == 0).any() or (w.sum(axis=0) == 0).any():
        raise NullModelError("rounding produced a zero row/column; drop near-zero lines upstream")

    s_row = w.sum(axis=1)
    s_col = w.sum(axis=0)
    total = w.sum()
    x = s_row / np.sqrt(total)
    y = s_col / np.sqrt(total)
    top = np.outer(x, y).max()
    if top >= 1.0:
        shrink = np.sqrt(0.9 / top)
        x, y = x * shrink, y * shrink

    inner_tol = tol / 10.0
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        x = _solve_blocks(x, y, s_row, inner_tol)
        y = _solve_blocks(y, x, s_col, inner_tol)
        p = np.outer(x, y)
        expected = p / (1.0 - p)
        residual = max(
            float(np.max(np.abs(expected.sum(axis=1) - s_row) / s_row)),
            float(np.max(np.abs(expected.sum(axis=0) - s_col) / s_col)),
        )
        if residual <= tol:
            break
    else:
        raise BiwcmConvergenceError(
            f"BiWCM did not reach residual {tol} in {max_iter} iterations (residual={residual:.3e})",
            residual,
        )

    solution = BiwcmSolution(
        row_labels=matrix.row_labels,
        col_labels=matrix.col_labels,
        x=x,
        y=y,
        expected=p / (1.0 - p),
        pvalues=_survival_pvalues(np.outer(x, y), w),
        weights=w,
        iterations=iterations,
        residual=residual,
        rounded_input=rounded,
    )
    return solution


def _survival_pvalues(products: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if (products >= 1.0).any():
        raise NullModelError("invalid solution: some x_c*y_i >= 1")
    return products**weights


def pvalues(solution: BiwcmSolution, matrix: WeightedMatrix | np.ndarray) -> np.ndarray:
    """Per-cell survival p-values P(W >= L) = (x_c*y_i)^L under the fitted law.

    L is rounded half-to-even like the fit input; p = 1 exactly where L = 0.
    """
    weights = matrix.weights if isinstance(matrix, WeightedMatrix) else np.asarray(matrix, dtype=float)
    if weights.shape != solution.expected.shape:
        raise NullModelError("matrix shape does not match the fitted solution")
    return _survival_pvalues(np.outer(solution.x, solution.y), np.rint(weights))


def build_ica_matrix(
    matrix: WeightedMatrix,
    solution: BiwcmSolution,
    mode: str = "ratio",
    threshold: float = 1.0,
    alpha: float = 0.05,
) -> SpecializationMatrix:
    """Inferred comparative advantage: binarize against the null expectation.

    ``ratio`` flags cells with L/E[L] strictly above ``threshold`` (the
    RCA-like rule with the unbiased denominator). ``pvalue`` flags cells whose
    Benjamini-Hochberg adjusted survival p-value is <= ``alpha``; cells with
    zero observed weight are never flagged (their p-value is exactly 1).
    """
    if matrix.row_labels != solution.row_labels or matrix.col_labels != solution.col_labels:
        raise NullModelError("matrix labels do not match the fitted solution")
    w = solution.weights
    if mode == "ratio":
        entries = (w / solution.expected > threshold).astype(np.uint8)
        tag = f"ica-ratio:threshold={threshold}"
    elif mode == "pvalue":
        if not 0 < alpha <= 1:
            raise NullModelError(f"alpha must be in (0, 1], got {alpha}")
        adjusted = false_discovery_control(solution.pvalues.ravel(), method="bh").reshape(w.shape)
        entries = ((adjusted <= alpha) & (w >= 1)).astype(np.uint8)
        tag = f"ica-pvalue:alpha={alpha},correction=bh"
    else:
        raise NullModelError(f"unknown mode {mode!r}; expected 'ratio' or 'pvalue'")
    return SpecializationMatrix(matrix.row_labels, matrix.col_labels, entries, tag)


# -- matrix CSV helpers ---------------------------------------------------------


def _write_matrix_csv(path, row_labels, col_labels, values, corner: str, cell) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([corner, *col_labels])
        for label, row in zip(row_labels, values):
            writer.writerow([label, *(cell(v) for v in row)])


def write_matrix_csv(path: Path | str, row_labels: Sequence[str], col_labels: Sequence[str], values: np.ndarray) -> None:
    """Real-valued matrix CSV: industry codes across, country code first column."""
    _write_matrix_csv(path, row_labels, col_labels, values, "country", _fmt)


def _read_matrix_csv(path: Path | str) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        cols = tuple(header[1:])
        rows: list[str] = []
        data: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            rows.append(row[0])
            data.append([float(v) for v in row[1:]])
    return tuple(rows), cols, np.array(data)
