"""Fitness-complexity fixed point with a dummy-country anchor.

The two-line iteration couples country fitness (sum of the complexities of
the industries the country is specialised in) with industry complexity (the
inverse ubiquity weighted by the inverse fitness of the specialised
countries), renormalising both vectors every step. An all-ones "dummy" row is
appended before iterating; because the map is scale invariant, dividing the
converged scores by the dummy's fitness pins it to 1 and makes scores
comparable across years.

Convergence is declared when the largest absolute change of log-scores drops
below ``tol``. Low-fitness rows are known to decay geometrically without rank
changes; a steady-decay detector (stable orderings and a stable decay rate)
reports such runs as converged with a ``degenerate_decay`` diagnostic.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .null_model import SpecializationMatrix
from .panels import _fmt

log = logging.getLogger(__name__)

DUMMY_CODE = "__DUMMY__"

SCORE_FLOOR = 1e-300

_RANK_PATIENCE = 100


class EfcError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexityScores:
    """Anchored fitness/complexity for one year (dummy row included)."""

    year: int | None
    countries: tuple[str, ...]
    industries: tuple[str, ...]
    fitness: np.ndarray
    complexity: np.ndarray
    iterations: int
    delta: float
    converged: bool
    degenerate_decay: bool
    tiny_scores: tuple[str, ...]
    dummy_code: str

    @property
    def fitness_map(self) -> dict[str, float]:
        return dict(zip(self.countries, self.fitness.tolist()))

    @property
    def complexity_map(self) -> dict[str, float]:
        return dict(zip(self.industries, self.complexity.tolist()))

    def without_dummy(self) -> dict[str, float]:
        return {c: f for c, f in self.fitness_map.items() if c != self.dummy_code}


def add_dummy_row(matrix: SpecializationMatrix, code: str = DUMMY_CODE) -> SpecializationMatrix:
    """Append an always-fully-specialised country row under a reserved code."""
    if len(matrix.row_labels) == 0 or len(matrix.col_labels) == 0:
        raise EfcError("cannot add dummy row to an empty matrix")
    if code in matrix.row_labels:
        raise EfcError(f"reserved dummy code {code!r} already present")
    entries = np.vstack([matrix.entries, np.ones((1, len(matrix.col_labels)), dtype=np.uint8)])
    return SpecializationMatrix(
        matrix.row_labels + (code,),
        matrix.col_labels,
        entries,
        matrix.provenance + f"+dummy:{code}",
    )


def _orderings(f: np.ndarray, q: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return tuple(np.argsort(-f, kind="stable").tolist()), tuple(np.argsort(-q, kind="stable").tolist())


def run_efc(
    matrix: SpecializationMatrix,
    max_iter: int = 100_000,
    tol: float = 1e-9,
    dummy_code: str = DUMMY_CODE,
    norm: str = "mean",
    year: int | None = None,
    f0: np.ndarray | None = None,
    q0: np.ndarray | None = None,
) -> ComplexityScores:
    """Iterate the fixed point on a dummy-augmented matrix and anchor it.

    ``norm`` selects the mid-iteration renormaliser (an overflow guard only;
    ``mean`` or ``max``): a final mean normalisation is always applied before
    anchoring, so anchored outputs do not depend on it. Non-convergence after
    ``max_iter`` returns the result with ``converged=False`` and a warning.
    """
    if dummy_code not in matrix.row_labels:
        raise EfcError(f"matrix has no dummy row {dummy_code!r}; call add_dummy_row first")
    a = matrix.entries.astype(float)
    row_sums = a.sum(axis=1)
    col_sums = a.sum(axis=0)
    if (row_sums == 0).any():
        raise EfcError(f"zero rows: {[l for l, s in zip(matrix.row_labels, row_sums) if s == 0]}")
    if (col_sums == 0).any():
        raise EfcError(f"zero columns: {[l for l, s in zip(matrix.col_labels, col_sums) if s == 0]}")
    if norm == "mean":
        normalise = np.mean
    elif norm == "max":
        normalise = np.max
    else:
        raise EfcError(f"unknown norm {norm!r}")

    n, m = a.shape
    f = np.ones(n) if f0 is None else np.asarray(f0, dtype=float).copy()
    q = np.ones(m) if q0 is None else np.asarray(q0, dtype=float).copy()
    if (f <= 0).any() or (q <= 0).any():
        raise EfcError("initial scores must be positive")

    delta = np.inf
    prev_delta = np.inf
    prev_order = _orderings(f, q)
    order_streak = 0
    converged = False
    degenerate = False
    iterations = 0
    with np.errstate(divide="ignore", over="ignore"):
        for iterations in range(1, max_iter + 1):
            f_new = a @ q
            f_new = f_new / normalise(f_new)
            q_new = 1.0 / (a.T @ (1.0 / f_new))
            q_new = q_new / normalise(q_new)

            ok = (f_new > SCORE_FLOOR) & (f > SCORE_FLOOR)
            ok_q = (q_new > SCORE_FLOOR) & (q > SCORE_FLOOR)
            deltas = []
            if ok.any():
                deltas.append(np.abs(np.log(f_new[ok]) - np.log(f[ok])).max())
            if ok_q.any():
                deltas.append(np.abs(np.log(q_new[ok_q]) - np.log(q[ok_q])).max())
            delta = float(max(deltas)) if deltas else 0.0

            order = _orderings(f_new, q_new)
            order_streak = order_streak + 1 if order == prev_order else 0
            prev_order = order
            f, q = f_new, q_new

            if delta < tol:
                converged = True
                break
            if order_streak >= _RANK_PATIENCE and abs(delta - prev_delta) < tol:
                converged = True
                degenerate = True
                break
            prev_delta = delta
    if not converged:
        log.warning("fixed point not converged after %d iterations (delta=%.3e)", iterations, delta)

    f = f / f.mean()
    q = q / q.mean()
    dummy_value = f[matrix.row_labels.index(dummy_code)]
    f = f / dummy_value
    q = q / dummy_value

    tiny = [l for l, v in zip(matrix.row_labels, f) if v < SCORE_FLOOR]
    tiny += [l for l, v in zip(matrix.col_labels, q) if v < SCORE_FLOOR]
    if tiny:
        log.warning("scores at/below floor for %s (reported, not clamped)", tiny)

    return ComplexityScores(
        year=year,
        countries=matrix.row_labels,
        industries=matrix.col_labels,
        fitness=f,
        complexity=q,
        iterations=iterations,
        delta=delta,
        converged=converged,
        degenerate_decay=degenerate,
        tiny_scores=tuple(tiny),
        dummy_code=dummy_code,
    )


@dataclass(frozen=True)
class RankRow:
    year: int
    country: str
    fitness: float
    rank: int


@dataclass(frozen=True)
class RankTable:
    """Per-year descending-fitness competition ranks ("1224" tie rule)."""

    rows: tuple[RankRow, ...]

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["year", "country", "fitness", "rank"])
            for row in self.rows:
                writer.writerow([row.year, row.country, _fmt(row.fitness), row.rank])


def rank_fitness(scores_by_year: Mapping[int, Mapping[str, float] | ComplexityScores], dummy_code: str = DUMMY_CODE) -> RankTable:
    """Rank countries by descending fitness per year, dummy excluded.

    Ties share the best rank and the next country skips ("1224"); rows are
    emitted year by year, ordered by rank then country code.
    """
    rows: list[RankRow] = []
    for year in sorted(scores_by_year):
        scores = scores_by_year[year]
        fitness = scores.fitness_map if isinstance(scores, ComplexityScores) else dict(scores)
        fitness = {c: f for c, f in fitness.items() if c != dummy_code}
        values = np.array(list(fitness.values()))
        for country in sorted(fitness, key=lambda c: (-fitness[c], c)):
            rank = 1 + int((values > fitness[country]).sum())
            rows.append(RankRow(year, country, fitness[country], rank))
    return RankTable(tuple(rows))


def write_scores(scores: ComplexityScores, path: Path | str) -> None:
    """Two-section CSV: ``country,fitness`` rows then ``industry,complexity``."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["country", "fitness"])
        for country, value in zip(scores.countries, scores.fitness):
            writer.writerow([country, _fmt(value)])
        writer.writerow([])
        writer.writerow(["industry", "complexity"])
        for industry, value in zip(scores.industries, scores.complexity):
            writer.writerow([industry, _fmt(value)])


def read_scores(path: Path | str, year: int | None = None, dummy_code: str = DUMMY_CODE) -> ComplexityScores:
    """Read a two-section scores CSV back (diagnostics fields are inert)."""
    countries: list[str] = []
    fitness: list[float] = []
    industries: list[str] = []
    complexity: list[float] = []
    section = None
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.reader(handle):
            if not row or not any(row):
                continue
            if row[0] == "country":
                section = "f"
                continue
            if row[0] == "industry":
                section = "q"
                continue
            if section == "f":
                countries.append(row[0])
                fitness.append(float(row[1]))
            elif section == "q":
                industries.append(row[0])
                complexity.append(float(row[1]))
    if not countries or not industries:
        raise EfcError(f"{path}: not a scores file")
    return ComplexityScores(
        year=year,
        countries=tuple(countries),
        industries=tuple(industries),
        fitness=np.array(fitness),
        complexity=np.array(complexity),
        iterations=0,
        delta=0.0,
        converged=True,
        degenerate_decay=False,
        tiny_scores=(),
        dummy_code=dummy_code,
    )
