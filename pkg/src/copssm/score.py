"""Continuous ranked probability score from predictive samples, and
cumulative-CRPS model comparison over a held-out evaluation mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessError, DomainError


def crps_from_samples(samples: np.ndarray, y: float) -> float:
    """Sample-based CRPS: mean|x - y| - mean|x - x'|/2, exact for the
    empirical forecast distribution; O(R log R) via sorting."""
    x = np.sort(np.asarray(samples, dtype=float))
    R = x.shape[0]
    if R < 2:
        raise DomainError("CRPS needs at least two samples")
    term1 = np.mean(np.abs(x - y))
    # sum_{r,s} |x_r - x_s| = 2 * sum_i x_(i) (2i - R + 1) for sorted x
    i = np.arange(R)
    pairwise = 2.0 * np.sum(x * (2.0 * i - R + 1.0))
    return float(term1 - pairwise / (2.0 * R * R))


@dataclass
class ScoreReport:
    """Per-cell CRPS values for one model label."""

    label: str
    cells: list[tuple[int, int, float]] = field(default_factory=list)  # (margin, t, crps)

    def add(self, margin: int, t: int, crps: float):
        self.cells.append((margin, t, crps))

    def cumulative(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for margin, _, value in self.cells:
            out[margin] = out.get(margin, 0.0) + value
        return out


def score_cells(label: str, predictions: dict[tuple[int, int], np.ndarray],
                truth: dict[tuple[int, int], float],
                eval_cells: list[tuple[int, int]]) -> ScoreReport:
    """CRPS of every evaluation cell; missing predictions are an error."""
    if not eval_cells:
        raise CompletenessError("no evaluation cells: the holdout mask is empty")
    missing = [cell for cell in eval_cells if cell not in predictions]
    if missing:
        raise CompletenessError(f"predictions missing for cells {sorted(missing)[:20]}")
    missing_truth = [cell for cell in eval_cells if cell not in truth]
    if missing_truth:
        raise CompletenessError(f"truth missing for cells {sorted(missing_truth)[:20]}")
    report = ScoreReport(label)
    for margin, t in eval_cells:
        report.add(margin, t, crps_from_samples(predictions[(margin, t)], truth[(margin, t)]))
    return report


def cumulative_crps(reports: list[ScoreReport]):
    """Cumulative CRPS per margin for each report, with the per-margin
    minimum flagged.

    Returns (margins, rows) where rows are (label, totals dict, best dict).
    """
    if not reports:
        raise CompletenessError("no score reports given")
    margins = sorted({m for rep in reports for m, _, _ in rep.cells})
    totals = [(rep.label, rep.cumulative()) for rep in reports]
    for label, tot in totals:
        absent = [m for m in margins if m not in tot]
        if absent:
            raise CompletenessError(f"model {label!r} lacks scores for margins {absent}")
    best = {m: min(totals, key=lambda item: item[1][m])[0] for m in margins}
    rows = [(label, tot, {m: best[m] == label for m in margins}) for label, tot in totals]
    return margins, rows


def comparison_table(reports: list[ScoreReport]) -> list[dict]:
    """Long-format comparison rows: model, margin, cumulative CRPS, best flag."""
    margins, rows = cumulative_crps(reports)
    out = []
    for label, tot, is_best in rows:
        for m in margins:
            out.append({"model": label, "margin": m,
                        "cum_crps": tot[m], "best": bool(is_best[m])})
    return out
