"""Metrics and statistics: precision/recall, MAE, mean-recent reward, and the
exact two-tailed Wilcoxon signed-rank test used for paired run comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Exact two-tailed critical values at alpha = 0.05: reject when
# min(T+, T-) <= value. None marks n where no rejection is possible.
WILCOXON_CRITICAL_05: dict[int, int | None] = {
    5: None, 6: 0, 7: 2, 8: 3, 9: 5, 10: 8, 11: 10, 12: 13, 13: 17, 14: 21,
    15: 25, 16: 29, 17: 34, 18: 40, 19: 46, 20: 52, 21: 58, 22: 65, 23: 73,
    24: 81, 25: 89,
}


@dataclass(frozen=True)
class WilcoxonResult:
    t_plus: float
    t_minus: float
    n_nonzero: int
    statistic: float
    critical_value: int | None
    significant_at_05: bool

    def to_dict(self) -> dict:
        return {
            "t_plus": self.t_plus,
            "t_minus": self.t_minus,
            "n_nonzero": self.n_nonzero,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "significant_at_05": self.significant_at_05,
        }


def rank_with_ties(values) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank block."""
    v = np.asarray(values, dtype=np.float64)
    _, inverse, counts = np.unique(v, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    average = ends - (counts - 1) / 2.0
    return average[inverse]


def wilcoxon_signed_rank(x, y) -> WilcoxonResult:
    """Two-tailed Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; absolute differences receive average ranks
    on ties. Significance uses the exact critical-value table (n in 5..25);
    the normal approximation is deliberately not implemented.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D arrays")
    d = x - y
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise ValueError("all paired differences are zero")
    if n > max(WILCOXON_CRITICAL_05):
        raise ValueError(f"n={n} exceeds the exact critical-value table (max 25)")
    ranks = rank_with_ties(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    statistic = min(t_plus, t_minus)
    critical = WILCOXON_CRITICAL_05.get(n)
    significant = critical is not None and statistic <= critical
    return WilcoxonResult(t_plus, t_minus, n, statistic, critical, significant)


def precision_recall(predicted, actual) -> tuple[float | None, float | None]:
    """Precision and recall with positive class 1.

    Returns None in place of a ratio whose denominator is zero (no predicted
    positives for precision; no actual positives for recall) rather than
    collapsing those degenerate cases to 0.
    """
    predicted = np.asarray(predicted).astype(bool)
    actual = np.asarray(actual).astype(bool)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def mae(predicted, actual) -> float:
    """Mean absolute difference over all samples and components."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    return float(np.mean(np.abs(predicted - actual)))


def mean_recent_reward(episode_returns, window: int = 100) -> float:
    """Arithmetic mean of the last min(window, count) episode returns."""
    returns = np.asarray(episode_returns, dtype=np.float64)
    if returns.size == 0:
        raise ValueError("no episodes recorded")
    return float(returns[-window:].mean())
