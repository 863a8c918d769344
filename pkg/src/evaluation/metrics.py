"""
Statistics for Monte Carlo verification.

This module provides the interval and distance computations every
experiment reports: binomial confidence half-widths, mean with standard
error, and two-sample Kolmogorov-Smirnov distances.
"""

import logging
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import stats

from ..utils.config import settings

logger = logging.getLogger(__name__)


class StatisticsCalculator:
    """
    Calculator for the statistics behind experiment verdicts.

    All intervals are two-sided at the configured confidence level.
    """

    def __init__(self, confidence_level: Optional[float] = None):
        """
        Initialize statistics calculator.

        Args:
            confidence_level: Two-sided confidence level (defaults to settings).
        """
        self.confidence_level = confidence_level or settings.CONFIDENCE_LEVEL
        if not 0 < self.confidence_level < 1:
            raise ValueError("confidence_level must lie in (0, 1)")
        self.z = float(stats.norm.ppf(0.5 + self.confidence_level / 2.0))

    def binomial_halfwidths(self, counts: Sequence[int], n: int) -> np.ndarray:
        """
        Normal-approximation CI half-widths of empirical frequencies.

        Args:
            counts: Successes per category.
            n: Trials.

        Returns:
            np.ndarray: z * sqrt(p (1 - p) / n) per category.
        """
        if n < 1:
            raise ValueError("n must be at least 1")
        p = np.asarray(counts, dtype=float) / n
        return self.z * np.sqrt(p * (1.0 - p) / n)

    def binomial_tolerance(self, p: float, n: int) -> float:
        """Half-width of the CI for a known probability p at n trials."""
        return self.z * math.sqrt(p * (1.0 - p) / n)

    def mean_with_error(self, samples: Sequence[float]) -> Dict[str, float]:
        """
        Sample mean, standard error and CI half-width.

        Returns:
            Dict[str, float]: mean, std_error, ci_halfwidth, n.
        """
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("samples cannot be empty")
        std_error = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return {
            "mean": float(np.mean(x)),
            "std_error": std_error,
            "ci_halfwidth": self.z * std_error,
            "n": int(x.size),
        }

    def ks_distance(self, a: Sequence[float], b: Sequence[float]) -> Dict[str, float]:
        """
        Two-sample Kolmogorov-Smirnov statistic.

        Returns:
            Dict[str, float]: statistic and p_value.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.size == 0 or b.size == 0:
            raise ValueError("KS needs two non-empty samples")
        result = stats.ks_2samp(a, b)
        return {"statistic": float(result.statistic), "p_value": float(result.pvalue)}

    def ks_critical_value(self, n: int, m: int) -> float:
        """Asymptotic KS critical distance at the configured level."""
        alpha = 1.0 - self.confidence_level
        return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))

    def within(self, estimate: float, target: float, tolerance: float) -> bool:
        return abs(estimate - target) <= tolerance

    def summarize(self, values: Dict[str, Any]) -> Dict[str, Any]:
        """Convert numpy values to plain Python types for JSON reports."""
        out: Dict[str, Any] = {}
        for key, value in values.items():
            if isinstance(value, np.ndarray):
                out[key] = [float(v) for v in value]
            elif isinstance(value, (np.floating, np.integer)):
                out[key] = value.item()
            else:
                out[key] = value
        return out
