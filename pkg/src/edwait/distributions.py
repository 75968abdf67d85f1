"""Weighted empirical distributions used for every probabilistic forecast."""

from __future__ import annotations

import numpy as np

_WEIGHT_TOL = 1e-9


class ForecastDistribution:
    """Discrete distribution over waiting-time values.

    Stores an ascending support with strictly positive weights summing to
    one (duplicate support values are merged on construction). The implied
    CDF is the right-continuous step function ``F(y) = sum(w_i : y_i <= y)``.
    """

    __slots__ = ("support", "weights", "_cum")

    def __init__(self, support, weights):
        support = np.asarray(support, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if support.ndim != 1 or support.shape != weights.shape:
            raise ValueError("support and weights must be 1-d and aligned")
        if support.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(support)):
            raise ValueError("non-finite support value")
        if np.any(weights < 0):
            raise ValueError("negative weight")
        total = weights.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("weights must have a positive finite sum")

        order = np.argsort(support, kind="stable")
        support = support[order]
        weights = weights[order]
        # Merge duplicated support values, then drop zero-weight points.
        if support.size > 1:
            new_group = np.empty(support.size, dtype=bool)
            new_group[0] = True
            np.not_equal(support[1:], support[:-1], out=new_group[1:])
            idx = np.cumsum(new_group) - 1
            merged_w = np.zeros(idx[-1] + 1)
            np.add.at(merged_w, idx, weights)
            support = support[new_group]
            weights = merged_w
        keep = weights > 0
        self.support = support[keep]
        self.weights = weights[keep] / total
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        self._cum = cum

    @classmethod
    def from_samples(cls, values) -> "ForecastDistribution":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.full(values.shape, 1.0 / max(values.size, 1)))

    @classmethod
    def point_mass(cls, value: float) -> "ForecastDistribution":
        return cls(np.array([value]), np.array([1.0]))

    def __len__(self) -> int:
        return self.support.size

    def cdf(self, y):
        """Right-continuous CDF at scalar or array ``y``."""
        idx = np.searchsorted(self.support, y, side="right")
        padded = np.concatenate(([0.0], self._cum))
        out = padded[idx]
        return float(out) if np.isscalar(y) else out

    def quantile(self, tau):
        """Generalized inverse ``inf{y : F(y) >= tau}`` for tau in (0, 1)."""
        tau_arr = np.asarray(tau, dtype=np.float64)
        if np.any(tau_arr <= 0) or np.any(tau_arr >= 1):
            raise ValueError("quantile level must lie strictly inside (0, 1)")
        idx = np.searchsorted(self._cum, tau_arr, side="left")
        idx = np.minimum(idx, self.support.size - 1)
        out = self.support[idx]
        return float(out) if np.isscalar(tau) else out

    def mean(self) -> float:
        return float(self.support @ self.weights)

    def median(self) -> float:
        return self.quantile(0.5)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws at iid uniforms."""
        u = rng.uniform(size=n)
        idx = np.searchsorted(self._cum, u, side="left")
        return self.support[np.minimum(idx, self.support.size - 1)]

    def stratified_sample(self, n: int) -> np.ndarray:
        """Inverse-CDF draws at the stratified uniforms ``(i - 0.5) / n``."""
        u = (np.arange(1, n + 1) - 0.5) / n
        idx = np.searchsorted(self._cum, u, side="left")
        return self.support[np.minimum(idx, self.support.size - 1)]

    def shift(self, delta: float) -> "ForecastDistribution":
        return ForecastDistribution(self.support + delta, self.weights)

    def scale(self, factor: float) -> "ForecastDistribution":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return ForecastDistribution(self.support * factor, self.weights)

    def is_valid(self, tol: float = _WEIGHT_TOL) -> bool:
        return (
            bool(np.all(self.weights >= 0))
            and abs(self.weights.sum() - 1.0) <= tol
            and bool(np.all(np.diff(self.support) > 0))
            and bool(np.all(np.diff(self._cum) >= -tol))
            and abs(self._cum[-1] - 1.0) <= tol
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"ForecastDistribution(k={len(self)}, mean={self.mean():.2f})"


def dominates(a: ForecastDistribution, b: ForecastDistribution, tol: float = 1e-12) -> bool:
    """First-order stochastic dominance of ``a`` over ``b``.

    ``a`` dominates when its CDF is everywhere >= the CDF of ``b``; for
    waiting times that means ``a`` is stochastically smaller.
    """
    grid = np.union1d(a.support, b.support)
    return bool(np.all(a.cdf(grid) >= b.cdf(grid) - tol))
