"""Interval segmentation of the time axis and the interval-weighted MSE.

Pipeline: mean curve over samples and channels -> first differences ->
polynomial fit (Chebyshev basis on [-1, 1]) -> quartiles of the fitted values
-> rightmost crossing of each quartile -> four intervals with decreasing
weights.

Time indices here are 1-based, matching t = 1..T of the average curve. Given
boundaries b1 < b2 < b3 the intervals are [1, b1), [b1, b2), [b2, b3), [b3, T].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from .netcore import Tensor, as_tensor, mul, square, tsum, mean

DEFAULT_WEIGHTS = (0.4, 0.3, 0.2, 0.1)


class DegenerateSegmentationError(ValueError):
    """Raised when four non-empty intervals cannot be formed.

    Callers may fall back to :func:`equal_quarters`.
    """


@dataclass
class DifferenceCurve:
    average: np.ndarray  # x̄_t, t = 1..T
    values: np.ndarray  # Δx_t, t = 2..T

    @property
    def times(self) -> np.ndarray:
        return np.arange(2, len(self.average) + 1)


@dataclass
class PolyFit:
    coefficients: np.ndarray  # Chebyshev coefficients on the mapped axis
    domain: tuple[float, float]
    residual_norm: float

    def __call__(self, t) -> np.ndarray:
        lo, hi = self.domain
        u = (2.0 * np.asarray(t, dtype=float) - (lo + hi)) / (hi - lo) if hi > lo else np.zeros_like(t, dtype=float)
        return chebyshev.chebval(u, self.coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


@dataclass
class IntervalSegmentation:
    T: int
    boundaries: tuple[int, int, int]
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    quartiles: tuple[float, float, float] | None = None
    coefficients: list | None = None
    fallback: bool = False

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if len(b) != 3 or not (1 < b[0] < b[1] < b[2] <= self.T):
            raise ValueError(f"boundaries {b} must satisfy 1 < b1 < b2 < b3 <= T={self.T}")
        if len(self.weights) != 4 or min(self.weights) <= 0:
            raise ValueError("need four positive interval weights")
        self.boundaries = b
        self.weights = tuple(float(w) for w in self.weights)

    def intervals(self) -> list[np.ndarray]:
        edges = (1,) + self.boundaries + (self.T + 1,)
        return [np.arange(edges[k], edges[k + 1]) for k in range(4)]

    def interval_index(self, times) -> np.ndarray:
        """0-based interval id for each 1-based time index."""
        return np.searchsorted(np.asarray(self.boundaries), np.asarray(times), side="right")

    def step_weights(self, times) -> np.ndarray:
        return np.asarray(self.weights)[self.interval_index(times)]

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "boundaries": list(self.boundaries),
            "weights": list(self.weights),
            "quartiles": None if self.quartiles is None else [float(q) for q in self.quartiles],
            "coefficients": None if self.coefficients is None else [float(c) for c in self.coefficients],
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalSegmentation":
        return cls(int(d["T"]), tuple(d["boundaries"]), tuple(d["weights"]),
                   None if d.get("quartiles") is None else tuple(d["quartiles"]),
                   d.get("coefficients"), bool(d.get("fallback", False)))


def normalize_weights(weights) -> tuple[float, ...]:
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,) or np.any(w <= 0):
        raise ValueError("need four positive interval weights")
    return tuple(float(x) for x in w / w.sum())


def average_feature_curve(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise ValueError("need a non-empty n x T x d array")
    return samples.mean(axis=(0, 2))


def difference_curve(avg: np.ndarray) -> DifferenceCurve:
    avg = np.asarray(avg, dtype=float)
    if avg.ndim != 1 or len(avg) < 2:
        raise ValueError("difference curve needs T >= 2")
    return DifferenceCurve(avg, avg[1:] - avg[:-1])


def fit_polynomial(times, values, degree: int = 20) -> PolyFit:
    """Least-squares fit in the Chebyshev basis with time mapped to [-1, 1]."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if degree < 0 or degree >= len(times):
        raise ValueError(f"degree {degree} needs more than {degree} points, got {len(times)}")
    lo, hi = float(times.min()), float(times.max())
    u = (2.0 * times - (lo + hi)) / (hi - lo) if hi > lo else np.zeros_like(times)
    vander = chebyshev.chebvander(u, degree)
    coef, *_ = np.linalg.lstsq(vander, values, rcond=None)
    resid = float(np.linalg.norm(vander @ coef - values))
    return PolyFit(coef, (lo, hi), resid)


def fit_difference_curve(curve: DifferenceCurve, degree: int = 20) -> PolyFit:
    return fit_polynomial(curve.times, curve.values, degree)


def rightmost_crossing(times: np.ndarray, values: np.ndarray, level: float) -> int | None:
    """Last grid time at which ``values`` moves to the other side of ``level``.

    A point is "above" when value >= level. Returns the time of the first grid
    point on the new side for the rightmost side change, or None.
    """
    side = np.asarray(values) >= level
    change = np.flatnonzero(side[1:] != side[:-1])
    if len(change) == 0:
        return None
    return int(times[change[-1] + 1])


def quartile_boundaries(fit, T: int, weights=DEFAULT_WEIGHTS) -> IntervalSegmentation:
    """Boundaries from the rightmost crossings of the fitted curve's quartiles.

    ``fit`` is any callable evaluating the fitted difference curve at times.
    Coinciding boundaries are pushed right by one step until strictly
    increasing; running past T is degenerate.
    """
    times = np.arange(2, T + 1)
    vals = np.asarray(fit(times), dtype=float)
    if np.ptp(vals) <= 1e-12 * max(1.0, float(np.abs(vals).max())):
        raise DegenerateSegmentationError("fitted curve is constant; fall back to equal quarters")
    qs = np.quantile(vals, [0.25, 0.5, 0.75], method="linear")
    found = []
    for q in qs:
        b = rightmost_crossing(times, vals, q)
        if b is None:
            raise DegenerateSegmentationError(
                f"fitted curve never crosses quartile {q:.6g}; fall back to equal quarters")
        found.append(b)
    bounds = []
    for b in sorted(found):
        if bounds and b <= bounds[-1]:
            b = bounds[-1] + 1
        if b > T:
            raise DegenerateSegmentationError(
                f"cannot place three distinct boundaries on t <= {T}; fall back to equal quarters")
        bounds.append(b)
    coef = getattr(fit, "coefficients", None)
    return IntervalSegmentation(T, tuple(bounds), tuple(weights), tuple(float(q) for q in qs),
                                None if coef is None else list(coef))


def equal_quarters(T: int, weights=DEFAULT_WEIGHTS) -> IntervalSegmentation:
    if T < 4:
        raise DegenerateSegmentationError("T < 4 cannot hold four intervals")
    edges = np.linspace(1, T + 1, 5)
    b = tuple(int(round(e)) for e in edges[1:4])
    return IntervalSegmentation(T, b, tuple(weights), fallback=True)


def segment_corpus(samples: np.ndarray, degree: int = 20, weights=DEFAULT_WEIGHTS,
                   fallback: bool = False):
    """Run the full pipeline on scaled samples. Returns (segmentation, curve, fit)."""
    avg = average_feature_curve(samples)
    curve = difference_curve(avg)
    fit = fit_difference_curve(curve, min(degree, len(curve.values) - 1))
    try:
        seg = quartile_boundaries(fit, len(avg), normalize_weights(weights))
    except DegenerateSegmentationError:
        if not fallback:
            raise
        seg = equal_quarters(len(avg), normalize_weights(weights))
    return seg, curve, fit


# losses ------------------------------------------------------------------

def weighted_mse(pred, target, segmentation: IntervalSegmentation, times=None) -> Tensor:
    """Sum over intervals of w_i * sum_{t in I_i} mean_j (y - y_hat)^2, averaged over batch.

    ``times`` gives the 1-based time index of each prediction step; the default
    1..T_out treats prediction step k as time k.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape or pred.data.ndim != 3:
        raise ValueError(f"weighted_mse needs matching (batch, T, d) shapes, got {pred.shape} and {target.shape}")
    n, t_out, d = pred.shape
    if times is None:
        times = np.arange(1, t_out + 1)
    w = segmentation.step_weights(times)
    sq = square(pred - target)
    per_step = tsum(sq, axis=2)  # (n, T_out)
    return tsum(mul(per_step, w / (d * n)))


def plain_mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return mean(square(pred - target))


def interval_losses(pred: np.ndarray, target: np.ndarray, segmentation: IntervalSegmentation,
                    times) -> list[float]:
    """Plain MSE restricted to each interval (nan for an interval with no steps)."""
    ids = segmentation.interval_index(times)
    err = ((np.asarray(pred) - np.asarray(target)) ** 2).mean(axis=(0, 2))
    return [float(err[ids == k].mean()) if np.any(ids == k) else float("nan") for k in range(4)]
