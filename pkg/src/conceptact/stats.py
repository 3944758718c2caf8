"""Probability of improvement and optimality gap with bootstrap intervals."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

BOOTSTRAP_REPS = 2000
CONFIDENCE = 0.95


class EmptyStratumError(ValueError):
    pass


@dataclass(frozen=True)
class Estimate:
    value: float
    low: float
    high: float

    def as_row(self) -> list[float]:
        return [self.value, self.low, self.high]


def _strata(scores) -> dict[str, np.ndarray]:
    if isinstance(scores, Mapping):
        out = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in scores.items()}
    else:
        out = {"": np.asarray(scores, dtype=np.float64).ravel()}
    for k, v in out.items():
        if v.size == 0:
            raise EmptyStratumError(f"no scores in stratum {k!r}")
    return out


def pairwise_poi(x: np.ndarray, y: np.ndarray) -> float:
    """Mean over all (x_i, y_j) of 1[x > y] + 0.5 * 1[x == y]."""
    x = np.asarray(x, dtype=np.float64)[:, None]
    y = np.asarray(y, dtype=np.float64)[None, :]
    return float(((x > y) + 0.5 * (x == y)).mean())


def _percentile_ci(samples: np.ndarray, point: float, confidence: float) -> tuple[float, float]:
    a = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(samples, [a, 1.0 - a])
    # quantiles of all-equal samples can drift by an ulp; keep the point inside
    return float(min(lo, point)), float(max(hi, point))


def probability_of_improvement(scores_x, scores_y, bootstrap_reps: int = BOOTSTRAP_REPS,
                               confidence: float = CONFIDENCE, seed: int = 0) -> Estimate:
    """Task-averaged PoI of X over Y; runs are resampled within each task."""
    sx, sy = _strata(scores_x), _strata(scores_y)
    if set(sx) != set(sy):
        raise EmptyStratumError(f"task sets differ: {sorted(sx)} vs {sorted(sy)}")
    tasks = sorted(sx)
    point = float(np.mean([pairwise_poi(sx[t], sy[t]) for t in tasks]))
    rng = np.random.default_rng(seed)
    boots = np.zeros(bootstrap_reps)
    for t in tasks:
        x, y = sx[t], sy[t]
        ix = rng.integers(0, len(x), size=(bootstrap_reps, len(x)))
        iy = rng.integers(0, len(y), size=(bootstrap_reps, len(y)))
        xb, yb = x[ix][:, :, None], y[iy][:, None, :]
        boots += ((xb > yb) + 0.5 * (xb == yb)).mean(axis=(1, 2))
    boots /= len(tasks)
    return Estimate(point, *_percentile_ci(boots, point, confidence))


def optimality_gap(scores, max_score: float, bootstrap_reps: int = BOOTSTRAP_REPS,
                   confidence: float = CONFIDENCE, seed: int = 0) -> Estimate:
    """Mean of 1 - score/max_score.

    ``scores`` has the seed on its first axis; the remaining axes (checkpoint,
    episode) are averaged.  A flat sequence counts each entry as its own seed.
    """
    if max_score <= 0:
        raise ValueError("max_score must be positive")
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptyStratumError("no scores")
    if s.min() < 0 or s.max() > max_score:
        raise ValueError(f"scores must lie in [0, {max_score}]")
    per_seed = (1.0 - s / max_score).reshape(s.shape[0], -1).mean(axis=1)
    point = float((1.0 - s / max_score).mean())
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(per_seed), size=(bootstrap_reps, len(per_seed)))
    boots = per_seed[idx].mean(axis=1)
    return Estimate(point, *_percentile_ci(boots, point, confidence))
