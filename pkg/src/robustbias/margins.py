"""Margin formulas, dataset margin / epsilon-star estimation, and a brute-force
max-robust-margin oracle for tiny dimensions.

Two normalizations appear and both are needed.  `robust_point_margin` divides
by ||w||_{r*}, giving the lr distance from the perturbation set to the
hyperplane.  The trainers and the oracle track min_i (y<w,x> - eps||w||_{p*})
divided by ||w||_r, the quantity whose limit characterizes steepest descent
under the lr geometry; the two coincide under r <-> r*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .geometry import ThreatModel, check_exponent, dual_exponent, lp_norm

__all__ = [
    "MarginUndefinedError",
    "OracleRangeError",
    "MarginReport",
    "EpsStar",
    "point_margin",
    "robust_point_margin",
    "normalized_robust_margin",
    "margin_report",
    "dataset_eps_star",
    "is_separable",
    "max_robust_margin_oracle",
]


class MarginUndefinedError(ValueError):
    """Margins of the zero separator are undefined."""


class OracleRangeError(ValueError):
    """The brute-force oracle only covers d <= 3."""


class EpsStar(NamedTuple):
    value: float
    separable: bool


@dataclass(frozen=True)
class MarginReport:
    """Per-point robust margins, their minimum, and the attaining index."""

    per_point: np.ndarray
    dataset_margin: float
    attaining_index: int


def point_margin(w: np.ndarray, x: np.ndarray, y: float, p: float) -> float:
    """Signed lp distance of (x, y) to the hyperplane w: y<w, x> / ||w||_{p*}."""
    norm = lp_norm(w, dual_exponent(p))
    if norm == 0.0:
        raise MarginUndefinedError("point margin of the zero separator")
    return float(y * np.dot(w, x) / norm)


def robust_point_margin(
    w: np.ndarray, x: np.ndarray, y: float, tm: ThreatModel, r: float
) -> float:
    """Signed lr distance of the lp epsilon-ball around (x, y) to the hyperplane:
    (y<w, x> - eps ||w||_{p*}) / ||w||_{r*}.

    At eps = 0 this reduces to `point_margin` with p := r.
    """
    denom = lp_norm(w, dual_exponent(r))
    if denom == 0.0:
        raise MarginUndefinedError("robust margin of the zero separator")
    num = y * np.dot(w, x) - tm.epsilon * lp_norm(w, dual_exponent(tm.p))
    return float(num / denom)


def normalized_robust_margin(w: np.ndarray, data: Dataset, tm: ThreatModel, r: float) -> float:
    """min_i (y_i <w, x_i> - eps ||w||_{p*}) / ||w||_r, the steepest-descent
    margin for the lr geometry."""
    norm_r = lp_norm(w, r)
    if norm_r == 0.0:
        raise MarginUndefinedError("normalized margin of the zero separator")
    num = data.labels * (data.samples @ w) - tm.epsilon * lp_norm(w, dual_exponent(tm.p))
    return float(num.min() / norm_r)


def margin_report(w: np.ndarray, data: Dataset, tm: ThreatModel, r: float) -> MarginReport:
    """Robust lr-distance margins (`robust_point_margin`) for every point."""
    denom = lp_norm(w, dual_exponent(r))
    if denom == 0.0:
        raise MarginUndefinedError("margin report for the zero separator")
    num = data.labels * (data.samples @ w) - tm.epsilon * lp_norm(w, dual_exponent(tm.p))
    per_point = num / denom
    idx = int(np.argmin(per_point))
    return MarginReport(per_point, float(per_point[idx]), idx)


def _trained_margin_estimate(data: Dataset, r: float, iters: int) -> EpsStar:
    # steepest descent for geometry r at eps = 0 approaches the separator
    # maximizing min y<w,x>/||w||_r; the margin is read off the final iterate
    from .training import OptimizerSpec, StoppingRule, train_linear  # deferred: avoids import cycle

    spec = OptimizerSpec(
        r=r, stop=StoppingRule(loss_threshold=1e-300, max_iters=iters)
    )
    trace = train_linear(data, ThreatModel(math.inf, 0.0), spec)
    w = trace.final_w
    scores = data.labels * (data.samples @ w)
    if lp_norm(w, r) == 0.0 or np.any(scores <= 0.0):
        return EpsStar(0.0, False)
    return EpsStar(float(scores.min() / lp_norm(w, r)), True)


def dataset_eps_star(data: Dataset, iters: int = 100_000) -> EpsStar:
    """Estimate the l-infinity margin of a dataset (the largest perturbation
    radius compatible with robust separability).

    Runs coordinate-descent ERM at eps = 0 for the given iteration budget and
    returns min_i y_i <w, x_i> / ||w||_1 at the final iterate; a non-separable
    flag (and value 0) is returned when any training point is still
    misclassified at the end.
    """
    return _trained_margin_estimate(data, 1.0, iters)


def is_separable(data: Dataset, tm: ThreatModel, iters: int = 100_000) -> bool:
    """Whether the dataset is (eps, p)-linearly separable: its lp margin is >= eps."""
    est = _trained_margin_estimate(data, dual_exponent(tm.p), iters)
    return bool(est.separable and est.value >= tm.epsilon)


# ---------------------------------------------------------------------------
# Brute-force oracle


def _objective(dirs: np.ndarray, data: Dataset, tm: ThreatModel, r: float) -> np.ndarray:
    """normalized_robust_margin for every row of `dirs` (vectorized)."""
    scores = (data.labels[:, None] * (data.samples @ dirs.T)).min(axis=0)
    pstar = dual_exponent(tm.p)
    num = scores - tm.epsilon * _row_norms(dirs, pstar)
    return num / _row_norms(dirs, r)


def _row_norms(mat: np.ndarray, p: float) -> np.ndarray:
    p = check_exponent(p)
    a = np.abs(mat)
    if math.isinf(p):
        return a.max(axis=1)
    if p == 1.0:
        return a.sum(axis=1)
    if p == 2.0:
        return np.sqrt((a * a).sum(axis=1))
    amax = a.max(axis=1, keepdims=True)
    safe = np.where(amax == 0.0, 1.0, amax)
    return (safe[:, 0]) * ((a / safe) ** p).sum(axis=1) ** (1.0 / p)


def _best_over(
    dirs: np.ndarray, data: Dataset, tm: ThreatModel, r: float, chunk: int = 200_000
) -> tuple[float, int]:
    best_val, best_idx = -np.inf, 0
    for start in range(0, dirs.shape[0], chunk):
        vals = _objective(dirs[start : start + chunk], data, tm, r)
        j = int(np.argmax(vals))
        if vals[j] > best_val:  # strict: earliest (lowest-angle) max wins ties
            best_val, best_idx = float(vals[j]), start + j
    return best_val, best_idx


def _circle(angles: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _sphere(polar: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    th, ph = np.meshgrid(polar, azimuth, indexing="ij")
    th, ph = th.ravel(), ph.ravel()
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def max_robust_margin_oracle(
    data: Dataset, tm: ThreatModel, r: float
) -> tuple[float, np.ndarray]:
    """max over w != 0 of min_i (y_i <w, x_i> - eps ||w||_{p*}) / ||w||_r,
    by dense angular grid search with local refinement.

    Only d <= 3 is supported; the search is deliberately independent of the
    optimization code so it can serve as ground truth for it.  d = 2 scans the
    circle at 1e-4 radians and refines the best window at 1e-6; d = 3 uses a
    coarse scan plus two refinement passes reaching the same resolutions.
    Returns the value and an attaining direction (lowest angle among ties).
    """
    r = check_exponent(r)
    d = data.d
    if d > 3:
        raise OracleRangeError(f"oracle supports d <= 3, got d = {d}")
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        val, idx = _best_over(dirs, data, tm, r)
        return val, dirs[idx]
    if d == 2:
        coarse = np.arange(0.0, 2.0 * np.pi, 1e-4)
        _, idx = _best_over(_circle(coarse), data, tm, r)
        center = coarse[idx]
        fine = center + np.arange(-2e-4, 2e-4 + 1e-6, 1e-6)
        val, idx = _best_over(_circle(fine), data, tm, r)
        return val, _circle(fine[idx : idx + 1])[0]
    # d == 3: coarse-to-fine over (polar, azimuth)
    step = 1e-2
    polar = np.arange(0.0, np.pi + step, step)
    azim = np.arange(0.0, 2.0 * np.pi, step)
    _, idx = _best_over(_sphere(polar, azim), data, tm, r)
    th0, ph0 = polar[idx // azim.size], azim[idx % azim.size]
    for fine_step in (1e-4, 1e-6):
        window = 2.0 * step
        polar = th0 + np.arange(-window, window + fine_step, fine_step)
        azim = ph0 + np.arange(-window, window + fine_step, fine_step)
        dirs = _sphere(polar, azim)
        val, idx = _best_over(dirs, data, tm, r)
        th0, ph0 = polar[idx // azim.size], azim[idx % azim.size]
        step = fine_step
    return val, dirs[idx]
