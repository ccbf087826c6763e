"""Norms, dual norms, subgradients, and steepest-descent directions for lp geometries.

The exponent p = infinity is represented exactly by ``math.inf`` (never by a
large finite float), so dual exponents and power laws involving p stay exact.
All functions are pure and deterministic: ties in argmax-style selections are
always broken toward the lowest index, and sign(0) = 0 everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "ThreatModel",
    "check_exponent",
    "dual_exponent",
    "lp_norm",
    "dual_norm_subgradient",
    "worst_case_perturbation",
    "steepest_direction",
]

# Switch general-r power computations to log space once the spread of nonzero
# gradient magnitudes exceeds this ratio; exponential-loss trajectories produce
# gradients spanning hundreds of orders of magnitude.
_LOG_SPACE_RATIO = 1e8


def check_exponent(p: float) -> float:
    """Validate a norm exponent in [1, inf] and return it as a float."""
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"norm exponent must lie in [1, inf], got {p!r}")
    return p


@dataclass(frozen=True)
class ThreatModel:
    """An lp ball of radius epsilon around each input."""

    p: float
    epsilon: float

    def __post_init__(self) -> None:
        check_exponent(self.p)
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon!r}")


def dual_exponent(p: float) -> float:
    """The exponent q with 1/p + 1/q = 1; dual(1) = inf and dual(inf) = 1."""
    p = check_exponent(p)
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def lp_norm(v: np.ndarray, p: float) -> float:
    """The lp norm of a vector; p = inf returns the max absolute entry.

    General exponents are evaluated on magnitudes rescaled by the largest
    entry, so the result neither overflows nor collapses to zero for vectors
    of extreme scale.
    """
    p = check_exponent(p)
    a = np.abs(np.asarray(v, dtype=float))
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(np.linalg.norm(a))
    amax = float(a.max())
    if amax == 0.0:
        return 0.0
    return float(amax * np.power(a / amax, p).sum() ** (1.0 / p))


def dual_norm_subgradient(w: np.ndarray, q: float) -> np.ndarray:
    """A subgradient g of the lq norm at w, with <g, w> = ||w||_q and ||g||_{q*} <= 1.

    Deterministic selection: sign(w) for q = 1; for q = inf all mass on the
    lowest-index coordinate attaining max |w_j|; the smooth gradient
    sign(w_j) |w_j|^{q-1} / ||w||_q^{q-1} for 1 < q < inf; the zero vector at
    w = 0.  Equivalently, for w != 0 this is a maximizer of <v, w> over the
    unit l_{q*} ball.
    """
    q = check_exponent(q)
    w = np.asarray(w, dtype=float)
    g = np.zeros_like(w)
    if not np.any(w):
        return g
    if q == 1.0:
        return np.sign(w)
    if math.isinf(q):
        j = int(np.argmax(np.abs(w)))  # np.argmax returns the first maximum
        g[j] = math.copysign(1.0, w[j])
        return g
    if q == 2.0:
        return w / np.linalg.norm(w)
    a = np.abs(w)
    nz = a[a > 0.0]
    if nz.max() / nz.min() > _LOG_SPACE_RATIO:
        with np.errstate(divide="ignore"):
            la = np.log(a)
        log_norm = logsumexp(q * la) / q
        return np.sign(w) * np.exp((q - 1.0) * (la - log_norm))
    norm = lp_norm(w, q)
    return np.sign(w) * (a / norm) ** (q - 1.0)


def worst_case_perturbation(
    w: np.ndarray, x: np.ndarray, y: float, tm: ThreatModel
) -> np.ndarray:
    """The point x' in the lp epsilon-ball around x minimizing the signed margin.

    Attains y<w, x'> = y<w, x> - epsilon ||w||_{p*} exactly, via
    x' = x - y epsilon v where v maximizes <v, w> over the unit lp ball (same
    deterministic tie-breaking as `dual_norm_subgradient`).  Scale invariant
    in w: the result depends on w only through the maximizing direction.
    """
    v = dual_norm_subgradient(np.asarray(w, dtype=float), dual_exponent(tm.p))
    return np.asarray(x, dtype=float) - y * tm.epsilon * v


def steepest_direction(g: np.ndarray, r: float, normalized: bool = False) -> np.ndarray:
    """The steepest-descent step direction for a gradient g under the lr geometry.

    The normalized variant returns D with ||D||_r = 1 and <D, g> = -||g||_{r*};
    the unnormalized variant scales by ||g||_{r*}.  r = 1 moves only the
    lowest-index coordinate among ties in argmax |g_j| (coordinate descent);
    r = inf returns -sign(g), optionally scaled by ||g||_1 (sign descent).
    g = 0 returns the zero vector.
    """
    r = check_exponent(r)
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return np.zeros_like(g)
    direction = -dual_norm_subgradient(g, dual_exponent(r))
    if normalized:
        return direction
    return lp_norm(g, dual_exponent(r)) * direction
