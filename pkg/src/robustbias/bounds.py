"""Closed-form generalization-bound calculators.

Covers the standard Rademacher complexities of norm-capped linear classes
(r = 1, 2), the additive worst-case correction for lp perturbations, the
assembled high-probability bound for max-robust-margin interpolators, and the
comparative Theta-rates of the four sparsity regimes (unit constants, natural
logarithms; comparative instruments, not certified bounds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .geometry import check_exponent

__all__ = [
    "BoundSpec",
    "clean_rademacher",
    "robust_rademacher_upper",
    "interpolator_bound",
    "case_rates",
    "bound_table",
    "CASES",
]

CASES = ("DD", "SD", "DS", "SS")


@dataclass(frozen=True)
class BoundSpec:
    """Inputs shared by the bound calculators.

    ``x_inf_max`` / ``x_l2_max`` are the largest l-infinity / l2 norms among
    the samples; ``teacher_l1`` / ``teacher_l2`` are the norms of the
    labelling vector (used by `interpolator_bound` in place of the class cap
    ``W``).  ``rho`` is the ramp-loss margin scale.
    """

    r: int
    p: float
    epsilon: float
    m: int
    d: int
    delta: float = 0.05
    rho: float = 1.0
    W: float = 1.0
    x_inf_max: float = 1.0
    x_l2_max: float = 1.0
    teacher_l1: float | None = None
    teacher_l2: float | None = None

    def __post_init__(self) -> None:
        if self.r not in (1, 2):
            raise ValueError(f"bounds are available for r in {{1, 2}}, got {self.r}")
        check_exponent(self.p)
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.m < 1 or self.d < 1:
            raise ValueError("m and d must be >= 1")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if not self.rho > 0.0 or not self.W > 0.0:
            raise ValueError("rho and W must be positive")


def clean_rademacher(spec: BoundSpec) -> float:
    """Standard Rademacher complexity of the norm-capped linear class.

    r = 1: max||x||_inf W sqrt(2 log 2d) / sqrt(m);  r = 2: max||x||_2 W / sqrt(m).
    """
    if spec.r == 1:
        return spec.x_inf_max * spec.W * math.sqrt(2.0 * math.log(2.0 * spec.d)) / math.sqrt(spec.m)
    return spec.x_l2_max * spec.W / math.sqrt(spec.m)


def robust_rademacher_upper(clean: float, spec: BoundSpec) -> float:
    """Upper bound on the worst-case-loss Rademacher complexity:
    clean + eps W / (2 sqrt(m)) * max(d^{1/p* - 1/r}, 1).

    The exponent is evaluated with the exact extended-real p (1/p* = 1 - 1/p).
    """
    inv_pstar = 1.0 - (0.0 if math.isinf(spec.p) else 1.0 / spec.p)
    exponent = inv_pstar - 1.0 / spec.r
    dim_term = max(spec.d**exponent, 1.0)
    return clean + spec.epsilon * spec.W / (2.0 * math.sqrt(spec.m)) * dim_term


def _confidence_term(spec: BoundSpec) -> float:
    return 3.0 * math.sqrt(math.log(2.0 / spec.delta) / (2.0 * spec.m))


def interpolator_bound(spec: BoundSpec) -> float:
    """High-probability robust 0-1 risk bound for max-robust-margin
    interpolators in the class capped at the teacher norm.

    Assembled literally as (2/rho) * robust_rademacher_upper(clean_rademacher)
    with W set to the teacher norm, plus 3 sqrt(log(2/delta) / 2m).  The raw
    value is returned; it bounds a probability, so clamp to 1 when reporting.
    """
    teacher = spec.teacher_l1 if spec.r == 1 else spec.teacher_l2
    if teacher is None:
        raise ValueError("interpolator_bound needs the teacher norm for its r")
    capped = replace(spec, W=teacher)
    return (2.0 / spec.rho) * robust_rademacher_upper(
        clean_rademacher(capped), capped
    ) + _confidence_term(spec)


def case_rates(case: str, d: int, k: int, epsilon: float, m: int) -> tuple[float, float]:
    """Theta-rate pair (r=1, r=2) for a sparsity regime, with unit constants.

    Cases name (teacher, data) density: DD dense/dense, SD k-sparse teacher
    with dense data, DS dense teacher with k-sparse data, SS both k-sparse.
    """
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    root_log_d = math.sqrt(math.log(d))
    root_m = math.sqrt(m)
    if case == "DD":
        r1 = d * root_log_d + epsilon * d
        r2 = d + epsilon * d
    elif case == "SD":
        r1 = k * root_log_d + epsilon * k
        r2 = math.sqrt(d * k) + epsilon * math.sqrt(d * k)
    elif case == "DS":
        r1 = d * root_log_d + epsilon * d
        r2 = math.sqrt(k * d) + epsilon * d
    else:  # SS
        r1 = k * root_log_d + epsilon * k
        r2 = k + epsilon * math.sqrt(k * d)
    return r1 / root_m, r2 / root_m


def bound_table(spec: BoundSpec, epsilons, ms) -> list[dict]:
    """Rows of every calculator over an (epsilon, m) grid, for CSV emission.

    ``interpolator_clamped`` is the reported probability bound min(raw, 1).
    """
    rows = []
    for eps in epsilons:
        for m in ms:
            cell = replace(spec, epsilon=float(eps), m=int(m))
            clean = clean_rademacher(cell)
            robust = robust_rademacher_upper(clean, cell)
            raw = interpolator_bound(cell)
            rows.append(
                {
                    "epsilon": float(eps),
                    "m": int(m),
                    "r": cell.r,
                    "clean_rademacher": clean,
                    "robust_rademacher_upper": robust,
                    "interpolator_raw": raw,
                    "interpolator_clamped": min(raw, 1.0),
                }
            )
    return rows
