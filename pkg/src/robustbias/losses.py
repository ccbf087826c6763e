"""Worst-case losses for linear and diagonal-network predictors, and PGD.

For a linear predictor the inner maximization over an lp ball has the closed
form sum_i exp(-y_i <w, x_i> + eps ||w||_{p*}); everything here is built on
that identity.  The plain-sum loss can underflow once margins are large, so a
log-domain accessor is provided and is the authoritative quantity for
stopping rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .geometry import (
    ThreatModel,
    dual_exponent,
    dual_norm_subgradient,
    lp_norm,
)

__all__ = [
    "LinearModel",
    "DiagNet",
    "AttackError",
    "worst_case_exponents",
    "worst_case_exp_loss",
    "worst_case_exp_log_loss",
    "worst_case_exp_grad",
    "robust_01_risk",
    "diag_worst_case_loss_and_grads",
    "pgd_attack",
    "pgd_attack_batch",
]

# Double precision underflows exp() below roughly -745; exponents are floored
# there before exponentiation so the plain-sum loss degrades to 0 silently
# while the log-domain accessor stays exact.
EXP_FLOOR = -745.0


class AttackError(RuntimeError):
    """Raised when an adversarial attack encounters a nonfinite gradient."""


@dataclass
class LinearModel:
    """The predictor x -> <w, x>."""

    w: np.ndarray

    def decision_batch(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w

    def decision(self, x: np.ndarray) -> float:
        return float(np.dot(self.w, x))

    def input_grad(self, x: np.ndarray) -> np.ndarray:
        return np.array(self.w, dtype=float)

    def input_grad_batch(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.w, x.shape)


@dataclass
class DiagNet:
    """The reparameterized linear predictor x -> <u_+^2 - u_-^2, x>."""

    u_plus: np.ndarray
    u_minus: np.ndarray

    @property
    def effective_w(self) -> np.ndarray:
        return self.u_plus**2 - self.u_minus**2

    def decision_batch(self, x: np.ndarray) -> np.ndarray:
        return x @ self.effective_w


def worst_case_exponents(model: LinearModel, data: Dataset, tm: ThreatModel) -> np.ndarray:
    """Per-point exponents a_i = -y_i <w, x_i> + eps ||w||_{p*}."""
    w = model.w
    return -data.labels * (data.samples @ w) + tm.epsilon * lp_norm(w, dual_exponent(tm.p))


def worst_case_exp_loss(model: LinearModel, data: Dataset, tm: ThreatModel) -> float:
    """The worst-case exponential loss sum_i exp(a_i) (unnormalized sum)."""
    a = worst_case_exponents(model, data, tm)
    return float(np.exp(np.maximum(a, EXP_FLOOR)).sum())


def worst_case_exp_log_loss(model: LinearModel, data: Dataset, tm: ThreatModel) -> float:
    """log sum_i exp(a_i); exact even when the plain sum underflows."""
    return float(logsumexp(worst_case_exponents(model, data, tm)))


def worst_case_exp_grad(model: LinearModel, data: Dataset, tm: ThreatModel) -> np.ndarray:
    """A subgradient sum_i exp(a_i) (-y_i x_i + eps s) of the worst-case loss.

    s is the deterministic dual-norm subgradient of ||w||_{p*}, so the
    selection matches `worst_case_perturbation` exactly.
    """
    a = worst_case_exponents(model, data, tm)
    e = np.exp(np.maximum(a, EXP_FLOOR))
    s = dual_norm_subgradient(model.w, dual_exponent(tm.p))
    return -(data.samples.T @ (data.labels * e)) + e.sum() * tm.epsilon * s


def robust_01_risk(model: LinearModel, data: Dataset, tm: ThreatModel) -> float:
    """Fraction of points whose worst-case signed margin is <= 0.

    The boundary counts as an error, matching the <= in the robust 0-1
    indicator; in particular w = 0 has risk 1 on any data.
    """
    margins = data.labels * (data.samples @ model.w) - tm.epsilon * lp_norm(
        model.w, dual_exponent(tm.p)
    )
    return float(np.mean(margins <= 0.0))


def diag_worst_case_loss_and_grads(
    model: DiagNet, data: Dataset, tm: ThreatModel
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean worst-case exponential loss of a diagonal net, with both gradients.

    The loss is (1/m) of the linear worst-case loss at the effective predictor
    w(u) = u_+^2 - u_-^2; gradients follow by the chain rule,
    grad_{u_+} = 2 u_+ * g_w and grad_{u_-} = -2 u_- * g_w, where g_w carries
    the 1/m factor.
    """
    linear = LinearModel(model.effective_w)
    m = data.m
    loss = worst_case_exp_loss(linear, data, tm) / m
    g_w = worst_case_exp_grad(linear, data, tm) / m
    return loss, 2.0 * model.u_plus * g_w, -2.0 * model.u_minus * g_w


def _loss_input_grad_sign(model, x: np.ndarray, y: float) -> np.ndarray:
    # sign of the input gradient of exp(-y f(x)): the positive factor
    # exp(-y f) never flips it, and dropping it keeps the attack moving even
    # when that factor underflows
    g = model.input_grad(x)
    if not np.all(np.isfinite(g)):
        raise AttackError("nonfinite input gradient during PGD")
    return np.sign(-y * g)


def pgd_attack(
    model,
    x: np.ndarray,
    y: float,
    tm: ThreatModel,
    steps: int = 10,
    step_size: float | None = None,
) -> np.ndarray:
    """l-infinity PGD on the exponential loss, from a clean deterministic start.

    Iterates x <- clip(x + alpha sign(grad_x loss), B_eps(x0)); the default
    step size is eps/5.  Only p = inf threat models are supported, and the
    returned point is always feasible.
    """
    if not math.isinf(tm.p):
        raise ValueError("PGD is implemented for p = inf threat models only")
    if not tm.epsilon > 0.0:
        raise ValueError("PGD needs epsilon > 0")
    alpha = tm.epsilon / 5.0 if step_size is None else step_size
    x0 = np.asarray(x, dtype=float)
    lo, hi = x0 - tm.epsilon, x0 + tm.epsilon
    xt = x0.copy()
    for _ in range(steps):
        xt = np.clip(xt + alpha * _loss_input_grad_sign(model, xt, y), lo, hi)
    return xt


def pgd_attack_batch(
    model,
    x: np.ndarray,
    y: np.ndarray,
    tm: ThreatModel,
    steps: int = 10,
    step_size: float | None = None,
) -> np.ndarray:
    """Row-wise `pgd_attack` over a batch, vectorized."""
    if not math.isinf(tm.p):
        raise ValueError("PGD is implemented for p = inf threat models only")
    if not tm.epsilon > 0.0:
        raise ValueError("PGD needs epsilon > 0")
    alpha = tm.epsilon / 5.0 if step_size is None else step_size
    x0 = np.asarray(x, dtype=float)
    lo, hi = x0 - tm.epsilon, x0 + tm.epsilon
    xt = x0.copy()
    for _ in range(steps):
        g = model.input_grad_batch(xt)
        if not np.all(np.isfinite(g)):
            raise AttackError("nonfinite input gradient during PGD")
        xt = np.clip(xt + alpha * np.sign(-y[:, None] * g), lo, hi)
    return xt
