"""Steepest-descent trainers for linear models, the diagonal-network trainer,
and the adaptive learning-rate / stopping policies.

The trainers work with *scaled* gradients: the common factor exp(max_i a_i) of
the per-point loss terms is carried in log space and folded into the step
coefficient, so trajectories stay exact long after the plain-sum loss has
underflowed.  Updates whose coefficient underflows to zero cannot change the
iterate; such runs stop and report ``max_iters``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .geometry import (
    ThreatModel,
    check_exponent,
    dual_exponent,
    dual_norm_subgradient,
    lp_norm,
    steepest_direction,
)
from .losses import DiagNet, LinearModel

__all__ = [
    "StoppingRule",
    "OptimizerSpec",
    "TrainTrace",
    "DivergenceError",
    "adaptive_lr",
    "train_linear",
    "train_diagnet",
    "save_trace_csv",
    "save_vector_csv",
    "load_vector_csv",
]

# Past 10^3 iterations the trace thins out geometrically with this ratio.
_LOG_DENSE_UNTIL = 1000
_LOG_GROWTH = 1.1
# A loss increase triggers step halving, at most this many times per step.
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class StoppingRule:
    loss_threshold: float = 1e-3
    max_iters: int = 200_000

    def __post_init__(self) -> None:
        if not self.loss_threshold > 0.0:
            raise ValueError("loss_threshold must be positive")
        if not self.max_iters > 0:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class OptimizerSpec:
    """Steepest descent under the lr geometry.

    ``eta=None`` selects the adaptive schedule min(eta_max, 1/((B+eps)^2 L))
    with B the largest l-infinity norm of the training rows; a float selects a
    constant step size.  ``normalized`` switches to unit-norm update steps.
    """

    r: float = 2.0
    eta: float | None = None
    eta_max: float = 1e5
    normalized: bool = False
    stop: StoppingRule = StoppingRule()

    def __post_init__(self) -> None:
        check_exponent(self.r)
        if self.eta is not None and not self.eta > 0.0:
            raise ValueError("constant step size must be positive")
        if not self.eta_max > 0.0:
            raise ValueError("eta_max must be positive")


class DivergenceError(RuntimeError):
    """A nonfinite iterate appeared; carries the last finite trace."""

    def __init__(self, message: str, trace: "TrainTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainTrace:
    """Per-logged-iteration diagnostics plus the final model.

    Rows are dense for the first 10^3 iterations and geometrically thinned
    afterwards; the stopping iterate is always logged.  ``log_loss`` and
    ``log_grad_dual_norm`` stay exact when ``loss`` / ``grad_dual_norm``
    underflow.  ``margin`` is min_i (y<w,x> - eps||w||_{p*}) / ||w||_r for the
    trainer's geometry r (NaN at w = 0).
    """

    iterations: np.ndarray
    log_loss: np.ndarray
    loss: np.ndarray
    grad_dual_norm: np.ndarray
    log_grad_dual_norm: np.ndarray
    norm_l1: np.ndarray
    norm_l2: np.ndarray
    norm_linf: np.ndarray
    norm_r: np.ndarray
    margin: np.ndarray
    step_size: np.ndarray
    halvings: np.ndarray
    model: object
    stop_reason: str
    r: float
    # diagonal-network extras (None for linear runs)
    diag_l1: np.ndarray | None = None
    diag_half_param_sq: np.ndarray | None = None
    l1_minus_half_param_max: float | None = None
    l1_minus_param_max: float | None = None

    @property
    def final_w(self) -> np.ndarray:
        if isinstance(self.model, DiagNet):
            return self.model.effective_w
        return self.model.w

    @property
    def final_log_loss(self) -> float:
        return float(self.log_loss[-1])


def adaptive_lr(B: float, epsilon: float, loss: float, eta_max: float) -> float:
    """min(eta_max, 1/((B + eps)^2 * loss)); B is the largest l-inf data norm."""
    if not loss > 0.0:
        raise ValueError(f"adaptive schedule needs a positive loss, got {loss!r}")
    denom = (B + epsilon) ** 2 * loss
    if denom == 0.0:
        return eta_max
    return min(eta_max, 1.0 / denom)


class _TraceBuilder:
    def __init__(self, r: float, diag: bool = False):
        self.rows: list[tuple] = []
        self.r = r
        self.diag = diag
        self.diag_rows: list[tuple[float, float]] = []
        self.next_log = 0

    def due(self, t: int) -> bool:
        return t <= _LOG_DENSE_UNTIL or t >= self.next_log

    def mark(self, t: int) -> None:
        if t >= self.next_log:
            self.next_log = max(t + 1, int(t * _LOG_GROWTH))

    def append(self, t, log_loss, log_gnorm, w, margin, step, halvings, diag_extra=None):
        self.rows.append(
            (
                t,
                log_loss,
                log_gnorm,
                lp_norm(w, 1.0),
                lp_norm(w, 2.0),
                lp_norm(w, math.inf),
                lp_norm(w, self.r),
                margin,
                step,
                halvings,
            )
        )
        if diag_extra is not None:
            self.diag_rows.append(diag_extra)
        self.mark(t)

    def build(self, model, stop_reason, **extras) -> TrainTrace:
        cols = list(zip(*self.rows))
        log_loss = np.array(cols[1])
        log_gnorm = np.array(cols[2])
        with np.errstate(over="ignore"):
            loss = np.exp(log_loss)
            gnorm = np.exp(log_gnorm)
        kwargs = {}
        if self.diag:
            diag_cols = list(zip(*self.diag_rows))
            kwargs["diag_l1"] = np.array(diag_cols[0])
            kwargs["diag_half_param_sq"] = np.array(diag_cols[1])
        return TrainTrace(
            iterations=np.array(cols[0], dtype=int),
            log_loss=log_loss,
            loss=loss,
            grad_dual_norm=gnorm,
            log_grad_dual_norm=log_gnorm,
            norm_l1=np.array(cols[3]),
            norm_l2=np.array(cols[4]),
            norm_linf=np.array(cols[5]),
            norm_r=np.array(cols[6]),
            margin=np.array(cols[7]),
            step_size=np.array(cols[8]),
            halvings=np.array(cols[9], dtype=int),
            model=model,
            stop_reason=stop_reason,
            r=self.r,
            **kwargs,
            **extras,
        )


def _stats(scores, w, labels, eps, pstar):
    """Exponent vector, its max, scaled weights, and the exact log-loss."""
    pen = eps * lp_norm(w, pstar) if eps else 0.0
    a = -labels * scores + pen
    amax = float(a.max())
    e = np.exp(a - amax)
    log_loss = amax + math.log(float(e.sum()))
    return amax, e, log_loss


def train_linear(
    data: Dataset,
    tm: ThreatModel,
    spec: OptimizerSpec = OptimizerSpec(),
    w0: np.ndarray | None = None,
) -> TrainTrace:
    """Steepest descent on the worst-case exponential loss (unnormalized sum).

    Iterates w <- w + eta_t D_t with D_t the lr steepest direction of the loss
    subgradient and eta_t from the spec's schedule.  A step that would
    increase the loss is halved (up to 30 times) before being taken, so the
    logged loss is non-increasing, matching the descent property of the
    continuous-time flow.
    """
    X, y = data.samples, data.labels
    r, rstar, pstar = spec.r, dual_exponent(spec.r), dual_exponent(tm.p)
    eps = tm.epsilon
    w = np.zeros(data.d) if w0 is None else np.array(w0, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("initial iterate must be finite")
    scores = X @ w
    B = float(np.abs(X).max()) if X.size else 0.0
    log_b2 = 2.0 * math.log(B + eps) if B + eps > 0.0 else -math.inf
    log_eta_cap = math.log(spec.eta_max)
    log_threshold = math.log(spec.stop.loss_threshold)
    trace = _TraceBuilder(r)
    stop_reason = "max_iters"

    amax, e, log_loss = _stats(scores, w, y, eps, pstar)
    t = 0
    while True:
        # scaled gradient: g * exp(-amax)
        g_scaled = -(X.T @ (y * e))
        if eps:
            g_scaled += float(e.sum()) * eps * dual_norm_subgradient(w, pstar)
        gnorm_scaled = lp_norm(g_scaled, rstar)
        log_gnorm = amax + (math.log(gnorm_scaled) if gnorm_scaled > 0.0 else -math.inf)
        norm_r = lp_norm(w, r)
        margin = -amax / norm_r if norm_r > 0.0 else math.nan

        if log_loss <= log_threshold:
            stop_reason = "threshold"
            trace.append(t, log_loss, log_gnorm, w, margin, 0.0, 0)
            break
        if t >= spec.stop.max_iters:
            trace.append(t, log_loss, log_gnorm, w, margin, 0.0, 0)
            break

        delta = steepest_direction(g_scaled, r, normalized=spec.normalized)
        if spec.eta is not None:
            log_eta = math.log(spec.eta)
        else:
            log_eta = min(log_eta_cap, -log_b2 - log_loss)
        log_coeff = log_eta + (0.0 if spec.normalized else amax)
        with np.errstate(over="ignore"):
            coeff = float(np.exp(log_coeff))
        if coeff == 0.0 or not np.any(delta):
            # the step cannot change the iterate; the remaining budget is moot
            trace.append(t, log_loss, log_gnorm, w, margin, coeff, 0)
            break

        if r == 1.0:
            j = int(np.argmax(np.abs(delta)))
            score_step = delta[j] * X[:, j]
        else:
            score_step = X @ delta
        halvings = 0
        while True:
            w_new = w + coeff * delta
            scores_new = scores + coeff * score_step
            amax_new, e_new, log_loss_new = _stats(scores_new, w_new, y, eps, pstar)
            if log_loss_new <= log_loss or halvings >= _MAX_HALVINGS:
                break
            coeff /= 2.0
            halvings += 1
        if not np.all(np.isfinite(w_new)):
            raise DivergenceError(
                f"nonfinite iterate at iteration {t}",
                trace.build(LinearModel(w), "max_iters"),
            )
        if trace.due(t):
            trace.append(t, log_loss, log_gnorm, w, margin, coeff, halvings)
        w, scores = w_new, scores_new
        amax, e, log_loss = amax_new, e_new, log_loss_new
        t += 1

    return trace.build(LinearModel(w), stop_reason)


def train_diagnet(
    data: Dataset,
    tm: ThreatModel,
    lr: float = 2e-3,
    alpha: float = 1e-3,
    stop: StoppingRule = StoppingRule(),
) -> TrainTrace:
    """Plain gradient descent on the mean worst-case exponential loss of a
    diagonal network, from the constant initialization u_+ = u_- = alpha/sqrt(2d).

    At that initialization the effective predictor w(u) = u_+^2 - u_-^2 is
    exactly zero.  The trace records margins and norms of w(u) under the l1
    geometry (the bias this parameterization induces in predictor space),
    together with ||w(u)||_1 and (||u_+||^2 + ||u_-||^2)/2 per logged row.
    """
    if not lr > 0.0 or not alpha > 0.0:
        raise ValueError("lr and alpha must be positive")
    X, y = data.samples, data.labels
    d, m = data.d, data.m
    pstar = dual_exponent(tm.p)
    eps = tm.epsilon
    u_plus = np.full(d, alpha / math.sqrt(2.0 * d))
    u_minus = u_plus.copy()
    log_threshold = math.log(stop.loss_threshold)
    log_m = math.log(m)
    log_lr_over_m = math.log(lr) - log_m
    trace = _TraceBuilder(1.0, diag=True)
    stop_reason = "max_iters"
    l1_minus_half_max = -math.inf
    l1_minus_full_max = -math.inf

    t = 0
    while True:
        w = u_plus**2 - u_minus**2
        scores = X @ w
        amax, e, log_sum = _stats(scores, w, y, eps, pstar)
        log_loss = log_sum - log_m  # mean worst-case loss
        gw_scaled = -(X.T @ (y * e))
        if eps:
            gw_scaled += float(e.sum()) * eps * dual_norm_subgradient(w, pstar)
        gp_scaled = 2.0 * u_plus * gw_scaled
        gm_scaled = -2.0 * u_minus * gw_scaled
        gnorm_scaled = math.hypot(lp_norm(gp_scaled, 2.0), lp_norm(gm_scaled, 2.0))
        log_gnorm = (
            amax - log_m + math.log(gnorm_scaled) if gnorm_scaled > 0.0 else -math.inf
        )
        l1 = lp_norm(w, 1.0)
        half_sq = 0.5 * (float(u_plus @ u_plus) + float(u_minus @ u_minus))
        l1_minus_half_max = max(l1_minus_half_max, l1 - half_sq)
        l1_minus_full_max = max(l1_minus_full_max, l1 - 2.0 * half_sq)
        margin = -amax / l1 if l1 > 0.0 else math.nan

        done = log_loss <= log_threshold or t >= stop.max_iters
        if done and log_loss <= log_threshold:
            stop_reason = "threshold"
        with np.errstate(over="ignore"):
            coeff = float(np.exp(log_lr_over_m + amax))
        stalled = not done and (coeff == 0.0 or not (np.any(gp_scaled) or np.any(gm_scaled)))
        if done or stalled:
            trace.append(t, log_loss, log_gnorm, w, margin, 0.0, 0, (l1, half_sq))
            break
        if trace.due(t):
            trace.append(t, log_loss, log_gnorm, w, margin, coeff, 0, (l1, half_sq))
        u_plus = u_plus - coeff * gp_scaled
        u_minus = u_minus - coeff * gm_scaled
        if not (np.all(np.isfinite(u_plus)) and np.all(np.isfinite(u_minus))):
            raise DivergenceError(
                f"nonfinite iterate at iteration {t}",
                trace.build(
                    DiagNet(np.nan_to_num(u_plus), np.nan_to_num(u_minus)),
                    "max_iters",
                    l1_minus_half_param_max=l1_minus_half_max,
                    l1_minus_param_max=l1_minus_full_max,
                ),
            )
        t += 1

    return trace.build(
        DiagNet(u_plus, u_minus),
        stop_reason,
        l1_minus_half_param_max=l1_minus_half_max,
        l1_minus_param_max=l1_minus_full_max,
    )


def save_trace_csv(trace: TrainTrace, path) -> None:
    """iteration, log-loss, norms, margin, step (plus diagnostics)."""
    header = [
        "iteration",
        "log_loss",
        "log_grad_dual_norm",
        "norm_l1",
        "norm_l2",
        "norm_linf",
        "norm_r",
        "margin",
        "step_size",
        "halvings",
    ]
    cols = [
        trace.iterations,
        trace.log_loss,
        trace.log_grad_dual_norm,
        trace.norm_l1,
        trace.norm_l2,
        trace.norm_linf,
        trace.norm_r,
        trace.margin,
        trace.step_size,
        trace.halvings,
    ]
    if trace.diag_l1 is not None:
        header += ["diag_l1", "diag_half_param_sq"]
        cols += [trace.diag_l1, trace.diag_half_param_sq]
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in zip(*cols):
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def save_vector_csv(w: np.ndarray, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(repr(float(v)) for v in np.asarray(w).ravel()) + "\n")


def load_vector_csv(path) -> np.ndarray:
    with open(path) as f:
        return np.array([float(v) for v in f.read().strip().split(",")])
