"""One-hidden-layer bias-free ReLU network with PGD-based robust training.

The network f(x) = sum_j u_j max(0, <W_j, x>) is 2-homogeneous in its
parameters.  Training is full batch on the mean exponential loss: each epoch
first computes adversarial inputs for every sample against the current model
(l-infinity PGD, 10 steps of size eps/5), then takes one parameter step,
either plain gradient descent or sign descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import Dataset, init_stream
from .geometry import ThreatModel
from .losses import EXP_FLOOR, pgd_attack_batch
from .training import StoppingRule

__all__ = [
    "MlpModel",
    "MlpTrace",
    "MlpDivergenceError",
    "init_mlp",
    "mlp_forward",
    "mlp_grads",
    "train_mlp",
    "robust_accuracy",
    "save_mlp_csv",
    "load_mlp_csv",
    "save_curves_csv",
]

_MLP_TAG = 7


class MlpDivergenceError(RuntimeError):
    """A nonfinite parameter or gradient appeared; carries the trace so far."""

    def __init__(self, message: str, trace: "MlpTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class MlpModel:
    """Hidden weights W (width x d) and output weights u (width,), no biases."""

    W: np.ndarray
    u: np.ndarray

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def decision(self, x: np.ndarray) -> float:
        return float(self.u @ np.maximum(self.W @ x, 0.0))

    def decision_batch(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.W.T, 0.0) @ self.u

    def input_grad(self, x: np.ndarray) -> np.ndarray:
        active = (self.W @ x) > 0.0  # ReLU derivative at 0 is 0
        return self.W.T @ (self.u * active)

    def input_grad_batch(self, x: np.ndarray) -> np.ndarray:
        active = (x @ self.W.T) > 0.0
        return (active * self.u) @ self.W


def init_mlp(d: int, width: int = 128, init_scale: float = 1e-2, seed: int = 0) -> MlpModel:
    """Per-layer uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) draw, multiplied by
    init_scale; the same seed at a different scale gives exactly the rescaled
    parameters."""
    gen = init_stream(seed, _MLP_TAG, d, width)
    w = (2.0 * gen.random((width, d)) - 1.0) / math.sqrt(d)
    u = (2.0 * gen.random(width) - 1.0) / math.sqrt(width)
    return MlpModel(init_scale * w, init_scale * u)


def mlp_forward(model: MlpModel, x: np.ndarray) -> float:
    return model.decision(x)


def mlp_grads(model: MlpModel, x: np.ndarray, y: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact backpropagation gradients of exp(-y f(x)) for one sample."""
    z = model.W @ x
    h = np.maximum(z, 0.0)
    coef = -y * math.exp(-y * float(model.u @ h))
    grad_u = coef * h
    grad_w = coef * np.outer(model.u * (z > 0.0), x)
    return grad_w, grad_u


@dataclass
class MlpTrace:
    """Per-epoch metrics; test columns are NaN on epochs where the (costly)
    test-set attack was skipped."""

    epochs: np.ndarray
    log_loss: np.ndarray
    loss: np.ndarray
    robust_train_acc: np.ndarray
    clean_train_acc: np.ndarray
    robust_test_acc: np.ndarray
    clean_test_acc: np.ndarray
    model: MlpModel
    stop_reason: str

    @property
    def final_log_loss(self) -> float:
        return float(self.log_loss[-1])


def robust_accuracy(model: MlpModel, data: Dataset, tm: ThreatModel, steps: int = 10) -> float:
    """Accuracy under a fresh PGD attack at the given threat model (clean
    accuracy when epsilon = 0); boundary decisions count as errors."""
    if tm.epsilon == 0.0:
        x = data.samples
    else:
        x = pgd_attack_batch(model, data.samples, data.labels, tm, steps=steps)
    return float(np.mean(data.labels * model.decision_batch(x) > 0.0))


def train_mlp(
    data: Dataset,
    tm: ThreatModel,
    alg: str = "gd",
    lr: float = 1e-5,
    init_scale: float = 1e-2,
    stop: StoppingRule = StoppingRule(),
    width: int = 128,
    seed: int = 0,
    test_data: Dataset | None = None,
    eval_every: int = 1,
) -> MlpTrace:
    """Full-batch robust training with gradient descent or sign descent.

    Each epoch attacks every training point against the current model (skipped
    when epsilon = 0), logs metrics for the current model, then updates
    theta <- theta - lr * grad (``gd``) or theta <- theta - lr * sign(grad)
    (``sign_descent``).  Test metrics are evaluated every ``eval_every``
    epochs and at the final epoch.
    """
    if alg not in ("gd", "sign_descent"):
        raise ValueError(f"alg must be 'gd' or 'sign_descent', got {alg!r}")
    x, y = data.samples, data.labels
    m = data.m
    model = init_mlp(data.d, width=width, init_scale=init_scale, seed=seed)
    log_threshold = math.log(stop.loss_threshold)
    log_m = math.log(m)
    rows: list[tuple] = []
    stop_reason = "max_iters"

    def build(reason: str) -> MlpTrace:
        cols = list(zip(*rows))
        log_loss = np.array(cols[1])
        with np.errstate(over="ignore"):
            loss = np.exp(log_loss)
        return MlpTrace(
            epochs=np.array(cols[0], dtype=int),
            log_loss=log_loss,
            loss=loss,
            robust_train_acc=np.array(cols[2]),
            clean_train_acc=np.array(cols[3]),
            robust_test_acc=np.array(cols[4]),
            clean_test_acc=np.array(cols[5]),
            model=model,
            stop_reason=reason,
        )

    epoch = 0
    while True:
        x_adv = x if tm.epsilon == 0.0 else pgd_attack_batch(model, x, y, tm)
        pre = x_adv @ model.W.T
        hidden = np.maximum(pre, 0.0)
        f = hidden @ model.u
        z = -y * f
        log_loss = float(logsumexp(z)) - log_m
        robust_train = float(np.mean(y * f > 0.0))
        clean_train = robust_train if tm.epsilon == 0.0 else float(
            np.mean(y * model.decision_batch(x) > 0.0)
        )
        done = log_loss <= log_threshold or epoch >= stop.max_iters
        eval_test = test_data is not None and (done or epoch % eval_every == 0)
        robust_test = clean_test = math.nan
        if eval_test:
            robust_test = robust_accuracy(model, test_data, tm)
            clean_test = float(
                np.mean(test_data.labels * model.decision_batch(test_data.samples) > 0.0)
            )
        rows.append((epoch, log_loss, robust_train, clean_train, robust_test, clean_test))
        if done:
            if log_loss <= log_threshold:
                stop_reason = "threshold"
            break

        coef = -y * np.exp(np.clip(z, EXP_FLOOR, None)) / m
        grad_w = ((coef[:, None] * (pre > 0.0)) * model.u).T @ x_adv
        grad_u = hidden.T @ coef
        if not (np.all(np.isfinite(grad_w)) and np.all(np.isfinite(grad_u))):
            raise MlpDivergenceError(f"nonfinite gradient at epoch {epoch}", build("max_iters"))
        if alg == "gd":
            model.W = model.W - lr * grad_w
            model.u = model.u - lr * grad_u
        else:
            model.W = model.W - lr * np.sign(grad_w)
            model.u = model.u - lr * np.sign(grad_u)
        epoch += 1

    return build(stop_reason)


def save_mlp_csv(model: MlpModel, path) -> None:
    """Checkpoint: a JSON header line, then W row blocks, then the u row."""
    with open(path, "w") as f:
        f.write("#" + json.dumps({"width": model.width, "d": model.d}) + "\n")
        for row in model.W:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
        f.write(",".join(repr(float(v)) for v in model.u) + "\n")


def load_mlp_csv(path) -> MlpModel:
    with open(path) as f:
        meta = json.loads(f.readline()[1:])
        rows = [[float(v) for v in line.split(",")] for line in f.read().splitlines() if line]
    w = np.array(rows[: meta["width"]])
    u = np.array(rows[meta["width"]])
    if w.shape != (meta["width"], meta["d"]) or u.shape != (meta["width"],):
        raise ValueError("checkpoint shape disagrees with its header")
    return MlpModel(w, u)


def save_curves_csv(trace: MlpTrace, path) -> None:
    header = "epoch,log_loss,robust_train_acc,clean_train_acc,robust_test_acc,clean_test_acc"
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in zip(
            trace.epochs,
            trace.log_loss,
            trace.robust_train_acc,
            trace.clean_train_acc,
            trace.robust_test_acc,
            trace.clean_test_acc,
        ):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
