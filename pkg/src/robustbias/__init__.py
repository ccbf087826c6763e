"""Robust empirical risk minimization for linear models under lp threat models:
steepest-descent geometries, worst-case losses, margin oracles, and
generalization-bound calculators."""

from .bounds import BoundSpec, case_rates, clean_rademacher, interpolator_bound, robust_rademacher_upper
from .data import (
    DENSE,
    Dataset,
    DistributionSpec,
    SparsitySpec,
    gen_dataset,
    gen_teacher,
    gen_test_set,
    load_mnist_idx,
)
from .geometry import (
    ThreatModel,
    dual_exponent,
    dual_norm_subgradient,
    lp_norm,
    steepest_direction,
    worst_case_perturbation,
)
from .losses import (
    DiagNet,
    LinearModel,
    diag_worst_case_loss_and_grads,
    pgd_attack,
    robust_01_risk,
    worst_case_exp_grad,
    worst_case_exp_log_loss,
    worst_case_exp_loss,
)
from .margins import (
    dataset_eps_star,
    is_separable,
    max_robust_margin_oracle,
    normalized_robust_margin,
    point_margin,
    robust_point_margin,
)
from .mlp import MlpModel, init_mlp, mlp_forward, mlp_grads, robust_accuracy, train_mlp
from .training import (
    OptimizerSpec,
    StoppingRule,
    TrainTrace,
    adaptive_lr,
    train_diagnet,
    train_linear,
)

__version__ = "0.1.0"
