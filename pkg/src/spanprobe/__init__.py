"""spanprobe: blackbox span recovery of the innermost weight matrix of a
feedforward network, assumption checkers for when the guarantees apply, and
the null-space obfuscation attack the recovered span enables."""

__version__ = "0.1.0"

from .linalg import (
    RankEstimate,
    Subspace,
    kernel_basis,
    least_squares,
    max_projection_defect,
    numerical_rank,
    orthonormalize,
    project,
    row_space,
)
from .network import (
    Activation,
    HeadKind,
    Layer,
    Network,
    OutputHead,
    TrainConfig,
    analytic_gradient,
    as_blackbox,
    evaluate,
    load,
    random_network,
    save,
    sign_patterns,
    train_softmax,
    with_linear_head,
)
from .oracle import GradientSample, QueryBudgetError, QueryOracle, fd_directional, fd_gradient
from .recovery import (
    RecoveryReport,
    ReluRecoveryConfig,
    ThresholdRecoveryConfig,
    find_boundary_point,
    recover_direction,
    recover_span_relu,
    recover_span_threshold,
)
from .assumptions import (
    AssumptionReport,
    check_nondegeneracy,
    check_orthant_probabilities,
    probe_boundary_gradient,
    probe_threshold_reachability,
)
from .attack import (
    AttackResult,
    ImageDataset,
    load_idx_images,
    load_idx_labels,
    obfuscate,
    run_attack,
)
