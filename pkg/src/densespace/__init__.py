"""Densely connected NAS search space with chained cost estimation,
gradient-based two-stage search, and Viterbi architecture derivation."""

from .cost import (
    CostBreakdown,
    CostTable,
    Grads,
    MissingCostEntryError,
    OpSignature,
    chained_cost,
    cost_gradients,
    exact_cost,
    flops_of,
    layer_cost,
    local_cost,
    params_of,
    regularized_loss,
)
from .derive import (
    DerivedArchitecture,
    DerivedBlock,
    argmax_ops,
    brute_force_best_path,
    derive,
    viterbi_derive,
)
from .params import (
    ArchParams,
    PathDistribution,
    apply_sampled_update,
    init_params,
    op_weights,
    path_probs,
    rebalance_bias,
    sample_ops,
)
from .search import (
    Evaluator,
    SearchConfig,
    SearchTrace,
    SyntheticEvaluator,
    random_search,
    search,
)
from .space import (
    ConnectionSpec,
    LayerSpec,
    OperationKind,
    RoutingBlockSpec,
    SpaceConfig,
    StageConfig,
    SuperNetworkSpec,
    build_super_network,
    validate,
)

__version__ = "0.1.0"
