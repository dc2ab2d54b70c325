"""Limited multi-label projection layer, top-k losses and a small training harness."""

from .core import (
    ConvergenceError,
    DomainError,
    DualBracket,
    LmlPoint,
    SolverConfig,
    binary_entropy,
    entropy_surface_grid,
    find_dual,
    g_dual,
    initial_bracket,
    lml_backward,
    lml_project,
    shannon_entropy,
    sigmoid,
    solve_dual,
)
from .losses import (
    LossValue,
    lml_nll_loss,
    multilabel_truncated_topk_entropy,
    predict_top_k,
    recall,
    sigmoid_collapse_loss,
    truncated_topk_entropy,
    zero_one_error,
)

__version__ = "0.1.0"
