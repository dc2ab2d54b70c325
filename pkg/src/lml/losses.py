"""Top-k losses, prediction sets and recall metrics.

Label sets are plain Python sets (or frozensets) of integer indices into the
score vector. Every loss returns a :class:`LossValue` carrying the value and
its gradient with respect to the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, SolverConfig, lml_backward, lml_project, sigmoid

__all__ = [
    "LossValue",
    "lml_nll_loss",
    "lml_nll_loss_batch",
    "predict_top_k",
    "recall",
    "zero_one_error",
    "truncated_topk_entropy",
    "multilabel_truncated_topk_entropy",
    "sigmoid_collapse_loss",
    "softmax_ce_loss",
]


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def _scores(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("expected a single score vector")
    if not np.all(np.isfinite(x)):
        raise DomainError("scores must be finite")
    return x


def _labels(labels, n: int, name: str = "observed") -> np.ndarray:
    idx = np.array(sorted(set(int(j) for j in labels)), dtype=np.int64)
    if idx.size == 0:
        raise DomainError(f"{name} label set is empty")
    if idx[0] < 0 or idx[-1] >= n:
        raise DomainError(f"{name} labels must lie in [0, {n})")
    return idx


def _logsumexp0(a: np.ndarray):
    """``log(1 + sum(exp(a)))`` and the weights ``exp(a) / (1 + sum(exp(a)))``."""
    if a.size == 0:
        return 0.0, a
    top = max(0.0, float(a.max()))
    e = np.exp(a - top)
    denom = np.exp(-top) + e.sum()
    return top + float(np.log(denom)), e / denom


def lml_nll_loss(x, k: int, observed, cfg: SolverConfig | None = None) -> LossValue:
    """Negative log-likelihood of the observed labels under the projection.

    ``-sum_{j in observed} log p_j`` with ``p = lml_project(x, k)``; the
    gradient is chained through :func:`lml.core.lml_backward`.
    """
    x = _scores(x)
    obs = _labels(observed, x.size)
    point = lml_project(x, k, cfg)
    p = point.probs
    upstream = np.zeros_like(p)
    upstream[obs] = -1.0 / p[obs]
    value = float(-np.log(p[obs]).sum())
    return LossValue(value, lml_backward(point, upstream))


def lml_nll_loss_batch(X, k: int, observed, cfg: SolverConfig | None = None):
    """Row-wise :func:`lml_nll_loss` over a batch, with one projection call.

    Returns ``(values, grads, probs)`` with shapes ``(b,)``, ``(b, n)``, ``(b, n)``.
    """
    X = np.asarray(X, dtype=np.float64)
    point = lml_project(X, k, cfg)
    p = point.probs
    mask = np.zeros_like(p, dtype=bool)
    for i, labels in enumerate(observed):
        mask[i, _labels(labels, X.shape[1])] = True
    upstream = np.where(mask, -1.0 / p, 0.0)
    values = -np.where(mask, np.log(p), 0.0).sum(axis=1)
    return values, lml_backward(point, upstream), p


def predict_top_k(x, k: int) -> frozenset:
    """Indices of the k largest scores; ties go to the lowest index."""
    x = _scores(x)
    if not 1 <= k <= x.size:
        raise DomainError(f"k={k} is outside [1, {x.size}]")
    order = np.argsort(-x, kind="stable")
    return frozenset(int(j) for j in order[:k])


def recall(observed, predicted) -> float:
    """Fraction of the observed labels that appear in the prediction."""
    observed = set(observed)
    if not observed:
        raise DomainError("recall is undefined for an empty observed set")
    return len(observed & set(predicted)) / len(observed)


def zero_one_error(observed, predicted) -> int:
    return int(set(observed) != set(predicted))


def _truncation_size(k: int, m: int | None, n: int, pool: int) -> int:
    m = n if m is None else m
    size = m - k
    if size < 0:
        raise DomainError(f"m={m} is smaller than k={k}")
    return min(size, pool)


def _truncated_term(x: np.ndarray, label: int, J: np.ndarray, grad: np.ndarray) -> float:
    value, w = _logsumexp0(x[J] - x[label])
    grad[J] += w
    grad[label] -= w.sum()
    return value


def truncated_topk_entropy(scores, label: int, k: int, m: int | None = None) -> LossValue:
    """Truncated top-k entropy for a single label.

    ``log(1 + sum_{j in J} exp(s_j - s_label))`` where ``J`` holds the
    ``m - k`` smallest competitor scores (``m`` defaults to the number of
    classes, so the ``k - 1`` largest competitors are dropped and ``k = 1``
    is plain cross-entropy). Passing ``m = n - 1`` drops ``k`` competitors
    instead. The gradient treats ``J`` as fixed at the current scores.
    """
    x = _scores(scores)
    n = x.size
    if not 0 <= label < n:
        raise DomainError(f"label {label} is outside [0, {n})")
    if not 1 <= k <= n - 1:
        raise DomainError(f"k={k} is outside [1, {n - 1}]")
    others = np.delete(np.arange(n), label)
    size = _truncation_size(k, m, n, others.size)
    J = others[np.argsort(x[others], kind="stable")[:size]]
    grad = np.zeros(n)
    value = _truncated_term(x, label, J, grad)
    return LossValue(value, grad)


def multilabel_truncated_topk_entropy(scores, observed, k: int,
                                      m: int | None = None) -> LossValue:
    """Sum over observed labels of the truncated entropy term.

    The truncation set ``J`` is computed once, from the scores of labels
    outside ``observed``: it keeps the ``m - k`` smallest of them (``m``
    defaults to the number of classes, capped at the number of unobserved
    labels). With a single observed label this equals
    :func:`truncated_topk_entropy` for the same ``m``.
    """
    x = _scores(scores)
    n = x.size
    obs = _labels(observed, n)
    if not 1 <= k <= n - 1:
        raise DomainError(f"k={k} is outside [1, {n - 1}]")
    others = np.setdiff1d(np.arange(n), obs)
    size = _truncation_size(k, m, n, others.size)
    J = others[np.argsort(x[others], kind="stable")[:size]]
    grad = np.zeros(n)
    value = sum(_truncated_term(x, int(i), J, grad) for i in obs)
    return LossValue(float(value), grad)


def sigmoid_collapse_loss(x, observed) -> LossValue:
    """Independent-sigmoid likelihood of the observed labels only.

    ``-sum_{j in observed} log sigmoid(x_j)``. Nothing pushes unobserved
    labels down, so minimizing it drives every probability toward one.
    """
    x = _scores(x)
    obs = _labels(observed, x.size)
    z = x[obs]
    # -log sigmoid(z) = softplus(-z)
    value = float((np.maximum(-z, 0) + np.log1p(np.exp(-np.abs(z)))).sum())
    grad = np.zeros_like(x)
    grad[obs] = -sigmoid(-z)
    return LossValue(value, grad)


def softmax_ce_loss(x, observed) -> LossValue:
    """Sum of softmax cross-entropies, one per observed label."""
    x = _scores(x)
    obs = _labels(observed, x.size)
    top = x.max()
    lse = top + np.log(np.exp(x - top).sum())
    p = np.exp(x - lse)
    value = float((lse - x[obs]).sum())
    grad = obs.size * p
    grad[obs] -= 1.0
    return LossValue(value, grad)
