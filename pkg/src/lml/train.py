"""Top-k recall training on a planted synthetic task.

A small ReLU network is trained by plain minibatch SGD with hand-written
reverse-mode gradients. Ground truth for each sample is the top-k of a fixed
random linear map of its features, so the labels are realizable; observed
labels are a random non-empty subset of the ground truth.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DomainError, SolverConfig, lml_project, sigmoid
from .losses import (
    lml_nll_loss_batch,
    multilabel_truncated_topk_entropy,
    predict_top_k,
    truncated_topk_entropy,
)

LOSSES = ("lml", "truncated_entropy", "multilabel_truncated_entropy", "sigmoid", "softmax_ce")


class TrainingDiverged(RuntimeError):
    pass


# -- model ------------------------------------------------------------------

@dataclass
class MlpModel:
    """Weights ``W[l]`` have shape (fan_out, fan_in); the last layer is linear."""

    weights: list
    biases: list

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (*self.weights, *self.biases):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()


def init_mlp(d_in: int, n_out: int, hidden=(64, 64), rng=None) -> MlpModel:
    """He-initialized network; ``hidden=()`` gives a single linear layer."""
    rng = np.random.default_rng(rng)
    sizes = [d_in, *hidden, n_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def forward(model: MlpModel, features, return_cache: bool = False):
    """Scores for one feature vector (d_in,) or a batch (b, d_in)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.d_in:
        raise DomainError(f"expected {model.d_in} features, got {x.shape[-1]}")
    a = np.atleast_2d(x)
    cache = [a]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        a = z if i == last else np.maximum(z, 0.0)
        cache.append(z)
    out = a[0] if x.ndim == 1 else a
    return (out, cache) if return_cache else out


def backward(model: MlpModel, features, grad_scores, cache=None):
    """Gradients of ``sum(scores * grad_scores)`` w.r.t. every parameter.

    Batched inputs sum over the batch. Returns ``(dW, db)`` lists aligned
    with ``model.weights`` and ``model.biases``.
    """
    g = np.atleast_2d(np.asarray(grad_scores, dtype=np.float64))
    if g.shape[-1] != model.n_out:
        raise DomainError(f"expected {model.n_out} score gradients, got {g.shape[-1]}")
    if cache is None:
        _, cache = forward(model, features, return_cache=True)
    x, zs = cache[0], cache[1:]
    if g.shape[0] != x.shape[0]:
        raise DomainError("batch size of grad_scores does not match features")
    dW = [None] * len(model.weights)
    db = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        a_prev = x if i == 0 else np.maximum(zs[i - 1], 0.0)
        dW[i] = g.T @ a_prev
        db[i] = g.sum(axis=0)
        if i:
            g = (g @ model.weights[i]) * (zs[i - 1] > 0)
    return dW, db


# -- data -------------------------------------------------------------------

@dataclass
class SyntheticTask:
    n: int
    k: int
    d_in: int
    features: np.ndarray
    ground_truth: list
    observed: list
    seed: int
    planted: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.features)


def generate_task(n: int, k: int, d_in: int, num_samples: int, observe_prob: float = 1.0,
                  seed: int = 0, noise: float = 0.0) -> SyntheticTask:
    """Planted top-k task with labels censored at rate ``1 - observe_prob``.

    Each ground-truth label is kept independently with probability
    ``observe_prob``; a sample whose kept set is empty is redrawn until it is
    not. ``noise`` adds Gaussian noise to the planted scores before taking
    the top k.
    """
    if not 1 <= k <= n - 1:
        raise DomainError(f"k={k} is outside [1, {n - 1}]")
    if not 0 < observe_prob <= 1:
        raise DomainError("observe_prob must lie in (0, 1]")
    if num_samples < 1 or d_in < 1:
        raise DomainError("num_samples and d_in must be positive")
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(d_in, n))
    X = rng.normal(size=(num_samples, d_in))
    S = X @ W
    if noise > 0:
        S = S + noise * rng.normal(size=S.shape)
    truth, observed = [], []
    for s in S:
        gt = predict_top_k(s, k)
        labels = sorted(gt)
        while True:
            keep = rng.random(k) < observe_prob
            if keep.any():
                break
        truth.append(gt)
        observed.append(frozenset(j for j, kept in zip(labels, keep) if kept))
    return SyntheticTask(n, k, d_in, X, truth, observed, seed, W)


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    loss: str = "lml"
    lr: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    hidden: tuple = (64, 64)
    full_batch: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise DomainError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.lr < 0:
            raise DomainError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    gt_recall: float
    obs_recall: float
    zero_one_error: float


@dataclass
class TrainReport:
    epochs: list
    mean_prob: float
    digest: str
    config: dict
    model: MlpModel = field(repr=False, default=None)

    @property
    def final(self) -> EpochMetrics:
        return self.epochs[-1]

    def summary(self) -> dict:
        last = self.final
        return {
            "final_loss": last.loss,
            "gt_recall": last.gt_recall,
            "obs_recall": last.obs_recall,
            "zero_one_error": last.zero_one_error,
            "mean_prob": self.mean_prob,
            "digest": self.digest,
            "config": self.config,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "gt_recall", "obs_recall", "zero_one_error"])
            for m in self.epochs:
                w.writerow([m.epoch, repr(m.loss), repr(m.gt_recall), repr(m.obs_recall),
                            repr(m.zero_one_error)])

    def write_json(self, path) -> None:
        body = self.summary()
        body["epochs"] = [asdict(m) for m in self.epochs]
        with open(path, "w") as f:
            json.dump(body, f, indent=2)


def _label_mask(sets, n: int) -> np.ndarray:
    mask = np.zeros((len(sets), n), dtype=bool)
    for i, labels in enumerate(sets):
        mask[i, list(labels)] = True
    return mask


def loss_and_grad(loss: str, scores: np.ndarray, observed, k: int,
                  solver: SolverConfig | None = None):
    """Per-row loss values and score gradients for a batch of scores."""
    if loss == "lml":
        values, grads, _ = lml_nll_loss_batch(scores, k, observed, solver)
        return values, grads
    if loss == "sigmoid":
        mask = _label_mask(observed, scores.shape[1])
        softplus = np.maximum(-scores, 0) + np.log1p(np.exp(-np.abs(scores)))
        return (mask * softplus).sum(1), -(mask * sigmoid(-scores))
    if loss == "softmax_ce":
        mask = _label_mask(observed, scores.shape[1])
        top = scores.max(axis=1, keepdims=True)
        lse = top + np.log(np.exp(scores - top).sum(axis=1, keepdims=True))
        p = np.exp(scores - lse)
        return (mask * (lse - scores)).sum(1), mask.sum(1, keepdims=True) * p - mask
    values = np.empty(len(scores))
    grads = np.empty_like(scores)
    for i, (s, obs) in enumerate(zip(scores, observed)):
        if loss == "truncated_entropy":
            parts = [truncated_topk_entropy(s, j, k) for j in sorted(obs)]
            values[i] = sum(p.value for p in parts)
            grads[i] = np.sum([p.grad for p in parts], axis=0)
            continue
        if loss != "multilabel_truncated_entropy":
            raise DomainError(f"unknown loss {loss!r}")
        lv = multilabel_truncated_topk_entropy(s, obs, k)
        values[i], grads[i] = lv.value, lv.grad
    return values, grads


def predicted_probs(loss: str, scores: np.ndarray, k: int,
                    solver: SolverConfig | None = None) -> np.ndarray:
    """The per-label probabilities a model trained with ``loss`` predicts."""
    if loss == "lml":
        return lml_project(scores, k, solver).probs
    if loss == "sigmoid":
        return sigmoid(scores)
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: MlpModel, task: SyntheticTask, cfg: TrainConfig, epoch: int = 0):
    """Mean loss and top-k metrics over the whole task, plus the mean predicted probability."""
    scores = forward(model, task.features)
    if cfg.loss == "lml":
        values, _, probs = lml_nll_loss_batch(scores, task.k, task.observed, cfg.solver)
    else:
        values, _ = loss_and_grad(cfg.loss, scores, task.observed, task.k, cfg.solver)
        probs = predicted_probs(cfg.loss, scores, task.k, cfg.solver)
    # same rule as predict_top_k: stable sort, lowest index wins ties
    top = np.argsort(-scores, axis=1, kind="stable")[:, :task.k]
    pred = np.zeros_like(scores, dtype=bool)
    np.put_along_axis(pred, top, True, axis=1)
    gt = _label_mask(task.ground_truth, task.n)
    obs = _label_mask(task.observed, task.n)
    gt_rec = (gt & pred).sum(1) / gt.sum(1)
    obs_rec = (obs & pred).sum(1) / obs.sum(1)
    err = np.any(gt != pred, axis=1)
    metrics = EpochMetrics(epoch, float(np.mean(values)), float(gt_rec.mean()),
                           float(obs_rec.mean()), float(err.mean()))
    return metrics, float(probs.mean())


def train_loop(task: SyntheticTask, cfg: TrainConfig, model: MlpModel | None = None) -> TrainReport:
    """Minibatch SGD on the chosen loss, with metrics on the full set after each epoch.

    Per-sample gradients are averaged within a minibatch. With
    ``cfg.full_batch`` every step uses the whole training set. Deterministic
    for a given task and config.
    """
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_mlp(task.d_in, task.n, cfg.hidden, rng)
    N = len(task)
    batch = N if cfg.full_batch else min(cfg.batch_size, N)
    history = []
    mean_prob = float("nan")
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(N) if cfg.full_batch else rng.permutation(N)
        for start in range(0, N, batch):
            idx = order[start:start + batch]
            X = task.features[idx]
            obs = [task.observed[i] for i in idx]
            scores, cache = forward(model, X, return_cache=True)
            if cfg.loss == "lml":
                values, G, probs = lml_nll_loss_batch(scores, task.k, obs, cfg.solver)
                _check_feasible(probs, task.k)
            else:
                values, G = loss_and_grad(cfg.loss, scores, obs, task.k, cfg.solver)
            if not np.all(np.isfinite(values)) or not np.all(np.isfinite(G)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            dW, db = backward(model, X, G / len(idx), cache)
            for W, b, gW, gb in zip(model.weights, model.biases, dW, db):
                W -= cfg.lr * gW
                b -= cfg.lr * gb
        metrics, mean_prob = evaluate(model, task, cfg, epoch)
        if not np.isfinite(metrics.loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        history.append(metrics)
    config = {k: v for k, v in asdict(cfg).items() if k != "solver"}
    config["hidden"] = list(cfg.hidden)
    config.update(n=task.n, k=task.k, d_in=task.d_in, samples=len(task), task_seed=task.seed)
    return TrainReport(history, mean_prob, model.digest(), config, model)


def _check_feasible(p: np.ndarray, k: int) -> None:
    n = p.shape[-1]
    if not (np.all((p > 0) & (p < 1)) and np.all(np.abs(p.sum(-1) - k) <= 1e-8 * n)):
        raise TrainingDiverged("projection left the interior of the polytope")
