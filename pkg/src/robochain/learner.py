"""Desk-scale trainable model: a logistic-output linear map over session
features, fine-tuned by full-batch gradient descent with an Adadelta-style
adaptive step, scored by mean squared error against expert feedback.

The parameter vector is ``[w_0 .. w_{d-2}, bias]``.  A test mode (identity
activation, plain gradient steps) exists so single-step behaviour has a
closed form.

Training batches are treated as protected session data: ``fine_tune``
empties the batch list before returning, and nothing derived from raw
feature values is retained beyond the updated parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, EmptyUpdates, StaleBase
from .modelstore import ModelDelta, ModelVersion, make_version

SIGMOID = "sigmoid"
IDENTITY = "identity"

ADADELTA = "adadelta"
SGD = "sgd"


@dataclass(frozen=True)
class FeatureVector:
    """Session-derived inputs: local sensor summaries plus aggregated
    background statistics (the only patient context a robot ever sees)."""

    id_features: tuple[float, ...]
    bd_features: tuple[float, ...]

    def __post_init__(self):
        values = self.id_features + self.bd_features
        if not all(math.isfinite(v) for v in values):
            raise ValueError("feature values must be finite")

    @property
    def dim(self) -> int:
        return len(self.id_features) + len(self.bd_features)

    def concat(self) -> np.ndarray:
        return np.array(self.id_features + self.bd_features, dtype=np.float64)


@dataclass(frozen=True)
class TherapistFeedback:
    target: float
    robot_id: str
    session_id: str
    timestamp: int

    def __post_init__(self):
        if not math.isfinite(self.target):
            raise ValueError("feedback target must be finite")
        object.__setattr__(self, "target", min(1.0, max(0.0, self.target)))


@dataclass
class OptimizerState:
    rho: float
    epsilon: float
    accumulated_grad_sq: np.ndarray
    accumulated_update_sq: np.ndarray

    @classmethod
    def fresh(cls, dim: int, rho: float = 0.95, epsilon: float = 1e-6) -> "OptimizerState":
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        return cls(rho=rho, epsilon=epsilon,
                   accumulated_grad_sq=np.zeros(dim),
                   accumulated_update_sq=np.zeros(dim))

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.rho, self.epsilon,
                              self.accumulated_grad_sq.copy(),
                              self.accumulated_update_sq.copy())


Batch = list[tuple[FeatureVector, TherapistFeedback]]


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    if activation == IDENTITY:
        return z
    raise ValueError(f"unknown activation {activation!r}")


def _batch_arrays(batch: Batch, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise EmptyBatch("batch is empty")
    for x, _ in batch:
        if x.dim != dim - 1:
            raise DimensionMismatch(
                f"feature dim {x.dim} does not fit model dim {dim} (features + bias)"
            )
    X = np.stack([x.concat() for x, _ in batch])
    y = np.array([fb.target for _, fb in batch], dtype=np.float64)
    return X, y


def _forward(params: np.ndarray, X: np.ndarray, activation: str) -> np.ndarray:
    return _activate(X @ params[:-1] + params[-1], activation)


def loss_and_gradient(params: np.ndarray, X: np.ndarray, y: np.ndarray,
                      activation: str = SIGMOID) -> tuple[float, np.ndarray]:
    """Mean squared error and its analytic gradient over the batch."""
    pred = _forward(params, X, activation)
    err = pred - y
    loss = float(np.mean(err ** 2))
    dact = pred * (1.0 - pred) if activation == SIGMOID else np.ones_like(pred)
    gz = 2.0 * err * dact / len(y)
    grad = np.concatenate([X.T @ gz, [np.sum(gz)]])
    return loss, grad


def predict(model: ModelVersion, x: FeatureVector) -> float:
    if x.dim != model.dim - 1:
        raise DimensionMismatch(
            f"feature dim {x.dim} does not fit model dim {model.dim}"
        )
    return float(_forward(model.params, x.concat()[None, :], SIGMOID)[0])


def evaluate(model: ModelVersion, batch: Batch, activation: str = SIGMOID) -> float:
    X, y = _batch_arrays(batch, model.dim)
    loss, _ = loss_and_gradient(model.params, X, y, activation)
    return loss


def feedback_score(loss: float) -> float:
    """Deterministic score proxy in (0, 1]: perfect fit scores 1."""
    return 1.0 / (1.0 + loss)


def fine_tune(model: ModelVersion, batch: Batch, opt: OptimizerState, epochs: int,
              optimizer: str = ADADELTA, activation: str = SIGMOID,
              now: int = 0) -> tuple[ModelVersion, OptimizerState]:
    """Full-batch gradient descent; one parameter update per epoch.

    The input batch list is emptied before returning: raw session data must
    not outlive the update it produced.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    X, y = _batch_arrays(batch, model.dim)
    params = model.params.copy()
    state = opt.copy()
    lr = float(model.hyperparams["learning_rate"])
    for _ in range(epochs):
        _, grad = loss_and_gradient(params, X, y, activation)
        if optimizer == SGD:
            params -= lr * grad
        elif optimizer == ADADELTA:
            state.accumulated_grad_sq = (
                state.rho * state.accumulated_grad_sq + (1.0 - state.rho) * grad ** 2
            )
            step = -lr * np.sqrt(
                (state.accumulated_update_sq + state.epsilon)
                / (state.accumulated_grad_sq + state.epsilon)
            ) * grad
            state.accumulated_update_sq = (
                state.rho * state.accumulated_update_sq + (1.0 - state.rho) * step ** 2
            )
            params += step
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    del X, y
    batch.clear()
    hyper = dict(model.hyperparams)
    hyper["epochs"] = epochs
    tuned = make_version(params, hyper, parent_id=model.version_id, created_at=now)
    return tuned, state


def federated_average(base: ModelVersion, updates: list[ModelDelta],
                      weights: list[float], now: int = 0) -> ModelVersion:
    """Fold returned updates into the base as a weighted mean of differences.

    This is floating-point averaging (accumulated in list order), not the
    bitwise reconstruction ``apply_delta`` performs; hyperparameter diffs
    are not averaged — the base's hyperparameters carry over.
    """
    if not updates:
        raise EmptyUpdates("no updates to average")
    if len(weights) != len(updates):
        raise ValueError("one weight per update required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    for delta in updates:
        if delta.from_id != base.version_id:
            raise StaleBase(
                f"update base {delta.from_id.hex()[:12]} is not "
                f"{base.version_id.hex()[:12]}"
            )
        if delta.param_diff.shape[0] != base.dim:
            raise DimensionMismatch("update dimension does not match base")
    acc = np.zeros(base.dim)
    for delta, w in zip(updates, weights):
        acc += w * (delta.param_diff + delta.param_diff_low)
    acc /= float(sum(weights))
    return make_version(base.params + acc, base.hyperparams,
                        parent_id=base.version_id, created_at=now)
