"""Feed-forward network with one or two ReLU layers trained by Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..datasets import Dataset
from ..errors import DomainError, TrainingFailure
from ..metrics import logloss, mse
from .base import FittedModel

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpParams:
    layer1: int = 64
    layer2: int = 0
    lr_rate: float = 0.001
    batch_size: int = 32
    l1: float = 0.0
    l2: float = 0.0
    dropout: float = 0.0
    max_epochs: int = 1000
    patience: Optional[int] = 20  # None trains all epochs and keeps the final weights
    seed: int = 0

    def __post_init__(self):
        if self.layer1 < 1 or self.layer2 < 0:
            raise DomainError("layer1 must be >= 1 and layer2 >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must lie in [0, 1)")
        if self.lr_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or (
                self.patience is not None and self.patience < 1):
            raise DomainError("lr_rate, batch_size, max_epochs and patience must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise DomainError("penalties must be nonnegative")

    @property
    def widths(self) -> tuple:
        return (self.layer1,) if self.layer2 == 0 else (self.layer1, self.layer2)


def init_weights(n_in: int, widths, rng: np.random.Generator) -> list[np.ndarray]:
    """Glorot-uniform kernels and zero biases, output layer last: [W1, b1, ..., Wo, bo]."""
    weights = []
    sizes = [n_in, *widths, 1]
    for a, b in zip(sizes, sizes[1:]):
        limit = math.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        weights.append(np.zeros(b))
    return weights


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(weights, X, masks=None):
    """Returns output pre-activation and cached hidden activations."""
    acts = [X]
    a = X
    n_hidden = len(weights) // 2 - 1
    for k in range(n_hidden):
        z = a @ weights[2 * k] + weights[2 * k + 1]
        a = np.maximum(z, 0.0)
        if masks is not None:
            a = a * masks[k]
        acts.append(a)
    out = a @ weights[-2] + weights[-1]
    return out[:, 0], acts


def loss_and_grads(weights, X, y, binary: bool, l1: float = 0.0, l2: float = 0.0, masks=None):
    """Penalized batch loss and its gradient for every weight array.

    ``masks`` are the already-scaled inverted-dropout multipliers per hidden
    layer (or None for no dropout).
    """
    z, acts = forward(weights, X, masks)
    n = X.shape[0]
    if binary:
        # stable log(1+exp(-|z|)) form of binary cross-entropy on logits
        data = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
        dz = (_sigmoid(z) - y) / n
    else:
        r = z - y
        data = float(np.mean(r * r))
        dz = 2.0 * r / n
    kernels = weights[0::2]
    penalty = sum(l1 * np.abs(W).sum() + l2 * (W * W).sum() for W in kernels)
    grads = [None] * len(weights)
    delta = dz[:, None]
    n_hidden = len(weights) // 2 - 1
    for k in range(n_hidden, -1, -1):
        W = weights[2 * k]
        a_prev = acts[k]
        grads[2 * k] = a_prev.T @ delta + l1 * np.sign(W) + 2.0 * l2 * W
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            da = delta @ W.T
            if masks is not None:
                da = da * masks[k - 1]
            delta = da * (acts[k] > 0)
    return data + float(penalty), grads


class MlpModel(FittedModel):
    family = "mlp"

    def __init__(self, task, weights, fitted_rounds, history):
        self.task = task
        self.weights = weights
        self.fitted_rounds = fitted_rounds
        self.history = history

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def kernels(self) -> list[np.ndarray]:
        return self.weights[0::2]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DomainError(f"model expects {self.n_features} features, got {X.shape[1]}")
        z, _ = forward(self.weights, X)
        return _sigmoid(z) if self.task == "binary" else z


def fit_mlp(train: Dataset, valid: Dataset, params: MlpParams) -> MlpModel:
    if params.batch_size > train.n:
        raise DomainError(f"batch_size={params.batch_size} exceeds the {train.n} training rows")
    binary = train.task == "binary"
    rng = np.random.default_rng(params.seed)
    weights = init_weights(train.p, params.widths, rng)
    m = [np.zeros_like(w) for w in weights]
    v = [np.zeros_like(w) for w in weights]
    X, y = train.features, train.target
    keep = 1.0 - params.dropout
    metric = logloss if binary else mse
    t = 0
    best = (math.inf, 0, [w.copy() for w in weights])
    history = {"train_loss": [], "valid": []}
    since_best = 0
    for epoch in range(1, params.max_epochs + 1):
        order = rng.permutation(train.n)
        epoch_loss = 0.0
        for start in range(0, train.n, params.batch_size):
            rows = order[start:start + params.batch_size]
            masks = None
            if params.dropout > 0:
                masks = [(rng.random((rows.size, w)) < keep) / keep for w in params.widths]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected below
                loss, grads = loss_and_grads(weights, X[rows], y[rows], binary, params.l1, params.l2, masks)
            if not math.isfinite(loss):
                raise TrainingFailure(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            epoch_loss += loss * rows.size
            t += 1
            c1 = 1.0 - ADAM_BETA1 ** t
            c2 = 1.0 - ADAM_BETA2 ** t
            for i, g in enumerate(grads):
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g
                weights[i] = weights[i] - params.lr_rate * (m[i] / c1) / (np.sqrt(v[i] / c2) + ADAM_EPS)
        history["train_loss"].append(epoch_loss / train.n)
        z, _ = forward(weights, valid.features)
        score = metric(valid.target, _sigmoid(z) if binary else z)
        if not math.isfinite(score):
            raise TrainingFailure(f"non-finite validation metric at epoch {epoch}", epoch=epoch)
        history["valid"].append(score)
        if params.patience is None:
            continue
        if score < best[0]:
            best = (score, epoch, [w.copy() for w in weights])
            since_best = 0
        else:
            since_best += 1
            if since_best >= params.patience:
                break
    if params.patience is None:
        return MlpModel(train.task, weights, params.max_epochs, history)
    return MlpModel(train.task, best[2], best[1], history)
