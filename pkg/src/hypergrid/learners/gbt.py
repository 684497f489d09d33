"""Second-order gradient boosting with L1/L2 leaf penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..datasets import Dataset
from ..errors import DomainError
from ..metrics import logloss, mse
from . import _kernels
from .base import FittedModel, TreeArrays, as_seed, presort


def gbt_leaf_weight(G: float, H: float, alpha: float, lam: float) -> float:
    """Leaf weight minimizing G*w + (H+lam)*w^2/2 + alpha*|w|."""
    if not H + lam > 0:
        raise DomainError(f"leaf weight needs H + lambda > 0, got {H + lam}")
    return float(_kernels.leaf_weight(float(G), float(H), float(alpha), float(lam)))


def split_score(G: float, H: float, alpha: float, lam: float) -> float:
    a = max(abs(G) - alpha, 0.0)
    return a * a / (H + lam)


def split_gain(GL, HL, GR, HR, alpha, lam) -> float:
    return 0.5 * (split_score(GL, HL, alpha, lam) + split_score(GR, HR, alpha, lam)
                  - split_score(GL + GR, HL + HR, alpha, lam))


@dataclass(frozen=True)
class GbtParams:
    depth: int = 6
    trees: int = 100
    lr_rate: float = 0.3
    alpha: float = 0.0
    lam: float = 1.0
    min_child_weight: float = 1.0
    colsample_bytree: float = 1.0
    early_stopping_rounds: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.trees < 1:
            raise DomainError("depth and trees must be >= 1")
        if not 0.0 < self.lr_rate <= 1.0:
            raise DomainError("lr_rate must lie in (0, 1]")
        if min(self.alpha, self.lam, self.min_child_weight) < 0:
            raise DomainError("penalties must be nonnegative")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise DomainError("colsample_bytree must lie in (0, 1]")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise DomainError("early_stopping_rounds must be >= 1")


class GbtModel(FittedModel):
    family = "gbt"

    def __init__(self, task, base, arrays: TreeArrays, n_features, fitted_rounds, history):
        self.task = task
        self.base = base
        self.arrays = arrays
        self._p = n_features
        self.fitted_rounds = fitted_rounds
        self.history = history

    @property
    def n_features(self) -> int:
        return self._p

    def raw(self, X, rounds: Optional[int] = None) -> np.ndarray:
        arrays = self.arrays if rounds is None else self.arrays.head(rounds)
        return self.base + arrays.evaluate(np.asarray(X, dtype=float), average=False)

    def predict(self, X, rounds: Optional[int] = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self._p:
            raise DomainError(f"model expects {self._p} features, got {X.shape[1]}")
        margin = self.raw(X, rounds)
        return _sigmoid(margin) if self.task == "binary" else margin


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_gbt(train: Dataset, valid: Optional[Dataset], params: GbtParams) -> GbtModel:
    """Boost depth-limited trees; with early stopping keep the best validation round."""
    if train.n == 0:
        raise DomainError("cannot fit on empty data")
    if params.early_stopping_rounds is not None and valid is None:
        raise DomainError("early stopping requires a validation set")
    binary = train.task == "binary"
    X, y = train.features, train.target
    ybar = float(y.mean())
    if binary:
        q = min(max(ybar, 1e-12), 1 - 1e-12)
        base = math.log(q / (1 - q))
    else:
        base = ybar
    loss = logloss if binary else mse
    order = presort(X)
    rng = np.random.default_rng(params.seed)
    k_cols = max(1, math.ceil(params.colsample_bytree * train.p - 1e-9))
    active = np.ones(train.n, dtype=np.bool_)
    margin = np.full(train.n, base)
    margin_v = np.full(valid.n, base) if valid is not None else None

    trees = []
    history = {"train": [], "valid": []}
    best_round, best_valid, since_best = 0, math.inf, 0
    for _ in range(params.trees):
        if binary:
            prob = _sigmoid(margin)
            g, h = prob - y, prob * (1.0 - prob)
        else:
            g, h = margin - y, np.ones(train.n)
        mask = np.zeros(train.p, dtype=np.bool_)
        if k_cols < train.p:
            mask[rng.choice(train.p, size=k_cols, replace=False)] = True
        else:
            mask[:] = True
        feature, threshold, left, right, value, leaf_of = _kernels.grow_tree(
            X, order, h, g, active, mask, k_cols, params.depth, params.min_child_weight,
            params.alpha, params.lam, True, as_seed(rng))
        value = value * params.lr_rate
        trees.append((feature, threshold, left, right, value))
        margin = margin + value[leaf_of]
        history["train"].append(loss(y, _sigmoid(margin) if binary else margin))
        if valid is not None:
            single = TreeArrays.concat([trees[-1]])
            margin_v = margin_v + single.evaluate(valid.features, average=False)
            v = loss(valid.target, _sigmoid(margin_v) if binary else margin_v)
            history["valid"].append(v)
            if v < best_valid:
                best_valid, best_round, since_best = v, len(trees), 0
            else:
                since_best += 1
            if params.early_stopping_rounds is not None and since_best >= params.early_stopping_rounds:
                break

    kept = len(trees)
    if params.early_stopping_rounds is not None:
        kept = best_round
    arrays = TreeArrays.concat(trees[:kept])
    return GbtModel(train.task, base, arrays, train.p, kept, history)
