"""Greedy CART trees and bagged random forests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..datasets import Dataset
from ..errors import DomainError
from . import _kernels
from .base import PROB_CLAMP, FittedModel, TreeArrays, as_seed, presort


@dataclass(frozen=True)
class TreeParams:
    depth: int
    msl: int = 1
    max_p: Optional[int] = None  # None: all features

    def __post_init__(self):
        if self.depth < 1:
            raise DomainError("depth must be >= 1")
        if self.msl < 1:
            raise DomainError("msl must be >= 1")
        if self.max_p is not None and self.max_p < 1:
            raise DomainError("max_p must be >= 1")


@dataclass(frozen=True)
class ForestParams:
    tree: TreeParams
    trees: int = 100
    row_sample_ratio: float = 1.0
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.trees < 1:
            raise DomainError("trees must be >= 1")
        if not 0.0 < self.row_sample_ratio <= 1.0:
            raise DomainError("row_sample_ratio must lie in (0, 1]")


class TreeEnsembleModel(FittedModel):
    def __init__(self, family: str, task: str, arrays: TreeArrays, n_features: int):
        self.family = family
        self.task = task
        self.arrays = arrays
        self.fitted_rounds = arrays.n_trees
        self._p = n_features

    @property
    def n_features(self) -> int:
        return self._p

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self._p:
            raise DomainError(f"model expects {self._p} features, got {X.shape[1]}")
        return self.arrays.evaluate(X, average=True)

    def predict_trees(self, X) -> np.ndarray:
        """Per-tree predictions, shape (trees, n)."""
        return self.arrays.each(np.asarray(X, dtype=float))


def _check(data: Dataset, params: TreeParams) -> int:
    if data.n == 0:
        raise DomainError("cannot fit on empty data")
    if params.msl > data.n:
        raise DomainError(f"msl={params.msl} exceeds the {data.n} training rows")
    max_p = data.p if params.max_p is None else params.max_p
    if max_p > data.p:
        raise DomainError(f"max_p={max_p} exceeds the {data.p} features")
    return max_p


def _grow(data, order, weights, params, max_p, seed):
    y = data.target
    active = weights > 0
    feature, threshold, left, right, value, _ = _kernels.grow_tree(
        data.features, order, weights, weights * y, active, np.ones(data.p, dtype=np.bool_),
        max_p, params.depth, float(params.msl), 0.0, 0.0, False, seed)
    if data.task == "binary":
        value = np.clip(value, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return feature, threshold, left, right, value


def fit_tree(data: Dataset, params: TreeParams, rng=None) -> TreeEnsembleModel:
    """Single greedy tree on all rows; ``max_p`` features drawn per split."""
    max_p = _check(data, params)
    order = presort(data.features)
    tree = _grow(data, order, np.ones(data.n), params, max_p, as_seed(rng))
    return TreeEnsembleModel("tree", data.task, TreeArrays.concat([tree]), data.p)


def fit_forest(train: Dataset, params: ForestParams) -> TreeEnsembleModel:
    """Bootstrap-aggregated trees; prediction is the mean over trees."""
    max_p = _check(train, params.tree)
    order = presort(train.features)
    rng = np.random.default_rng(params.seed)
    draws = max(1, int(round(train.n * params.row_sample_ratio)))
    trees = []
    for _ in range(params.trees):
        if params.bootstrap:
            weights = np.bincount(rng.integers(0, train.n, size=draws), minlength=train.n).astype(float)
        elif draws < train.n:
            weights = np.zeros(train.n)
            weights[rng.choice(train.n, size=draws, replace=False)] = 1.0
        else:
            weights = np.ones(train.n)
        trees.append(_grow(train, order, weights, params.tree, max_p, as_seed(rng)))
    return TreeEnsembleModel("forest", train.task, TreeArrays.concat(trees), train.p)


def default_max_p(p: int) -> int:
    return max(1, int(round(math.sqrt(p))))
