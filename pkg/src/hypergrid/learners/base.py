from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

PROB_CLAMP = 1e-6


def as_seed(rng) -> int:
    """Kernel seed from an int seed or a numpy Generator."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**31 - 1))
    if rng is None:
        return 0
    return int(rng) % (2**31 - 1)


def presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


@dataclass(frozen=True)
class TreeArrays:
    """Concatenated node arrays of one or more trees."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @classmethod
    def concat(cls, trees) -> "TreeArrays":
        feats, thrs, lefts, rights, values, roots = [], [], [], [], [], []
        offset = 0
        for feature, threshold, left, right, value in trees:
            roots.append(offset)
            feats.append(feature)
            thrs.append(threshold)
            lefts.append(np.where(left >= 0, left + offset, left))
            rights.append(np.where(right >= 0, right + offset, right))
            values.append(value)
            offset += feature.shape[0]
        if not roots:
            empty = np.zeros(0)
            return cls(empty.astype(np.int64), empty, empty.astype(np.int64),
                       empty.astype(np.int64), empty, np.zeros(0, dtype=np.int64))
        return cls(np.concatenate(feats), np.concatenate(thrs), np.concatenate(lefts),
                   np.concatenate(rights), np.concatenate(values), np.array(roots, dtype=np.int64))

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    def head(self, k: int) -> "TreeArrays":
        """The first ``k`` trees (node arrays are laid out tree after tree)."""
        if k >= self.n_trees:
            return self
        end = int(self.roots[k]) if k > 0 else 0
        return TreeArrays(self.feature[:end], self.threshold[:end], self.left[:end],
                          self.right[:end], self.value[:end], self.roots[:k])

    def evaluate(self, X, average: bool) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if self.n_trees == 0:
            return np.zeros(X.shape[0])
        return _kernels.predict_trees(X, self.feature, self.threshold, self.left,
                                      self.right, self.value, self.roots, average)

    def each(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.predict_each_tree(X, self.feature, self.threshold, self.left,
                                          self.right, self.value, self.roots)

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature >= 0))


class FittedModel:
    """Common surface: ``predict(X)`` returns probabilities (binary) or values."""

    family: str
    task: str
    fitted_rounds: int

    def predict(self, X) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def n_features(self) -> int:  # pragma: no cover - interface
        raise NotImplementedError
