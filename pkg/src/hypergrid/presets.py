"""Preset grids for the RF, XGB and FFNN studies.

Dataset keys: ``hl`` (n=333,431, p=62), ``pll`` (n=35,583, p=143),
``bs`` (n=9,384, p=11) and, for FFNN only, ``sim``.
"""

from __future__ import annotations

from .search_space import SearchSpace, build_space, geometric_grid

DATASET_SHAPES = {"hl": (333_431, 62), "pll": (35_583, 143), "bs": (9_384, 11), "sim": (30_000, 15)}

_RF = {
    # trees descriptor, number of max_p multiples, msl endpoint multiplier, msl points
    "hl": ("range(100, 500, 50)", 5, 5, 10),
    "pll": ("range(100, 500, 100)", 7, 1, 7),
    "bs": ("range(100, 500, 50)", 3, 1, 7),
}


def rf_space(dataset: str) -> SearchSpace:
    trees, k_maxp, mult, m = _RF[dataset]
    n, p = DATASET_SHAPES[dataset]
    return build_space([
        ("depth", "integer", "range(3, 17, 2)"),
        ("trees", "integer", trees),
        ("max_p", "integer", f"multiples(floor(sqrt({p})), {k_maxp})"),
        ("msl", "integer", f"geometric(1, {mult}*sqrt({n}), {m})"),
    ])


def xgb_space() -> SearchSpace:
    return build_space([
        ("lr_rate", "real", [0.01, 0.03, 0.05, 0.07, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2]),
        ("trees", "integer", [100, 200, 300, 400, 500]),
        ("depth", "integer", [3, 4, 5, 6, 7]),
        ("l1", "real", [0.0, 0.1, 0.46, 2.15, 10.0]),
        ("l2", "real", [0.0, 0.1, 0.46, 2.15, 10.0]),
    ])


_FFNN = {
    "hl": dict(batch_size=[10_000, 20_000, 30_000], layer2=[0, 16, 32], l1=[0, 0.0005, 0.001, 0.005], dropout=[0, 0.3, 0.5]),
    "pll": dict(batch_size=[2000, 4000, 6000, 8000], layer2=[0, 16, 32], l1=[0, 0.0005, 0.001, 0.01], dropout=[0, 0.3, 0.5]),
    "bs": dict(batch_size=[500, 1000, 1500, 2000], layer2=[0, 32, 64], l1=[0, 0.0005, 0.001], dropout=[0, 0.1, 0.2, 0.3]),
    "sim": dict(batch_size=[1500, 3000, 4500, 6000], layer2=[0, 16, 32], l1=[0, 0.0005, 0.001, 0.005], dropout=[0.1, 0.2, 0.3]),
}


def ffnn_space(dataset: str) -> SearchSpace:
    d = _FFNN[dataset]
    return build_space([
        ("lr_rate", "real", [0.0005, 0.0007, 0.001, 0.003]),
        ("batch_size", "integer", d["batch_size"]),
        ("layer1", "integer", [64, 128, 256, 512]),
        ("layer2", "integer", d["layer2"]),
        ("l1", "real", d["l1"]),
        ("l2", "real", [0, 0.005, 0.01]),
        ("dropout", "real", d["dropout"]),
    ])


def min_child_weight_grid(n: int) -> list[int]:
    return geometric_grid(1, n ** 0.5, 10, integerize=True)


def colsample_grid() -> list[float]:
    return geometric_grid(0.05, 1.0, 10)
