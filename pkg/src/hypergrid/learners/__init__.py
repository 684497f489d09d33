from .base import FittedModel
from .forest import ForestParams, TreeParams, fit_forest, fit_tree
from .gbt import GbtParams, fit_gbt, gbt_leaf_weight, split_gain
from .mlp import MlpParams, fit_mlp

__all__ = [
    "FittedModel", "TreeParams", "ForestParams", "GbtParams", "MlpParams",
    "fit_tree", "fit_forest", "fit_gbt", "fit_mlp", "gbt_leaf_weight", "split_gain",
]
