"""k-median coresets for dynamic geometric streams."""

from .coreset import Coreset, cost, exact_values, weights_from_values
from .eval import bicriterion, exact_kmedian, near_cell_check, verify_coreset, weighted_local_search
from .general import AllGuessesFailed, GeneralStream, offline_construct
from .grid import CellId, GridSystem
from .heavy_hitter import HeavyHitterSketch
from .kset import KSet, KSetFailure
from .model import Lambdas, Op, Params, StreamUpdate, WeightedPoint
from .positive import InfeasibleRectification, PositiveStream, rectify_weights
from .sparse_cells import SparseCells, SparseCellsFailure, SparseCellsSingle
from .streams import StreamFile, generate

__all__ = [
    "AllGuessesFailed", "CellId", "Coreset", "GeneralStream", "GridSystem", "HeavyHitterSketch",
    "InfeasibleRectification", "KSet", "KSetFailure", "Lambdas", "Op", "Params", "PositiveStream",
    "SparseCells", "SparseCellsFailure", "SparseCellsSingle", "StreamFile", "StreamUpdate", "WeightedPoint",
    "bicriterion", "cost", "exact_kmedian", "exact_values", "generate", "near_cell_check", "offline_construct",
    "rectify_weights", "verify_coreset", "weighted_local_search", "weights_from_values",
]
